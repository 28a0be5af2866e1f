#include "normlab/textio.hpp"

#include <cstdio>
#include <fstream>

#include "normlab/errors.hpp"

namespace normlab {

std::string fmt_g12(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string token;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(token);
      token.clear();
    } else {
      token.push_back(ch);
    }
  }
  out.push_back(token);
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

double parse_double(const std::string& token, long line_number) {
  const std::string t = trim(token);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size()) {
    throw ParseError("expected a number, got '" + t + "'", line_number);
  }
  return v;
}

long parse_long(const std::string& token, long line_number) {
  const std::string t = trim(token);
  char* end = nullptr;
  const long v = std::strtol(t.c_str(), &end, 10);
  if (t.empty() || end != t.c_str() + t.size()) {
    throw ParseError("expected an integer, got '" + t + "'", line_number);
  }
  return v;
}

}  // namespace normlab
