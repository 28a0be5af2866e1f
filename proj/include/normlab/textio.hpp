#pragma once

#include <string>
#include <vector>

namespace normlab {

// Locale-independent "%.12g" (12 significant digits, the CSV contract).
std::string fmt_g12(double v);

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);

// Whole file as lines; throws InputError if unreadable.
std::vector<std::string> read_lines(const std::string& path);

// Parses a double; throws ParseError tagged with line_number on failure.
double parse_double(const std::string& token, long line_number);
long parse_long(const std::string& token, long line_number);

}  // namespace normlab
