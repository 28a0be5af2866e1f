#pragma once

#include <stdexcept>
#include <string>

namespace normlab {

// Error taxonomy used across the library. The CLI maps these onto exit codes.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, long line) : std::runtime_error(msg + " (line " + std::to_string(line) + ")"), line_number(line) {}
  explicit ParseError(const std::string& msg) : std::runtime_error(msg), line_number(-1) {}
  long line_number;
};

}  // namespace normlab
