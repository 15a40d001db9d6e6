#pragma once

#include <stdexcept>
#include <string>

namespace hgcd {

// Error taxonomy used across the library. The CLI maps these onto process
// exit codes: ConfigError -> 1 (usage), DataError -> 2, NumericError -> 3.

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hgcd
