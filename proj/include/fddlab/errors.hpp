#pragma once

#include <stdexcept>
#include <string>

namespace fddlab {

// Exit-code classes used by the command suite: 2 missing dependency,
// 3 config error, 4 numerical failure. Everything else is a plain
// std::invalid_argument / std::runtime_error.

class MissingDependency : public std::runtime_error {
 public:
  explicit MissingDependency(const std::string& path)
      : std::runtime_error("missing prerequisite: " + path), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& what)
      : std::runtime_error("config line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace fddlab
