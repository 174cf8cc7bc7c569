#pragma once

#include <stdexcept>
#include <string>

namespace dfr {

// Bad user input: files, arguments, configuration. Maps to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape file could not be parsed. `location` is "line N" or "byte N".
class ParseError : public InputError {
 public:
  ParseError(std::string path, std::string location, const std::string& what)
      : InputError(path + ":" + location + ": " + what),
        path_(std::move(path)),
        location_(std::move(location)) {}

  const std::string& path() const noexcept { return path_; }
  const std::string& location() const noexcept { return location_; }

 private:
  std::string path_;
  std::string location_;
};

// Solver breakdown, singular systems, non-finite energies. Maps to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dfr
