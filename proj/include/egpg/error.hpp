#pragma once

#include <stdexcept>
#include <string>

namespace egpg {

// Base for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: missing files, malformed records, incompatible
// checkpoints. The CLI maps these to exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public InputError {
 public:
  using InputError::InputError;
};

class ParseError : public InputError {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : InputError(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DimensionError : public InputError {
 public:
  using InputError::InputError;
};

class TaggerUnavailableError : public InputError {
 public:
  using InputError::InputError;
};

class CheckpointError : public InputError {
 public:
  using InputError::InputError;
};

// Raised by the optimizer loop when any loss component stops being finite.
class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

}  // namespace egpg
