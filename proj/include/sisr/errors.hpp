#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sisr {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Arithmetic left the real domain (division by zero, 0^negative, non-finite
/// intermediate). A value-level outcome: callers score the candidate 0.
class DomainError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  enum class Kind { IncompleteSequence, TrailingTokens, UnknownToken, Syntax, NotSeparable };
  ParseError(Kind kind, std::size_t position, const std::string& what)
      : Error(what), kind_(kind), position_(position) {}
  Kind kind() const noexcept { return kind_; }
  /// Token index (pre-order input) or character offset (infix input).
  std::size_t position() const noexcept { return position_; }

 private:
  Kind kind_;
  std::size_t position_;
};

/// Gradient evaluation failed inside an integrator rollout.
class FieldError : public Error {
 public:
  FieldError(std::size_t step, const std::string& what) : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. `line` is 1-based, 0 when unknown.
class FormatError : public Error {
 public:
  FormatError(std::size_t line, const std::string& field, const std::string& what)
      : Error(what), line_(line), field_(field) {}
  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

}  // namespace sisr
