#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace latplan {

/// Invalid hyperparameters, shapes, or file contents.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed text input. Carries a 1-based line/column position.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : std::runtime_error(what + " at line " + std::to_string(line) + ", column " +
                           std::to_string(column)),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// A plan step whose preconditions do not hold, or an action that cannot be
/// regressed/progressed under its semantics.
class SimulationError : public std::runtime_error {
 public:
  SimulationError(const std::string& what, std::size_t step)
      : std::runtime_error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace latplan
