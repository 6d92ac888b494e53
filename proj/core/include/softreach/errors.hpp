#ifndef SOFTREACH_ERRORS_HPP_
#define SOFTREACH_ERRORS_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace softreach {

// Invalid configuration or violated precondition.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values or numeric breakdown during computation.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"),
        step_(step) {}
  explicit NumericError(const std::string& what)
      : std::runtime_error(what), step_(0) {}

  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// Malformed input file; line is 1-based, 0 when not applicable.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line)
      : std::runtime_error(line ? what + " at line " + std::to_string(line)
                                : what),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Missing or unreadable file.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace softreach

#endif  // SOFTREACH_ERRORS_HPP_
