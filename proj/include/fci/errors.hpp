#pragma once

#include <stdexcept>
#include <string>

namespace fci {

/// Shapes of operands do not agree.
class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// A caller broke an operation's precondition (non-scalar loss, q == a, ...).
class ContractError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

/// Invalid configuration value (kernel width, k larger than the sequence, ...).
class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
  public:
    using std::out_of_range::out_of_range;
};

/// NaN/Inf encountered, or a numeric routine failed to converge.
class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the 1-based line number when known.
class ParseError : public std::runtime_error {
  public:
    ParseError(const std::string& what, std::size_t line = 0)
        : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what),
          line_(line) {}
    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

class ValidationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class VersionError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ChecksumError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace fci
