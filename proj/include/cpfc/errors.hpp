#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cpfc {

/// Invalid argument to one of the library operations.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Denominator of a transfer function vanishes at the evaluated frequency.
class SingularFrequencyError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Inconsistent configuration (incomplete table, unknown mask, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A tuning problem without a feasible solution.
class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(const std::string& what, std::vector<unsigned> masks = {})
      : std::runtime_error(what), masks_(std::move(masks)) {}

  const std::vector<unsigned>& masks() const { return masks_; }

 private:
  std::vector<unsigned> masks_;
};

/// Malformed input file. The message names file, line and field.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& field,
             const std::string& detail)
      : std::runtime_error(file + ":" + std::to_string(line) + ": field '" + field +
                           "': " + detail) {}
  /// For inputs without line structure (JSON): field is a path like ders[3].kind.
  ParseError(const std::string& file, const std::string& field, const std::string& detail)
      : std::runtime_error(file + ": field '" + field + "': " + detail) {}
};

}  // namespace cpfc
