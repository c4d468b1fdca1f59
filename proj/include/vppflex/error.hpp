#pragma once

#include <stdexcept>
#include <string>

namespace vppflex {

// Base class for every error raised by the library. Stage code catches this
// and the CLI turns it into a single-line diagnostic.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input does not match the network/fleet structure (absent phase, wrong
// connection, ordering mismatch).
class StructuralError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double last_residual)
      : Error(what), last_residual_(last_residual) {}
  double last_residual() const { return last_residual_; }

 private:
  double last_residual_;
};

// Covariance or projected variance is not positive semidefinite.
class PsdError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

// A model or envelope could not be produced (empty capability, all targets
// infeasible, ...).
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& file, int line, const std::string& field,
             const std::string& message)
      : Error(file + ":" + std::to_string(line) + ": field '" + field + "': " + message),
        file_(file), line_(line), field_(field) {}
  const std::string& file() const { return file_; }
  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::string file_;
  int line_;
  std::string field_;
};

}  // namespace vppflex
