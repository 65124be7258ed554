#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace tsxil {

// Base for every error raised by the library. Callers that only care about
// "something went wrong" catch this; the subclasses carry the category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractViolation : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Requested a gradient with respect to a tensor that does not feed the output.
class DetachedInputError : public Error {
 public:
  using Error::Error;
};

// An op in the record only supports first-order backprop but a
// create_graph backward (or a mixed partial) went through it.
class NonTwiceDifferentiableError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t row, std::size_t col)
      : DataError(what + " (row " + std::to_string(row) + ", col " + std::to_string(col) + ")"),
        row_(row),
        col_(col) {}

  std::size_t row() const { return row_; }
  std::size_t col() const { return col_; }

 private:
  std::size_t row_;
  std::size_t col_;
};

// Structural validation failure; one entry per offending field.
class ValidationError : public DataError {
 public:
  ValidationError(const std::string& what, std::vector<std::string> fields)
      : DataError(what), fields_(std::move(fields)) {}

  const std::vector<std::string>& fields() const { return fields_; }

 private:
  std::vector<std::string> fields_;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace tsxil
