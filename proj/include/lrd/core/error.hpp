#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lrd {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible. The message names both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside the mathematical domain of the operation
/// (negative standard deviation, probability outside [0,1], zero divisor, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A gradient or parameter element is NaN or infinite.
class NonFiniteError : public Error {
 public:
  NonFiniteError(std::size_t tensor_index, std::size_t element_index, double value)
      : Error("non-finite value " + std::to_string(value) + " in tensor " +
              std::to_string(tensor_index) + " at element " + std::to_string(element_index)),
        tensor_index_(tensor_index),
        element_index_(element_index) {}

  std::size_t tensor_index() const noexcept { return tensor_index_; }
  std::size_t element_index() const noexcept { return element_index_; }

 private:
  std::size_t tensor_index_;
  std::size_t element_index_;
};

/// Malformed binary input (IDX files, checkpoints). Carries the byte offset
/// at which the expectation failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// An experiment spec or CLI argument failed validation. `field()` names the
/// offending key.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace lrd
