#pragma once

#include <stdexcept>
#include <string>

namespace sarnas {

/// Base class of every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes disagree; the message names the offending axis.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid combination of construction or run-time settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value was produced.
class NumericFault : public Error {
 public:
  using Error::Error;
};

/// API used out of order (e.g. backward on a non-scalar).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Required state is missing (e.g. optimizer step without gradients).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Bad input values (labels out of range, too many persons, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input. Carries a line number or byte offset in the message.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A value violates a structural invariant (e.g. a genotype with a Zero op).
class InvariantError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace sarnas
