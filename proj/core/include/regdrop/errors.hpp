#pragma once

#include <stdexcept>
#include <string>

namespace regdrop {

// Every failure raised by the library derives from Error so callers can
// separate library faults from std exceptions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Configuration values are invalid or inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// KV cache does not belong to the model or has inconsistent dimensions.
class CacheError : public Error {
 public:
  using Error::Error;
};

// A reduction strategy cannot run in the requested mode.
class StrategyError : public Error {
 public:
  using Error::Error;
};

// Input data violates a requirement (zero-norm rows, bad files, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values in gradients or losses.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace regdrop
