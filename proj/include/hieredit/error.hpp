// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <exception>
#include <stdexcept>
#include <string>

namespace hieredit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or length mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value (odd head_dim, halo >= window, bad config key...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf appeared. Raised at the op that produced it.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Caller broke a precondition (t outside [0,1], backward on a non-scalar...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Token coordinates collide or fall outside the configured extent.
class PlacementError : public Error {
 public:
  using Error::Error;
};

class PlanError : public Error {
 public:
  using Error::Error;
};

// Resampling factor does not divide the image extent.
class ResampleError : public Error {
 public:
  using Error::Error;
};

// A KvCache was used after the static tokens it was built from changed.
class StaleCacheError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Failure inside one pipeline stage; what() is prefixed with the stage name.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& what, std::exception_ptr cause = nullptr)
      : Error(stage + ": " + what), stage_(stage), cause_(std::move(cause)) {}
  const std::string& stage() const { return stage_; }
  // The original exception, if any; rethrow it to inspect its type.
  const std::exception_ptr& cause() const { return cause_; }

 private:
  std::string stage_;
  std::exception_ptr cause_;
};

}  // namespace hieredit
