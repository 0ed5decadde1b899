#pragma once

#include <stdexcept>
#include <string>

namespace vit3d {

// Root of every error this library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller violated a documented precondition (shape mismatch, bad argument).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid model/training/experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced where finite values are required.
class NumericFault : public Error {
 public:
  using Error::Error;
};

// File contents do not match the expected layout (wrong magic, bad header).
class FormatError : public Error {
 public:
  using Error::Error;
};

class TruncationError : public FormatError {
 public:
  using FormatError::FormatError;
};

class UnsupportedFormatError : public FormatError {
 public:
  using FormatError::FormatError;
};

class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class InfeasibleSplitError : public Error {
 public:
  using Error::Error;
};

class CorruptCheckpointError : public FormatError {
 public:
  using FormatError::FormatError;
};

// A checkpoint's backbone is incompatible with the requested model.
class CheckpointMismatchError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Only the classification head differs; callers may reinitialize it.
class HeadMismatchError : public CheckpointMismatchError {
 public:
  using CheckpointMismatchError::CheckpointMismatchError;
};

class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class DeterminismError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

}  // namespace vit3d
