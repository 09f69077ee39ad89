#pragma once

#include <stdexcept>
#include <string>

namespace charcnn {

/// Malformed input data: corpus files, config files, model files.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A configuration that violates a structural invariant.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Model file problems (bad magic, version, truncated tensors).
class ModelFormatError : public DataError {
public:
  using DataError::DataError;
};

class VersionError : public ModelFormatError {
public:
  using ModelFormatError::ModelFormatError;
};

} // namespace charcnn
