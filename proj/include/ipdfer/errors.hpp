#pragma once

#include <stdexcept>
#include <string>

namespace ipdfer {

/// Bad user input: unknown config keys, missing files, inconsistent modes.
/// The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Unrecoverable failure during an optimization run (NaN/Inf losses and the
/// like). The CLI maps this to exit code 1.
class TrainError : public std::runtime_error {
 public:
  explicit TrainError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or incompatible serialized artifacts (datasets, checkpoints).
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ipdfer
