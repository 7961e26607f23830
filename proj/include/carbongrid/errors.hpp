#pragma once

#include <stdexcept>
#include <string>

namespace carbongrid {

/// Shape or extent disagreement between operands.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN or Inf produced or supplied.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user configuration (config files, specs, split settings).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint and dataset do not fit together.
class IncompatibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed files on disk.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace carbongrid
