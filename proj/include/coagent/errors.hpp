#pragma once

#include <stdexcept>
#include <string>

namespace coagent {

/// Raised when an exact linear solve cannot succeed, e.g. a gamma=1 chain
/// with a recurrent class that never reaches a terminal state.
struct SingularSystemError : std::runtime_error {
  explicit SingularSystemError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when an enumeration would exceed the supported product-space size.
struct SizeOverflowError : std::runtime_error {
  explicit SizeOverflowError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace coagent
