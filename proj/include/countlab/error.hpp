#pragma once

#include <stdexcept>
#include <string>

namespace countlab {

/// Raised for every contract violation the library detects at runtime.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& message) { throw Error(message); }

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(message);
}

}  // namespace countlab
