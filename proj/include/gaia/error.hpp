#pragma once

#include <stdexcept>
#include <string>

namespace gaia {

/// Raised for every precondition or data error in the library. The message is
/// a short stable token (e.g. "empty input") so callers and tests can match it.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool ok, const char* what) {
  if (!ok) throw Error(what);
}

}  // namespace gaia
