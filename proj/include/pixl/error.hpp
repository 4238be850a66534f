#pragma once

#include <stdexcept>
#include <string>

namespace pixl {

// Bad input: malformed files, invalid configs, wrong shapes from the caller.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Something the library itself guarantees did not hold (non-finite loss,
// broken invariant after an op). The CLI maps these to exit code 2.
class InvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

}  // namespace pixl
