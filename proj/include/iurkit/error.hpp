#pragma once

#include <stdexcept>
#include <string>

namespace iurkit {

// Bad input: malformed files, missing fields, inconsistent arguments.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// An internal invariant did not hold. Indicates a bug, not bad input.
class InvariantError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

}  // namespace iurkit
