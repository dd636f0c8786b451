#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace signflow {

// Operand shapes do not conform.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside an operation's domain (non-finite value, bad id, ...).
class ValueError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN or infinity reached an operation; training treats this as divergence.
class NonFiniteError : public ValueError {
 public:
  using ValueError::ValueError;
};

// Operation invoked in a state that does not permit it.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed or unreadable file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail
}  // namespace signflow
