#pragma once

#include <stdexcept>
#include <string>

namespace vqcert {

// Raised when a caller violates a documented precondition (shape mismatch,
// divisibility, empty input, ...). The message names the offending quantity.
class contract_error : public std::invalid_argument {
 public:
  explicit contract_error(const std::string& what) : std::invalid_argument(what) {}
};

// Raised for unreadable or malformed files.
class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw contract_error(what);
}

}  // namespace vqcert
