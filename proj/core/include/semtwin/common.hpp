#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace semtwin {

// Thrown when an operation's preconditions are violated (shape mismatches,
// out-of-range arguments, calls against exhausted state, ...).
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

#define SEMTWIN_CHECK(cond, msg)                      \
  do {                                                \
    if (!(cond)) throw ::semtwin::ContractViolation(msg); \
  } while (0)

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace semtwin
