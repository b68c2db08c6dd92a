#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace sievebias {

// Raised when an auxiliary table (primes, window) does not cover what an
// operation needs.
class CoverageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a requested computation would exceed the configured memory
// budget or enumeration cap.
class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class QuadratureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Carries every violated constraint by name, not just the first one.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> violations)
      : std::invalid_argument(join(violations)), violations_(std::move(violations)) {}

  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out = "invalid configuration:";
    for (const auto& s : v) out += " [" + s + "]";
    return out;
  }
  std::vector<std::string> violations_;
};

}  // namespace sievebias
