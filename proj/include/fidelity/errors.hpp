#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fidelity {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration (process count, figure index, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Two series that must share a time grid do not.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// Not enough samples or episodes to compute the requested statistic.
class InsufficientData : public Error {
 public:
  using Error::Error;
};

/// A contract operation was requested for a NonRT contract.
class ContractFreeError : public Error {
 public:
  using Error::Error;
};

/// Samples delivered out of time order.
class SequencingError : public Error {
 public:
  using Error::Error;
};

/// Unknown strategy identifier or catalog mismatch.
class CatalogError : public Error {
 public:
  using Error::Error;
};

/// A social action that the resource pool refuses. The pool is left untouched.
class RejectedAction : public Error {
 public:
  using Error::Error;
};

/// Social action issued by a node whose membership does not allow it.
class MembershipError : public RejectedAction {
 public:
  using RejectedAction::RejectedAction;
};

/// Scenario validation failure. Carries every problem found, not just the first.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> problems)
      : Error(join(problems)), problems_(std::move(problems)) {}

  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& problems) {
    std::string out = "validation failed";
    for (const auto& p : problems) {
      out += "\n  ";
      out += p;
    }
    return out;
  }

  std::vector<std::string> problems_;
};

}  // namespace fidelity
