#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepgsp {

enum class ErrorKind {
  kValidation,           // bad input or configuration
  kDegenerateMultiplier, // bid multiplier too close to zero to divide by
  kNoSolution,           // critical-bid search could not bracket the target
  kNumerical,            // NaN / divergence during training
  kIo,                   // file or format problems
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, const std::string& what,
                    ErrorKind kind = ErrorKind::kValidation) {
  if (!cond) throw Error(kind, what);
}

inline void require_finite(double x, const char* name) {
  if (!std::isfinite(x))
    throw Error(ErrorKind::kValidation, std::string(name) + " is not finite");
}

// Collects every validation failure so a config can be reported in full.
class Problems {
 public:
  void check(bool cond, const std::string& what) {
    if (!cond) list_.push_back(what);
  }
  void add(const std::string& what) { list_.push_back(what); }
  bool empty() const { return list_.empty(); }
  const std::vector<std::string>& list() const { return list_; }

  void raise_if_any() const {
    if (list_.empty()) return;
    std::string msg = list_.front();
    for (std::size_t i = 1; i < list_.size(); ++i) msg += "; " + list_[i];
    throw Error(ErrorKind::kValidation, msg);
  }

 private:
  std::vector<std::string> list_;
};

}  // namespace deepgsp
