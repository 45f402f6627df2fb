#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ftv {

using Real = double;

// Error hierarchy. Everything user-facing derives from Error so the CLI can
// catch one type and map it to a nonzero exit code.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct ConditioningError : Error {
  explicit ConditioningError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Record-level pipeline failure (skippable per record, fatal if unhandled).
struct RecordError : Error {
  explicit RecordError(const std::string& msg) : Error(msg) {}
};

struct EvalError : Error {
  explicit EvalError(const std::string& msg) : Error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

inline void require_dim(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

inline bool is_finite(Real x) { return std::isfinite(x); }

}  // namespace ftv
