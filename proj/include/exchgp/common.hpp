#pragma once

#include <stdexcept>
#include <string>

namespace exchgp {

inline constexpr const char* kVersion = "0.1.0";

// Central 95% interval multiplier used for every credible/prediction interval.
inline constexpr double kZ95 = 1.959964;

// Relative jitter schedule for covariance factorizations: start at
// kJitterRel * mean(diag), escalate x10 until kJitterRelMax, then give up.
inline constexpr double kJitterRel = 1e-8;
inline constexpr double kJitterRelMax = 1e-4;

// Lower bound on every variance hyperparameter.
inline constexpr double kVarianceFloor = 1e-6;

// Invalid configuration (bad flags, inconsistent model spec). CLI exit 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data. CLI exit 3.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure (factorization breakdown, non-finite objective). CLI exit 4.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace exchgp
