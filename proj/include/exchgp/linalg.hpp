#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <string>

#include "exchgp/common.hpp"

namespace exchgp {

// Cholesky with the project-wide jitter schedule: add kJitterRel * mean(diag)
// to the diagonal, escalate x10 on failure up to kJitterRelMax, then throw.
// jitter_rel_out, when given, receives the relative jitter actually applied.
inline Eigen::LLT<Eigen::MatrixXd> chol_with_jitter(
    const Eigen::MatrixXd& a, const std::string& what,
    double* jitter_rel_out = nullptr) {
  const double mean_diag = a.diagonal().mean();
  double rel = kJitterRel;
  Eigen::LLT<Eigen::MatrixXd> llt;
  for (;;) {
    Eigen::MatrixXd work = a;
    work.diagonal().array() += rel * mean_diag;
    llt.compute(work);
    if (llt.info() == Eigen::Success) {
      if (jitter_rel_out) *jitter_rel_out = rel;
      return llt;
    }
    rel *= 10.0;
    if (rel > kJitterRelMax)
      throw NumericalError(what + ": factorization failed for " +
                           std::to_string(a.rows()) + "x" +
                           std::to_string(a.cols()) +
                           " matrix at maximum jitter " +
                           std::to_string(kJitterRelMax * mean_diag));
  }
}

inline double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace exchgp
