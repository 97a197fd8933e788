#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "exchgp/common.hpp"

namespace exchgp {

enum class KernelKind { OUTime, RBFTime, RBFCov, RBFCovARD };

inline const char* kernel_kind_name(KernelKind k) {
  switch (k) {
    case KernelKind::OUTime: return "ou_time";
    case KernelKind::RBFTime: return "rbf_time";
    case KernelKind::RBFCov: return "rbf_cov";
    case KernelKind::RBFCovARD: return "rbf_cov_ard";
  }
  return "?";
}

// Unit-variance correlation kernel. Amplitudes live in the model's variance
// parameters, so eval(a, a) == 1 for every kind.
struct KernelSpec {
  KernelKind kind;
  Eigen::VectorXd lengthscales;  // length 1, or one per dimension for ARD

  static KernelSpec ou_time(double ell) {
    return {KernelKind::OUTime, Eigen::VectorXd::Constant(1, ell)};
  }
  static KernelSpec rbf_time(double ell) {
    return {KernelKind::RBFTime, Eigen::VectorXd::Constant(1, ell)};
  }
  static KernelSpec rbf_cov(double ell) {
    return {KernelKind::RBFCov, Eigen::VectorXd::Constant(1, ell)};
  }
  static KernelSpec rbf_cov_ard(Eigen::VectorXd ells) {
    return {KernelKind::RBFCovARD, std::move(ells)};
  }

  void validate() const {
    if (lengthscales.size() == 0)
      throw ConfigError("kernel: no lengthscale given");
    for (Eigen::Index i = 0; i < lengthscales.size(); ++i)
      if (!(lengthscales[i] > 0.0))
        throw ConfigError("kernel: lengthscale " + std::to_string(i) +
                          " must be positive, got " +
                          std::to_string(lengthscales[i]));
    if (kind != KernelKind::RBFCovARD && lengthscales.size() != 1)
      throw ConfigError("kernel: non-ARD kernel takes exactly one lengthscale");
  }
};

inline double kernel_eval(const KernelSpec& spec,
                          Eigen::Ref<const Eigen::VectorXd> a,
                          Eigen::Ref<const Eigen::VectorXd> b) {
  if (a.size() != b.size())
    throw DataError("kernel eval: input dimensions differ (" +
                    std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()) + ")");
  const double ell0 = spec.lengthscales[0];
  switch (spec.kind) {
    case KernelKind::OUTime: {
      if (a.size() != 1) throw DataError("OU kernel expects scalar time input");
      return std::exp(-std::abs(a[0] - b[0]) / ell0);
    }
    case KernelKind::RBFTime: {
      if (a.size() != 1) throw DataError("RBF time kernel expects scalar input");
      const double d = a[0] - b[0];
      return std::exp(-d * d / (2.0 * ell0 * ell0));
    }
    case KernelKind::RBFCov: {
      if (a.size() < 1) throw DataError("RBF covariate kernel expects p >= 1");
      return std::exp(-(a - b).squaredNorm() / (2.0 * ell0 * ell0));
    }
    case KernelKind::RBFCovARD: {
      if (a.size() != spec.lengthscales.size())
        throw DataError("ARD kernel: input dimension " +
                        std::to_string(a.size()) + " != lengthscale count " +
                        std::to_string(spec.lengthscales.size()));
      double q = 0.0;
      for (Eigen::Index j = 0; j < a.size(); ++j) {
        const double d = (a[j] - b[j]) / spec.lengthscales[j];
        q += d * d;
      }
      return std::exp(-0.5 * q);
    }
  }
  return 0.0;
}

// Scalar-time conveniences.
inline double kernel_eval_time(const KernelSpec& spec, double t, double s) {
  Eigen::VectorXd a(1), b(1);
  a[0] = t;
  b[0] = s;
  return kernel_eval(spec, a, b);
}

// Gram matrix with entry (i, j) = k(A.row(i), B.row(j)).
inline Eigen::MatrixXd kernel_gram(const KernelSpec& spec,
                                   const Eigen::MatrixXd& A,
                                   const Eigen::MatrixXd& B) {
  Eigen::MatrixXd G(A.rows(), B.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < B.rows(); ++j)
      G(i, j) = kernel_eval(spec, A.row(i).transpose(), B.row(j).transpose());
  return G;
}

inline Eigen::MatrixXd kernel_gram_times(const KernelSpec& spec,
                                         const Eigen::VectorXd& ta,
                                         const Eigen::VectorXd& tb) {
  return kernel_gram(spec, ta, tb);
}

}  // namespace exchgp
