#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "exchgp/common.hpp"
#include "exchgp/model.hpp"
#include "exchgp/panel.hpp"
#include "exchgp/rng.hpp"

namespace exchgp {

struct FitOptions {
  int restarts = 3;
  int max_iters = 1000;
  double tol = 1e-6;
  std::uint64_t seed = 0;
};

// Training-row z-scoring applied before fitting; predictions are mapped back.
struct Standardization {
  double y_mean = 0.0, y_sd = 1.0;
  Eigen::VectorXd x_mean, x_sd;

  static Standardization from_train_rows(const PanelDataset& data,
                                         const std::vector<RowKey>& train_rows) {
    Standardization s;
    const auto rows = resolve_rows(data, train_rows);
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const UnitRecord& u = data.units[static_cast<std::size_t>(rows[i].unit)];
      y[static_cast<Eigen::Index>(i)] =
          u.outcomes[u.row_of_time(static_cast<int>(rows[i].t))];
    }
    s.y_mean = y.mean();
    s.y_sd = std::sqrt((y.array() - s.y_mean).square().mean());
    if (!(s.y_sd > 1e-12)) s.y_sd = 1.0;

    const int p = data.n_covariates();
    s.x_mean = Eigen::VectorXd::Zero(p);
    s.x_sd = Eigen::VectorXd::Ones(p);
    if (p > 0) {
      Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), p);
      for (std::size_t i = 0; i < rows.size(); ++i)
        x.row(static_cast<Eigen::Index>(i)) = rows[i].x;
      for (int j = 0; j < p; ++j) {
        s.x_mean[j] = x.col(j).mean();
        const double sd = std::sqrt((x.col(j).array() - s.x_mean[j]).square().mean());
        s.x_sd[j] = sd > 1e-12 ? sd : 1.0;
      }
    }
    return s;
  }

  // Z-scored copy of the whole dataset (outcomes and covariates, all rows).
  PanelDataset apply(const PanelDataset& data) const {
    PanelDataset out = data;
    for (auto& u : out.units) {
      u.outcomes = (u.outcomes.array() - y_mean) / y_sd;
      for (Eigen::Index j = 0; j < u.covariates.cols(); ++j)
        u.covariates.col(j) =
            (u.covariates.col(j).array() - x_mean[j]) / x_sd[j];
    }
    return out;
  }

  double to_raw_mean(double z) const { return y_mean + y_sd * z; }
  double to_raw_var(double vz) const { return y_sd * y_sd * vz; }
};

// sigma_g^2 / (sigma_mu^2 + sigma_g^2) with sigma_g^2 = sigma_g1^2 + sigma_g2^2.
inline double intraclass_rho(const HyperParams& theta) {
  const double g = theta.sigma_g1_2 + theta.sigma_g2_2;
  const double denom = theta.sigma_mu2 + g;
  if (!(denom > 0.0))
    throw ConfigError("intraclass_rho: sigma_mu2 + sigma_g2 must be positive");
  return g / denom;
}

inline double intraclass_rho_time(const HyperParams& theta) {
  const double denom = theta.sigma_mu2 + theta.sigma_g1_2;
  if (!(denom > 0.0))
    throw ConfigError("intraclass_rho_time: zero denominator");
  return theta.sigma_g1_2 / denom;
}

struct RestartInfo {
  double init_lml = -std::numeric_limits<double>::infinity();
  double final_lml = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  bool failed = false;
  std::string error;
};

struct FitResult {
  HyperParams theta_hat;  // standardized (z-score) space
  double lml = 0.0;       // standardized space
  int iterations = 0;
  bool converged = false;
  double wall_time_s = 0.0;
  double rho = 0.0;       // rho_total when covariate deviations are active
  double rho_time = 0.0;
  double rho_total = 0.0;
  Standardization standardization;
  std::vector<RestartInfo> restart_info;

  // Variances mapped back to outcome units; lengthscales stay in
  // (standardized-covariate, raw-time) units.
  HyperParams theta_raw() const {
    HyperParams t = theta_hat;
    const double s2 = standardization.y_sd * standardization.y_sd;
    t.sigma_mu2 *= s2;
    t.sigma_g1_2 *= s2;
    t.sigma_g2_2 *= s2;
    for (auto& [id, w] : t.omega2) w *= s2;
    return t;
  }
};

namespace detail {

// Dense BFGS minimization with Armijo backtracking. Objective evaluations
// that throw NumericalError or return non-finite values are treated as
// rejected line-search points.
struct BfgsOutcome {
  Eigen::VectorXd u;
  double f = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

template <typename Fn>
BfgsOutcome bfgs_minimize(Fn&& fn, Eigen::VectorXd u0, int max_iters,
                          double tol) {
  const int d = static_cast<int>(u0.size());
  BfgsOutcome out;
  out.u = std::move(u0);

  Eigen::VectorXd g(d);
  double f = fn(out.u, &g);
  if (!std::isfinite(f))
    throw NumericalError("optimizer: non-finite objective at initialization");

  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(d, d);  // inverse Hessian appx
  for (int iter = 0; iter < max_iters; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() < tol) {
      out.converged = true;
      break;
    }
    Eigen::VectorXd dir = -(h * g);
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {  // reset on a non-descent direction
      h.setIdentity();
      dir = -g;
      slope = g.dot(dir);
      if (!(slope < 0.0)) break;
    }

    double step = 1.0;
    double f_new = std::numeric_limits<double>::infinity();
    Eigen::VectorXd u_new;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      u_new = out.u + step * dir;
      try {
        f_new = fn(u_new, nullptr);
      } catch (const NumericalError&) {
        f_new = std::numeric_limits<double>::infinity();
      }
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    out.iterations = iter + 1;
    if (!accepted) break;  // no admissible step: local stall

    Eigen::VectorXd g_new(d);
    try {
      f_new = fn(u_new, &g_new);
    } catch (const NumericalError&) {
      break;
    }
    const Eigen::VectorXd s = u_new - out.u;
    const Eigen::VectorXd yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      const Eigen::VectorXd hy = h * yv;
      const double yhy = yv.dot(hy);
      // BFGS inverse update.
      h += ((sy + yhy) / (sy * sy)) * (s * s.transpose());
      h -= (hy * s.transpose() + s * hy.transpose()) / sy;
    }
    const double rel_change = std::abs(f - f_new) / std::max(1.0, std::abs(f));
    out.u = u_new;
    f = f_new;
    g = g_new;
    if (rel_change < tol) {
      out.converged = true;
      break;
    }
  }
  out.f = f;
  return out;
}

inline double population_var(const Eigen::VectorXd& v) {
  if (v.size() == 0) return 0.0;
  return (v.array() - v.mean()).square().mean();
}

}  // namespace detail

// Initialization per the fitting contract: sigma_mu2 = Var(y)/2; the
// deviation budget is Var(y)/2 (split evenly between g1 and g2 when
// covariate deviations are active); omega_i^2 = 0.1 Var(y_i);
// ell_time = range/4; ell_x = per-dimension input sd.
inline HyperParams initial_theta(const ModelSpec& spec, const PanelDataset& data,
                                 const std::vector<RowKey>& train_rows,
                                 const Eigen::VectorXd& y) {
  const auto rows = resolve_rows(data, train_rows);
  const int p = data.n_covariates();
  HyperParams theta;
  const double var_y = std::max(detail::population_var(y), kVarianceFloor);
  theta.sigma_mu2 = 0.5 * var_y;
  if (spec.use_unit_covariates) {
    theta.sigma_g1_2 = 0.25 * var_y;
    theta.sigma_g2_2 = 0.25 * var_y;
  } else {
    theta.sigma_g1_2 = 0.5 * var_y;
    theta.sigma_g2_2 = 0.0;
  }

  double t_min = rows.front().t, t_max = rows.front().t;
  for (const auto& r : rows) {
    t_min = std::min(t_min, r.t);
    t_max = std::max(t_max, r.t);
  }
  theta.ell_time = std::max((t_max - t_min) / 4.0, 1e-3);

  const int n_ell = spec.ell_x_arity(p);
  theta.ell_x.resize(n_ell);
  if (n_ell > 0) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), p);
    for (std::size_t i = 0; i < rows.size(); ++i)
      x.row(static_cast<Eigen::Index>(i)) = rows[i].x;
    auto col_sd = [&](int j) {
      const double v = detail::population_var(x.col(j));
      return v > 1e-12 ? std::sqrt(v) : 1.0;
    };
    int k = 0;
    if (spec.use_unit_covariates) {
      const auto dims = spec.unit_covariate_dims(p);
      if (spec.covariate_kernel == CovKernel::RBFARD) {
        for (int dj : dims) theta.ell_x[k++] = col_sd(dj);
      } else {
        double acc = 0.0;
        for (int dj : dims) acc += col_sd(dj) * col_sd(dj);
        theta.ell_x[k++] = std::sqrt(acc / static_cast<double>(dims.size()));
      }
    }
    if (spec.has_shared()) {
      double acc = 0.0;
      for (int dj : spec.shared_covariate_dims) acc += col_sd(dj) * col_sd(dj);
      theta.ell_x[k++] =
          std::sqrt(acc / static_cast<double>(spec.shared_covariate_dims.size()));
    }
  }

  // Per-unit noise from each unit's own training variance.
  std::map<std::string, std::vector<double>> by_unit;
  for (std::size_t i = 0; i < rows.size(); ++i)
    by_unit[data.units[static_cast<std::size_t>(rows[i].unit)].unit_id]
        .push_back(y[static_cast<Eigen::Index>(i)]);
  for (const auto& [id, vals] : by_unit) {
    Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(
        vals.data(), static_cast<Eigen::Index>(vals.size()));
    theta.omega2[id] = std::max(0.1 * detail::population_var(v), kVarianceFloor);
  }
  return theta;
}

// Type-II maximum likelihood over the unconstrained parameterization, best
// of opts.restarts independent starts (start 0 is the data-driven init,
// later starts perturb it by N(0, 0.5^2) per coordinate).
inline FitResult fit(const ModelSpec& spec, const PanelDataset& data,
                     const TrainPredSplit& split, const Eigen::VectorXd& y_raw,
                     const FitOptions& opts = FitOptions{}) {
  const auto t_start = std::chrono::steady_clock::now();
  if (split.train_rows.size() < 2)
    throw DataError("fit: need at least 2 training rows");
  if (y_raw.size() != static_cast<Eigen::Index>(split.train_rows.size()))
    throw DataError("fit: y length does not match train rows");
  if (opts.restarts < 1) throw ConfigError("fit: restarts must be >= 1");
  for (Eigen::Index i = 0; i < y_raw.size(); ++i)
    if (!std::isfinite(y_raw[i]))
      throw NumericalError("fit: non-finite outcome at train row " +
                           std::to_string(i) + " (unit " +
                           split.train_rows[static_cast<std::size_t>(i)].unit_id +
                           ")");

  FitResult res;
  res.standardization = Standardization::from_train_rows(data, split.train_rows);
  const PanelDataset zdata = res.standardization.apply(data);
  const Eigen::VectorXd yz =
      (y_raw.array() - res.standardization.y_mean) / res.standardization.y_sd;

  const LmlWorkspace ws(spec, zdata, split.train_rows);
  const ParamLayout& layout = ws.layout();
  const Eigen::VectorXd u0 = layout.pack(initial_theta(spec, zdata,
                                                       split.train_rows, yz));

  auto objective = [&](const Eigen::VectorXd& u, Eigen::VectorXd* grad) {
    const HyperParams theta = layout.unpack(u);
    if (grad) {
      const auto ev = ws.value_and_gradient(theta, yz);
      *grad = -ev.grad;
      return -ev.lml;
    }
    return -ws.value(theta, yz).lml;
  };

  int best = -1;
  detail::BfgsOutcome best_out;
  res.restart_info.resize(static_cast<std::size_t>(opts.restarts));
  for (int r = 0; r < opts.restarts; ++r) {
    RestartInfo& info = res.restart_info[static_cast<std::size_t>(r)];
    Eigen::VectorXd u = u0;
    if (r > 0) {
      SplitMix64 rng(opts.seed ^ fnv1a64("restart:" + std::to_string(r)));
      for (Eigen::Index i = 0; i < u.size(); ++i) u[i] += 0.5 * rng.next_normal();
    }
    try {
      info.init_lml = -objective(u, nullptr);
      if (!std::isfinite(info.init_lml))
        throw NumericalError("fit: non-finite marginal likelihood at start " +
                             std::to_string(r));
      auto out = detail::bfgs_minimize(objective, u, opts.max_iters, opts.tol);
      info.final_lml = -out.f;
      info.iterations = out.iterations;
      info.converged = out.converged;
      if (best < 0 || -out.f > -best_out.f) {
        best = r;
        best_out = std::move(out);
      }
    } catch (const NumericalError& e) {
      info.failed = true;
      info.error = e.what();
    }
  }
  if (best < 0)
    throw NumericalError("fit: all " + std::to_string(opts.restarts) +
                         " restarts failed (" +
                         res.restart_info.front().error + ")");

  res.theta_hat = layout.unpack(best_out.u);
  res.lml = -best_out.f;
  res.iterations = best_out.iterations;
  res.converged = best_out.converged;
  res.rho_time = intraclass_rho_time(res.theta_hat);
  res.rho_total = intraclass_rho(res.theta_hat);
  res.rho = spec.use_unit_covariates ? res.rho_total : res.rho_time;
  res.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return res;
}

// Convenience overload pulling y from the dataset's outcomes.
inline Eigen::VectorXd observed_outcomes(const PanelDataset& data,
                                         const std::vector<RowKey>& rows) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const UnitRecord* u = data.find_unit(rows[i].unit_id);
    if (!u) throw DataError("observed_outcomes: unknown unit " + rows[i].unit_id);
    const int r = u->row_of_time(rows[i].t);
    if (r < 0)
      throw DataError("observed_outcomes: time " + std::to_string(rows[i].t) +
                      " not observed for unit " + rows[i].unit_id);
    y[static_cast<Eigen::Index>(i)] = u->outcomes[r];
  }
  return y;
}

inline FitResult fit(const ModelSpec& spec, const PanelDataset& data,
                     const TrainPredSplit& split,
                     const FitOptions& opts = FitOptions{}) {
  return fit(spec, data, split, observed_outcomes(data, split.train_rows), opts);
}

}  // namespace exchgp
