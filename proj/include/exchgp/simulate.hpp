#pragma once

#include <Eigen/Dense>
#include <Eigen/LU>
#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "exchgp/common.hpp"
#include "exchgp/kernels.hpp"
#include "exchgp/linalg.hpp"
#include "exchgp/model.hpp"
#include "exchgp/panel.hpp"
#include "exchgp/rng.hpp"

namespace exchgp {

// Exact sampling layout for the exchangeable prior. theta.omega2 entries, when
// present, override omega2_default for the matching generated unit id.
struct SimLayout {
  ModelSpec spec;
  int m = 2;
  int T = 10;
  std::vector<std::vector<int>> ragged_times;  // optional per-unit override
  int p = 0;
  Eigen::MatrixXd supplied_covariates;  // optional (sum T_i) x p, row-stacked
  HyperParams theta;                    // omega2 map may be sparse
  double omega2_default = 0.25;

  struct Injection {
    std::string unit_id;
    int t0;       // last untreated time
    double shift; // added to post-t0 outcomes
  };
  std::vector<Injection> injections;

  std::vector<std::vector<int>> unit_times() const {
    if (!ragged_times.empty()) {
      if (static_cast<int>(ragged_times.size()) != m)
        throw ConfigError("simulate: ragged_times size != m");
      return ragged_times;
    }
    std::vector<int> grid(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) grid[static_cast<std::size_t>(t)] = t + 1;
    return std::vector<std::vector<int>>(static_cast<std::size_t>(m), grid);
  }

  static std::string unit_name(int i, int m) {
    int width = 1;
    for (int v = m - 1; v >= 10; v /= 10) ++width;
    char buf[32];
    std::snprintf(buf, sizeof buf, "u%0*d", std::min(width, 9), i);
    return buf;
  }
};

namespace detail {

inline Eigen::VectorXd draw_mvn(const Eigen::MatrixXd& cov, SplitMix64& rng,
                                const std::string& what) {
  if (cov.diagonal().maxCoeff() <= 0.0)  // degenerate zero-variance process
    return Eigen::VectorXd::Zero(cov.rows());
  const auto llt = chol_with_jitter(cov, what);
  Eigen::VectorXd z(cov.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.next_normal();
  return llt.matrixL() * z;
}

}  // namespace detail

// Draws mu, each g_i, and the noise from their exact multivariate normals and
// sums them, a deliberately different route from assemble_cov so the two can
// cross-check each other. Draw order (fixed): shared covariates, mu over the
// union time grid, shared-covariate mu, then per unit in id order its
// covariates, g_i1, g_i2, and finally the noise row by row.
inline PanelDataset sample_prior(const SimLayout& layout, std::uint64_t seed) {
  layout.spec.validate(layout.p);
  const auto times = layout.unit_times();
  SplitMix64 rng(seed);

  // Union grid for the shared process.
  std::vector<int> grid;
  for (const auto& ts : times) grid.insert(grid.end(), ts.begin(), ts.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  std::map<int, Eigen::Index> grid_pos;
  for (std::size_t i = 0; i < grid.size(); ++i)
    grid_pos[grid[i]] = static_cast<Eigen::Index>(i);
  const Eigen::Index G = static_cast<Eigen::Index>(grid.size());

  const KernelSpec ktime = layout.spec.time_kernel == TimeKernel::OU
                               ? KernelSpec::ou_time(layout.theta.ell_time)
                               : KernelSpec::rbf_time(layout.theta.ell_time);
  Eigen::VectorXd grid_t(G);
  for (Eigen::Index i = 0; i < G; ++i) grid_t[i] = grid[static_cast<std::size_t>(i)];

  // Shared covariate columns are global: one draw per grid time, replicated
  // across units.
  Eigen::MatrixXd shared_x(G, static_cast<Eigen::Index>(
                                  layout.spec.shared_covariate_dims.size()));
  for (Eigen::Index i = 0; i < shared_x.rows(); ++i)
    for (Eigen::Index j = 0; j < shared_x.cols(); ++j)
      shared_x(i, j) = rng.next_normal();

  const Eigen::MatrixXd kt_grid = kernel_gram_times(ktime, grid_t, grid_t);
  const Eigen::VectorXd mu_t =
      detail::draw_mvn(layout.theta.sigma_mu2 * kt_grid, rng, "sample mu");

  Eigen::VectorXd mu_x = Eigen::VectorXd::Zero(G);
  if (layout.spec.has_shared()) {
    const double ell_sx = layout.theta.ell_x[layout.theta.ell_x.size() - 1];
    const KernelSpec ksx = KernelSpec::rbf_cov(ell_sx);
    mu_x = detail::draw_mvn(
        layout.theta.sigma_mu2 * kernel_gram(ksx, shared_x, shared_x), rng,
        "sample shared-covariate mu");
  }

  PanelDataset data;
  for (int j = 0; j < layout.p; ++j)
    data.covariate_names.push_back("x" + std::to_string(j + 1));

  Eigen::Index supplied_offset = 0;
  for (int i = 0; i < layout.m; ++i) {
    const auto& ts = times[static_cast<std::size_t>(i)];
    const Eigen::Index Ti = static_cast<Eigen::Index>(ts.size());
    UnitRecord u;
    u.unit_id = SimLayout::unit_name(i, layout.m);

    u.times = ts;
    u.covariates.resize(Ti, layout.p);
    for (Eigen::Index r = 0; r < Ti; ++r)
      for (int j = 0; j < layout.p; ++j) {
        if (layout.supplied_covariates.size() > 0)
          u.covariates(r, j) = layout.supplied_covariates(supplied_offset + r, j);
        else
          u.covariates(r, j) = rng.next_normal();
      }
    // Overwrite shared columns with the global draw.
    for (std::size_t sj = 0; sj < layout.spec.shared_covariate_dims.size(); ++sj)
      for (Eigen::Index r = 0; r < Ti; ++r)
        u.covariates(r, layout.spec.shared_covariate_dims[sj]) =
            shared_x(grid_pos.at(ts[static_cast<std::size_t>(r)]),
                     static_cast<Eigen::Index>(sj));
    supplied_offset += Ti;

    Eigen::VectorXd ti(Ti);
    for (Eigen::Index r = 0; r < Ti; ++r) ti[r] = ts[static_cast<std::size_t>(r)];
    const Eigen::VectorXd g1 = detail::draw_mvn(
        layout.theta.sigma_g1_2 * kernel_gram_times(ktime, ti, ti), rng,
        "sample g1");

    Eigen::VectorXd g2 = Eigen::VectorXd::Zero(Ti);
    if (layout.spec.use_unit_covariates) {
      const auto dims = layout.spec.unit_covariate_dims(layout.p);
      Eigen::MatrixXd xu(Ti, static_cast<Eigen::Index>(dims.size()));
      for (Eigen::Index r = 0; r < Ti; ++r)
        for (std::size_t j = 0; j < dims.size(); ++j)
          xu(r, static_cast<Eigen::Index>(j)) = u.covariates(r, dims[j]);
      const int nl = layout.spec.n_unit_lengthscales(layout.p);
      KernelSpec kx = layout.spec.covariate_kernel == CovKernel::RBFARD
                          ? KernelSpec::rbf_cov_ard(layout.theta.ell_x.head(nl))
                          : KernelSpec::rbf_cov(layout.theta.ell_x[0]);
      g2 = detail::draw_mvn(layout.theta.sigma_g2_2 * kernel_gram(kx, xu, xu),
                            rng, "sample g2");
    }

    const auto ow = layout.theta.omega2.find(u.unit_id);
    const double omega2 =
        ow != layout.theta.omega2.end() ? ow->second : layout.omega2_default;

    u.outcomes.resize(Ti);
    for (Eigen::Index r = 0; r < Ti; ++r) {
      const Eigen::Index g = grid_pos.at(ts[static_cast<std::size_t>(r)]);
      u.outcomes[r] =
          mu_t[g] + mu_x[g] + g1[r] + g2[r] + std::sqrt(omega2) * rng.next_normal();
    }

    for (const auto& inj : layout.injections) {
      if (inj.unit_id != u.unit_id) continue;
      u.treatment_time = inj.t0;
      for (Eigen::Index r = 0; r < Ti; ++r)
        if (ts[static_cast<std::size_t>(r)] > inj.t0) u.outcomes[r] += inj.shift;
    }
    data.units.push_back(std::move(u));
  }
  data.validate();
  return data;
}

// Dense Schur-complement conditioning on an explicit joint covariance: the
// test oracle for the production predictor. Uses a pivoted LU solve, not the
// Cholesky path the predictor takes.
struct ConditionResult {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline ConditionResult brute_force_condition(
    const Eigen::MatrixXd& joint_cov, const std::vector<Eigen::Index>& obs_idx,
    const std::vector<Eigen::Index>& target_idx, const Eigen::VectorXd& y_obs) {
  if (joint_cov.rows() != joint_cov.cols())
    throw DataError("brute_force_condition: joint covariance not square");
  for (Eigen::Index i : obs_idx)
    for (Eigen::Index j : target_idx)
      if (i == j)
        throw DataError("brute_force_condition: index sets not disjoint");
  if (static_cast<Eigen::Index>(obs_idx.size()) != y_obs.size())
    throw DataError("brute_force_condition: y_obs length mismatch");

  const Eigen::Index no = static_cast<Eigen::Index>(obs_idx.size());
  const Eigen::Index nt = static_cast<Eigen::Index>(target_idx.size());
  Eigen::MatrixXd s_oo(no, no), s_to(nt, no), s_tt(nt, nt);
  for (Eigen::Index a = 0; a < no; ++a)
    for (Eigen::Index b = 0; b < no; ++b)
      s_oo(a, b) = joint_cov(obs_idx[static_cast<std::size_t>(a)],
                             obs_idx[static_cast<std::size_t>(b)]);
  for (Eigen::Index a = 0; a < nt; ++a) {
    for (Eigen::Index b = 0; b < no; ++b)
      s_to(a, b) = joint_cov(target_idx[static_cast<std::size_t>(a)],
                             obs_idx[static_cast<std::size_t>(b)]);
    for (Eigen::Index b = 0; b < nt; ++b)
      s_tt(a, b) = joint_cov(target_idx[static_cast<std::size_t>(a)],
                             target_idx[static_cast<std::size_t>(b)]);
  }

  Eigen::FullPivLU<Eigen::MatrixXd> lu(s_oo);
  if (!lu.isInvertible())
    throw NumericalError("brute_force_condition: observed block is singular");
  ConditionResult out;
  out.mean = s_to * lu.solve(y_obs);
  out.cov = s_tt - s_to * lu.solve(s_to.transpose());
  return out;
}

}  // namespace exchgp
