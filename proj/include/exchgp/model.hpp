#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "exchgp/common.hpp"
#include "exchgp/kernels.hpp"
#include "exchgp/linalg.hpp"
#include "exchgp/panel.hpp"

namespace exchgp {

enum class TimeKernel { OU, RBF };
enum class CovKernel { RBF, RBFARD };

// Which processes enter the latent decomposition. Every unit loads with
// weight 1 on the shared process; deviations are per unit:
//   f_i(t) = mu(t) [+ mu_x(x_shared)] + g_i1(t) [+ g_i2(x_unit)]
struct ModelSpec {
  TimeKernel time_kernel = TimeKernel::OU;
  bool use_unit_covariates = false;
  CovKernel covariate_kernel = CovKernel::RBF;
  std::vector<int> shared_covariate_dims;  // 0-based column indices, sorted

  bool has_shared() const { return !shared_covariate_dims.empty(); }

  // Columns feeding the per-unit covariate deviation kernel: the complement
  // of the shared dims.
  std::vector<int> unit_covariate_dims(int p) const {
    std::vector<int> dims;
    for (int j = 0; j < p; ++j)
      if (std::find(shared_covariate_dims.begin(), shared_covariate_dims.end(),
                    j) == shared_covariate_dims.end())
        dims.push_back(j);
    return dims;
  }

  int n_unit_lengthscales(int p) const {
    if (!use_unit_covariates) return 0;
    const int pu = static_cast<int>(unit_covariate_dims(p).size());
    return covariate_kernel == CovKernel::RBFARD ? pu : 1;
  }
  // ell_x layout: unit-kernel lengthscales first, then one shared-kernel
  // lengthscale when shared dims are configured.
  int ell_x_arity(int p) const {
    return n_unit_lengthscales(p) + (has_shared() ? 1 : 0);
  }

  void validate(int p) const {
    for (int j : shared_covariate_dims)
      if (j < 0 || j >= p)
        throw ConfigError("model: shared covariate dim " + std::to_string(j) +
                          " out of range for p=" + std::to_string(p));
    if (use_unit_covariates) {
      if (p == 0)
        throw ConfigError("model: covariate kernel requested but data has p=0");
      if (unit_covariate_dims(p).empty())
        throw ConfigError(
            "model: all covariate columns are shared; none left for the "
            "unit-deviation kernel");
    }
  }
};

// The six named presets exposed by the CLI.
inline ModelSpec model_preset(const std::string& name) {
  ModelSpec s;
  if (name == "ou-time") {
    s.time_kernel = TimeKernel::OU;
  } else if (name == "rbf-time") {
    s.time_kernel = TimeKernel::RBF;
  } else if (name == "ou-time-cov") {
    s.time_kernel = TimeKernel::OU;
    s.use_unit_covariates = true;
    s.covariate_kernel = CovKernel::RBF;
  } else if (name == "rbf-time-cov") {
    s.time_kernel = TimeKernel::RBF;
    s.use_unit_covariates = true;
    s.covariate_kernel = CovKernel::RBF;
  } else if (name == "ou-time-rbf-cov-ard") {
    s.time_kernel = TimeKernel::OU;
    s.use_unit_covariates = true;
    s.covariate_kernel = CovKernel::RBFARD;
  } else if (name == "rbf-time-cov-ard") {
    s.time_kernel = TimeKernel::RBF;
    s.use_unit_covariates = true;
    s.covariate_kernel = CovKernel::RBFARD;
  } else {
    throw ConfigError("unknown model preset '" + name +
                      "' (expected one of: ou-time, rbf-time, ou-time-cov, "
                      "rbf-time-cov, ou-time-rbf-cov-ard, rbf-time-cov-ard)");
  }
  return s;
}

inline const std::vector<std::string>& model_preset_names() {
  static const std::vector<std::string> names = {
      "ou-time",     "rbf-time",           "ou-time-cov",
      "rbf-time-cov", "ou-time-rbf-cov-ard", "rbf-time-cov-ard"};
  return names;
}

struct HyperParams {
  double sigma_mu2 = 1.0;   // shared-process variance
  double sigma_g1_2 = 1.0;  // unit time-deviation variance
  double sigma_g2_2 = 0.0;  // unit covariate-deviation variance (0 if unused)
  double ell_time = 1.0;
  Eigen::VectorXd ell_x;    // see ModelSpec::ell_x_arity for the layout
  std::map<std::string, double> omega2;  // per-unit noise variance

  void validate(const ModelSpec& spec, int p) const {
    if (!(sigma_mu2 >= kVarianceFloor) || !(sigma_g1_2 >= kVarianceFloor))
      throw ConfigError("hyperparams: sigma_mu2/sigma_g1_2 below variance floor");
    if (spec.use_unit_covariates && !(sigma_g2_2 >= kVarianceFloor))
      throw ConfigError("hyperparams: sigma_g2_2 below variance floor");
    if (!spec.use_unit_covariates && sigma_g2_2 < 0.0)
      throw ConfigError("hyperparams: sigma_g2_2 negative");
    if (!(ell_time > 0.0)) throw ConfigError("hyperparams: ell_time <= 0");
    if (ell_x.size() != spec.ell_x_arity(p))
      throw ConfigError("hyperparams: ell_x has " + std::to_string(ell_x.size()) +
                        " entries, model expects " +
                        std::to_string(spec.ell_x_arity(p)));
    for (Eigen::Index j = 0; j < ell_x.size(); ++j)
      if (!(ell_x[j] > 0.0)) throw ConfigError("hyperparams: ell_x entry <= 0");
    for (const auto& [id, w2] : omega2)
      if (!(w2 >= kVarianceFloor))
        throw ConfigError("hyperparams: omega2 for unit '" + id +
                          "' below variance floor");
  }

  double omega2_of(const std::string& unit_id) const {
    auto it = omega2.find(unit_id);
    if (it == omega2.end())
      throw ConfigError("hyperparams: no omega2 for unit '" + unit_id + "'");
    return it->second;
  }
};

// ---------------------------------------------------------------------------
// Row resolution: (unit_id, t) keys -> dense observation rows.
// ---------------------------------------------------------------------------

struct ObsRow {
  int unit;  // index into data.units
  double t;
  Eigen::RowVectorXd x;  // full covariate row (may be empty)
};

inline std::vector<ObsRow> resolve_rows(const PanelDataset& data,
                                        const std::vector<RowKey>& keys) {
  std::vector<ObsRow> rows;
  rows.reserve(keys.size());
  int last_unit = -1;
  std::string last_id;
  for (const auto& key : keys) {
    if (key.unit_id != last_id) {
      last_unit = data.unit_index(key.unit_id);
      last_id = key.unit_id;
      if (last_unit < 0)
        throw DataError("row (" + key.unit_id + ", " + std::to_string(key.t) +
                        "): unknown unit");
    }
    const UnitRecord& u = data.units[static_cast<std::size_t>(last_unit)];
    const int r = u.row_of_time(key.t);
    if (r < 0)
      throw DataError("row (" + key.unit_id + ", " + std::to_string(key.t) +
                      "): time not observed for this unit");
    rows.push_back({last_unit, static_cast<double>(key.t), u.covariates.row(r)});
  }
  return rows;
}

namespace detail {

inline double time_corr(TimeKernel kind, double ell, double ta, double tb) {
  const double d = ta - tb;
  return kind == TimeKernel::OU ? std::exp(-std::abs(d) / ell)
                                : std::exp(-d * d / (2.0 * ell * ell));
}

// Squared distance over a column subset, each dim scaled by its lengthscale
// (isotropic kernels pass a single repeated lengthscale).
inline double scaled_sqdist(const Eigen::RowVectorXd& a,
                            const Eigen::RowVectorXd& b,
                            const std::vector<int>& dims,
                            const Eigen::VectorXd& ells, bool ard) {
  double q = 0.0;
  for (std::size_t j = 0; j < dims.size(); ++j) {
    const double ell = ard ? ells[static_cast<Eigen::Index>(j)] : ells[0];
    const double d = (a[dims[j]] - b[dims[j]]) / ell;
    q += d * d;
  }
  return q;
}

}  // namespace detail

// Latent covariance entry between two observation rows (no noise):
//   sigma_mu2 * (k_time + k_shared_x) + I{same unit} * (sigma_g1_2 * k_time
//   + sigma_g2_2 * k_x)
inline double latent_cov_entry(const ModelSpec& spec, const HyperParams& theta,
                               const ObsRow& a, const ObsRow& b) {
  const double kt =
      detail::time_corr(spec.time_kernel, theta.ell_time, a.t, b.t);
  double v = theta.sigma_mu2 * kt;
  const int p = static_cast<int>(a.x.size());
  if (spec.has_shared()) {
    const double ell_sx = theta.ell_x[theta.ell_x.size() - 1];
    Eigen::VectorXd one = Eigen::VectorXd::Constant(1, ell_sx);
    const double q = detail::scaled_sqdist(a.x, b.x, spec.shared_covariate_dims,
                                           one, false);
    v += theta.sigma_mu2 * std::exp(-0.5 * q);
  }
  if (a.unit == b.unit) {
    v += theta.sigma_g1_2 * kt;
    if (spec.use_unit_covariates) {
      const auto dims = spec.unit_covariate_dims(p);
      const bool ard = spec.covariate_kernel == CovKernel::RBFARD;
      const double q = detail::scaled_sqdist(a.x, b.x, dims,
                                             theta.ell_x.head(spec.n_unit_lengthscales(p)),
                                             ard);
      v += theta.sigma_g2_2 * std::exp(-0.5 * q);
    }
  }
  return v;
}

// Latent covariance over an ordered row list. Symmetric PSD; noise is the
// caller's business.
inline Eigen::MatrixXd assemble_cov(const ModelSpec& spec,
                                    const HyperParams& theta,
                                    const PanelDataset& data,
                                    const std::vector<RowKey>& keys) {
  if (keys.empty()) throw DataError("assemble_cov: empty row list");
  spec.validate(data.n_covariates());
  theta.validate(spec, data.n_covariates());
  const auto rows = resolve_rows(data, keys);
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = latent_cov_entry(spec, theta, rows[i], rows[j]);
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  return K;
}

// Latent cross-covariance between train and prediction rows. All pred rows
// must belong to one unit; the same-unit branch fires against that unit's
// training rows.
inline Eigen::MatrixXd cross_cov(const ModelSpec& spec, const HyperParams& theta,
                                 const PanelDataset& data,
                                 const std::vector<RowKey>& train_keys,
                                 const std::vector<RowKey>& pred_keys) {
  if (pred_keys.empty()) throw DataError("cross_cov: empty prediction rows");
  for (const auto& k : pred_keys)
    if (k.unit_id != pred_keys.front().unit_id)
      throw DataError("cross_cov: prediction rows span multiple units");
  const auto train = resolve_rows(data, train_keys);
  const auto pred = resolve_rows(data, pred_keys);
  Eigen::MatrixXd K(static_cast<Eigen::Index>(train.size()),
                    static_cast<Eigen::Index>(pred.size()));
  for (std::size_t i = 0; i < train.size(); ++i)
    for (std::size_t j = 0; j < pred.size(); ++j)
      K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          latent_cov_entry(spec, theta, train[i], pred[j]);
  return K;
}

// ---------------------------------------------------------------------------
// Unconstrained parameter vector <-> HyperParams.
// Variances map as v = floor + exp(u) so the floor invariant holds everywhere
// along an optimization path; lengthscales map as ell = exp(u).
// ---------------------------------------------------------------------------

struct ParamLayout {
  ModelSpec spec;
  int p = 0;
  std::vector<std::string> unit_ids;  // omega order

  int n_unit_ells() const { return spec.n_unit_lengthscales(p); }
  bool has_shared_ell() const { return spec.has_shared(); }
  int n_variances() const { return spec.use_unit_covariates ? 3 : 2; }
  int idx_ell_time() const { return n_variances(); }
  int idx_ell_x() const { return idx_ell_time() + 1; }
  int idx_omega() const {
    return idx_ell_x() + n_unit_ells() + (has_shared_ell() ? 1 : 0);
  }
  int size() const { return idx_omega() + static_cast<int>(unit_ids.size()); }

  std::vector<std::string> names() const {
    std::vector<std::string> out = {"sigma_mu2", "sigma_g1_2"};
    if (spec.use_unit_covariates) out.push_back("sigma_g2_2");
    out.push_back("ell_time");
    for (int j = 0; j < n_unit_ells(); ++j)
      out.push_back(n_unit_ells() > 1 ? "ell_x" + std::to_string(j) : "ell_x");
    if (has_shared_ell()) out.push_back("ell_shared");
    for (const auto& id : unit_ids) out.push_back("omega2:" + id);
    return out;
  }

  static double to_unconstrained_var(double v) {
    return std::log(std::max(v - kVarianceFloor, 1e-300));
  }
  static double from_unconstrained_var(double u) {
    return kVarianceFloor + std::exp(u);
  }

  Eigen::VectorXd pack(const HyperParams& theta) const {
    Eigen::VectorXd u(size());
    int k = 0;
    u[k++] = to_unconstrained_var(theta.sigma_mu2);
    u[k++] = to_unconstrained_var(theta.sigma_g1_2);
    if (spec.use_unit_covariates) u[k++] = to_unconstrained_var(theta.sigma_g2_2);
    u[k++] = std::log(theta.ell_time);
    for (Eigen::Index j = 0; j < theta.ell_x.size(); ++j)
      u[k++] = std::log(theta.ell_x[j]);
    for (const auto& id : unit_ids) u[k++] = to_unconstrained_var(theta.omega2_of(id));
    return u;
  }

  HyperParams unpack(const Eigen::VectorXd& u) const {
    HyperParams theta;
    int k = 0;
    theta.sigma_mu2 = from_unconstrained_var(u[k++]);
    theta.sigma_g1_2 = from_unconstrained_var(u[k++]);
    theta.sigma_g2_2 =
        spec.use_unit_covariates ? from_unconstrained_var(u[k++]) : 0.0;
    theta.ell_time = std::exp(u[k++]);
    const int nell = n_unit_ells() + (has_shared_ell() ? 1 : 0);
    theta.ell_x.resize(nell);
    for (int j = 0; j < nell; ++j) theta.ell_x[j] = std::exp(u[k++]);
    for (const auto& id : unit_ids)
      theta.omega2[id] = from_unconstrained_var(u[k++]);
    return theta;
  }
};

// ---------------------------------------------------------------------------
// LmlWorkspace: exact log marginal likelihood and its analytic gradient
// over the unconstrained parameterization, with per-fit precomputation of
// the distance structures. Rows are reordered internally to unit-major
// contiguous blocks; the value and gradient are order-invariant.
// ---------------------------------------------------------------------------

class LmlWorkspace {
 public:
  LmlWorkspace(ModelSpec spec, const PanelDataset& data,
               const std::vector<RowKey>& train_keys)
      : spec_(std::move(spec)), p_(data.n_covariates()) {
    spec_.validate(p_);
    if (train_keys.size() < 1) throw DataError("lml: no training rows");
    auto rows = resolve_rows(data, train_keys);
    n_ = static_cast<Eigen::Index>(rows.size());

    perm_.resize(static_cast<std::size_t>(n_));
    std::iota(perm_.begin(), perm_.end(), 0);
    std::stable_sort(perm_.begin(), perm_.end(), [&](std::size_t a, std::size_t b) {
      if (rows[a].unit != rows[b].unit) return rows[a].unit < rows[b].unit;
      return rows[a].t < rows[b].t;
    });

    std::vector<ObsRow> ordered;
    ordered.reserve(rows.size());
    for (std::size_t i : perm_) ordered.push_back(rows[i]);

    // Unit blocks (contiguous after the sort).
    for (Eigen::Index i = 0; i < n_;) {
      Eigen::Index j = i;
      while (j < n_ && ordered[j].unit == ordered[i].unit) ++j;
      blocks_.push_back({i, j - i});
      block_unit_ids_.push_back(
          data.units[static_cast<std::size_t>(ordered[i].unit)].unit_id);
      i = j;
    }
    layout_.spec = spec_;
    layout_.p = p_;
    layout_.unit_ids = block_unit_ids_;

    // Pairwise |dt| over all rows.
    dt_abs_.resize(n_, n_);
    for (Eigen::Index i = 0; i < n_; ++i)
      for (Eigen::Index j = 0; j < n_; ++j)
        dt_abs_(i, j) = std::abs(ordered[i].t - ordered[j].t);

    // Shared-covariate squared distances (lengthscale-free).
    if (spec_.has_shared()) {
      dsx2_.resize(n_, n_);
      const auto& dims = spec_.shared_covariate_dims;
      for (Eigen::Index i = 0; i < n_; ++i)
        for (Eigen::Index j = 0; j < n_; ++j) {
          double q = 0.0;
          for (int d : dims) {
            const double dx = ordered[i].x[d] - ordered[j].x[d];
            q += dx * dx;
          }
          dsx2_(i, j) = q;
        }
    }

    // Per-unit covariate squared-difference blocks, one per ARD dimension
    // (or a single pooled block for the isotropic kernel).
    if (spec_.use_unit_covariates) {
      const auto dims = spec_.unit_covariate_dims(p_);
      const bool ard = spec_.covariate_kernel == CovKernel::RBFARD;
      const std::size_t nd = ard ? dims.size() : 1;
      for (const auto& blk : blocks_) {
        std::vector<Eigen::MatrixXd> d2(nd);
        for (auto& m : d2) m = Eigen::MatrixXd::Zero(blk.len, blk.len);
        for (Eigen::Index a = 0; a < blk.len; ++a)
          for (Eigen::Index b = 0; b < blk.len; ++b)
            for (std::size_t j = 0; j < dims.size(); ++j) {
              const double dx = ordered[blk.start + a].x[dims[j]] -
                                ordered[blk.start + b].x[dims[j]];
              d2[ard ? j : 0](a, b) += dx * dx;
            }
        unit_d2_.push_back(std::move(d2));
      }
    }
  }

  const ParamLayout& layout() const { return layout_; }
  Eigen::Index n() const { return n_; }

  struct Eval {
    double lml;
    Eigen::VectorXd grad;  // empty unless requested
  };

  Eval value(const HyperParams& theta, const Eigen::VectorXd& y) const {
    return eval(theta, y, false);
  }
  Eval value_and_gradient(const HyperParams& theta,
                          const Eigen::VectorXd& y) const {
    return eval(theta, y, true);
  }

 private:
  struct Block {
    Eigen::Index start, len;
  };

  Eval eval(const HyperParams& theta, const Eigen::VectorXd& y,
            bool want_grad) const {
    theta.validate(spec_, p_);
    if (y.size() != n_)
      throw DataError("lml: y has " + std::to_string(y.size()) +
                      " entries for " + std::to_string(n_) + " train rows");
    Eigen::VectorXd yo(n_);
    for (Eigen::Index i = 0; i < n_; ++i)
      yo[i] = y[static_cast<Eigen::Index>(perm_[static_cast<std::size_t>(i)])];

    const double ell_t = theta.ell_time;
    Eigen::MatrixXd kt;
    if (spec_.time_kernel == TimeKernel::OU)
      kt = (-dt_abs_.array() / ell_t).exp();
    else
      kt = (-dt_abs_.array().square() / (2.0 * ell_t * ell_t)).exp();

    Eigen::MatrixXd ksx;
    if (spec_.has_shared()) {
      const double ell_sx = theta.ell_x[theta.ell_x.size() - 1];
      ksx = (-dsx2_.array() / (2.0 * ell_sx * ell_sx)).exp().matrix();
    }

    // Sigma = sigma_mu2 * (kt + ksx) + per-block terms + noise.
    Eigen::MatrixXd sigma = theta.sigma_mu2 * kt;
    if (ksx.size() > 0) sigma += theta.sigma_mu2 * ksx;

    std::vector<Eigen::MatrixXd> kx(blocks_.size());
    const int n_uell = spec_.n_unit_lengthscales(p_);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto& blk = blocks_[b];
      sigma.block(blk.start, blk.start, blk.len, blk.len) +=
          theta.sigma_g1_2 * kt.block(blk.start, blk.start, blk.len, blk.len);
      if (spec_.use_unit_covariates) {
        Eigen::ArrayXXd q = Eigen::ArrayXXd::Zero(blk.len, blk.len);
        for (std::size_t d = 0; d < unit_d2_[b].size(); ++d) {
          const double ell = theta.ell_x[static_cast<Eigen::Index>(
              unit_d2_[b].size() > 1 ? d : 0)];
          q += unit_d2_[b][d].array() / (ell * ell);
        }
        kx[b] = (-0.5 * q).exp().matrix();
        sigma.block(blk.start, blk.start, blk.len, blk.len) +=
            theta.sigma_g2_2 * kx[b];
      }
      sigma.block(blk.start, blk.start, blk.len, blk.len).diagonal().array() +=
          theta.omega2_of(block_unit_ids_[b]);
    }

    double jitter_rel = kJitterRel;
    const Eigen::LLT<Eigen::MatrixXd> llt =
        chol_with_jitter(sigma, "lml", &jitter_rel);
    const Eigen::VectorXd alpha = llt.solve(yo);
    const double logdet = log_det_from_llt(llt);
    Eval out;
    out.lml = -0.5 * yo.dot(alpha) - 0.5 * logdet -
              0.5 * static_cast<double>(n_) * std::log(2.0 * std::numbers::pi);
    if (!want_grad) return out;

    // grad_k = 0.5 * (alpha' dSigma alpha - tr(Sigma^-1 dSigma)) * dtheta/du.
    // The applied jitter is jitter_rel * mean(diag Sigma(theta)), so dSigma
    // picks up an extra jitter_rel * d(meandiag)/dtheta * I for the variance
    // parameters (mean-diag derivative 1 per variance term, T_i/n per omega_i,
    // 0 for lengthscales since the kernels are unit-diagonal).
    const Eigen::MatrixXd ainv =
        llt.solve(Eigen::MatrixXd::Identity(n_, n_));
    const double jdot = alpha.squaredNorm() - ainv.trace();
    const double nd = static_cast<double>(n_);
    out.grad.resize(layout_.size());
    int k = 0;

    auto full_term = [&](const Eigen::MatrixXd& m) {
      return 0.5 * (alpha.dot(m * alpha) - (ainv.array() * m.array()).sum());
    };
    auto block_term = [&](std::size_t b, const auto& m) {
      const auto& blk = blocks_[b];
      const auto a = alpha.segment(blk.start, blk.len);
      const auto ai = ainv.block(blk.start, blk.start, blk.len, blk.len);
      return 0.5 * (a.dot(m * a) - (ai.array() * m.array()).sum());
    };

    // sigma_mu2
    {
      Eigen::MatrixXd s = kt;
      if (ksx.size() > 0) s += ksx;
      const double c = spec_.has_shared() ? 2.0 : 1.0;
      out.grad[k++] = (full_term(s) + 0.5 * jitter_rel * c * jdot) *
                      (theta.sigma_mu2 - kVarianceFloor);
    }
    // sigma_g1_2
    {
      double g = 0.0;
      for (std::size_t b = 0; b < blocks_.size(); ++b)
        g += block_term(b, kt.block(blocks_[b].start, blocks_[b].start,
                                    blocks_[b].len, blocks_[b].len));
      out.grad[k++] = (g + 0.5 * jitter_rel * jdot) *
                      (theta.sigma_g1_2 - kVarianceFloor);
    }
    // sigma_g2_2
    if (spec_.use_unit_covariates) {
      double g = 0.0;
      for (std::size_t b = 0; b < blocks_.size(); ++b) g += block_term(b, kx[b]);
      out.grad[k++] = (g + 0.5 * jitter_rel * jdot) *
                      (theta.sigma_g2_2 - kVarianceFloor);
    }
    // ell_time
    {
      Eigen::MatrixXd dkt;
      if (spec_.time_kernel == TimeKernel::OU)
        dkt = kt.array() * dt_abs_.array() / (ell_t * ell_t);
      else
        dkt = kt.array() * dt_abs_.array().square() / (ell_t * ell_t * ell_t);
      double g = theta.sigma_mu2 * full_term(dkt);
      for (std::size_t b = 0; b < blocks_.size(); ++b)
        g += theta.sigma_g1_2 *
             block_term(b, dkt.block(blocks_[b].start, blocks_[b].start,
                                     blocks_[b].len, blocks_[b].len));
      out.grad[k++] = g * ell_t;
    }
    // unit covariate lengthscales
    for (int j = 0; j < n_uell; ++j) {
      const double ell = theta.ell_x[j];
      double g = 0.0;
      for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const Eigen::MatrixXd dkx =
            (kx[b].array() * unit_d2_[b][static_cast<std::size_t>(j)].array() /
             (ell * ell * ell))
                .matrix();
        g += theta.sigma_g2_2 * block_term(b, dkx);
      }
      out.grad[k++] = g * ell;
    }
    // shared lengthscale
    if (spec_.has_shared()) {
      const double ell = theta.ell_x[theta.ell_x.size() - 1];
      const Eigen::MatrixXd dksx =
          (ksx.array() * dsx2_.array() / (ell * ell * ell)).matrix();
      out.grad[k++] = theta.sigma_mu2 * full_term(dksx) * ell;
    }
    // per-unit noise
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto& blk = blocks_[b];
      const double quad = alpha.segment(blk.start, blk.len).squaredNorm();
      const double tr = ainv.diagonal().segment(blk.start, blk.len).sum();
      const double c = static_cast<double>(blk.len) / nd;
      out.grad[k++] = (0.5 * (quad - tr) + 0.5 * jitter_rel * c * jdot) *
                      (theta.omega2_of(block_unit_ids_[b]) - kVarianceFloor);
    }
    return out;
  }

  ModelSpec spec_;
  int p_;
  Eigen::Index n_ = 0;
  std::vector<std::size_t> perm_;
  std::vector<Block> blocks_;
  std::vector<std::string> block_unit_ids_;
  ParamLayout layout_;
  Eigen::MatrixXd dt_abs_;
  Eigen::MatrixXd dsx2_;
  std::vector<std::vector<Eigen::MatrixXd>> unit_d2_;
};

// One-shot wrappers over the workspace.
inline double log_marginal_likelihood(const ModelSpec& spec,
                                      const HyperParams& theta,
                                      const PanelDataset& data,
                                      const TrainPredSplit& split,
                                      const Eigen::VectorXd& y) {
  return LmlWorkspace(spec, data, split.train_rows).value(theta, y).lml;
}

inline Eigen::VectorXd lml_gradient(const ModelSpec& spec,
                                    const HyperParams& theta,
                                    const PanelDataset& data,
                                    const TrainPredSplit& split,
                                    const Eigen::VectorXd& y) {
  return LmlWorkspace(spec, data, split.train_rows)
      .value_and_gradient(theta, y)
      .grad;
}

}  // namespace exchgp
