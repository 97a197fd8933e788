#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "exchgp/common.hpp"
#include "exchgp/fit.hpp"
#include "exchgp/linalg.hpp"
#include "exchgp/model.hpp"
#include "exchgp/panel.hpp"

namespace exchgp {

// Posterior predictive for a treated unit's counterfactual path. Noise for
// the predicted unit is included, so intervals are predictive for observed
// outcomes, not the latent function.
struct GaussianPredictive {
  std::vector<RowKey> rows;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline GaussianPredictive posterior_predictive(const ModelSpec& spec,
                                               const HyperParams& theta,
                                               const PanelDataset& data,
                                               const TrainPredSplit& split,
                                               const Eigen::VectorXd& y_train) {
  if (split.pred_rows.empty())
    throw DataError("posterior_predictive: no prediction rows");
  if (y_train.size() != static_cast<Eigen::Index>(split.train_rows.size()))
    throw DataError("posterior_predictive: y length mismatch");

  Eigen::MatrixXd sigma = assemble_cov(spec, theta, data, split.train_rows);
  const auto train = resolve_rows(data, split.train_rows);
  for (std::size_t i = 0; i < train.size(); ++i)
    sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) +=
        theta.omega2_of(
            data.units[static_cast<std::size_t>(train[i].unit)].unit_id);

  const auto llt = chol_with_jitter(sigma, "posterior_predictive");
  const Eigen::MatrixXd kx = cross_cov(spec, theta, data, split.train_rows,
                                       split.pred_rows);
  const Eigen::MatrixXd kss = assemble_cov(spec, theta, data, split.pred_rows);

  GaussianPredictive out;
  out.rows = split.pred_rows;
  out.mean = kx.transpose() * llt.solve(y_train);
  Eigen::MatrixXd v = kss - kx.transpose() * llt.solve(kx);
  v = 0.5 * (v + v.transpose()).eval();
  // The latent conditional variance is nonnegative up to roundoff.
  for (Eigen::Index i = 0; i < v.rows(); ++i) v(i, i) = std::max(v(i, i), 0.0);
  const double omega_star = theta.omega2_of(split.pred_rows.front().unit_id);
  v.diagonal().array() += omega_star;
  out.cov = std::move(v);
  return out;
}

// Fitted-pipeline wrapper: standardizes with the fit's training statistics,
// predicts, and maps the result back to outcome units.
inline GaussianPredictive predict_counterfactual(const ModelSpec& spec,
                                                 const FitResult& fitres,
                                                 const PanelDataset& data,
                                                 const TrainPredSplit& split) {
  const PanelDataset zdata = fitres.standardization.apply(data);
  const Eigen::VectorXd yz = observed_outcomes(zdata, split.train_rows);
  GaussianPredictive pred =
      posterior_predictive(spec, fitres.theta_hat, zdata, split, yz);
  pred.mean = (fitres.standardization.y_mean +
               fitres.standardization.y_sd * pred.mean.array())
                  .matrix();
  pred.cov *= fitres.standardization.y_sd * fitres.standardization.y_sd;
  return pred;
}

// ---------------------------------------------------------------------------
// Causal-effect summaries.
// ---------------------------------------------------------------------------

struct EffectRow {
  int t;
  double mean, sd, lo, hi;  // effect scale (observed minus counterfactual)
};

struct IntervalEstimate {
  double est = 0.0, sd = 0.0, lo = 0.0, hi = 0.0;
};

struct EffectSummary {
  std::vector<EffectRow> per_time;
  IntervalEstimate cumulative;
  IntervalEstimate average;
};

// Per-unit effect distribution: delta = y_observed - counterfactual, which is
// Gaussian with mean y - m* and covariance V*.
struct UnitEffects {
  std::string unit_id;
  std::vector<int> times;
  Eigen::VectorXd delta_mean;
  Eigen::MatrixXd delta_cov;
};

inline UnitEffects unit_effects(const GaussianPredictive& pred,
                                const Eigen::VectorXd& y_observed) {
  if (y_observed.size() != pred.mean.size())
    throw DataError("effects: observed vector length " +
                    std::to_string(y_observed.size()) +
                    " does not match prediction rows " +
                    std::to_string(pred.mean.size()));
  UnitEffects e;
  e.unit_id = pred.rows.front().unit_id;
  for (const auto& r : pred.rows) e.times.push_back(r.t);
  e.delta_mean = y_observed - pred.mean;
  e.delta_cov = pred.cov;
  return e;
}

inline EffectSummary pointwise_effects(const GaussianPredictive& pred,
                                       const Eigen::VectorXd& y_observed) {
  const UnitEffects e = unit_effects(pred, y_observed);
  EffectSummary s;
  for (std::size_t i = 0; i < e.times.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double sd = std::sqrt(e.delta_cov(ii, ii));
    s.per_time.push_back({e.times[i], e.delta_mean[ii], sd,
                          e.delta_mean[ii] - kZ95 * sd,
                          e.delta_mean[ii] + kZ95 * sd});
  }
  return s;
}

inline EffectSummary aggregate_effects(const GaussianPredictive& pred,
                                       const Eigen::VectorXd& y_observed) {
  EffectSummary s = pointwise_effects(pred, y_observed);
  const Eigen::Index n = pred.mean.size();
  double total = 0.0;
  for (const auto& row : s.per_time) total += row.mean;
  const double var_total = pred.cov.sum();  // 1' V* 1
  const double sd_total = std::sqrt(std::max(var_total, 0.0));
  s.cumulative = {total, sd_total, total - kZ95 * sd_total,
                  total + kZ95 * sd_total};
  const double avg = total / static_cast<double>(n);
  const double sd_avg = sd_total / static_cast<double>(n);
  s.average = {avg, sd_avg, avg - kZ95 * sd_avg, avg + kZ95 * sd_avg};
  return s;
}

// ---------------------------------------------------------------------------
// ATT aggregation across treated units, by calendar time.
// ---------------------------------------------------------------------------

struct ATTRow {
  int t;
  int n;
  double mean, sd, lo, hi;  // sd is the standard deviation of the mean
};

struct ATTSeries {
  std::vector<ATTRow> per_week;
  IntervalEstimate total_cumulative;
  IntervalEstimate average_weekly;
};

// Treats unit-level predictive distributions as independent across units;
// within-unit covariance across weeks is taken from each unit's V* when
// accumulating the cumulative total.
inline ATTSeries att_by_time(const std::vector<UnitEffects>& units) {
  if (units.empty()) throw DataError("att_by_time: no unit results");
  std::map<int, std::vector<std::pair<std::size_t, Eigen::Index>>> by_week;
  for (std::size_t u = 0; u < units.size(); ++u)
    for (std::size_t k = 0; k < units[u].times.size(); ++k)
      by_week[units[u].times[k]].push_back({u, static_cast<Eigen::Index>(k)});
  if (by_week.empty()) throw DataError("att_by_time: no weeks to aggregate");

  ATTSeries s;
  std::map<int, double> week_n;
  for (const auto& [t, entries] : by_week) {
    const double n = static_cast<double>(entries.size());
    week_n[t] = n;
    double mean = 0.0, var = 0.0;
    for (const auto& [u, k] : entries) {
      mean += units[u].delta_mean[k];
      var += units[u].delta_cov(k, k);
    }
    mean /= n;
    var /= n * n;
    const double sd = std::sqrt(var);
    s.per_week.push_back({t, static_cast<int>(entries.size()), mean, sd,
                          mean - kZ95 * sd, mean + kZ95 * sd});
  }

  // Total cumulative ATT = sum_t ATT_t = sum_u w_u' delta_u with
  // w_{u,k} = 1 / n_{t(u,k)}; cross-unit independence, within-unit full V*.
  double total = 0.0;
  for (const auto& row : s.per_week) total += row.mean;
  double var_total = 0.0;
  for (const auto& u : units) {
    Eigen::VectorXd w(static_cast<Eigen::Index>(u.times.size()));
    for (std::size_t k = 0; k < u.times.size(); ++k)
      w[static_cast<Eigen::Index>(k)] = 1.0 / week_n.at(u.times[k]);
    var_total += w.dot(u.delta_cov * w);
  }
  const double sd_total = std::sqrt(std::max(var_total, 0.0));
  s.total_cumulative = {total, sd_total, total - kZ95 * sd_total,
                        total + kZ95 * sd_total};
  const double nw = static_cast<double>(s.per_week.size());
  const double avg = total / nw, sd_avg = sd_total / nw;
  s.average_weekly = {avg, sd_avg, avg - kZ95 * sd_avg, avg + kZ95 * sd_avg};
  return s;
}

}  // namespace exchgp
