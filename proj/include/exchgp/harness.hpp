#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "exchgp/common.hpp"
#include "exchgp/fit.hpp"
#include "exchgp/model.hpp"
#include "exchgp/panel.hpp"
#include "exchgp/predict.hpp"
#include "exchgp/rng.hpp"

namespace exchgp {

// ---------------------------------------------------------------------------
// Accuracy metrics.
// ---------------------------------------------------------------------------

struct Metrics {
  double mape = 0.0;
  double rmse = 0.0;
  double bias = 0.0;      // mean(yhat - y); negative = under-prediction
  double coverage = 0.0;  // fraction inside the 95% interval
  double pi_width = 0.0;  // mean 2 * z * sd
  int n = 0;
  int mape_excluded = 0;  // points with y == 0 skipped by MAPE
};

struct ScoredPoint {
  std::string unit_id;
  int t = 0;
  int horizon = 0;  // steps ahead, 1-based
  double yhat = 0.0, sd = 0.0, y = 0.0;
};

inline Metrics score_points(const std::vector<ScoredPoint>& pts) {
  Metrics m;
  if (pts.empty()) return m;
  double mape_sum = 0.0;
  int mape_n = 0;
  double se_sum = 0.0, bias_sum = 0.0, width_sum = 0.0;
  int covered = 0;
  for (const auto& p : pts) {
    const double err = p.yhat - p.y;
    se_sum += err * err;
    bias_sum += err;
    width_sum += 2.0 * kZ95 * p.sd;
    if (std::abs(err) <= kZ95 * p.sd) ++covered;
    if (p.y != 0.0) {
      mape_sum += std::abs(err / p.y);
      ++mape_n;
    } else {
      ++m.mape_excluded;
    }
  }
  const double n = static_cast<double>(pts.size());
  m.n = static_cast<int>(pts.size());
  m.mape = mape_n > 0 ? mape_sum / mape_n : 0.0;
  m.rmse = std::sqrt(se_sum / n);
  m.bias = bias_sum / n;
  m.coverage = covered / n;
  m.pi_width = width_sum / n;
  return m;
}

// Metric bundle over aligned prediction/observation lists.
inline Metrics score(const std::vector<GaussianPredictive>& preds,
                     const std::vector<Eigen::VectorXd>& observed) {
  if (preds.size() != observed.size())
    throw DataError("score: prediction and observation lists differ in length");
  std::vector<ScoredPoint> pts;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (observed[i].size() != preds[i].mean.size())
      throw DataError("score: misaligned observation vector at index " +
                      std::to_string(i));
    for (Eigen::Index k = 0; k < preds[i].mean.size(); ++k)
      pts.push_back({preds[i].rows[static_cast<std::size_t>(k)].unit_id,
                     preds[i].rows[static_cast<std::size_t>(k)].t,
                     static_cast<int>(k) + 1, preds[i].mean[k],
                     std::sqrt(preds[i].cov(k, k)), observed[i][k]});
  }
  return score_points(pts);
}

// ---------------------------------------------------------------------------
// Fake-treatment time selection.
// ---------------------------------------------------------------------------

struct FakeTimeMode {
  enum Kind { MatchFraction, Fixed } kind;
  double fraction = 0.0;
  int t1 = 0;

  static FakeTimeMode match_fraction(double f) {
    return {MatchFraction, f, 0};
  }
  static FakeTimeMode fixed(int t1) { return {Fixed, 0.0, t1}; }
};

// Largest t1 in pre_times such that the post-window share #(t > t1)/#total
// is at least f; ties resolve toward more pre-period points by construction.
inline int choose_fake_time(const std::vector<int>& pre_times,
                            const FakeTimeMode& mode) {
  if (pre_times.size() < 3)
    throw DataError("choose_fake_time: need at least 3 pre-period times");
  std::vector<int> ts = pre_times;
  std::sort(ts.begin(), ts.end());
  const double total = static_cast<double>(ts.size());
  if (mode.kind == FakeTimeMode::Fixed) {
    const int n_post = static_cast<int>(
        std::count_if(ts.begin(), ts.end(), [&](int t) { return t > mode.t1; }));
    if (n_post == static_cast<int>(ts.size()))
      throw DataError("choose_fake_time: fixed t1 leaves an empty pre window");
    if (n_post == 0)
      throw DataError("choose_fake_time: fixed t1 leaves an empty post window");
    return mode.t1;
  }
  if (!(mode.fraction > 0.0) || !(mode.fraction < 1.0))
    throw ConfigError("choose_fake_time: fraction must lie in (0, 1)");
  // Candidates scan from the largest viable split point downward.
  for (std::size_t i = ts.size() - 1; i > 0; --i) {
    const int t1 = ts[i - 1];
    const double post = static_cast<double>(ts.size() - i);
    if (post < 1.0) continue;
    if (post / total >= mode.fraction) return t1;
  }
  throw DataError("choose_fake_time: no split satisfies the fraction " +
                  std::to_string(mode.fraction));
}

// Post-intervention horizon cap: floor(fraction * #pre-period observations).
inline int horizon_cap(int n_pre, double fraction) {
  return static_cast<int>(std::floor(fraction * static_cast<double>(n_pre)));
}

// ---------------------------------------------------------------------------
// Validation report.
// ---------------------------------------------------------------------------

struct GroupAccuracy {
  int key = 0;  // horizon or calendar time
  int n = 0;
  double rmse = 0.0, bias = 0.0, coverage = 0.0;
};

struct ValidationReport {
  std::string model_name;
  double rho = 0.0;            // mean fitted rho across successful fits
  Metrics overall;             // pooled over all scored (unit, time) points
  double avg_opt_time_s = 0.0; // hardware-dependent; excluded from determinism
  std::vector<GroupAccuracy> per_horizon;
  std::vector<GroupAccuracy> per_time;
  int fits_attempted = 0;
  int fit_failures = 0;
  std::vector<std::string> failure_messages;
  // Protocol notes: metrics pooled over scored points; pseudo-treated
  // covariates in the fake post window are used as known inputs; rho averages
  // rho_total for covariate models and rho_time otherwise.
  std::vector<ScoredPoint> points;  // every scored prediction
};

namespace detail {

inline std::vector<GroupAccuracy> group_accuracy(
    const std::vector<ScoredPoint>& pts, bool by_horizon) {
  std::map<int, std::vector<ScoredPoint>> groups;
  for (const auto& p : pts) groups[by_horizon ? p.horizon : p.t].push_back(p);
  std::vector<GroupAccuracy> out;
  for (const auto& [key, group] : groups) {
    const Metrics m = score_points(group);
    out.push_back({key, m.n, m.rmse, m.bias, m.coverage});
  }
  return out;
}

// Index-ordered parallel map: results identical regardless of the worker
// count.
template <typename Fn>
void parallel_for_indexed(std::size_t n, int jobs, Fn&& fn) {
  jobs = std::max(1, jobs);
  if (jobs == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < jobs; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace detail

// Leave-one-unit-out placebo validation on a window with no treated rows.
// Each unit in turn becomes pseudo-treated at t1; the model is fit on all
// other units' full windows plus the pseudo-treated rows <= t1 and scored on
// the remaining window.
inline ValidationReport leave_one_out_validation(const PanelDataset& data,
                                                 int t1, const ModelSpec& spec,
                                                 const FitOptions& opts,
                                                 const std::string& model_name = "",
                                                 int jobs = 1) {
  for (const auto& u : data.units)
    if (u.treatment_time && u.times.back() > *u.treatment_time)
      throw DataError("leave_one_out_validation: unit '" + u.unit_id +
                      "' has post-treatment rows inside the window");
  PanelDataset work = data;
  for (auto& u : work.units) u.treatment_time.reset();

  ValidationReport report;
  report.model_name = model_name;
  report.fits_attempted = work.n_units();

  struct PerUnit {
    bool ok = false;
    std::string error;
    double rho = 0.0, opt_time = 0.0;
    std::vector<ScoredPoint> pts;
  };
  std::vector<PerUnit> results(static_cast<std::size_t>(work.n_units()));

  detail::parallel_for_indexed(
      results.size(), jobs, [&](std::size_t i) {
        PerUnit& r = results[i];
        const std::string& id = work.units[i].unit_id;
        try {
          const TrainPredSplit split = make_split(work, id, t1);
          const FitResult fr = fit(spec, work, split, opts);
          const GaussianPredictive pred =
              predict_counterfactual(spec, fr, work, split);
          const Eigen::VectorXd yobs = observed_outcomes(work, split.pred_rows);
          for (Eigen::Index k = 0; k < pred.mean.size(); ++k)
            r.pts.push_back({id, pred.rows[static_cast<std::size_t>(k)].t,
                             static_cast<int>(k) + 1, pred.mean[k],
                             std::sqrt(pred.cov(k, k)), yobs[k]});
          r.rho = fr.rho;
          r.opt_time = fr.wall_time_s;
          r.ok = true;
        } catch (const std::exception& e) {
          r.error = std::string(e.what());
        }
      });

  double rho_sum = 0.0, time_sum = 0.0;
  int ok_count = 0;
  for (const auto& r : results) {
    if (!r.ok) {
      ++report.fit_failures;
      report.failure_messages.push_back(r.error);
      continue;
    }
    ++ok_count;
    rho_sum += r.rho;
    time_sum += r.opt_time;
    report.points.insert(report.points.end(), r.pts.begin(), r.pts.end());
  }
  if (ok_count == 0)
    throw NumericalError("leave_one_out_validation: every fit failed");
  report.rho = rho_sum / ok_count;
  report.avg_opt_time_s = time_sum / ok_count;
  report.overall = score_points(report.points);
  report.per_horizon = detail::group_accuracy(report.points, true);
  report.per_time = detail::group_accuracy(report.points, false);
  return report;
}

// ---------------------------------------------------------------------------
// Staggered-adoption one-unit-at-a-time pipeline.
// ---------------------------------------------------------------------------

struct StaggeredConfig {
  int M = 20;                       // controls sampled per run
  double horizon_fraction = 0.5;    // estimate-mode horizon cap
  double validation_fraction = 1.0 / 3.0;
  std::optional<int> unit_sample;   // random subset of treated units
  std::uint64_t seed = 0;
  int jobs = 1;

  void validate() const {
    if (M < 1) throw ConfigError("staggered: M must be >= 1");
    if (!(horizon_fraction > 0.0) || horizon_fraction > 1.0)
      throw ConfigError("staggered: horizon_fraction must lie in (0, 1]");
    if (!(validation_fraction > 0.0) || !(validation_fraction < 1.0))
      throw ConfigError("staggered: validation_fraction must lie in (0, 1)");
    if (unit_sample && *unit_sample < 1)
      throw ConfigError("staggered: unit_sample must be >= 1");
  }
};

enum class PipelineMode { Validate, Estimate };

struct StaggeredUnitResult {
  std::string unit_id;
  bool ok = false;
  std::string error;
  int t0_used = 0;      // split point actually used (fake or true)
  int n_train = 0;
  double rho = 0.0;
  double lml = 0.0;
  double opt_time_s = 0.0;
  GaussianPredictive pred;       // outcome units
  Eigen::VectorXd observed;
  UnitEffects effects;
  EffectSummary summary;
};

struct StaggeredOutput {
  std::vector<StaggeredUnitResult> per_unit;  // ordered by unit_id
  ATTSeries att;
  std::optional<ValidationReport> validation;
  int failures = 0;
  int attempted = 0;
};

inline StaggeredOutput staggered_pipeline(const PanelDataset& data,
                                          const StaggeredConfig& cfg,
                                          const ModelSpec& spec,
                                          const FitOptions& opts,
                                          PipelineMode mode) {
  cfg.validate();
  std::vector<std::string> treated = data.treated_ids();
  if (treated.empty())
    throw DataError("staggered_pipeline: no treated units in the panel");
  const std::size_t pool = data.never_treated_ids().size();
  if (static_cast<std::size_t>(cfg.M) > pool)
    throw DataError("staggered_pipeline: M=" + std::to_string(cfg.M) +
                    " exceeds the never-treated pool of " +
                    std::to_string(pool));

  if (cfg.unit_sample && *cfg.unit_sample < static_cast<int>(treated.size())) {
    SplitMix64 rng(cfg.seed ^ fnv1a64("unit_sample"));
    const auto picks = sample_without_replacement(
        treated.size(), static_cast<std::size_t>(*cfg.unit_sample), rng);
    std::vector<std::string> subset;
    for (std::size_t i : picks) subset.push_back(treated[i]);
    std::sort(subset.begin(), subset.end());
    treated = std::move(subset);
  }

  StaggeredOutput out;
  out.attempted = static_cast<int>(treated.size());
  out.per_unit.resize(treated.size());

  detail::parallel_for_indexed(treated.size(), cfg.jobs, [&](std::size_t i) {
    StaggeredUnitResult& r = out.per_unit[i];
    r.unit_id = treated[i];
    const std::uint64_t unit_seed = cfg.seed ^ fnv1a64(r.unit_id);
    try {
      PanelDataset reduced = subsample_controls(data, r.unit_id, cfg.M, unit_seed);
      const int uidx = reduced.unit_index(r.unit_id);
      UnitRecord& urec = reduced.units[static_cast<std::size_t>(uidx)];
      if (!urec.treatment_time)
        throw DataError("unit has no treatment time");
      const int true_t0 = *urec.treatment_time;

      TrainPredSplit split;
      if (mode == PipelineMode::Validate) {
        // Keep only the unit's genuinely untreated rows, then place a fake
        // treatment inside them.
        std::vector<int> pre_times;
        for (int t : urec.times)
          if (t <= true_t0) pre_times.push_back(t);
        UnitRecord trimmed;
        trimmed.unit_id = urec.unit_id;
        for (int t : pre_times) {
          const int row = urec.row_of_time(t);
          trimmed.times.push_back(t);
          trimmed.outcomes.conservativeResize(trimmed.times.size());
          trimmed.outcomes[static_cast<Eigen::Index>(trimmed.times.size() - 1)] =
              urec.outcomes[row];
        }
        trimmed.covariates.resize(static_cast<Eigen::Index>(pre_times.size()),
                                  reduced.n_covariates());
        for (std::size_t k = 0; k < pre_times.size(); ++k)
          trimmed.covariates.row(static_cast<Eigen::Index>(k)) =
              urec.covariates.row(urec.row_of_time(pre_times[k]));
        urec = std::move(trimmed);

        const int t1 = choose_fake_time(
            urec.times, FakeTimeMode::match_fraction(cfg.validation_fraction));
        r.t0_used = t1;
        split = make_split(reduced, r.unit_id, t1);
      } else {
        const int n_pre = static_cast<int>(std::count_if(
            urec.times.begin(), urec.times.end(),
            [&](int t) { return t <= true_t0; }));
        const int cap = horizon_cap(n_pre, cfg.horizon_fraction);
        if (cap < 1) throw DataError("horizon cap smaller than one period");
        r.t0_used = true_t0;
        split = make_split(reduced, r.unit_id, true_t0, cap);
      }

      r.n_train = static_cast<int>(split.train_rows.size());
      FitOptions uopts = opts;
      uopts.seed = unit_seed;
      const FitResult fr = fit(spec, reduced, split, uopts);
      r.pred = predict_counterfactual(spec, fr, reduced, split);
      r.observed = observed_outcomes(reduced, split.pred_rows);
      r.effects = unit_effects(r.pred, r.observed);
      r.summary = aggregate_effects(r.pred, r.observed);
      r.rho = fr.rho;
      r.lml = fr.lml;
      r.opt_time_s = fr.wall_time_s;
      r.ok = true;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
  });

  std::sort(out.per_unit.begin(), out.per_unit.end(),
            [](const StaggeredUnitResult& a, const StaggeredUnitResult& b) {
              return a.unit_id < b.unit_id;
            });

  std::vector<UnitEffects> effects;
  for (const auto& r : out.per_unit) {
    if (r.ok) effects.push_back(r.effects);
    else ++out.failures;
  }
  if (out.failures * 5 > out.attempted)  // > 20% failed
    throw NumericalError("staggered_pipeline: " + std::to_string(out.failures) +
                         " of " + std::to_string(out.attempted) +
                         " unit runs failed (over the 20% limit); first error: " +
                         [&] {
                           for (const auto& r : out.per_unit)
                             if (!r.ok) return r.error;
                           return std::string();
                         }());
  out.att = att_by_time(effects);

  if (mode == PipelineMode::Validate) {
    ValidationReport rep;
    rep.model_name = "staggered-validate";
    rep.fits_attempted = out.attempted;
    rep.fit_failures = out.failures;
    double rho_sum = 0.0, time_sum = 0.0;
    int ok = 0;
    for (const auto& r : out.per_unit) {
      if (!r.ok) {
        rep.failure_messages.push_back(r.unit_id + ": " + r.error);
        continue;
      }
      ++ok;
      rho_sum += r.rho;
      time_sum += r.opt_time_s;
      for (Eigen::Index k = 0; k < r.pred.mean.size(); ++k)
        rep.points.push_back({r.unit_id,
                              r.pred.rows[static_cast<std::size_t>(k)].t,
                              static_cast<int>(k) + 1, r.pred.mean[k],
                              std::sqrt(r.pred.cov(k, k)), r.observed[k]});
    }
    rep.rho = ok > 0 ? rho_sum / ok : 0.0;
    rep.avg_opt_time_s = ok > 0 ? time_sum / ok : 0.0;
    rep.overall = score_points(rep.points);
    rep.per_horizon = detail::group_accuracy(rep.points, true);
    rep.per_time = detail::group_accuracy(rep.points, false);
    out.validation = std::move(rep);
  }
  return out;
}

}  // namespace exchgp
