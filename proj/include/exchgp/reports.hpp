#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "exchgp/fit.hpp"
#include "exchgp/harness.hpp"
#include "exchgp/predict.hpp"
#include "exchgp/rng.hpp"

namespace exchgp {

using json = nlohmann::json;

namespace detail {

inline std::string fmt_g(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace detail

// Validation summary row(s), one per model (Table-1 layout). Timing is
// emitted only when include_timing is set; determinism checks compare the
// timing-free form.
inline std::string validation_report_csv(
    const std::vector<ValidationReport>& reports, bool include_timing = true) {
  std::ostringstream out;
  out << "model,rho,mape,rmse,bias,coverage,pi_width,n,fit_failures";
  if (include_timing) out << ",avg_opt_time_s";
  out << '\n';
  for (const auto& r : reports) {
    out << r.model_name << ',' << detail::fmt_g(r.rho) << ','
        << detail::fmt_g(r.overall.mape) << ',' << detail::fmt_g(r.overall.rmse)
        << ',' << detail::fmt_g(r.overall.bias) << ','
        << detail::fmt_g(r.overall.coverage) << ','
        << detail::fmt_g(r.overall.pi_width) << ',' << r.overall.n << ','
        << r.fit_failures;
    if (include_timing) out << ',' << detail::fmt_g(r.avg_opt_time_s);
    out << '\n';
  }
  return out.str();
}

inline std::string group_accuracy_csv(const std::vector<GroupAccuracy>& rows,
                                      const std::string& key_name) {
  std::ostringstream out;
  out << key_name << ",n,rmse,bias,coverage\n";
  for (const auto& g : rows)
    out << g.key << ',' << g.n << ',' << detail::fmt_g(g.rmse) << ','
        << detail::fmt_g(g.bias) << ',' << detail::fmt_g(g.coverage) << '\n';
  return out.str();
}

inline json metrics_to_json(const Metrics& m) {
  return json{{"mape", m.mape},         {"rmse", m.rmse},
              {"bias", m.bias},         {"coverage", m.coverage},
              {"pi_width", m.pi_width}, {"n", m.n},
              {"mape_excluded", m.mape_excluded}};
}

inline json validation_report_to_json(const ValidationReport& r,
                                      bool include_timing = true) {
  json j;
  j["model"] = r.model_name;
  j["rho"] = r.rho;
  j["overall"] = metrics_to_json(r.overall);
  if (include_timing) j["avg_opt_time_s"] = r.avg_opt_time_s;
  j["fits_attempted"] = r.fits_attempted;
  j["fit_failures"] = r.fit_failures;
  j["failure_messages"] = r.failure_messages;
  j["per_horizon"] = json::array();
  for (const auto& g : r.per_horizon)
    j["per_horizon"].push_back({{"horizon", g.key},
                                {"n", g.n},
                                {"rmse", g.rmse},
                                {"bias", g.bias},
                                {"coverage", g.coverage}});
  j["per_time"] = json::array();
  for (const auto& g : r.per_time)
    j["per_time"].push_back({{"t", g.key},
                             {"n", g.n},
                             {"rmse", g.rmse},
                             {"bias", g.bias},
                             {"coverage", g.coverage}});
  j["notes"] = {
      "metrics pooled over all scored (unit, time) points",
      "pseudo-treated covariates in the fake post window used as known inputs",
      "rho averages rho_total for covariate models, rho_time otherwise"};
  return j;
}

// Per-time effect table plus counterfactual path for one unit.
inline std::string effects_csv(const std::string& unit_id,
                               const GaussianPredictive& pred,
                               const Eigen::VectorXd& observed,
                               const EffectSummary& summary) {
  std::ostringstream out;
  out << "unit,time,observed,counterfactual_mean,counterfactual_sd,"
         "effect_mean,effect_sd,effect_lo95,effect_hi95\n";
  for (std::size_t k = 0; k < summary.per_time.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const auto& row = summary.per_time[k];
    out << unit_id << ',' << row.t << ',' << detail::fmt_g(observed[kk]) << ','
        << detail::fmt_g(pred.mean[kk]) << ','
        << detail::fmt_g(std::sqrt(pred.cov(kk, kk))) << ','
        << detail::fmt_g(row.mean) << ',' << detail::fmt_g(row.sd) << ','
        << detail::fmt_g(row.lo) << ',' << detail::fmt_g(row.hi) << '\n';
  }
  return out.str();
}

inline json effect_summary_to_json(const EffectSummary& s) {
  json j;
  j["per_time"] = json::array();
  for (const auto& r : s.per_time)
    j["per_time"].push_back({{"t", r.t},
                             {"mean", r.mean},
                             {"sd", r.sd},
                             {"lo95", r.lo},
                             {"hi95", r.hi}});
  j["cumulative"] = {{"estimate", s.cumulative.est},
                     {"sd", s.cumulative.sd},
                     {"lo95", s.cumulative.lo},
                     {"hi95", s.cumulative.hi}};
  j["average"] = {{"estimate", s.average.est},
                  {"sd", s.average.sd},
                  {"lo95", s.average.lo},
                  {"hi95", s.average.hi}};
  return j;
}

// Week-by-week ATT table (appendix layout); the two aggregate rows follow
// the weekly rows with the week column holding their names.
inline std::string att_csv(const ATTSeries& att) {
  std::ostringstream out;
  out << "week,n,att_mean,att_sd,lo95,hi95\n";
  for (const auto& r : att.per_week)
    out << r.t << ',' << r.n << ',' << detail::fmt_g(r.mean) << ','
        << detail::fmt_g(r.sd) << ',' << detail::fmt_g(r.lo) << ','
        << detail::fmt_g(r.hi) << '\n';
  out << "total_cumulative,," << detail::fmt_g(att.total_cumulative.est) << ','
      << detail::fmt_g(att.total_cumulative.sd) << ','
      << detail::fmt_g(att.total_cumulative.lo) << ','
      << detail::fmt_g(att.total_cumulative.hi) << '\n';
  out << "average_weekly,," << detail::fmt_g(att.average_weekly.est) << ','
      << detail::fmt_g(att.average_weekly.sd) << ','
      << detail::fmt_g(att.average_weekly.lo) << ','
      << detail::fmt_g(att.average_weekly.hi) << '\n';
  return out.str();
}

inline json att_to_json(const ATTSeries& att) {
  json j;
  j["per_week"] = json::array();
  for (const auto& r : att.per_week)
    j["per_week"].push_back({{"t", r.t},
                             {"n", r.n},
                             {"mean", r.mean},
                             {"sd_of_mean", r.sd},
                             {"lo95", r.lo},
                             {"hi95", r.hi}});
  j["total_cumulative"] = {{"estimate", att.total_cumulative.est},
                           {"sd", att.total_cumulative.sd},
                           {"lo95", att.total_cumulative.lo},
                           {"hi95", att.total_cumulative.hi}};
  j["average_weekly"] = {{"estimate", att.average_weekly.est},
                         {"sd", att.average_weekly.sd},
                         {"lo95", att.average_weekly.lo},
                         {"hi95", att.average_weekly.hi}};
  j["notes"] = {
      "cross-unit independence from disjoint per-unit runs with independently "
      "sampled controls; within-unit across-week covariance taken from V*"};
  return j;
}

inline json fit_result_to_json(const FitResult& r, const ModelSpec& spec) {
  json theta;
  theta["sigma_mu2"] = r.theta_hat.sigma_mu2;
  theta["sigma_g1_2"] = r.theta_hat.sigma_g1_2;
  theta["sigma_g2_2"] = r.theta_hat.sigma_g2_2;
  theta["ell_time"] = r.theta_hat.ell_time;
  theta["ell_x"] = std::vector<double>(r.theta_hat.ell_x.begin(),
                                       r.theta_hat.ell_x.end());
  json omegas;
  for (const auto& [id, w] : r.theta_hat.omega2) omegas[id] = w;
  theta["omega2"] = omegas;

  const HyperParams raw = r.theta_raw();
  json j;
  j["theta_standardized"] = theta;
  j["theta_outcome_units"] = {{"sigma_mu2", raw.sigma_mu2},
                              {"sigma_g1_2", raw.sigma_g1_2},
                              {"sigma_g2_2", raw.sigma_g2_2}};
  j["standardization"] = {{"y_mean", r.standardization.y_mean},
                          {"y_sd", r.standardization.y_sd}};
  // Wall time deliberately goes to the manifest, not here: hashed outputs
  // must be byte-identical across reruns of one config.
  j["lml"] = r.lml;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["rho"] = r.rho;
  j["rho_time"] = r.rho_time;
  j["rho_total"] = r.rho_total;
  j["rho_definition"] =
      spec.use_unit_covariates
          ? "rho_total = (sigma_g1_2 + sigma_g2_2) / (sigma_mu2 + sigma_g1_2 + "
            "sigma_g2_2); the split between rho_time and rho_total is ambiguous "
            "for covariate models, both are reported"
          : "rho_time = sigma_g1_2 / (sigma_mu2 + sigma_g1_2)";
  return j;
}

// ---------------------------------------------------------------------------
// Output files + manifest.
// ---------------------------------------------------------------------------

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open output file " + path);
  out << body;
}

struct ManifestEntry {
  std::string path;
  std::uint64_t hash = 0;
  std::size_t bytes = 0;
};

class Manifest {
 public:
  explicit Manifest(json config) : config_(std::move(config)) {}

  void add_file(const std::string& path, const std::string& body) {
    write_text_file(path, body);
    entries_.push_back({path, fnv1a64(body), body.size()});
  }

  void set_wall_time(double seconds) { wall_time_s_ = seconds; }

  json to_json() const {
    json j;
    j["version"] = kVersion;
    j["config"] = config_;
    j["wall_time_s"] = wall_time_s_;
    j["outputs"] = json::array();
    for (const auto& e : entries_) {
      char hex[24];
      std::snprintf(hex, sizeof hex, "%016llx",
                    static_cast<unsigned long long>(e.hash));
      j["outputs"].push_back(
          {{"path", e.path}, {"fnv1a64", hex}, {"bytes", e.bytes}});
    }
    return j;
  }

  void write(const std::string& path) const {
    write_text_file(path, to_json().dump(2) + "\n");
  }

 private:
  json config_;
  double wall_time_s_ = 0.0;
  std::vector<ManifestEntry> entries_;
};

}  // namespace exchgp
