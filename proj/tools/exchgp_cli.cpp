// Command-line front end: fit / predict / validate / staggered / simulate
// subcommands over the panel CSV interchange format, emitting CSV/JSON
// reports plus a manifest with content hashes for reproducibility checks.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "exchgp/fit.hpp"
#include "exchgp/harness.hpp"
#include "exchgp/model.hpp"
#include "exchgp/panel.hpp"
#include "exchgp/predict.hpp"
#include "exchgp/reports.hpp"
#include "exchgp/simulate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace exchgp;

namespace {

struct CommonArgs {
  std::string input;
  std::string out_dir = ".";
  std::string schema;
  std::string model = "ou-time";
  std::vector<std::string> shared_dims;  // covariate column names
  int restarts = 3;
  int max_iters = 1000;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  int jobs = 1;
};

void add_fit_flags(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--restarts", a.restarts, "Optimizer restarts");
  cmd->add_option("--max-iters", a.max_iters, "Optimizer iteration cap");
  cmd->add_option("--tol", a.tol, "Convergence tolerance");
  cmd->add_option("--seed", a.seed, "Base RNG seed");
}

void add_model_flags(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--model", a.model,
                  "Model preset: ou-time, rbf-time, ou-time-cov, rbf-time-cov, "
                  "ou-time-rbf-cov-ard, rbf-time-cov-ard");
  cmd->add_option("--shared-dims", a.shared_dims,
                  "Covariate columns fed to the shared mean process")
      ->delimiter(',');
}

void add_io_flags(CLI::App* cmd, CommonArgs& a, bool need_input = true) {
  auto* in = cmd->add_option("--input", a.input, "Panel CSV path");
  if (need_input) in->required();
  cmd->add_option("--out-dir", a.out_dir, "Output directory");
  cmd->add_option("--schema", a.schema,
                  "Column remap, e.g. unit=state,time=year,outcome=sales");
}

PanelDataset load_input(const CommonArgs& a) {
  std::ifstream in(a.input);
  if (!in) throw DataError("cannot open input file " + a.input);
  const CsvSchema schema =
      a.schema.empty() ? CsvSchema{} : CsvSchema::parse(a.schema);
  return load_panel(in, schema);
}

ModelSpec build_spec(const CommonArgs& a, const PanelDataset& data) {
  ModelSpec spec = model_preset(a.model);
  for (const auto& name : a.shared_dims) {
    const auto it = std::find(data.covariate_names.begin(),
                              data.covariate_names.end(), name);
    if (it == data.covariate_names.end())
      throw ConfigError("--shared-dims: no covariate column named '" + name +
                        "'");
    spec.shared_covariate_dims.push_back(
        static_cast<int>(it - data.covariate_names.begin()));
  }
  std::sort(spec.shared_covariate_dims.begin(),
            spec.shared_covariate_dims.end());
  spec.validate(data.n_covariates());
  return spec;
}

FitOptions build_fit_options(const CommonArgs& a) {
  FitOptions opts;
  opts.restarts = a.restarts;
  opts.max_iters = a.max_iters;
  opts.tol = a.tol;
  opts.seed = a.seed;
  return opts;
}

std::string out_path(const CommonArgs& a, const std::string& name) {
  fs::create_directories(a.out_dir);
  return (fs::path(a.out_dir) / name).string();
}

json common_config(const CommonArgs& a, const std::string& subcommand) {
  return json{{"subcommand", subcommand}, {"input", a.input},
              {"out_dir", a.out_dir},     {"schema", a.schema},
              {"model", a.model},         {"shared_dims", a.shared_dims},
              {"restarts", a.restarts},   {"max_iters", a.max_iters},
              {"tol", a.tol},             {"seed", a.seed},
              {"jobs", a.jobs}};
}

std::string trajectories_csv(const std::vector<ScoredPoint>& pts) {
  std::ostringstream out;
  out << "unit,time,horizon,observed,pred_mean,pred_sd\n";
  for (const auto& p : pts)
    out << p.unit_id << ',' << p.t << ',' << p.horizon << ','
        << detail::fmt_g(p.y) << ',' << detail::fmt_g(p.yhat) << ','
        << detail::fmt_g(p.sd) << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Subcommands.
// ---------------------------------------------------------------------------

int run_fit_like(const CommonArgs& a, const std::string& treated,
                 std::optional<int> t0_flag, std::optional<int> horizon,
                 bool dump_trajectory, const std::string& name) {
  const auto t_start = std::chrono::steady_clock::now();
  const PanelDataset data = load_input(a);
  const ModelSpec spec = build_spec(a, data);

  const UnitRecord* unit = data.find_unit(treated);
  if (!unit) throw DataError("fit: unknown treated unit '" + treated + "'");
  int t0;
  if (t0_flag) {
    t0 = *t0_flag;
  } else if (unit->treatment_time) {
    t0 = *unit->treatment_time;
  } else {
    throw ConfigError("fit: unit '" + treated +
                      "' has no treatment_time; pass --t0");
  }

  const TrainPredSplit split = make_split(data, treated, t0, horizon);
  const FitOptions opts = build_fit_options(a);
  const FitResult fr = fit(spec, data, split, opts);
  const GaussianPredictive pred = predict_counterfactual(spec, fr, data, split);
  const Eigen::VectorXd yobs = observed_outcomes(data, split.pred_rows);
  const EffectSummary summary = aggregate_effects(pred, yobs);

  std::cerr << "[exchgp] " << name << ": unit=" << treated << " t0=" << t0
            << " n_train=" << split.train_rows.size()
            << " n_pred=" << split.pred_rows.size() << " lml=" << fr.lml
            << " rho=" << fr.rho << " converged=" << fr.converged << "\n";
  std::cerr << "[exchgp] average effect " << summary.average.est << " ["
            << summary.average.lo << ", " << summary.average.hi
            << "], cumulative " << summary.cumulative.est << " ["
            << summary.cumulative.lo << ", " << summary.cumulative.hi << "]\n";

  json cfg = common_config(a, name);
  cfg["treated"] = treated;
  cfg["t0"] = t0;
  if (horizon) cfg["horizon"] = *horizon;
  Manifest manifest(cfg);

  manifest.add_file(out_path(a, "effects.csv"),
                    effects_csv(treated, pred, yobs, summary));
  json report;
  report["fit"] = fit_result_to_json(fr, spec);
  report["effects"] = effect_summary_to_json(summary);
  report["treated"] = treated;
  report["t0"] = t0;
  manifest.add_file(out_path(a, "report.json"), report.dump(2) + "\n");
  if (dump_trajectory) {
    std::vector<ScoredPoint> pts;
    for (Eigen::Index k = 0; k < pred.mean.size(); ++k)
      pts.push_back({treated, pred.rows[static_cast<std::size_t>(k)].t,
                     static_cast<int>(k) + 1, pred.mean[k],
                     std::sqrt(pred.cov(k, k)), yobs[k]});
    manifest.add_file(out_path(a, "trajectories.csv"), trajectories_csv(pts));
  }
  manifest.set_wall_time(
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count());
  manifest.write(out_path(a, "manifest.json"));
  return 0;
}

int run_validate(const CommonArgs& a, std::optional<int> fake_time,
                 std::optional<double> fraction,
                 const std::vector<std::string>& models,
                 std::optional<int> max_time, bool dump_trajectories) {
  const auto t_start = std::chrono::steady_clock::now();
  PanelDataset data = load_input(a);
  if (max_time) {
    for (auto& u : data.units) {
      int keep = 0;
      while (keep < u.rows() && u.times[static_cast<std::size_t>(keep)] <= *max_time)
        ++keep;
      if (keep == 0)
        throw DataError("validate: unit '" + u.unit_id +
                        "' has no rows at or before --max-time");
      u.times.resize(static_cast<std::size_t>(keep));
      u.outcomes.conservativeResize(keep);
      u.covariates.conservativeResize(keep, Eigen::NoChange);
    }
  }

  // The fake time comes from --fake-time directly or from the post-window
  // fraction rule over the common time grid.
  int t1;
  if (fake_time) {
    t1 = *fake_time;
  } else {
    std::vector<int> times;
    for (const auto& u : data.units)
      times.insert(times.end(), u.times.begin(), u.times.end());
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    t1 = choose_fake_time(
        times, FakeTimeMode::match_fraction(fraction.value_or(1.0 / 3.0)));
  }

  const FitOptions opts = build_fit_options(a);
  std::vector<ValidationReport> reports;
  json jreports = json::array();
  json timing;  // hardware-dependent, recorded in the manifest only
  std::vector<ScoredPoint> all_points;
  for (const auto& model : models) {
    CommonArgs am = a;
    am.model = model;
    const ModelSpec spec = build_spec(am, data);
    ValidationReport rep =
        leave_one_out_validation(data, t1, spec, opts, model, a.jobs);
    std::cerr << "[exchgp] validate model=" << model << " t1=" << t1
              << " n=" << rep.overall.n << " rmse=" << rep.overall.rmse
              << " coverage=" << rep.overall.coverage << " rho=" << rep.rho
              << "\n";
    jreports.push_back(validation_report_to_json(rep, false));
    timing[model] = rep.avg_opt_time_s;
    all_points.insert(all_points.end(), rep.points.begin(), rep.points.end());
    reports.push_back(std::move(rep));
  }

  json cfg = common_config(a, "validate");
  cfg["fake_time"] = t1;
  cfg["models"] = models;
  cfg["avg_opt_time_s"] = timing;
  Manifest manifest(cfg);
  manifest.add_file(out_path(a, "report.csv"),
                    validation_report_csv(reports, false));
  json report;
  report["fake_time"] = t1;
  report["models"] = jreports;
  manifest.add_file(out_path(a, "report.json"), report.dump(2) + "\n");
  if (dump_trajectories)
    manifest.add_file(out_path(a, "trajectories.csv"),
                      trajectories_csv(all_points));
  manifest.set_wall_time(
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count());
  manifest.write(out_path(a, "manifest.json"));
  return 0;
}

int run_staggered(const CommonArgs& a, StaggeredConfig cfg,
                  const std::string& mode, bool dump_trajectories) {
  const auto t_start = std::chrono::steady_clock::now();
  const PanelDataset data = load_input(a);
  const ModelSpec spec = build_spec(a, data);
  cfg.seed = a.seed;
  cfg.jobs = a.jobs;
  const PipelineMode pmode =
      mode == "validate" ? PipelineMode::Validate : PipelineMode::Estimate;

  const FitOptions opts = build_fit_options(a);
  const StaggeredOutput out = staggered_pipeline(data, cfg, spec, opts, pmode);

  std::cerr << "[exchgp] staggered mode=" << mode
            << " units=" << out.attempted << " failures=" << out.failures
            << " total_ATT=" << out.att.total_cumulative.est << " ["
            << out.att.total_cumulative.lo << ", "
            << out.att.total_cumulative.hi << "]\n";

  json jcfg = common_config(a, "staggered");
  jcfg["controls"] = cfg.M;
  jcfg["horizon_fraction"] = cfg.horizon_fraction;
  jcfg["validation_fraction"] = cfg.validation_fraction;
  jcfg["mode"] = mode;
  if (cfg.unit_sample) jcfg["unit_sample"] = *cfg.unit_sample;
  if (out.validation) jcfg["avg_opt_time_s"] = out.validation->avg_opt_time_s;
  Manifest manifest(jcfg);

  manifest.add_file(out_path(a, "att.csv"), att_csv(out.att));

  // Per-unit aggregate effects in one long table.
  std::ostringstream eff;
  eff << "unit,t0,n_pred,cumulative,cumulative_lo95,cumulative_hi95,average,"
         "average_lo95,average_hi95,rho,status\n";
  for (const auto& r : out.per_unit) {
    if (!r.ok) {
      eff << r.unit_id << ",,,,,,,,,,failed\n";
      continue;
    }
    eff << r.unit_id << ',' << r.t0_used << ',' << r.pred.rows.size() << ','
        << detail::fmt_g(r.summary.cumulative.est) << ','
        << detail::fmt_g(r.summary.cumulative.lo) << ','
        << detail::fmt_g(r.summary.cumulative.hi) << ','
        << detail::fmt_g(r.summary.average.est) << ','
        << detail::fmt_g(r.summary.average.lo) << ','
        << detail::fmt_g(r.summary.average.hi) << ','
        << detail::fmt_g(r.rho) << ",ok\n";
  }
  manifest.add_file(out_path(a, "effects.csv"), eff.str());

  json report;
  report["mode"] = mode;
  report["att"] = att_to_json(out.att);
  report["failures"] = out.failures;
  report["attempted"] = out.attempted;
  if (out.validation) {
    manifest.add_file(out_path(a, "report.csv"),
                      validation_report_csv({*out.validation}, false));
    report["validation"] =
        validation_report_to_json(*out.validation, false);
  }
  manifest.add_file(out_path(a, "report.json"), report.dump(2) + "\n");
  if (dump_trajectories) {
    std::vector<ScoredPoint> pts;
    for (const auto& r : out.per_unit) {
      if (!r.ok) continue;
      for (Eigen::Index k = 0; k < r.pred.mean.size(); ++k)
        pts.push_back({r.unit_id, r.pred.rows[static_cast<std::size_t>(k)].t,
                       static_cast<int>(k) + 1, r.pred.mean[k],
                       std::sqrt(r.pred.cov(k, k)), r.observed[k]});
    }
    manifest.add_file(out_path(a, "trajectories.csv"), trajectories_csv(pts));
  }
  manifest.set_wall_time(
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count());
  manifest.write(out_path(a, "manifest.json"));
  return 0;
}

struct SimulateArgs {
  int units = 30;
  int times = 50;
  int p = 0;
  double sigma_mu2 = 2.0;
  double sigma_g1_2 = 1.0;
  double sigma_g2_2 = 0.5;
  double ell_time = 5.0;
  std::vector<double> ell_x;
  double omega2 = 0.25;
  int treated_count = 0;
  int t0_min = 0;
  int t0_max = 0;
  double effect = 0.0;
  std::string output = "panel.csv";
};

int run_simulate(const CommonArgs& a, const SimulateArgs& s) {
  const auto t_start = std::chrono::steady_clock::now();
  SimLayout layout;
  layout.spec = model_preset(a.model);
  layout.m = s.units;
  layout.T = s.times;
  layout.p = s.p;
  layout.theta.sigma_mu2 = s.sigma_mu2;
  layout.theta.sigma_g1_2 = s.sigma_g1_2;
  layout.theta.sigma_g2_2 = layout.spec.use_unit_covariates ? s.sigma_g2_2 : 0.0;
  layout.theta.ell_time = s.ell_time;
  const int n_ell = layout.spec.ell_x_arity(s.p);
  layout.theta.ell_x = Eigen::VectorXd::Ones(n_ell);
  for (int j = 0; j < n_ell && j < static_cast<int>(s.ell_x.size()); ++j)
    layout.theta.ell_x[j] = s.ell_x[static_cast<std::size_t>(j)];
  layout.omega2_default = s.omega2;

  if (s.treated_count > layout.m)
    throw ConfigError("simulate: --treated-count exceeds --units");
  const int lo = s.t0_min > 0 ? s.t0_min : (2 * s.times) / 3;
  const int hi = s.t0_max >= lo ? s.t0_max : lo;
  SplitMix64 rng(a.seed ^ fnv1a64("simulate-t0"));
  for (int i = 0; i < s.treated_count; ++i) {
    const int t0 = lo + static_cast<int>(rng.next_below(
                            static_cast<std::uint64_t>(hi - lo + 1)));
    layout.injections.push_back(
        {SimLayout::unit_name(i, layout.m), t0, s.effect});
  }

  const PanelDataset data = sample_prior(layout, a.seed);
  std::ostringstream csv;
  save_panel(data, csv);

  json cfg = common_config(a, "simulate");
  cfg["units"] = s.units;
  cfg["times"] = s.times;
  cfg["p"] = s.p;
  cfg["treated_count"] = s.treated_count;
  cfg["effect"] = s.effect;
  Manifest manifest(cfg);
  manifest.add_file(out_path(a, s.output), csv.str());
  manifest.set_wall_time(
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count());
  manifest.write(out_path(a, "manifest.json"));
  std::cerr << "[exchgp] simulate: wrote " << out_path(a, s.output) << " ("
            << data.n_units() << " units)\n";
  return 0;
}

// --config JSON supplies defaults for any long flag; explicit flags win.
// Implemented by injecting "--key=value" pairs for keys absent from argv.
std::vector<std::string> apply_config_file(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;

  std::ifstream in(config_path);
  if (!in) throw ConfigError("cannot open --config file " + config_path);
  json cfg;
  try {
    in >> cfg;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + config_path + ": " + e.what());
  }
  if (!cfg.is_object())
    throw ConfigError("config file must hold a JSON object of flag values");

  for (const auto& [key, value] : cfg.items()) {
    const std::string flag = "--" + key;
    bool present = false;
    for (const auto& arg : args)
      if (arg == flag || arg.rfind(flag + "=", 0) == 0) present = true;
    if (present) continue;
    if (value.is_string())
      args.push_back(flag + "=" + value.get<std::string>());
    else
      args.push_back(flag + "=" + value.dump());
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Exchangeable multi-task GP counterfactual estimation for panel data"};
  app.require_subcommand(1);

  CommonArgs a;
  std::string config_path;
  app.add_option("--config", config_path,
                 "JSON file of default flag values (flags override)");

  // fit / predict
  std::string treated;
  std::optional<int> t0_flag, horizon_flag;
  bool dump_traj = false;
  auto add_fit_like = [&](const std::string& name, const std::string& desc) {
    CLI::App* cmd = app.add_subcommand(name, desc);
    add_io_flags(cmd, a);
    add_model_flags(cmd, a);
    add_fit_flags(cmd, a);
    cmd->add_option("--treated", treated, "Treated unit id")->required();
    cmd->add_option("--t0", t0_flag,
                    "Last pre-treatment time (default: the unit's "
                    "treatment_time column)");
    cmd->add_option("--horizon", horizon_flag, "Prediction horizon cap");
    cmd->add_flag("--dump-trajectories", dump_traj,
                  "Also write trajectories.csv");
    cmd->add_option("--config", config_path, "JSON flag defaults");
    return cmd;
  };
  CLI::App* cmd_fit = add_fit_like(
      "fit", "Fit hyperparameters and estimate causal effects for one unit");
  CLI::App* cmd_predict = add_fit_like(
      "predict", "Fit and emit the counterfactual path for one unit");

  // validate
  CLI::App* cmd_val = app.add_subcommand(
      "validate", "Leave-one-unit-out fake-treatment validation");
  std::optional<int> fake_time, max_time;
  std::optional<double> fraction;
  std::vector<std::string> models = {"ou-time", "rbf-time", "ou-time-cov",
                                     "rbf-time-cov"};
  add_io_flags(cmd_val, a);
  add_model_flags(cmd_val, a);
  add_fit_flags(cmd_val, a);
  cmd_val->add_option("--fake-time", fake_time, "Fixed fake-treatment time");
  cmd_val->add_option("--fraction", fraction,
                      "Post-window share for the fake-time rule");
  cmd_val->add_option("--models", models, "Model presets to compare")
      ->delimiter(',');
  cmd_val->add_option("--max-time", max_time,
                      "Restrict the panel to rows with time <= this");
  cmd_val->add_option("--jobs", a.jobs, "Parallel fits");
  cmd_val->add_flag("--dump-trajectories", dump_traj,
                    "Also write trajectories.csv");
  cmd_val->add_option("--config", config_path, "JSON flag defaults");

  // staggered
  CLI::App* cmd_stag = app.add_subcommand(
      "staggered", "One-unit-at-a-time staggered-adoption pipeline");
  StaggeredConfig scfg;
  std::string mode = "estimate";
  std::optional<int> unit_sample;
  add_io_flags(cmd_stag, a);
  add_model_flags(cmd_stag, a);
  add_fit_flags(cmd_stag, a);
  cmd_stag->add_option("--controls", scfg.M, "Controls sampled per run");
  cmd_stag->add_option("--horizon-frac", scfg.horizon_fraction,
                       "Horizon cap as a fraction of the pre-period");
  cmd_stag->add_option("--fraction", scfg.validation_fraction,
                       "Validate-mode post-window share");
  cmd_stag->add_option("--unit-sample", unit_sample,
                       "Random subset of treated units");
  cmd_stag->add_option("--mode", mode, "validate or estimate")
      ->check(CLI::IsMember({"validate", "estimate"}));
  cmd_stag->add_option("--jobs", a.jobs, "Parallel unit runs");
  cmd_stag->add_flag("--dump-trajectories", dump_traj,
                     "Also write trajectories.csv");
  cmd_stag->add_option("--config", config_path, "JSON flag defaults");

  // simulate
  CLI::App* cmd_sim =
      app.add_subcommand("simulate", "Sample a panel from the model prior");
  SimulateArgs sim;
  add_io_flags(cmd_sim, a, false);
  add_model_flags(cmd_sim, a);
  cmd_sim->add_option("--units", sim.units, "Number of units");
  cmd_sim->add_option("--times", sim.times, "Time points per unit");
  cmd_sim->add_option("--p", sim.p, "Covariate dimensions");
  cmd_sim->add_option("--sigma-mu2", sim.sigma_mu2, "Shared variance");
  cmd_sim->add_option("--sigma-g1-2", sim.sigma_g1_2, "Time-deviation variance");
  cmd_sim->add_option("--sigma-g2-2", sim.sigma_g2_2,
                      "Covariate-deviation variance");
  cmd_sim->add_option("--ell-time", sim.ell_time, "Time lengthscale");
  cmd_sim->add_option("--ell-x", sim.ell_x, "Covariate lengthscale(s)")
      ->delimiter(',');
  cmd_sim->add_option("--omega2", sim.omega2, "Noise variance per unit");
  cmd_sim->add_option("--treated-count", sim.treated_count,
                      "Units given a treatment time");
  cmd_sim->add_option("--t0-min", sim.t0_min, "Earliest treatment time");
  cmd_sim->add_option("--t0-max", sim.t0_max, "Latest treatment time");
  cmd_sim->add_option("--effect", sim.effect, "Additive post-treatment shift");
  cmd_sim->add_option("--seed", a.seed, "RNG seed");
  cmd_sim->add_option("--output", sim.output, "Output CSV name");
  cmd_sim->add_option("--config", config_path, "JSON flag defaults");

  try {
    const std::vector<std::string> args = apply_config_file(argc, argv);
    // CLI11 parses the vector form in reverse order.
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error (config): " << e.what() << "\n";
    return 2;
  }

  try {
    if (cmd_fit->parsed())
      return run_fit_like(a, treated, t0_flag, horizon_flag, dump_traj, "fit");
    if (cmd_predict->parsed())
      return run_fit_like(a, treated, t0_flag, horizon_flag, true, "predict");
    if (cmd_val->parsed())
      return run_validate(a, fake_time, fraction, models, max_time, dump_traj);
    if (cmd_stag->parsed()) {
      scfg.unit_sample = unit_sample;
      return run_staggered(a, scfg, mode, dump_traj);
    }
    if (cmd_sim->parsed()) return run_simulate(a, sim);
  } catch (const ConfigError& e) {
    std::cerr << "error (config): " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error (data): " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "error (numerical): " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
