#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "exchgp/harness.hpp"
#include "exchgp/reports.hpp"
#include "exchgp/simulate.hpp"
#include "test_support.hpp"

using namespace exchgp;
using Catch::Approx;

TEST_CASE("choose_fake_time reproduces the protocol split points") {
  // Annual panel 1970..1988, post fraction matched to 11/30.
  std::vector<int> years;
  for (int y = 1970; y <= 1988; ++y) years.push_back(y);
  CHECK(choose_fake_time(years, FakeTimeMode::match_fraction(11.0 / 30.0)) ==
        1981);

  // Weekly panel 1..30, one third in the post window.
  std::vector<int> weeks;
  for (int w = 1; w <= 30; ++w) weeks.push_back(w);
  CHECK(choose_fake_time(weeks, FakeTimeMode::match_fraction(1.0 / 3.0)) == 20);

  // Vanishing fraction: a single post point remains.
  CHECK(choose_fake_time(weeks, FakeTimeMode::match_fraction(1e-9)) == 29);

  // Fixed mode passes through with a range check.
  CHECK(choose_fake_time(weeks, FakeTimeMode::fixed(20)) == 20);
  CHECK_THROWS_AS(choose_fake_time(weeks, FakeTimeMode::fixed(30)), DataError);
  CHECK_THROWS_AS(choose_fake_time(weeks, FakeTimeMode::fixed(0)), DataError);
  CHECK_THROWS_AS(choose_fake_time({1, 2}, FakeTimeMode::fixed(1)), DataError);
  CHECK_THROWS_AS(choose_fake_time(weeks, FakeTimeMode::match_fraction(1.5)),
                  ConfigError);
}

TEST_CASE("horizon cap follows floor(fraction * pre-period size)") {
  CHECK(horizon_cap(20, 0.5) == 10);  // first treated week 21 -> through 30
  CHECK(horizon_cap(21, 0.5) == 10);
  CHECK(horizon_cap(19, 0.5) == 9);
  CHECK(horizon_cap(3, 0.25) == 0);
}

TEST_CASE("score: exact predictions and hand-computed errors") {
  GaussianPredictive exact;
  exact.rows = {{"a", 1}, {"a", 2}};
  exact.mean = Eigen::Vector2d(1.0, 2.0);
  exact.cov = Eigen::Matrix2d::Identity() * 0.25;
  const Metrics m0 = score({exact}, {Eigen::Vector2d(1.0, 2.0)});
  CHECK(m0.mape == 0.0);
  CHECK(m0.rmse == 0.0);
  CHECK(m0.bias == 0.0);
  CHECK(m0.coverage == 1.0);
  CHECK(m0.n == 2);
  CHECK(m0.pi_width == Approx(2.0 * kZ95 * 0.5));

  GaussianPredictive off;
  off.rows = exact.rows;
  off.mean = Eigen::Vector2d(2.0, 2.0);
  off.cov = Eigen::Matrix2d::Identity() * 0.25;
  const Metrics m1 = score({off}, {Eigen::Vector2d(1.0, 4.0)});
  CHECK(m1.bias == Approx(-0.5));
  CHECK(m1.rmse == Approx(std::sqrt(2.5)));
  CHECK(m1.mape == Approx(0.75));

  // Width-zero intervals cover nothing but exact hits.
  GaussianPredictive zerow = off;
  zerow.cov = Eigen::Matrix2d::Zero();
  const Metrics m2 = score({zerow}, {Eigen::Vector2d(1.0, 4.0)});
  CHECK(m2.coverage == 0.0);

  // Zero observed values are excluded from MAPE and counted.
  const Metrics m3 = score({off}, {Eigen::Vector2d(0.0, 4.0)});
  CHECK(m3.mape == Approx(0.5));
  CHECK(m3.mape_excluded == 1);

  CHECK_THROWS_AS(score({off}, {}), DataError);
}

namespace {

PanelDataset small_untreated_panel(int m, int T, std::uint64_t seed) {
  SimLayout layout;
  layout.spec = model_preset("ou-time");
  layout.m = m;
  layout.T = T;
  layout.theta.sigma_mu2 = 1.5;
  layout.theta.sigma_g1_2 = 0.6;
  layout.theta.ell_time = 3.0;
  layout.omega2_default = 0.2;
  return sample_prior(layout, seed);
}

PanelDataset staggered_panel(int n_treated, int n_controls, int T,
                             std::uint64_t seed, double effect = 0.0,
                             int t0_min = 0, int t0_max = 0) {
  SimLayout layout;
  layout.spec = model_preset("ou-time");
  layout.m = n_treated + n_controls;
  layout.T = T;
  layout.theta.sigma_mu2 = 1.5;
  layout.theta.sigma_g1_2 = 0.6;
  layout.theta.ell_time = 3.0;
  layout.omega2_default = 0.2;
  if (t0_min == 0) t0_min = (2 * T) / 3;
  if (t0_max == 0) t0_max = t0_min;
  SplitMix64 rng(seed ^ 0xabcdefULL);
  for (int i = 0; i < n_treated; ++i) {
    const int t0 =
        t0_min + static_cast<int>(rng.next_below(
                     static_cast<std::uint64_t>(t0_max - t0_min + 1)));
    layout.injections.push_back(
        {SimLayout::unit_name(i, layout.m), t0, effect});
  }
  return sample_prior(layout, seed);
}

}  // namespace

TEST_CASE("leave-one-out validation: counting identities on a tiny panel") {
  const PanelDataset data = small_untreated_panel(2, 6, 11);
  FitOptions opts;
  opts.restarts = 1;
  const ValidationReport rep =
      leave_one_out_validation(data, 4, model_preset("ou-time"), opts, "ou-time");

  CHECK(rep.fits_attempted == 2);
  CHECK(rep.fit_failures == 0);
  CHECK(rep.overall.n == 4);  // 2 fits x 2 predictions each
  int horizon_total = 0, time_total = 0;
  for (const auto& g : rep.per_horizon) horizon_total += g.n;
  for (const auto& g : rep.per_time) time_total += g.n;
  CHECK(horizon_total == rep.overall.n);
  CHECK(time_total == rep.overall.n);
  REQUIRE(rep.per_horizon.size() == 2);
  CHECK(rep.per_horizon[0].n == 2);
  CHECK(rep.per_time.front().key == 5);
  CHECK(rep.per_time.back().key == 6);
}

TEST_CASE("leave-one-out validation rejects windows with treated rows") {
  PanelDataset data = small_untreated_panel(3, 8, 13);
  data.units[1].treatment_time = 5;  // post rows 6..8 exist in the window
  FitOptions opts;
  opts.restarts = 1;
  CHECK_THROWS_AS(
      leave_one_out_validation(data, 5, model_preset("ou-time"), opts),
      DataError);

  // Treatment at the window edge leaves no treated rows: accepted, and the
  // flagged unit still serves as a control and pseudo-treated unit.
  data.units[1].treatment_time = 8;
  const ValidationReport rep =
      leave_one_out_validation(data, 5, model_preset("ou-time"), opts);
  CHECK(rep.fits_attempted == 3);
  CHECK(rep.overall.n == 9);
}

TEST_CASE("leave-one-out validation is deterministic across job counts") {
  const PanelDataset data = small_untreated_panel(4, 8, 17);
  FitOptions opts;
  opts.restarts = 2;
  opts.seed = 3;
  const auto r1 =
      leave_one_out_validation(data, 5, model_preset("ou-time"), opts, "m", 1);
  const auto r2 =
      leave_one_out_validation(data, 5, model_preset("ou-time"), opts, "m", 2);
  CHECK(validation_report_csv({r1}, false) == validation_report_csv({r2}, false));
  CHECK(group_accuracy_csv(r1.per_time, "t") ==
        group_accuracy_csv(r2.per_time, "t"));
}

TEST_CASE("staggered pipeline: training size and horizon bookkeeping") {
  // One unit first treated at week 21 (T0 = 20), 26 controls, T = 52.
  const PanelDataset data = staggered_panel(1, 25, 52, 19, 0.0, 20, 20);
  StaggeredConfig cfg;
  cfg.M = 20;
  cfg.horizon_fraction = 0.5;
  cfg.seed = 4;
  FitOptions opts;
  opts.restarts = 1;
  opts.max_iters = 3;  // bookkeeping test, the fit quality is irrelevant
  const auto out = staggered_pipeline(data, cfg, model_preset("ou-time"), opts,
                                      PipelineMode::Estimate);
  REQUIRE(out.per_unit.size() == 1);
  const auto& r = out.per_unit[0];
  REQUIRE(r.ok);
  CHECK(r.n_train == 20 + 20 * 52);  // n_i = T0 + M*T = 1,060
  CHECK(r.t0_used == 20);
  REQUIRE(r.pred.rows.size() == 10);  // predict weeks 21..30
  CHECK(r.pred.rows.front().t == 21);
  CHECK(r.pred.rows.back().t == 30);
}

TEST_CASE("staggered pipeline: validate mode uses the fake-time rule") {
  // Treated at T0 = 30 with weeks 1..52: validation keeps pre rows 1..30,
  // places the fake treatment at 20, and scores 21..30.
  const PanelDataset data = staggered_panel(2, 8, 52, 23, 0.7, 30, 30);
  StaggeredConfig cfg;
  cfg.M = 5;
  cfg.validation_fraction = 1.0 / 3.0;
  cfg.seed = 99;
  FitOptions opts;
  opts.restarts = 1;
  opts.max_iters = 40;
  const auto out = staggered_pipeline(data, cfg, model_preset("ou-time"), opts,
                                      PipelineMode::Validate);
  REQUIRE(out.validation.has_value());
  for (const auto& r : out.per_unit) {
    REQUIRE(r.ok);
    CHECK(r.t0_used == 20);
    CHECK(r.pred.rows.front().t == 21);
    CHECK(r.pred.rows.back().t == 30);
    // Fake-post rows carry no injected effect: they lie before T0.
    CHECK(r.n_train == 20 + 5 * 52);
  }
  CHECK(out.validation->overall.n == 20);
  CHECK(out.att.per_week.size() == 10);
}

TEST_CASE("staggered pipeline: determinism across job counts") {
  const PanelDataset data = staggered_panel(4, 10, 24, 29, 0.5, 14, 18);
  StaggeredConfig cfg;
  cfg.M = 4;
  cfg.seed = 7;
  FitOptions opts;
  opts.restarts = 2;
  opts.max_iters = 60;

  auto run = [&](int jobs) {
    StaggeredConfig c = cfg;
    c.jobs = jobs;
    return staggered_pipeline(data, c, model_preset("ou-time"), opts,
                              PipelineMode::Estimate);
  };
  const auto a = run(1);
  const auto b = run(2);
  CHECK(att_csv(a.att) == att_csv(b.att));
  REQUIRE(a.per_unit.size() == b.per_unit.size());
  for (std::size_t i = 0; i < a.per_unit.size(); ++i) {
    CHECK(a.per_unit[i].unit_id == b.per_unit[i].unit_id);
    CHECK(a.per_unit[i].summary.cumulative.est ==
          b.per_unit[i].summary.cumulative.est);
  }
}

TEST_CASE("staggered pipeline: unit_sample subsets deterministically") {
  const PanelDataset data = staggered_panel(6, 8, 20, 31, 0.0, 12, 15);
  StaggeredConfig cfg;
  cfg.M = 3;
  cfg.unit_sample = 3;
  cfg.seed = 11;
  FitOptions opts;
  opts.restarts = 1;
  opts.max_iters = 30;
  const auto a = staggered_pipeline(data, cfg, model_preset("ou-time"), opts,
                                    PipelineMode::Estimate);
  const auto b = staggered_pipeline(data, cfg, model_preset("ou-time"), opts,
                                    PipelineMode::Estimate);
  REQUIRE(a.per_unit.size() == 3);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(a.per_unit[i].unit_id == b.per_unit[i].unit_id);
}

TEST_CASE("staggered pipeline: failures are logged, then break the circuit") {
  // Two of six treated units have too few pre-period rows for the fake-time
  // rule (needs >= 3): with 2/6 failures the pipeline errors out (> 20%).
  PanelDataset data = staggered_panel(6, 8, 20, 37, 0.0, 12, 15);
  data.units[0].treatment_time = 2;
  data.units[1].treatment_time = 1;
  StaggeredConfig cfg;
  cfg.M = 3;
  cfg.seed = 13;
  FitOptions opts;
  opts.restarts = 1;
  opts.max_iters = 30;
  CHECK_THROWS_AS(staggered_pipeline(data, cfg, model_preset("ou-time"), opts,
                                     PipelineMode::Validate),
                  NumericalError);

  // One failure in six stays under the circuit breaker and is reported.
  data.units[1].treatment_time = 14;
  const auto out = staggered_pipeline(data, cfg, model_preset("ou-time"), opts,
                                      PipelineMode::Validate);
  CHECK(out.failures == 1);
  REQUIRE(out.validation.has_value());
  CHECK(out.validation->fit_failures == 1);
  CHECK(out.validation->failure_messages.size() == 1);
}

TEST_CASE("staggered pipeline: config validation") {
  const PanelDataset data = staggered_panel(2, 4, 12, 41, 0.0, 8, 8);
  FitOptions opts;
  StaggeredConfig cfg;
  cfg.M = 0;
  CHECK_THROWS_AS(staggered_pipeline(data, cfg, model_preset("ou-time"), opts,
                                     PipelineMode::Estimate),
                  ConfigError);
  cfg.M = 99;
  CHECK_THROWS_AS(staggered_pipeline(data, cfg, model_preset("ou-time"), opts,
                                     PipelineMode::Estimate),
                  DataError);
  cfg.M = 2;
  cfg.horizon_fraction = 0.0;
  CHECK_THROWS_AS(staggered_pipeline(data, cfg, model_preset("ou-time"), opts,
                                     PipelineMode::Estimate),
                  ConfigError);
}
