#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "exchgp/predict.hpp"
#include "exchgp/simulate.hpp"
#include "test_support.hpp"

using namespace exchgp;
using Catch::Approx;
using testsup::make_random_instance;
using testsup::noisy_cov;
using testsup::panel_from_csv;

namespace {

// The worked 2-unit conditioning instance: control a observed y=3 at t=0,
// predict unit b at t=0, all variances 1.
struct TwoUnitFixture {
  PanelDataset data = panel_from_csv("unit,time,outcome\na,0,3\nb,0,5\n");
  ModelSpec spec = model_preset("ou-time");
  HyperParams theta;
  TrainPredSplit split;

  TwoUnitFixture() {
    theta.sigma_mu2 = 1.0;
    theta.sigma_g1_2 = 1.0;
    theta.ell_time = 1.0;
    theta.omega2["a"] = 1.0;
    theta.omega2["b"] = 1.0;
    split.train_rows = {{"a", 0}};
    split.pred_rows = {{"b", 0}};
  }
};

// Production-equivalent joint covariance for the oracle: latent + noise
// everywhere, plus the training-block jitter the predictor applies.
Eigen::MatrixXd oracle_joint(const ModelSpec& spec, const HyperParams& theta,
                             const PanelDataset& data,
                             const TrainPredSplit& split) {
  std::vector<RowKey> all = split.train_rows;
  all.insert(all.end(), split.pred_rows.begin(), split.pred_rows.end());
  Eigen::MatrixXd joint = assemble_cov(spec, theta, data, all);
  for (std::size_t i = 0; i < all.size(); ++i)
    joint(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) +=
        theta.omega2_of(all[i].unit_id);

  const Eigen::Index n = static_cast<Eigen::Index>(split.train_rows.size());
  const double jit = kJitterRel * joint.topLeftCorner(n, n).diagonal().mean();
  joint.topLeftCorner(n, n).diagonal().array() += jit;
  return joint;
}

}  // namespace

TEST_CASE("posterior predictive: manual two-unit conditioning") {
  TwoUnitFixture f;
  Eigen::VectorXd y(1);
  y << 3.0;
  const auto pred = posterior_predictive(f.spec, f.theta, f.data, f.split, y);
  REQUIRE(pred.mean.size() == 1);
  CHECK(pred.mean[0] == Approx(1.0).margin(1e-6));
  CHECK(pred.cov(0, 0) == Approx(8.0 / 3.0).margin(1e-6));
}

TEST_CASE("zero cross-covariance: prediction reverts to the prior") {
  TwoUnitFixture f;
  f.theta.sigma_mu2 = kVarianceFloor;  // shared channel switched off
  Eigen::VectorXd y(1);
  y << 3.0;
  const auto pred = posterior_predictive(f.spec, f.theta, f.data, f.split, y);
  CHECK(pred.mean[0] == Approx(0.0).margin(1e-5));
  // Prior variance (mu + g1) + omega*.
  CHECK(pred.cov(0, 0) ==
        Approx(kVarianceFloor + 1.0 + 1.0).margin(1e-5));
}

TEST_CASE("posterior predictive matches brute-force conditioning") {
  SplitMix64 rng(71);
  for (int rep = 0; rep < 30; ++rep) {
    auto inst = make_random_instance(rng, rep, rep % 7 == 3, rep % 4 == 1);
    const auto pred = posterior_predictive(inst.spec, inst.theta, inst.data,
                                           inst.split, inst.y_train);

    const Eigen::MatrixXd joint =
        oracle_joint(inst.spec, inst.theta, inst.data, inst.split);
    std::vector<Eigen::Index> obs, tgt;
    for (std::size_t i = 0; i < inst.split.train_rows.size(); ++i)
      obs.push_back(static_cast<Eigen::Index>(i));
    for (std::size_t i = 0; i < inst.split.pred_rows.size(); ++i)
      tgt.push_back(static_cast<Eigen::Index>(inst.split.train_rows.size() + i));
    const auto oracle = brute_force_condition(joint, obs, tgt, inst.y_train);

    CHECK((pred.mean - oracle.mean).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((pred.cov - oracle.cov).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("V* does not depend on the observed training outcomes") {
  SplitMix64 rng(83);
  auto inst = make_random_instance(rng, 0);
  const auto p1 = posterior_predictive(inst.spec, inst.theta, inst.data,
                                       inst.split, inst.y_train);
  Eigen::VectorXd y2 = inst.y_train;
  for (Eigen::Index i = 0; i < y2.size(); ++i) y2[i] = rng.next_normal() * 10.0;
  const auto p2 =
      posterior_predictive(inst.spec, inst.theta, inst.data, inst.split, y2);
  CHECK(p1.cov == p2.cov);  // identical computation path, bitwise
  CHECK(p1.mean != p2.mean);
}

TEST_CASE("predictive mean is linear in the training outcomes") {
  SplitMix64 rng(97);
  auto inst = make_random_instance(rng, 3);
  Eigen::VectorXd y1 = inst.y_train, y2 = inst.y_train;
  for (Eigen::Index i = 0; i < y2.size(); ++i) {
    y1[i] = rng.next_normal();
    y2[i] = rng.next_normal();
  }
  const double a = 1.7, b = -0.4;
  const auto pa = posterior_predictive(inst.spec, inst.theta, inst.data,
                                       inst.split, y1);
  const auto pb = posterior_predictive(inst.spec, inst.theta, inst.data,
                                       inst.split, y2);
  const auto pc = posterior_predictive(inst.spec, inst.theta, inst.data,
                                       inst.split, a * y1 + b * y2);
  CHECK((pc.mean - (a * pa.mean + b * pb.mean)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("noise-floor interpolation reproduces a duplicated training row") {
  const auto data = panel_from_csv(
      "unit,time,outcome\na,1,1.7\na,2,-0.3\na,3,0.9\nb,1,0.2\nb,2,0.1\nb,3,0\n");
  HyperParams theta;
  theta.sigma_mu2 = 1.0;
  theta.sigma_g1_2 = 0.5;
  theta.ell_time = 2.0;
  theta.omega2["a"] = kVarianceFloor;
  theta.omega2["b"] = kVarianceFloor;
  TrainPredSplit split;
  split.train_rows = {{"a", 1}, {"a", 2}, {"a", 3}, {"b", 1}, {"b", 2}, {"b", 3}};
  split.pred_rows = {{"a", 2}};  // duplicates a training row
  const Eigen::VectorXd y = observed_outcomes(data, split.train_rows);
  const auto pred = posterior_predictive(model_preset("ou-time"), theta, data,
                                         split, y);
  CHECK(pred.mean[0] == Approx(-0.3).margin(1e-4));
  CHECK(pred.cov(0, 0) == Approx(kVarianceFloor).margin(1e-4));
}

TEST_CASE("95% intervals are calibrated at the generating parameters") {
  // 100 seeds x 5 held-out points, scored at the true hyperparameters.
  SimLayout layout;
  layout.spec = model_preset("ou-time");
  layout.m = 6;
  layout.T = 12;
  layout.theta.sigma_mu2 = 1.0;
  layout.theta.sigma_g1_2 = 0.6;
  layout.theta.ell_time = 3.0;
  layout.omega2_default = 0.2;

  int covered = 0, total = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const PanelDataset data = sample_prior(layout, 52000 + rep);
    HyperParams theta = layout.theta;
    for (const auto& u : data.units) theta.omega2[u.unit_id] = 0.2;
    const TrainPredSplit split = make_split(data, "u0", 7);
    const Eigen::VectorXd y = observed_outcomes(data, split.train_rows);
    const auto pred = posterior_predictive(layout.spec, theta, data, split, y);
    const Eigen::VectorXd yobs = observed_outcomes(data, split.pred_rows);
    for (Eigen::Index k = 0; k < pred.mean.size(); ++k) {
      ++total;
      if (std::abs(yobs[k] - pred.mean[k]) <= kZ95 * std::sqrt(pred.cov(k, k)))
        ++covered;
    }
  }
  REQUIRE(total == 500);
  const double coverage = static_cast<double>(covered) / total;
  CHECK(coverage >= 0.90);
  CHECK(coverage <= 0.98);
}

TEST_CASE("pointwise effects from the worked example") {
  TwoUnitFixture f;
  Eigen::VectorXd y(1);
  y << 3.0;
  const auto pred = posterior_predictive(f.spec, f.theta, f.data, f.split, y);
  Eigen::VectorXd y1(1);
  y1 << 5.0;
  const auto s = pointwise_effects(pred, y1);
  REQUIRE(s.per_time.size() == 1);
  CHECK(s.per_time[0].mean == Approx(4.0).margin(1e-6));
  CHECK(s.per_time[0].sd == Approx(std::sqrt(8.0 / 3.0)).margin(1e-6));
  CHECK(s.per_time[0].lo == Approx(0.7993921905).margin(1e-5));
  CHECK(s.per_time[0].hi == Approx(7.2006078095).margin(1e-5));

  // Observed equal to the counterfactual mean: all effects zero.
  Eigen::VectorXd ym = pred.mean;
  const auto s0 = pointwise_effects(pred, ym);
  CHECK(s0.per_time[0].mean == 0.0);

  Eigen::VectorXd bad(2);
  bad.setZero();
  CHECK_THROWS_AS(pointwise_effects(pred, bad), DataError);
}

TEST_CASE("aggregate effects: single period and diagonal covariance") {
  GaussianPredictive pred;
  pred.rows = {{"x", 1}};
  pred.mean = Eigen::VectorXd::Constant(1, 2.0);
  pred.cov = Eigen::MatrixXd::Constant(1, 1, 0.25);
  Eigen::VectorXd y(1);
  y << 3.0;
  const auto s = aggregate_effects(pred, y);
  CHECK(s.cumulative.est == s.per_time[0].mean);
  CHECK(s.cumulative.sd == s.per_time[0].sd);
  CHECK(s.average.est == s.cumulative.est);

  GaussianPredictive diag;
  diag.rows = {{"x", 1}, {"x", 2}, {"x", 3}};
  diag.mean = Eigen::VectorXd::Zero(3);
  diag.cov = Eigen::Vector3d(0.1, 0.2, 0.3).asDiagonal();
  Eigen::VectorXd y3(3);
  y3 << 1.0, 2.0, 3.0;
  const auto sd3 = aggregate_effects(diag, y3);
  CHECK(sd3.cumulative.est == Approx(6.0));
  CHECK(sd3.cumulative.sd == Approx(std::sqrt(0.6)));
  CHECK(sd3.average.est == Approx(2.0));
  CHECK(sd3.average.sd == Approx(std::sqrt(0.6) / 3.0));
  // Cumulative mean is exactly the sum of the per-time means.
  double total = 0.0;
  for (const auto& r : sd3.per_time) total += r.mean;
  CHECK(sd3.cumulative.est == total);
}

TEST_CASE("att_by_time: passthrough and two-unit averaging") {
  UnitEffects one;
  one.unit_id = "a";
  one.times = {5};
  one.delta_mean = Eigen::VectorXd::Constant(1, 0.1);
  one.delta_cov = Eigen::MatrixXd::Constant(1, 1, 0.04);
  const auto s1 = att_by_time({one});
  REQUIRE(s1.per_week.size() == 1);
  CHECK(s1.per_week[0].n == 1);
  CHECK(s1.per_week[0].mean == Approx(0.1));
  CHECK(s1.per_week[0].sd == Approx(0.2));

  UnitEffects a = one, b = one;
  a.delta_mean[0] = 0.2;
  a.delta_cov(0, 0) = 0.01;
  b.unit_id = "b";
  b.delta_mean[0] = 0.0;
  b.delta_cov(0, 0) = 0.01;
  const auto s2 = att_by_time({a, b});
  REQUIRE(s2.per_week.size() == 1);
  CHECK(s2.per_week[0].n == 2);
  CHECK(s2.per_week[0].mean == Approx(0.1));
  CHECK(s2.per_week[0].sd == Approx(std::sqrt(0.02) / 2.0));
}

TEST_CASE("att_by_time: calendar alignment and within-unit covariance") {
  UnitEffects a;
  a.unit_id = "a";
  a.times = {1, 2};
  a.delta_mean = Eigen::Vector2d(1.0, 2.0);
  a.delta_cov = Eigen::Matrix2d::Zero();
  a.delta_cov << 1.0, 0.5, 0.5, 1.0;
  UnitEffects b;
  b.unit_id = "b";
  b.times = {2, 3};
  b.delta_mean = Eigen::Vector2d(4.0, 6.0);
  b.delta_cov = Eigen::Matrix2d::Identity();

  const auto s = att_by_time({a, b});
  REQUIRE(s.per_week.size() == 3);
  CHECK(s.per_week[0].n == 1);
  CHECK(s.per_week[1].n == 2);
  CHECK(s.per_week[2].n == 1);
  CHECK(s.per_week[0].mean == Approx(1.0));
  CHECK(s.per_week[1].mean == Approx(3.0));
  CHECK(s.per_week[2].mean == Approx(6.0));

  // total = 1 + 3 + 6 = 10; variance includes unit a's off-diagonal 0.5:
  // w_a = (1, 1/2), w_b = (1/2, 1) ->
  // var = (1 + .25 + 2*.5*.5) + (.25 + 1) = 1.75 + 1.25 = 3.0
  CHECK(s.total_cumulative.est == Approx(10.0));
  CHECK(s.total_cumulative.sd == Approx(std::sqrt(3.0)));
  CHECK(s.average_weekly.est == Approx(10.0 / 3.0));
  CHECK(s.average_weekly.sd == Approx(std::sqrt(3.0) / 3.0));

  CHECK_THROWS_AS(att_by_time({}), DataError);
}

TEST_CASE("predict_counterfactual returns outcome-unit results") {
  SimLayout layout;
  layout.spec = model_preset("ou-time");
  layout.m = 5;
  layout.T = 10;
  layout.theta.sigma_mu2 = 2.0;
  layout.theta.sigma_g1_2 = 0.8;
  layout.theta.ell_time = 2.5;
  layout.omega2_default = 0.2;
  PanelDataset data = sample_prior(layout, 999);
  // Shift to a nonzero level so standardization actually matters.
  for (auto& u : data.units) u.outcomes.array() += 120.0;

  const TrainPredSplit split = make_split(data, "u0", 7);
  FitOptions opts;
  opts.restarts = 1;
  const FitResult fr = fit(layout.spec, data, split, opts);
  const auto pred = predict_counterfactual(layout.spec, fr, data, split);

  // Counterfactual levels live near the data, not near zero.
  CHECK(pred.mean.minCoeff() > 100.0);
  CHECK(pred.mean.maxCoeff() < 140.0);
  CHECK(pred.cov.diagonal().minCoeff() > 0.0);
}
