#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "exchgp/kernels.hpp"
#include "exchgp/rng.hpp"

using namespace exchgp;
using Catch::Approx;

TEST_CASE("kernel closed-form values") {
  CHECK(kernel_eval_time(KernelSpec::ou_time(1.0), 0.0, 0.0) == 1.0);
  CHECK(kernel_eval_time(KernelSpec::ou_time(1.0), 0.0, 1.0) ==
        Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(kernel_eval_time(KernelSpec::rbf_time(2.0), 0.0, 2.0) ==
        Approx(std::exp(-0.5)).epsilon(1e-12));

  // ARD with a huge second lengthscale approaches the 1-d RBF value.
  Eigen::VectorXd ells(2);
  ells << 1.0, 1e8;
  Eigen::VectorXd a(2), b(2);
  a << 0.0, 0.0;
  b << 1.0, 5.0;
  CHECK(kernel_eval(KernelSpec::rbf_cov_ard(ells), a, b) ==
        Approx(std::exp(-0.5)).epsilon(1e-9));
}

TEST_CASE("gram matrices match elementwise closed forms") {
  Eigen::VectorXd t0(1);
  t0 << 0.0;
  const Eigen::MatrixXd g0 =
      kernel_gram_times(KernelSpec::rbf_time(1.0), t0, t0);
  REQUIRE(g0.rows() == 1);
  CHECK(g0(0, 0) == 1.0);

  Eigen::VectorXd t3(3);
  t3 << 0.0, 1.0, 2.0;
  const Eigen::MatrixXd gou =
      kernel_gram_times(KernelSpec::ou_time(1.0), t3, t3);
  CHECK(gou(0, 0) == Approx(1.0));
  CHECK(gou(0, 1) == Approx(std::exp(-1.0)));
  CHECK(gou(0, 2) == Approx(std::exp(-2.0)));
  CHECK(gou(1, 2) == Approx(std::exp(-1.0)));  // Toeplitz structure

  const Eigen::MatrixXd grbf =
      kernel_gram_times(KernelSpec::rbf_time(1.0), t0, t3);
  CHECK(grbf(0, 0) == Approx(1.0));
  CHECK(grbf(0, 1) == Approx(std::exp(-0.5)));
  CHECK(grbf(0, 2) == Approx(std::exp(-2.0)));
}

TEST_CASE("kernel symmetry and unit diagonal over random inputs") {
  SplitMix64 rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::VectorXd a(3), b(3);
    for (int j = 0; j < 3; ++j) {
      a[j] = 4.0 * rng.next_normal();
      b[j] = 4.0 * rng.next_normal();
    }
    Eigen::VectorXd ells(3);
    for (int j = 0; j < 3; ++j) ells[j] = 0.3 + 2.0 * rng.next_uniform();
    const KernelSpec specs[] = {
        KernelSpec::ou_time(ells[0]), KernelSpec::rbf_time(ells[0]),
        KernelSpec::rbf_cov(ells[0]), KernelSpec::rbf_cov_ard(ells)};
    for (const auto& k : specs) {
      const bool time_kernel = k.kind == KernelKind::OUTime ||
                               k.kind == KernelKind::RBFTime;
      const auto av = time_kernel ? a.head(1) : a;
      const auto bv = time_kernel ? b.head(1) : b;
      const double kab = kernel_eval(k, av, bv);
      CHECK(kab == Approx(kernel_eval(k, bv, av)).margin(0.0));
      CHECK(kab >= 0.0);  // exp may underflow at extreme distances
      CHECK(kab <= 1.0);
      CHECK(kernel_eval(k, av, av) == 1.0);
    }
  }
}

TEST_CASE("random gram matrices are positive semidefinite") {
  SplitMix64 rng(23);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 2 + static_cast<int>(rng.next_below(19));
    const int d = 1 + static_cast<int>(rng.next_below(3));
    Eigen::MatrixXd pts(n, d);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) pts(i, j) = 3.0 * rng.next_normal();
    Eigen::VectorXd ells(d);
    for (int j = 0; j < d; ++j) ells[j] = 0.4 + 2.0 * rng.next_uniform();

    std::vector<KernelSpec> specs = {KernelSpec::rbf_cov(ells[0]),
                                     KernelSpec::rbf_cov_ard(ells)};
    if (d == 1) {
      specs.push_back(KernelSpec::ou_time(ells[0]));
      specs.push_back(KernelSpec::rbf_time(ells[0]));
    }
    for (const auto& k : specs) {
      const Eigen::MatrixXd g = kernel_gram(k, pts, pts);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g);
      CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
    }
  }
}

TEST_CASE("stationarity: translation leaves the gram matrix unchanged") {
  SplitMix64 rng(37);
  Eigen::MatrixXd pts(8, 2);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 2; ++j) pts(i, j) = 2.0 * rng.next_normal();
  Eigen::VectorXd ells(2);
  ells << 1.3, 0.8;
  const Eigen::MatrixXd shifted = pts.array() + 7.25;

  const KernelSpec kc = KernelSpec::rbf_cov(1.1);
  const KernelSpec ka = KernelSpec::rbf_cov_ard(ells);
  CHECK((kernel_gram(kc, pts, pts) - kernel_gram(kc, shifted, shifted))
            .cwiseAbs()
            .maxCoeff() < 1e-14);
  CHECK((kernel_gram(ka, pts, pts) - kernel_gram(ka, shifted, shifted))
            .cwiseAbs()
            .maxCoeff() < 1e-14);

  Eigen::VectorXd t(6), ts(6);
  for (int i = 0; i < 6; ++i) {
    t[i] = 1.7 * i;
    ts[i] = t[i] - 42.0;
  }
  const KernelSpec kt = KernelSpec::ou_time(2.0);
  CHECK((kernel_gram_times(kt, t, t) - kernel_gram_times(kt, ts, ts))
            .cwiseAbs()
            .maxCoeff() < 1e-14);
}

TEST_CASE("ARD with equal lengthscales equals isotropic RBF") {
  SplitMix64 rng(5);
  const double ell = 1.7;
  Eigen::VectorXd ells = Eigen::VectorXd::Constant(3, ell);
  Eigen::MatrixXd pts(10, 3);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 3; ++j) pts(i, j) = rng.next_normal();
  const Eigen::MatrixXd ga =
      kernel_gram(KernelSpec::rbf_cov_ard(ells), pts, pts);
  const Eigen::MatrixXd gi = kernel_gram(KernelSpec::rbf_cov(ell), pts, pts);
  CHECK((ga - gi).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("kernel input validation") {
  Eigen::VectorXd a(2), b(3);
  a.setZero();
  b.setZero();
  CHECK_THROWS_AS(kernel_eval(KernelSpec::rbf_cov(1.0), a, b), DataError);
  Eigen::VectorXd t2(2);
  t2.setZero();
  CHECK_THROWS_AS(kernel_eval(KernelSpec::ou_time(1.0), t2, t2), DataError);
  Eigen::VectorXd ells(2);
  ells << 1.0, 1.0;
  CHECK_THROWS_AS(kernel_eval(KernelSpec::rbf_cov_ard(ells), b, b), DataError);
  CHECK_THROWS_AS(KernelSpec::ou_time(-1.0).validate(), ConfigError);
}
