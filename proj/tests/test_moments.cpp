#include "doctest.h"
#include "meacorr/moments.hpp"
#include "meacorr/scenario.hpp"

using namespace meacorr;

TEST_CASE("a constant proxy has mean 5 and zero variance") {
  ProxyPanel panel;
  panel.n = 50;
  panel.k = 2;
  panel.p = 1;
  panel.q = 0;
  panel.y = VectorXd::Zero(50);
  panel.z = MatrixXd::Zero(50, 0);
  panel.observed.setConstant(50, 2, true);
  panel.proxies = {MatrixXd::Constant(50, 1, 5.0), MatrixXd::Zero(50, 1)};
  Rng rng(4);
  for (int i = 0; i < 50; ++i) panel.proxies[1](i, 0) = rng.normal();
  RawMoments rm = estimate_raw_moments(panel);
  CHECK(rm.mu[0][0] == doctest::Approx(5.0));
  CHECK(rm.cov(0, 0)(0, 0) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("cross-covariance of two unbiased proxies estimates Var(X)") {
  // population oracle: cov(X1*, X2*) = Sigma_XX; component 1 of study 1 has
  // Sigma_XX = 1
  const StudyDesign d = studies::study1();
  ProxyPanel panel = generate_panel(d.cfg, 1000000, 123);
  RawMoments rm = estimate_raw_moments(panel);
  CHECK(std::abs(rm.cov(0, 1)(0, 0) - 1.0) < 1e-2);
  CHECK(std::abs(rm.cov(0, 1)(1, 1) - 2.0) < 2e-2);
}

TEST_CASE("disjoint observation sets raise an identifiability error") {
  ProxyPanel panel;
  panel.n = 40;
  panel.k = 2;
  panel.p = 1;
  panel.q = 0;
  panel.y = VectorXd::Zero(40);
  panel.z = MatrixXd::Zero(40, 0);
  panel.observed.setConstant(40, 2, false);
  panel.proxies = {MatrixXd::Zero(40, 1), MatrixXd::Zero(40, 1)};
  Rng rng(8);
  for (int i = 0; i < 40; ++i) {
    panel.observed(i, i % 2) = true;
    panel.proxies[0](i, 0) = rng.normal();
    panel.proxies[1](i, 0) = rng.normal();
  }
  try {
    estimate_raw_moments(panel);
    FAIL("expected IdentifiabilityError");
  } catch (const IdentifiabilityError& e) {
    CHECK(std::string(e.what()).find("(1,2)") != std::string::npos);
  }
}

TEST_CASE("pairwise counts and divisors") {
  ProxyPanel panel = generate_panel(studies::study1().cfg, 5000, 3);
  RawMoments rm = estimate_raw_moments(panel);
  CHECK(rm.n_obs[0] == 5000);
  CHECK(rm.n_pair(1, 2) < rm.n_obs[1]);
  CHECK(rm.n_pair(1, 2) == rm.n_pair(2, 1));
  // transpose symmetry of the grid
  CHECK((rm.cov(1, 2) - rm.cov(2, 1).transpose()).lpNorm<Eigen::Infinity>() < 1e-15);
}

TEST_CASE("moment pass is independent of row order (compensated sums)") {
  ProxyPanel panel = generate_panel(studies::study2().cfg, 4000, 17);
  std::vector<int> perm(panel.n);
  for (int i = 0; i < panel.n; ++i) perm[i] = panel.n - 1 - i;
  ProxyPanel reversed = restrict_rows(panel, perm);
  RawMoments a = estimate_raw_moments(panel);
  RawMoments b = estimate_raw_moments(reversed);
  CHECK(std::abs(a.cov(0, 1)(0, 0) - b.cov(0, 1)(0, 0)) < 1e-12);
  CHECK(std::abs(a.mu[2][0] - b.mu[2][0]) < 1e-13);
  CHECK(std::abs(a.sigma_zj[0](0, 0) - b.sigma_zj[0](0, 0)) < 1e-12);
}
