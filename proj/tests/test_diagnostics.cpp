#include "doctest.h"
#include "meacorr/diagnostics.hpp"
#include "meacorr/scenario.hpp"

using namespace meacorr;

TEST_CASE("jointly normal proxies are not flagged beyond the nominal rate") {
  const StudyDesign d = studies::study3();
  int rejections = 0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    ProxyPanel panel = generate_panel(d.cfg, 500, derive_seed(42, {(std::uint64_t)r}));
    auto reps_out = proxy_pair_linearity(panel, 0, 2);
    rejections += reps_out[0].quad_p < 0.05;
  }
  const double rate = static_cast<double>(rejections) / reps;
  CHECK(rate > 0.005);
  CHECK(rate < 0.12);
}

TEST_CASE("a deterministic exponential coupling is flagged, in both directions") {
  ProxyPanel panel;
  panel.n = 400;
  panel.k = 2;
  panel.p = 1;
  panel.q = 0;
  panel.y = VectorXd::Zero(400);
  panel.z = MatrixXd::Zero(400, 0);
  panel.observed.setConstant(400, 2, true);
  panel.proxies.assign(2, MatrixXd(400, 1));
  Rng rng(3);
  for (int i = 0; i < 400; ++i) {
    const double x = rng.normal();
    panel.proxies[0](i, 0) = x;
    panel.proxies[1](i, 0) = std::exp(x);
  }
  auto fwd = proxy_pair_linearity(panel, 1, 0);
  CHECK(std::abs(fwd[0].quad_wald) > 4.0);
  CHECK(fwd[0].r2_quadratic - fwd[0].r2_linear > 0.01);
  auto rev = proxy_pair_linearity(panel, 0, 1);
  CHECK(std::abs(rev[0].quad_wald) > 4.0);
}

TEST_CASE("a proxy against itself is an identity fit") {
  ProxyPanel panel = generate_panel(studies::study3().cfg, 300, 9);
  auto rep = proxy_pair_linearity(panel, 1, 1);
  CHECK(rep[0].r2_linear == doctest::Approx(1.0));
  CHECK(rep[0].slope == doctest::Approx(1.0));
}

TEST_CASE("too little co-observation raises a diagnostic error") {
  ProxyPanel panel = generate_panel(studies::study3().cfg, 30, 9);
  // proxy 2 is 80% missing; 30 rows leave too few pairs
  CHECK_THROWS_AS(proxy_pair_linearity(panel, 0, 1), DiagnosticError);
}

TEST_CASE("reports are pure functions of the panel") {
  ProxyPanel panel = generate_panel(studies::study3().cfg, 400, 10);
  auto a = proxy_pair_linearity(panel, 0, 2);
  auto b = proxy_pair_linearity(panel, 0, 2);
  CHECK(a[0].quad_wald == b[0].quad_wald);
  CHECK(a[0].decile_residual_means == b[0].decile_residual_means);
}

TEST_CASE("lambda flatness: constant curves are flat, sloped curves are not") {
  VectorXd lam(5), flat_est(5), se(5);
  lam << 0, 0.5, 1, 1.5, 2;
  flat_est.setConstant(0.7);
  se << 0.0, 0.01, 0.01, 0.01, 0.01;
  FlatnessReport fr = lambda_flatness(lam, flat_est, se);
  CHECK(fr.flat);
  CHECK(fr.slope == doctest::Approx(0.0).epsilon(1e-12));

  VectorXd sloped(5);
  for (int i = 0; i < 5; ++i) sloped[i] = 0.7 - 0.2 * lam[i];
  FlatnessReport fr2 = lambda_flatness(lam, sloped, se);
  CHECK(!fr2.flat);
  CHECK(fr2.slope == doctest::Approx(-0.2).epsilon(1e-6));

  VectorXd one(1), one_se(1);
  one << 0.5;
  one_se << 0.01;
  CHECK_THROWS_AS(lambda_flatness(one.head(1), one, one_se), DiagnosticError);
}
