#include "doctest.h"
#include "meacorr/correction.hpp"
#include "meacorr/rc.hpp"
#include "meacorr/scenario.hpp"

using namespace meacorr;

namespace {

ScenarioConfig zero_error_cfg() {
  ScenarioConfig cfg = studies::study1().cfg;
  for (auto& law : cfg.proxy_laws) {
    law.noise_var.setZero();
    law.missing_fraction = 0.0;
  }
  return cfg;
}

}  // namespace

TEST_CASE("study-1 panel matches its generative first moments") {
  const StudyDesign d = studies::study1();
  const int n = 40000;
  ProxyPanel panel = generate_panel(d.cfg, n, 11);
  REQUIRE(panel.x_true.has_value());
  const VectorXd mu = d.cfg.mu_x_true();
  for (int c = 0; c < 3; ++c) {
    const double mean = panel.x_true->col(c).mean();
    const double sd = std::sqrt(d.cfg.sigma_xx_true()(c, c) / n);
    CHECK(std::abs(mean - mu[c]) < 3 * sd);
  }
  // missingness fractions
  double miss2 = 1.0 - panel.observed.col(1).cast<double>().mean();
  double miss3 = 1.0 - panel.observed.col(2).cast<double>().mean();
  CHECK(miss2 == doctest::Approx(0.5).epsilon(0.05));
  CHECK(miss3 == doctest::Approx(0.2).epsilon(0.08));
}

TEST_CASE("zero measurement error makes every proxy equal X") {
  ProxyPanel panel = generate_panel(zero_error_cfg(), 500, 3);
  for (int j = 0; j < panel.k; ++j)
    CHECK((panel.proxies[j] - *panel.x_true).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("study-3 biased proxy has population mean 0.5 + 0.5*3") {
  const StudyDesign d = studies::study3();
  const int n = 40000;
  ProxyPanel panel = generate_panel(d.cfg, n, 5);
  // var(X3*) = 0.25 * 1 + 1/12
  const double sd = std::sqrt((0.25 + 1.0 / 12.0) / n);
  CHECK(std::abs(panel.proxies[2].col(0).mean() - 2.0) < 3 * sd);
}

TEST_CASE("generation is bit-identical under a fixed seed") {
  const StudyDesign d = studies::study2();
  ProxyPanel a = generate_panel(d.cfg, 800, 77);
  ProxyPanel b = generate_panel(d.cfg, 800, 77);
  CHECK(a.y == b.y);
  CHECK(a.z == b.z);
  for (int j = 0; j < a.k; ++j) CHECK(a.proxies[j] == b.proxies[j]);
  CHECK((a.observed == b.observed).all());

  // different seeds agree on first moments within Monte Carlo error
  ProxyPanel c = generate_panel(d.cfg, 20000, 78);
  ProxyPanel e = generate_panel(d.cfg, 20000, 79);
  const double se = std::sqrt(2.0 * 1.5 / 20000);  // var(x2*) ~ 1.5
  CHECK(std::abs(c.proxies[1].col(0).mean() - e.proxies[1].col(0).mean()) < 4 * se);
}

TEST_CASE("masked entries never reach an estimator") {
  const StudyDesign d = studies::study1();
  ProxyPanel panel = generate_panel(d.cfg, 1200, 21);
  ProxyPanel tampered = panel;
  for (int i = 0; i < panel.n; ++i)
    for (int j = 0; j < panel.k; ++j)
      if (!tampered.observed(i, j)) tampered.proxies[j].row(i).setConstant(1e9);

  CorrectionParams xi_a = identify(estimate_raw_moments(panel), d.spec, false);
  CorrectionParams xi_b = identify(estimate_raw_moments(tampered), d.spec, false);
  CHECK(xi_a.mu_x == xi_b.mu_x);
  CHECK(xi_a.sigma_xx == xi_b.sigma_xx);
  for (int j = 0; j < 3; ++j) CHECK(xi_a.m[j] == xi_b.m[j]);

  RcFit fa = fit_rc(panel, d.model, xi_a, WeightMode::Equal);
  RcFit fb = fit_rc(tampered, d.model, xi_b, WeightMode::Equal);
  CHECK(fa.fit.theta == fb.fit.theta);
}

TEST_CASE("panel invariants are enforced") {
  ProxyPanel panel = generate_panel(studies::study3().cfg, 50, 1);
  panel.observed.row(4).setConstant(false);
  CHECK_THROWS_AS(panel.validate(), DataError);

  ProxyPanel nonfinite = generate_panel(studies::study3().cfg, 50, 1);
  nonfinite.proxies[0](7, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(nonfinite.validate(), DataError);

  // a masked non-finite value is allowed
  ProxyPanel masked = generate_panel(studies::study3().cfg, 50, 1);
  int row = -1;
  for (int i = 0; i < masked.n && row < 0; ++i)
    if (!masked.observed(i, 1)) row = i;
  REQUIRE(row >= 0);
  masked.proxies[1](row, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_NOTHROW(masked.validate());
}

TEST_CASE("pattern bookkeeping") {
  ProxyPanel panel = generate_panel(studies::study1().cfg, 3000, 2);
  auto pats = patterns_of(panel);
  CHECK(pats.size() <= 4);  // proxy 1 always observed
  double total = 0.0;
  for (const auto& pat : pats) {
    total += pat.frequency;
    CHECK((pat.mask & 1u) != 0);
  }
  CHECK(total == doctest::Approx(1.0));
}
