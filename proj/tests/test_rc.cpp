#include "doctest.h"
#include "meacorr/rc.hpp"
#include "meacorr/scenario.hpp"
#include "oracle_helpers.hpp"

using namespace meacorr;
using namespace meacorr::testing;

namespace {

CorrectionParams scalar_two_proxy_xi(double m1, double m2, double mu = 0.0, double sxx = 1.0) {
  PopulationTruth t;
  t.mu_x = VectorXd::Constant(1, mu);
  t.sigma_xx = MatrixXd::Constant(1, 1, sxx);
  t.eta0 = {VectorXd::Zero(1), VectorXd::Zero(1)};
  t.eta1 = {VectorXd::Ones(1), VectorXd::Ones(1)};
  t.m = {MatrixXd::Constant(1, 1, m1), MatrixXd::Constant(1, 1, m2)};
  return identify(population_moments(t), ErrorModelSpec::all_unbiased(2), false);
}

ScenarioConfig zero_error_study1() {
  ScenarioConfig cfg = studies::study1().cfg;
  for (auto& law : cfg.proxy_laws) {
    law.noise_var.setZero();
    law.missing_fraction = 0.0;
  }
  return cfg;
}

}  // namespace

TEST_CASE("single-proxy BLUP shrinks by Sigma_XX/(Sigma_XX + M)") {
  CorrectionParams xi = scalar_two_proxy_xi(1.0, 1.0);
  VectorXd alpha = VectorXd::Constant(2, 0.5);
  BlupMap map = build_blup(xi, alpha, 0b01, false);  // only proxy 1 observed
  CHECK(map.beta(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(map.mu[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("zero error covariance makes the calibration an identity") {
  ProxyPanel panel = generate_panel(zero_error_study1(), 600, 4);
  CorrectionParams xi =
      identify(estimate_raw_moments(panel), ErrorModelSpec::all_unbiased(3), false);
  VectorXd alpha = VectorXd::Constant(3, 1.0 / 3.0);
  BlupMap map = build_blup(xi, alpha, 0b111, false);
  CHECK((map.beta - MatrixXd::Identity(3, 3)).lpNorm<Eigen::Infinity>() < 1e-9);
  VectorXd xhat = apply_blup(map, panel, 17);
  CHECK((xhat - panel.x_true->row(17).transpose()).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("weights renormalize over the observed pattern") {
  VectorXd alpha = VectorXd::Constant(3, 1.0 / 3.0);
  VectorXd re = renormalize_alpha(alpha, 0b101, 3);  // proxy 2 missing
  CHECK(re[0] == doctest::Approx(0.5));
  CHECK(re[1] == 0.0);
  CHECK(re[2] == doctest::Approx(0.5));
}

TEST_CASE("exchangeable proxies get equal optimal weights") {
  CorrectionParams xi = scalar_two_proxy_xi(0.7, 0.7);
  std::vector<PatternInfo> pats{{0b11, {}, 1.0}};
  OptimalAlphaResult oa = optimal_alpha(xi, pats, false);
  CHECK(oa.alpha[0] == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("optimal weights are inverse-variance for unbiased scalar proxies") {
  CorrectionParams xi = scalar_two_proxy_xi(0.5, 1.0);
  std::vector<PatternInfo> pats{{0b11, {}, 1.0}};
  OptimalAlphaResult oa = optimal_alpha(xi, pats, false);
  CHECK(oa.alpha[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-5));

  // verify the optimum against a grid search over the simplex
  double best = std::numeric_limits<double>::infinity();
  double best_a = 0.0;
  for (int g = 1; g < 400; ++g) {
    const double a = g / 400.0;
    VectorXd w(2);
    w << a, 1.0 - a;
    const double mse = blup_mse(xi, w, 0b11, false);
    if (mse < best) {
      best = mse;
      best_a = a;
    }
  }
  CHECK(std::abs(best_a - 2.0 / 3.0) < 0.01);
  CHECK(oa.mse <= best + 1e-10);
}

TEST_CASE("optimal weights never lose to equal weights") {
  Rng rng(99);
  for (int trial = 0; trial < 5; ++trial) {
    PopulationTruth t;
    const int k = 3;
    t.mu_x = VectorXd::Constant(1, rng.uniform(-1, 1));
    t.sigma_xx = MatrixXd::Constant(1, 1, rng.uniform(0.5, 2.0));
    for (int j = 0; j < k; ++j) {
      t.eta0.push_back(VectorXd::Zero(1));
      t.eta1.push_back(VectorXd::Ones(1));
      t.m.push_back(MatrixXd::Constant(1, 1, rng.uniform(0.2, 2.0)));
    }
    CorrectionParams xi = identify(population_moments(t), ErrorModelSpec::all_unbiased(k), false);
    std::vector<PatternInfo> pats{{0b111, {}, 0.6}, {0b011, {}, 0.4}};
    OptimalAlphaResult oa = optimal_alpha(xi, pats, false);
    const double equal = blup_mse_objective(xi, VectorXd::Constant(k, 1.0 / k), pats, false);
    CHECK(oa.mse <= equal + 1e-12);
  }
}

TEST_CASE("zero-error RC equals the true-covariate fit") {
  ProxyPanel panel = generate_panel(zero_error_study1(), 800, 6);
  OutcomeModel model{Family::Linear, 3, 0};
  CorrectionParams xi =
      identify(estimate_raw_moments(panel), ErrorModelSpec::all_unbiased(3), false);
  RcFit rc = fit_rc(panel, model, xi, WeightMode::Equal);
  FitResult truth = solve_m(model, panel.y, *panel.x_true, panel.z);
  CHECK((rc.fit.theta - truth.theta).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("deleting one pattern leaves the other patterns' calibrations unchanged") {
  const StudyDesign d = studies::study1();
  ProxyPanel panel = generate_panel(d.cfg, 1500, 44);
  CorrectionParams xi = identify(estimate_raw_moments(panel), d.spec, false);
  RcFit all = fit_rc(panel, d.model, xi, WeightMode::Equal);

  auto pats = patterns_of(panel);
  REQUIRE(pats.size() >= 2);
  std::vector<int> keep_rows;
  for (std::size_t s = 1; s < pats.size(); ++s)
    keep_rows.insert(keep_rows.end(), pats[s].rows.begin(), pats[s].rows.end());
  std::sort(keep_rows.begin(), keep_rows.end());
  ProxyPanel sub = restrict_rows(panel, keep_rows);
  RcFit subfit = fit_rc(sub, d.model, xi, WeightMode::Equal);  // same xi by contract
  for (std::size_t ii = 0; ii < keep_rows.size(); ++ii)
    CHECK((subfit.xhat.row(ii) - all.xhat.row(keep_rows[ii])).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("shifting an eta0-free proxy leaves calibrated values unchanged") {
  const StudyDesign d = studies::study3();
  ProxyPanel panel = generate_panel(d.cfg, 2500, 71);
  ProxyPanel shifted = panel;
  shifted.proxies[2].array() += 3.25;
  CorrectionParams xa = identify(estimate_raw_moments(panel), d.spec, false);
  CorrectionParams xb = identify(estimate_raw_moments(shifted), d.spec, false);
  RcFit fa = fit_rc(panel, d.model, xa, WeightMode::Equal);
  RcFit fb = fit_rc(shifted, d.model, xb, WeightMode::Equal);
  CHECK((fa.xhat - fb.xhat).lpNorm<Eigen::Infinity>() < 1e-10);
  CHECK((fa.fit.theta - fb.fit.theta).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("zero-error RC sandwich reduces to the OLS sandwich") {
  ProxyPanel panel = generate_panel(zero_error_study1(), 700, 8);
  OutcomeModel model{Family::Linear, 3, 0};
  CorrectionParams xi =
      identify(estimate_raw_moments(panel), ErrorModelSpec::all_unbiased(3), false);
  RcFit rc = fit_rc(panel, model, xi, WeightMode::Equal);
  MatrixXd cov = rc_sandwich(panel, model, xi, rc, WeightMode::Equal);
  MatrixXd ols = plain_sandwich(model, panel.y, *panel.x_true, panel.z, rc.fit.theta);
  CHECK((cov - ols).lpNorm<Eigen::Infinity>() / ols.lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("the stacked A matrix has the proven zero blocks") {
  const StudyDesign d = studies::study1();
  ProxyPanel panel = generate_panel(d.cfg, 900, 15);
  CorrectionParams xi = identify(estimate_raw_moments(panel), d.spec, false);
  RcFit rc = fit_rc(panel, d.model, xi, WeightMode::Equal);
  StackedSystem sys = rc_stacked_system(panel, d.model, xi, rc, WeightMode::Equal, false);
  const int m = sys.theta_dim;
  // h and g rows have exactly zero Theta columns
  CHECK(sys.a.block(m, 0, sys.a.rows() - m, m).lpNorm<Eigen::Infinity>() == 0.0);
  // g rows are independent of the calibration parameters
  CHECK(sys.a.block(m + sys.h_dim + sys.f_dim, m, sys.xi_dim, sys.h_dim).lpNorm<Eigen::Infinity>() ==
        0.0);
  // B: h rows are identically zero at the solution
  CHECK(sys.b.block(m, 0, sys.h_dim, sys.b.cols()).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("iid unbiased equal-variance replicates: standard RC equals generalized RC") {
  ScenarioConfig cfg = studies::study1().cfg;
  for (auto& law : cfg.proxy_laws) {
    law.noise_var.setConstant(1.5);
    law.missing_fraction = 0.0;
  }
  ProxyPanel panel = generate_panel(cfg, 1200, 10);
  OutcomeModel model{Family::Linear, 3, 0};
  CorrectionParams xi =
      identify(estimate_raw_moments(panel), ErrorModelSpec::all_unbiased(3), false);
  RcFit gen = fit_rc(panel, model, xi, WeightMode::Equal);
  RcFit std_rc = fit_standard_rc(panel, model);
  CHECK((gen.fit.theta - std_rc.fit.theta).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("rc sandwich tracks the Monte Carlo spread (two-proxy scalar case)") {
  PopulationTruth t;
  t.mu_x = VectorXd::Constant(1, 1.0);
  t.sigma_xx = MatrixXd::Constant(1, 1, 1.0);
  t.eta0 = {VectorXd::Zero(1), VectorXd::Zero(1)};
  t.eta1 = {VectorXd::Ones(1), VectorXd::Ones(1)};
  t.m = {MatrixXd::Constant(1, 1, 0.6), MatrixXd::Constant(1, 1, 1.2)};

  ScenarioConfig cfg;
  cfg.p = 1;
  cfg.x_comps = {{1.0, 1.0, {}}};
  cfg.outcome.family = Family::Linear;
  cfg.outcome.theta = (VectorXd(2) << 0.5, 1.0).finished();
  ProxyLaw l1, l2;
  l1.eta0 = l2.eta0 = VectorXd::Zero(1);
  l1.eta1 = l2.eta1 = VectorXd::Ones(1);
  l1.noise_var = VectorXd::Constant(1, 0.6);
  l2.noise_var = VectorXd::Constant(1, 1.2);
  cfg.proxy_laws = {l1, l2};

  const int reps = 120, n = 1500;
  OutcomeModel model{Family::Linear, 1, 0};
  MatrixXd draws(reps, 2);
  VectorXd se_acc = VectorXd::Zero(2);
  for (int r = 0; r < reps; ++r) {
    ProxyPanel panel = generate_panel(cfg, n, derive_seed(321, {(std::uint64_t)r}));
    CorrectionParams xi =
        identify(estimate_raw_moments(panel), ErrorModelSpec::all_unbiased(2), false);
    RcFit rc = fit_rc(panel, model, xi, WeightMode::Equal);
    draws.row(r) = rc.fit.theta.transpose();
    MatrixXd cov = rc_sandwich(panel, model, xi, rc, WeightMode::Equal);
    se_acc += (cov.diagonal() / n).cwiseSqrt();
  }
  for (int c = 0; c < 2; ++c) {
    const double mean = draws.col(c).mean();
    const double sd = std::sqrt((draws.col(c).array() - mean).square().sum() / (reps - 1));
    const double ratio = (se_acc[c] / reps) / sd;
    CAPTURE(c);
    CHECK(ratio > 0.75);
    CHECK(ratio < 1.30);
  }
}

TEST_CASE("bootstrap intervals bracket the estimate and respect failures") {
  const StudyDesign d = studies::study3();
  ProxyPanel panel = generate_panel(d.cfg, 800, 13);
  CorrectionParams xi = identify(estimate_raw_moments(panel), d.spec, false);
  RcFit rc = fit_rc(panel, d.model, xi, WeightMode::Equal);
  BootstrapResult boot = bootstrap_ci(
      panel, rc.fit.theta, 60, 5, 0.95,
      [&](const ProxyPanel& pb) {
        CorrectionParams xib = identify(estimate_raw_moments(pb), d.spec, false);
        return fit_rc(pb, d.model, xib, WeightMode::Equal).fit.theta;
      },
      2);
  CHECK(boot.failures <= 5);
  for (int c = 0; c < 2; ++c) {
    CHECK(boot.ci_lower[c] < boot.ci_upper[c]);
    CHECK(boot.cov(c, c) > 0.0);
  }
  // deterministic given the seed
  BootstrapResult boot2 = bootstrap_ci(
      panel, rc.fit.theta, 60, 5, 0.95,
      [&](const ProxyPanel& pb) {
        CorrectionParams xib = identify(estimate_raw_moments(pb), d.spec, false);
        return fit_rc(pb, d.model, xib, WeightMode::Equal).fit.theta;
      },
      1);
  CHECK((boot.ci_lower - boot2.ci_lower).lpNorm<Eigen::Infinity>() == 0.0);
}
