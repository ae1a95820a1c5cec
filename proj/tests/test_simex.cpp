#include "doctest.h"
#include "meacorr/simex.hpp"
#include "meacorr/scenario.hpp"
#include "oracle_helpers.hpp"

using namespace meacorr;
using namespace meacorr::testing;

TEST_CASE("pseudo data at lambda = 0 is the de-biased proxy, with no randomness") {
  SimexSystem sys;
  sys.base = MatrixXd::Constant(1, 1, 2.0);
  sys.eta0 = VectorXd::Constant(1, 0.5);
  sys.eta1 = VectorXd::Constant(1, 0.5);
  sys.m = MatrixXd::Constant(1, 1, 4.0);
  sys.m_half = psd_sqrt(sys.m);
  sys.row_scale = VectorXd::Ones(1);
  VectorXd nu = VectorXd::Constant(1, 1.7);
  CHECK(pseudo_value(sys, 0, 0.0, nu)[0] == doctest::Approx((2.0 - 0.5) / 0.5));
}

TEST_CASE("classical construction: x* + sqrt(lambda sigma2) nu") {
  SimexSystem sys;
  sys.base = MatrixXd::Constant(1, 1, 1.3);
  sys.eta0 = VectorXd::Zero(1);
  sys.eta1 = VectorXd::Ones(1);
  sys.m = MatrixXd::Constant(1, 1, 0.49);
  sys.m_half = psd_sqrt(sys.m);
  sys.row_scale = VectorXd::Ones(1);
  VectorXd nu = VectorXd::Constant(1, -0.8);
  CHECK(pseudo_value(sys, 0, 2.0, nu)[0] ==
        doctest::Approx(1.3 + std::sqrt(2.0) * 0.7 * -0.8).epsilon(1e-12));
}

TEST_CASE("conditional variance of pseudo data matches (1+lambda) eta1^-2 M") {
  // eta1 = 0.5, M = 1/12, lambda = 1: Var = 2 * (1/12) / 0.25 = 2/3
  SimexSystem sys;
  sys.base = MatrixXd::Constant(1, 1, 2.0);
  sys.eta0 = VectorXd::Constant(1, 0.5);
  sys.eta1 = VectorXd::Constant(1, 0.5);
  sys.m = MatrixXd::Constant(1, 1, 1.0 / 12.0);
  sys.m_half = psd_sqrt(sys.m);
  sys.row_scale = VectorXd::Ones(1);
  Rng rng(8);
  const int ndraw = 1000000;
  double s = 0, s2 = 0;
  for (int i = 0; i < ndraw; ++i) {
    VectorXd nu = VectorXd::Constant(1, rng.normal());
    const double v = pseudo_value(sys, 0, 1.0, nu)[0];
    s += v;
    s2 += v * v;
  }
  const double mean = s / ndraw;
  const double var = s2 / ndraw - mean * mean;
  // total conditional variance adds the lambda=0 noise already in x*; here the
  // base is fixed, so the pseudo-noise contribution alone is lambda * M / eta1^2
  CHECK(var == doctest::Approx(1.0 * (1.0 / 12.0) / 0.25).epsilon(0.01));
}

TEST_CASE("full conditional second moment across proxies within 1 percent") {
  // generate x* = eta0 + eta1 x + e, then pseudo at lambda = 1 given fixed x:
  // cov = (1 + lambda) eta1^-1 M eta1^-1
  Rng rng(9);
  const double eta0 = 0.5, eta1 = 0.5, m = 1.0 / 12.0, x = 1.7;
  SimexSystem sys;
  sys.base = MatrixXd::Zero(1, 1);
  sys.eta0 = VectorXd::Constant(1, eta0);
  sys.eta1 = VectorXd::Constant(1, eta1);
  sys.m = MatrixXd::Constant(1, 1, m);
  sys.m_half = psd_sqrt(sys.m);
  sys.row_scale = VectorXd::Ones(1);
  const int ndraw = 2000000;
  double s = 0, s2 = 0;
  const double hw = std::sqrt(3.0 * m);
  for (int i = 0; i < ndraw; ++i) {
    sys.base(0, 0) = eta0 + eta1 * x + rng.uniform(-hw, hw);
    VectorXd nu = VectorXd::Constant(1, rng.normal());
    const double v = pseudo_value(sys, 0, 1.0, nu)[0];
    s += v;
    s2 += v * v;
  }
  const double mean = s / ndraw;
  const double var = s2 / ndraw - mean * mean;
  CHECK(mean == doctest::Approx(x).epsilon(0.005));
  CHECK(var == doctest::Approx(2.0 * m / (eta1 * eta1)).epsilon(0.01));
}

TEST_CASE("quadratic extrapolant recovers exact quadratic points") {
  VectorXd lam(5), val(5);
  lam << 0, 0.5, 1, 1.5, 2;
  for (int i = 0; i < 5; ++i) val[i] = 0.3 - 1.2 * lam[i] + 0.45 * lam[i] * lam[i];
  ExtrapolantFit fit = fit_extrapolant(lam, val, ExtrapolantFamily::Quadratic);
  CHECK(fit.gamma[0] == doctest::Approx(0.3).epsilon(1e-10));
  CHECK(fit.gamma[1] == doctest::Approx(-1.2).epsilon(1e-10));
  CHECK(fit.gamma[2] == doctest::Approx(0.45).epsilon(1e-10));
  CHECK(extrapolate(fit) == doctest::Approx(0.3 + 1.2 + 0.45).epsilon(1e-9));
}

TEST_CASE("nonlinear extrapolant recovers G = 1 + 2/(1 + lambda) and flags the pole") {
  VectorXd lam(5), val(5);
  lam << 0, 0.5, 1, 1.5, 2;
  for (int i = 0; i < 5; ++i) val[i] = 1.0 + 2.0 / (1.0 + lam[i]);
  ExtrapolantFit fit = fit_extrapolant(lam, val, ExtrapolantFamily::Nonlinear);
  REQUIRE(fit.family == ExtrapolantFamily::Nonlinear);
  CHECK(fit.gamma[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(fit.gamma[1] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(fit.gamma[2] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(!fit.finite_at_minus1);
  CHECK_THROWS_AS(extrapolate(fit), EstimationError);
}

TEST_CASE("two grid points cannot support a quadratic") {
  VectorXd lam(2), val(2);
  lam << 0, 1;
  val << 1.0, 0.5;
  CHECK_THROWS_AS(fit_extrapolant(lam, val, ExtrapolantFamily::Quadratic), ConfigError);
}

TEST_CASE("extrapolation closed forms") {
  ExtrapolantFit lin;
  lin.family = ExtrapolantFamily::Linear;
  lin.gamma = (VectorXd(2) << 0.7, -0.2).finished();
  CHECK(extrapolate(lin) == doctest::Approx(0.9));
  ExtrapolantFit quad;
  quad.family = ExtrapolantFamily::Quadratic;
  quad.gamma = (VectorXd(3) << 1.0, 2.0, 3.0).finished();
  CHECK(extrapolate(quad) == doctest::Approx(1.0 - 2.0 + 3.0));
  ExtrapolantFit nl;
  nl.family = ExtrapolantFamily::Nonlinear;
  nl.gamma = (VectorXd(3) << 1.0, 2.0, 3.0).finished();
  CHECK(extrapolate(nl) == doctest::Approx(2.0));
}

TEST_CASE("pair combination weight follows the two-estimator formula with clipping") {
  CHECK(optimal_pair_weight(1.0, 1.0, 0.2) == doctest::Approx(0.5));
  CHECK(optimal_pair_weight(1.0, 2.0, 0.5) == doctest::Approx(0.0));
  CHECK(optimal_pair_weight(2.0, 1.0, 0.5) == doctest::Approx(1.0));
}

TEST_CASE("identical per-proxy estimates combine to themselves") {
  MatrixXd sigma(3, 3);
  sigma.setConstant(0.5);
  sigma.diagonal().setConstant(1.0);
  VectorXd w = optimal_combine_weights(sigma);
  CHECK(w.sum() == doctest::Approx(1.0));
  // any weights reproduce a common value; exchangeable covariance gives equal weights
  CHECK(w[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-4));
}

TEST_CASE("zero error covariance keeps the lambda curve flat and SIMEX exact") {
  ScenarioConfig cfg = studies::study3().cfg;
  for (auto& law : cfg.proxy_laws) {
    law.noise_var.setZero();
    law.eta0.setZero();
    law.eta1.setOnes();
    law.missing_fraction = 0.0;
  }
  ProxyPanel panel = generate_panel(cfg, 900, 3);
  OutcomeModel model{Family::Logistic, 1, 0};
  CorrectionParams xi =
      identify(estimate_raw_moments(panel), ErrorModelSpec::all_unbiased(3), false);
  SimexConfig scfg;
  scfg.b_reps = 20;
  scfg.threads = 1;
  SimexRun run = simex_curve(panel, model, xi, scfg);
  const VectorXd theta0 = run.systems[0].points[0].theta;
  for (const auto& pt : run.systems[0].points)
    CHECK((pt.theta - theta0).lpNorm<Eigen::Infinity>() < 1e-9);
  SimexFit fit = simex_extrapolate(std::move(run));
  FitResult truth = solve_m(model, panel.y, *panel.x_true, panel.z);
  CHECK((fit.fit.theta - truth.theta).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("study-3 slope magnitude decreases along the lambda grid") {
  const StudyDesign d = studies::study3();
  ProxyPanel panel = generate_panel(d.cfg, 4000, 77);
  CorrectionParams xi = identify(estimate_raw_moments(panel), d.spec, false);
  SimexConfig cfg;
  cfg.b_reps = 60;
  cfg.threads = 2;
  cfg.mode = SimexMode::Proxies;
  SimexRun run = simex_curve(panel, d.model, xi, cfg);
  // complete-pattern group
  for (const auto& sr : run.systems) {
    if (sr.sys.rows.size() < 500) continue;
    for (std::size_t r = 1; r < sr.points.size(); ++r)
      CHECK(std::abs(sr.points[r].theta[1]) < std::abs(sr.points[r - 1].theta[1]) + 3e-3);
  }
}

TEST_CASE("pseudo-replication noise shrinks like 1/sqrt(B)") {
  const StudyDesign d = studies::study3();
  ProxyPanel panel = generate_panel(d.cfg, 1200, 5);
  CorrectionParams xi = identify(estimate_raw_moments(panel), d.spec, false);
  SimexConfig small, large;
  small.b_reps = 20;
  large.b_reps = 180;
  small.threads = large.threads = 2;
  SimexRun rs = simex_curve(panel, d.model, xi, small);
  SimexRun rl = simex_curve(panel, d.model, xi, large);
  // compare mc_se at the top lambda for the complete group (slot 0 coefficient 1)
  double se_s = rs.systems.back().points.back().mc_se[1];
  double se_l = rl.systems.back().points.back().mc_se[1];
  CHECK(se_s / se_l == doctest::Approx(3.0).epsilon(0.5));  // sqrt(180/20) = 3
}

TEST_CASE("identical seeds reproduce the SIMEX estimate bit for bit") {
  const StudyDesign d = studies::study3();
  ProxyPanel panel = generate_panel(d.cfg, 900, 6);
  CorrectionParams xi = identify(estimate_raw_moments(panel), d.spec, false);
  SimexConfig cfg;
  cfg.b_reps = 30;
  cfg.threads = 2;
  SimexFit a = simex_extrapolate(simex_curve(panel, d.model, xi, cfg));
  cfg.threads = 1;
  SimexFit b = simex_extrapolate(simex_curve(panel, d.model, xi, cfg));
  CHECK(a.fit.theta == b.fit.theta);  // parallel equals sequential, exactly
}

TEST_CASE("classical reduction: standard SIMEX equals mode-(b) generalized SIMEX") {
  ScenarioConfig cfg = studies::study1().cfg;
  for (auto& law : cfg.proxy_laws) {
    law.noise_var.setConstant(1.5);
    law.missing_fraction = 0.0;
  }
  ProxyPanel panel = generate_panel(cfg, 1500, 40);
  OutcomeModel model{Family::Linear, 3, 0};
  CorrectionParams xi =
      identify(estimate_raw_moments(panel), ErrorModelSpec::all_unbiased(3), false);
  SimexConfig scfg;
  scfg.b_reps = 40;
  scfg.seed = 999;
  scfg.threads = 1;
  scfg.mode = SimexMode::Proxies;
  SimexFit gen = simex_extrapolate(simex_curve(panel, model, xi, scfg));
  SimexFit std_fit = simex_extrapolate(standard_simex_curve(panel, model, scfg));
  CHECK((gen.fit.theta - std_fit.fit.theta).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("flat curves choose the linear extrapolant under the auto policy") {
  ScenarioConfig cfg = studies::study3().cfg;
  for (auto& law : cfg.proxy_laws) {
    law.noise_var.setZero();
    law.eta0.setZero();
    law.eta1.setOnes();
    law.missing_fraction = 0.0;
  }
  ProxyPanel panel = generate_panel(cfg, 700, 9);
  CorrectionParams xi =
      identify(estimate_raw_moments(panel), ErrorModelSpec::all_unbiased(3), false);
  SimexConfig scfg;
  scfg.b_reps = 15;
  scfg.threads = 1;
  OutcomeModel model{Family::Logistic, 1, 0};
  SimexFit fit = simex_extrapolate(simex_curve(panel, model, xi, scfg));
  for (const auto& sf : fit.systems)
    for (std::size_t c = 0; c < sf.per_coef.size(); ++c) {
      CHECK(sf.flat[c]);
      CHECK(sf.per_coef[c].family == ExtrapolantFamily::Linear);
    }
}

TEST_CASE("zero-error SIMEX sandwich reduces to the naive sandwich") {
  ScenarioConfig cfg = studies::study1().cfg;
  for (auto& law : cfg.proxy_laws) {
    law.noise_var.setZero();
    law.missing_fraction = 0.0;
  }
  ProxyPanel panel = generate_panel(cfg, 800, 12);
  OutcomeModel model{Family::Linear, 3, 0};
  CorrectionParams xi =
      identify(estimate_raw_moments(panel), ErrorModelSpec::all_unbiased(3), false);
  SimexConfig scfg;
  scfg.b_reps = 10;
  scfg.threads = 1;
  SimexFit fit = simex_extrapolate(simex_curve(panel, model, xi, scfg));
  MatrixXd cov = simex_sandwich(panel, xi, fit);
  MatrixXd naive = plain_sandwich(model, panel.y, *panel.x_true, panel.z, fit.fit.theta);
  CHECK((cov - naive).lpNorm<Eigen::Infinity>() / naive.lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("simex sandwich produces a finite PSD covariance on study 3") {
  const StudyDesign d = studies::study3();
  ProxyPanel panel = generate_panel(d.cfg, 1500, 21);
  CorrectionParams xi = identify(estimate_raw_moments(panel), d.spec, false);
  SimexConfig cfg;
  cfg.b_reps = 40;
  cfg.threads = 2;
  for (SimexMode mode : {SimexMode::Proxies, SimexMode::Estimates}) {
    cfg.mode = mode;
    SimexFit fit = simex_extrapolate(simex_curve(panel, d.model, xi, cfg));
    std::vector<MatrixXd> per_coef;
    MatrixXd cov = simex_sandwich(panel, xi, fit, &per_coef);
    CHECK(cov.allFinite());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
    CHECK(es.eigenvalues().minCoeff() > -1e-8);
    CHECK(per_coef.size() == 2);
    if (mode == SimexMode::Estimates) {
      // re-combining with optimal weights keeps the estimate finite
      combine_estimates_optimal(fit, per_coef);
      CHECK(fit.fit.theta.allFinite());
      for (int c = 0; c < 2; ++c)
        CHECK(std::abs(fit.combine_weights.col(c).sum() - 1.0) < 1e-12);
    }
  }
}
