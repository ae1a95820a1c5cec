#include "doctest.h"
#include "meacorr/harness.hpp"

using namespace meacorr;

TEST_CASE("study runs are deterministic and parallel equals sequential") {
  StudyOptions opt;
  opt.n = 400;
  opt.reps = 6;
  opt.seed = 77;
  opt.simex_b = 15;
  opt.threads = 1;
  const std::vector<std::string> methods{"naive", "standard-rc", "gen-rc-equal",
                                         "gen-simex-proxies"};
  StudyResult a = run_study(1, methods, opt);
  StudyResult b = run_study(1, methods, opt);
  opt.threads = 2;
  StudyResult c = run_study(1, methods, opt);
  REQUIRE(a.rows.size() == methods.size() * 4);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].mean == b.rows[i].mean);
    CHECK(a.rows[i].mean == c.rows[i].mean);
    CHECK(a.rows[i].sd == c.rows[i].sd);
  }
  CHECK(a.csv() == c.csv());
}

TEST_CASE("unknown or unavailable methods are rejected up front") {
  CHECK_THROWS_AS(check_method("gradient-boosting", 1), ConfigError);
  CHECK_THROWS_AS(check_method("empirical-simex", 1), NotImplementedError);
  CHECK_THROWS_AS(check_method("mr", 1), ConfigError);
  CHECK_NOTHROW(check_method("mr", 3));
  CHECK_THROWS_AS(check_method("gen-rc-equal-noz", 3), ConfigError);
  CHECK_NOTHROW(check_method("gen-rc-equal-noz", 2));
  CHECK_NOTHROW(check_method("gen-simex-proxies-iid", 3));
}

TEST_CASE("study 3 reports probability-curve RMSEs") {
  StudyOptions opt;
  opt.n = 500;
  opt.reps = 4;
  opt.seed = 3;
  opt.simex_b = 10;
  opt.threads = 2;
  StudyResult res = run_study(3, {"naive", "gen-rc-equal", "mr"}, opt);
  CHECK(res.prob_rmse.count("naive") == 1);
  CHECK(res.prob_rmse.at("naive") > 0.0);
  CHECK(res.prob_rmse.count("mr") == 1);
  CHECK(std::isfinite(res.prob_rmse.at("gen-rc-equal")));
}

TEST_CASE("scenario specs free the right eta parameters") {
  ErrorModelSpec s1 = analysis_scenario_spec(1, 4);
  for (int j = 0; j < 4; ++j) {
    CHECK(s1.j0(j));
    CHECK(s1.j1(j));
  }
  ErrorModelSpec s2 = analysis_scenario_spec(2, 4);
  CHECK(!s2.j0(0));
  CHECK(!s2.j0(1));
  CHECK(s2.j0(2));
  CHECK(s2.j1(0));
  ErrorModelSpec s3 = analysis_scenario_spec(3, 4);
  CHECK(!s3.j0(0));
  CHECK(s3.j0(1));
  CHECK(!s3.j0(2));
  CHECK(s3.j0(3));
  ErrorModelSpec s4 = analysis_scenario_spec(4, 4);
  CHECK(!s4.j0(0));
  CHECK(!s4.j1(0));
  CHECK(!s4.j1(1));
  CHECK(s4.j1(2));
  CHECK_THROWS_AS(analysis_scenario_spec(5, 4), ConfigError);
  CHECK_THROWS_AS(analysis_scenario_spec(1, 3), ConfigError);
}

TEST_CASE("synthetic pressure-study analysis runs end to end") {
  FraminghamSynthetic fs = framingham_synthetic(2);
  ProxyPanel panel = generate_panel(fs.cfg, 900, 5);
  AnalysisOptions opt;
  opt.scenario = 2;
  opt.methods = {"naive", "gen-rc-equal", "gen-simex-proxies"};
  opt.rc_bootstrap = 40;
  opt.simex_b = 20;
  opt.threads = 2;
  AnalysisResult res = run_analysis(panel, fs.model, opt);
  CHECK(res.rows.size() == 3 * 5);
  for (const auto& row : res.rows) {
    CHECK(std::isfinite(row.estimate));
    CHECK(row.lo <= row.estimate);
    CHECK(row.hi >= row.estimate);
  }
  // scenario 2 frees eta0 on the exam-two proxies
  CHECK(res.eta_estimates.count("eta0_1") == 1);
  CHECK(res.eta_estimates.count("eta0_2") == 1);
  CHECK(res.eta_estimates.count("eta0_3") == 0);
  CHECK(!res.csv().empty());
}

TEST_CASE("mismatched panel and scenario spec is a config error") {
  ProxyPanel panel = generate_panel(studies::study3().cfg, 200, 4);  // 3 proxies
  AnalysisOptions opt;
  opt.scenario = 1;
  OutcomeModel model{Family::Logistic, 1, 0};
  CHECK_THROWS_AS(run_analysis(panel, model, opt), ConfigError);
}
