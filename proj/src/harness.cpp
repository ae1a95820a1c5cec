#include "meacorr/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <sstream>
#include <thread>

namespace meacorr {

std::vector<std::string> known_methods() {
  return {"naive",
          "standard-rc",
          "standard-simex",
          "empirical-simex",
          "gen-rc-equal",
          "gen-rc-optimal",
          "gen-simex-proxies",
          "gen-simex-estimates",
          "mr",
          "gen-rc-equal-noz",
          "gen-rc-optimal-noz",
          "gen-rc-equal-iid",
          "gen-rc-optimal-iid",
          "gen-simex-proxies-iid",
          "gen-simex-estimates-iid",
          "mr-iid"};
}

void check_method(const std::string& method, int study) {
  const auto all = known_methods();
  if (std::find(all.begin(), all.end(), method) == all.end())
    throw ConfigError("unknown method tag: " + method);
  if (method == "empirical-simex")
    throw NotImplementedError(
        "empirical-simex is recognized but not implemented (heteroscedastic errors are outside "
        "the homoscedastic focus of this library)");
  if (method == "mr" && study != 0 && study != 3)
    throw ConfigError("mr applies to the logistic study (study 3)");
  if ((method == "gen-rc-equal-noz" || method == "gen-rc-optimal-noz") && study != 0 && study != 2)
    throw ConfigError("the ignoring-Z variants apply to study 2");
  if (method.size() > 4 && method.substr(method.size() - 4) == "-iid" && study != 0 && study != 3)
    throw ConfigError("the iid-only variants apply to study 3");
}

std::vector<std::string> coef_names(const OutcomeModel& model) {
  std::vector<std::string> names{"intercept"};
  for (int c = 0; c < model.p; ++c) names.push_back("x" + std::to_string(c + 1));
  for (int c = 0; c < model.q; ++c) names.push_back("z" + std::to_string(c + 1));
  return names;
}

namespace {

struct RepContext {
  const StudyDesign& design;
  const StudyOptions& opt;
  ProxyPanel panel;
  std::uint64_t rep_seed;

  // lazily shared pieces
  bool have_xi = false, have_xi_noz = false, have_iid = false;
  CorrectionParams xi, xi_noz;
  ProxyPanel panel_iid;
  CorrectionParams xi_iid;

  const CorrectionParams& get_xi() {
    if (!have_xi) {
      xi = identify(estimate_raw_moments(panel), design.spec, design.use_z);
      have_xi = true;
    }
    return xi;
  }
  const CorrectionParams& get_xi_noz() {
    if (!have_xi_noz) {
      xi_noz = identify(estimate_raw_moments(panel), design.spec, false);
      have_xi_noz = true;
    }
    return xi_noz;
  }
  void ensure_iid() {
    if (!have_iid) {
      panel_iid = restrict_proxies(panel, {0, 1});
      xi_iid = identify(estimate_raw_moments(panel_iid), ErrorModelSpec::all_unbiased(2), false);
      have_iid = true;
    }
  }

  SimexConfig simex_cfg() const {
    SimexConfig cfg;
    if (opt.simex_grid.size() > 0) cfg.lambda_grid = opt.simex_grid;
    cfg.b_reps = opt.simex_b;
    cfg.seed = derive_seed(rep_seed, {0x513eULL});
    cfg.threads = 1;  // replicate-level parallelism only
    return cfg;
  }
};

VectorXd run_method(const std::string& method, RepContext& ctx) {
  const OutcomeModel& model = ctx.design.model;
  if (method == "naive") return naive_fit(ctx.panel, model).theta;
  if (method == "standard-rc") return fit_standard_rc(ctx.panel, model).fit.theta;
  if (method == "standard-simex") {
    SimexConfig cfg = ctx.simex_cfg();
    return simex_extrapolate(standard_simex_curve(ctx.panel, model, cfg)).fit.theta;
  }
  if (method == "gen-rc-equal")
    return fit_rc(ctx.panel, model, ctx.get_xi(), WeightMode::Equal).fit.theta;
  if (method == "gen-rc-optimal")
    return fit_rc(ctx.panel, model, ctx.get_xi(), WeightMode::Optimal).fit.theta;
  if (method == "gen-rc-equal-noz")
    return fit_rc(ctx.panel, model, ctx.get_xi_noz(), WeightMode::Equal).fit.theta;
  if (method == "gen-rc-optimal-noz")
    return fit_rc(ctx.panel, model, ctx.get_xi_noz(), WeightMode::Optimal).fit.theta;
  if (method == "gen-simex-proxies" || method == "gen-simex-estimates") {
    SimexConfig cfg = ctx.simex_cfg();
    cfg.mode = method == "gen-simex-proxies" ? SimexMode::Proxies : SimexMode::Estimates;
    return simex_extrapolate(simex_curve(ctx.panel, model, ctx.get_xi(), cfg)).fit.theta;
  }
  if (method == "mr") {
    VectorXd alpha = VectorXd::Constant(ctx.panel.k, 1.0 / ctx.panel.k);
    return fit_mr_logistic(ctx.panel, ctx.get_xi(), alpha, MrSigmaMode::Conditional, false)
        .fit.theta;
  }
  if (method.size() > 4 && method.substr(method.size() - 4) == "-iid") {
    ctx.ensure_iid();
    const std::string base = method.substr(0, method.size() - 4);
    if (base == "gen-rc-equal")
      return fit_rc(ctx.panel_iid, model, ctx.xi_iid, WeightMode::Equal).fit.theta;
    if (base == "gen-rc-optimal")
      return fit_rc(ctx.panel_iid, model, ctx.xi_iid, WeightMode::Optimal).fit.theta;
    if (base == "gen-simex-proxies" || base == "gen-simex-estimates") {
      SimexConfig cfg = ctx.simex_cfg();
      cfg.mode = base == "gen-simex-proxies" ? SimexMode::Proxies : SimexMode::Estimates;
      return simex_extrapolate(simex_curve(ctx.panel_iid, model, ctx.xi_iid, cfg)).fit.theta;
    }
    if (base == "mr") {
      VectorXd alpha = VectorXd::Constant(ctx.panel_iid.k, 1.0 / ctx.panel_iid.k);
      return fit_mr_logistic(ctx.panel_iid, ctx.xi_iid, alpha, MrSigmaMode::Conditional, false)
          .fit.theta;
    }
  }
  throw ConfigError("unknown method tag: " + method);
}

}  // namespace

StudyResult run_study(int study, const std::vector<std::string>& methods,
                      const StudyOptions& opt) {
  for (const auto& mth : methods) check_method(mth, study);
  const StudyDesign design = studies::by_number(study);
  const int m = design.model.dim();
  const auto names = coef_names(design.model);
  const VectorXd truth = design.cfg.outcome.theta;

  std::map<std::string, MatrixXd> slabs;
  std::map<std::string, VectorXd> rmse_slabs;
  for (const auto& mth : methods) {
    slabs[mth] = MatrixXd::Constant(opt.reps, m, std::numeric_limits<double>::quiet_NaN());
    rmse_slabs[mth] = VectorXd::Constant(opt.reps, std::numeric_limits<double>::quiet_NaN());
  }

  // central-95% X grid for the probability curves (study 3)
  const bool prob_curves = study == 3;
  VectorXd xgrid;
  VectorXd ptrue;
  if (prob_curves) {
    const double mu = design.cfg.x_comps[0].mean;
    const double sd = std::sqrt(design.cfg.x_comps[0].var);
    const int gridn = 25;
    xgrid.resize(gridn);
    ptrue.resize(gridn);
    for (int g = 0; g < gridn; ++g) {
      xgrid[g] = mu - 1.959964 * sd + g * (2 * 1.959964 * sd) / (gridn - 1);
      ptrue[g] =
          expit(design.cfg.outcome.theta[0] + design.cfg.outcome.theta[1] * xgrid[g]);
    }
  }

  auto run_rep = [&](int r) {
    RepContext ctx{design, opt, generate_panel(design.cfg, opt.n, derive_seed(opt.seed, {(std::uint64_t)r})),
                   derive_seed(opt.seed, {(std::uint64_t)r})};
    for (const auto& mth : methods) {
      try {
        VectorXd theta = run_method(mth, ctx);
        slabs[mth].row(r) = theta.transpose();
        if (prob_curves) {
          double acc = 0.0;
          for (int g = 0; g < xgrid.size(); ++g) {
            const double ph = expit(theta[0] + theta[1] * xgrid[g]);
            acc += (ph - ptrue[g]) * (ph - ptrue[g]);
          }
          rmse_slabs[mth][r] = std::sqrt(acc / xgrid.size());
        }
      } catch (const Error&) {
        // leave NaN; tallied below
      }
    }
  };

  int nthreads = opt.threads > 0 ? opt.threads
                                 : static_cast<int>(std::thread::hardware_concurrency());
  nthreads = std::max(1, std::min(nthreads, opt.reps));
  if (nthreads == 1) {
    for (int r = 0; r < opt.reps; ++r) run_rep(r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t)
      pool.emplace_back([&]() {
        for (;;) {
          const int r = next.fetch_add(1);
          if (r >= opt.reps) return;
          run_rep(r);
        }
      });
    for (auto& th : pool) th.join();
  }

  StudyResult out;
  out.study = study;
  for (const auto& mth : methods) {
    const MatrixXd& slab = slabs[mth];
    std::vector<int> ok;
    for (int r = 0; r < opt.reps; ++r)
      if (slab.row(r).allFinite()) ok.push_back(r);
    out.failures[mth] = opt.reps - static_cast<int>(ok.size());
    if (ok.empty()) throw EstimationError("method " + mth + " failed in every replicate");
    for (int c = 0; c < m; ++c) {
      StudyRow row;
      row.method = mth;
      row.coef = names[c];
      row.truth = truth[c];
      double mean = 0.0;
      for (int r : ok) mean += slab(r, c);
      mean /= ok.size();
      double var = 0.0;
      for (int r : ok) var += (slab(r, c) - mean) * (slab(r, c) - mean);
      var /= std::max<std::size_t>(ok.size() - 1, 1);
      row.mean = mean;
      row.sd = std::sqrt(var);
      row.bias = mean - truth[c];
      row.mc_se = row.sd / std::sqrt(static_cast<double>(ok.size()));
      out.rows.push_back(row);
    }
    if (prob_curves) {
      double acc = 0.0;
      int cnt = 0;
      for (int r : ok)
        if (std::isfinite(rmse_slabs[mth][r])) {
          acc += rmse_slabs[mth][r];
          ++cnt;
        }
      out.prob_rmse[mth] = cnt > 0 ? acc / cnt : std::numeric_limits<double>::quiet_NaN();
    }
    if (opt.collect_draws) out.draws[mth] = slab;
  }
  return out;
}

std::string StudyResult::csv() const {
  std::ostringstream ss;
  ss.precision(10);
  ss << "method,coef,truth,mean,sd,bias,mc_se\n";
  for (const auto& r : rows)
    ss << r.method << "," << r.coef << "," << r.truth << "," << r.mean << "," << r.sd << ","
       << r.bias << "," << r.mc_se << "\n";
  if (!prob_rmse.empty()) {
    ss << "\nmethod,prob_rmse\n";
    for (const auto& [mth, v] : prob_rmse) ss << mth << "," << v << "\n";
  }
  return ss.str();
}

// ---------------------------------------------------------------------------
// Analysis command
// ---------------------------------------------------------------------------
ErrorModelSpec analysis_scenario_spec(int scenario, int k) {
  if (k != 4) throw ConfigError("analysis scenarios assume the four-proxy pressure schema");
  ErrorModelSpec spec = ErrorModelSpec::all_unbiased(4);
  auto free_eta0 = [&](std::initializer_list<int> idx) {
    for (int j : idx) spec.proxies[j].in_j0 = false;
  };
  switch (scenario) {
    case 1: break;
    case 2: free_eta0({0, 1}); break;
    case 3: free_eta0({0, 2}); break;
    case 4:
      free_eta0({0, 1});
      spec.proxies[0].in_j1 = false;
      spec.proxies[1].in_j1 = false;
      break;
    default: throw ConfigError("scenario must be 1..4");
  }
  return spec;
}

AnalysisResult run_analysis(const ProxyPanel& panel, const OutcomeModel& model,
                            const AnalysisOptions& opt) {
  std::vector<std::string> methods = opt.methods;
  if (methods.empty())
    methods = {"naive",          "standard-rc",       "gen-rc-equal",
               "gen-rc-optimal", "gen-simex-proxies", "gen-simex-estimates"};
  for (const auto& mth : methods) check_method(mth, 0);

  const ErrorModelSpec spec = analysis_scenario_spec(opt.scenario, panel.k);
  const bool use_z = panel.q > 0;
  const CorrectionParams xi = identify(estimate_raw_moments(panel), spec, use_z);
  const auto names = coef_names(model);
  const double zq = norm_ppf(1.0 - (1.0 - opt.level) / 2.0);

  AnalysisResult out;
  out.scenario = opt.scenario;
  XiLayout lay = xi.layout();
  for (int j = 0; j < panel.k; ++j) {
    if (lay.eta0_free(j)) out.eta_estimates["eta0_" + std::to_string(j + 1)] = xi.eta0[j][0];
    if (lay.eta1_free(j)) out.eta_estimates["eta1_" + std::to_string(j + 1)] = xi.eta1[j][0];
  }

  auto add_rows = [&](const std::string& method, const VectorXd& theta, const VectorXd& lo,
                      const VectorXd& hi, const std::string& kind) {
    for (int c = 0; c < model.dim(); ++c) {
      AnalysisRow row;
      row.method = method;
      row.coef = names[c];
      row.estimate = theta[c];
      row.lo = lo[c];
      row.hi = hi[c];
      row.interval = kind;
      out.rows.push_back(row);
    }
  };

  for (const auto& mth : methods) {
    if (mth == "naive") {
      FitResult fit = naive_fit(panel, model);
      VectorXd se = fit.se();
      add_rows(mth, fit.theta, fit.theta - zq * se, fit.theta + zq * se, "normal-sandwich");
    } else if (mth == "standard-rc") {
      RcFit fit = fit_standard_rc(panel, model);
      BootstrapResult boot = bootstrap_ci(
          panel, fit.fit.theta, opt.rc_bootstrap, derive_seed(opt.seed, {1}), opt.level,
          [&](const ProxyPanel& pb) { return fit_standard_rc(pb, model).fit.theta; }, opt.threads);
      add_rows(mth, fit.fit.theta, boot.ci_lower, boot.ci_upper, "bc-bootstrap");
    } else if (mth == "gen-rc-equal" || mth == "gen-rc-optimal") {
      const WeightMode mode = mth == "gen-rc-equal" ? WeightMode::Equal : WeightMode::Optimal;
      RcFit fit = fit_rc(panel, model, xi, mode);
      BootstrapResult boot = bootstrap_ci(
          panel, fit.fit.theta, opt.rc_bootstrap, derive_seed(opt.seed, {2, (std::uint64_t)mode}),
          opt.level,
          [&](const ProxyPanel& pb) {
            CorrectionParams xib = identify(estimate_raw_moments(pb), spec, use_z);
            return fit_rc(pb, model, xib, mode).fit.theta;
          },
          opt.threads);
      add_rows(mth, fit.fit.theta, boot.ci_lower, boot.ci_upper, "bc-bootstrap");
    } else if (mth == "gen-simex-proxies" || mth == "gen-simex-estimates") {
      SimexConfig cfg;
      cfg.mode = mth == "gen-simex-proxies" ? SimexMode::Proxies : SimexMode::Estimates;
      cfg.b_reps = opt.simex_b;
      cfg.seed = derive_seed(opt.seed, {3});
      cfg.threads = opt.threads;
      SimexFit fit = simex_extrapolate(simex_curve(panel, model, xi, cfg));
      simex_sandwich(panel, xi, fit);
      VectorXd se = fit.fit.se();
      add_rows(mth, fit.fit.theta, fit.fit.theta - zq * se, fit.fit.theta + zq * se,
               "normal-sandwich");
      for (const auto& nt : fit.fit.notes) out.notes.push_back(mth + ": " + nt);
    } else if (mth == "standard-simex") {
      SimexConfig cfg;
      cfg.b_reps = opt.simex_b;
      cfg.seed = derive_seed(opt.seed, {3});
      cfg.threads = opt.threads;
      SimexFit fit = simex_extrapolate(standard_simex_curve(panel, model, cfg));
      BootstrapResult boot = bootstrap_ci(
          panel, fit.fit.theta, std::max(100, opt.rc_bootstrap / 5),
          derive_seed(opt.seed, {4}), opt.level,
          [&](const ProxyPanel& pb) {
            SimexConfig cb = cfg;
            return simex_extrapolate(standard_simex_curve(pb, model, cb)).fit.theta;
          },
          opt.threads);
      add_rows(mth, fit.fit.theta, boot.ci_lower, boot.ci_upper, "bc-bootstrap");
    } else if (mth == "mr") {
      VectorXd alpha = VectorXd::Constant(panel.k, 1.0 / panel.k);
      MrFit fit = fit_mr_logistic(panel, xi, alpha);
      VectorXd se = fit.fit.se();
      add_rows(mth, fit.fit.theta, fit.fit.theta - zq * se, fit.fit.theta + zq * se,
               "normal-sandwich");
    } else {
      throw ConfigError("method " + mth + " is not available in the analysis command");
    }
  }
  return out;
}

std::string AnalysisResult::csv() const {
  std::ostringstream ss;
  ss.precision(10);
  ss << "method,coef,estimate,ci_lo,ci_hi,interval\n";
  for (const auto& r : rows)
    ss << r.method << "," << r.coef << "," << r.estimate << "," << r.lo << "," << r.hi << ","
       << r.interval << "\n";
  if (!eta_estimates.empty()) {
    ss << "\nparameter,estimate\n";
    for (const auto& [mth, v] : eta_estimates) ss << mth << "," << v << "\n";
  }
  return ss.str();
}

FraminghamSynthetic framingham_synthetic(int scenario) {
  FraminghamSynthetic out;
  ScenarioConfig& cfg = out.cfg;
  cfg.name = "framingham-synthetic-s" + std::to_string(scenario);
  cfg.p = 1;
  cfg.n = 1615;
  cfg.z_cols = {{ZColumn::Kind::Normal, 0.0, 1.0},
                {ZColumn::Kind::Bernoulli, 0.55, 0.0},
                {ZColumn::Kind::Normal, 0.0, 1.0}};
  XComponent xc;
  xc.mean = 4.35;
  xc.var = 0.045;
  xc.z_coef = (VectorXd(3) << 0.05, 0.02, 0.03).finished();
  cfg.x_comps = {xc};
  cfg.outcome.family = Family::Logistic;
  // intercept centers the event rate near 9%
  cfg.outcome.theta = (VectorXd(5) << -10.3, 1.8, 0.35, 0.25, 0.2).finished();

  auto law = [&](double eta0, double eta1, double var) {
    ProxyLaw l;
    l.structure = ErrorStructure::Additive;
    l.eta0 = VectorXd::Constant(1, eta0);
    l.eta1 = VectorXd::Constant(1, eta1);
    l.dist = NoiseDist::Normal;
    l.noise_var = VectorXd::Constant(1, var);
    return l;
  };
  switch (scenario) {
    case 1:
      cfg.proxy_laws = {law(0, 1, 0.013), law(0, 1, 0.015), law(0, 1, 0.012), law(0, 1, 0.014)};
      break;
    case 2:
      cfg.proxy_laws = {law(0.04, 1, 0.013), law(0.03, 1, 0.015), law(0, 1, 0.012),
                        law(0, 1, 0.014)};
      break;
    case 3:
      cfg.proxy_laws = {law(0.04, 1, 0.013), law(0, 1, 0.015), law(0.02, 1, 0.012),
                        law(0, 1, 0.014)};
      break;
    case 4:
      cfg.proxy_laws = {law(0.28, 0.94, 0.013), law(0.26, 0.94, 0.015), law(0, 1, 0.012),
                        law(0, 1, 0.014)};
      break;
    default: throw ConfigError("scenario must be 1..4");
  }
  out.model = {Family::Logistic, 1, 3};
  return out;
}

}  // namespace meacorr
