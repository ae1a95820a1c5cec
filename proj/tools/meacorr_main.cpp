#include <iostream>

#include "CLI11.hpp"
#include "meacorr/diagnostics.hpp"
#include "meacorr/harness.hpp"
#include "meacorr/json_io.hpp"

namespace {

using namespace meacorr;

ProxyPanel load_panel(const std::string& panel_path, const std::string& schema_path) {
  if (schema_path.empty()) return read_panel_csv(panel_path);
  return read_panel_csv(panel_path, load_schema(schema_path));
}

OutcomeModel model_for(const std::string& family, const ProxyPanel& panel) {
  return OutcomeModel{family_from_name(family), panel.p, panel.q};
}

VectorXd parse_grid(const std::string& text) {
  VectorXd grid;
  std::vector<double> vals;
  std::string cur;
  for (char ch : text + ",") {
    if (ch == ',') {
      if (!cur.empty()) vals.push_back(std::stod(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  grid.resize(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) grid[static_cast<int>(i)] = vals[i];
  return grid;
}

// "sandwich" | "bootstrap" | "bootstrap:B"
std::pair<std::string, int> parse_se(const std::string& text) {
  if (text == "sandwich" || text == "none") return {text, 0};
  if (text.rfind("bootstrap", 0) == 0) {
    int b = 1000;
    const auto colon = text.find(':');
    if (colon != std::string::npos) b = std::stoi(text.substr(colon + 1));
    return {"bootstrap", b};
  }
  throw ConfigError("unknown --se option: " + text);
}

void emit(const std::string& out_path, const std::string& text) {
  if (out_path.empty())
    std::cout << text << std::endl;
  else
    write_text_file(out_path, text);
}

void print_fit(const FitResult& fit, const OutcomeModel& model) {
  const auto names = coef_names(model);
  std::cout << "method: " << fit.method << "\n";
  std::printf("%-12s %12s %12s\n", "coef", "estimate", "se");
  VectorXd se = fit.se();
  for (int c = 0; c < model.dim(); ++c) {
    if (se.size() > 0)
      std::printf("%-12s %12.6f %12.6f\n", names[c].c_str(), fit.theta[c], se[c]);
    else
      std::printf("%-12s %12.6f %12s\n", names[c].c_str(), fit.theta[c], "-");
  }
  if (fit.ci_lower.size() > 0) {
    std::printf("%-12s %12s %12s\n", "coef", "ci_lo", "ci_hi");
    for (int c = 0; c < model.dim(); ++c)
      std::printf("%-12s %12.6f %12.6f\n", names[c].c_str(), fit.ci_lower[c], fit.ci_upper[c]);
  }
  for (const auto& note : fit.notes) std::cout << "note: " << note << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"meacorr: measurement-error correction for multi-proxy covariates"};
  app.require_subcommand(1);

  // ---- gen-panel ----
  auto* gen = app.add_subcommand("gen-panel", "generate a synthetic panel CSV");
  int gen_study = 0;
  std::string gen_config, gen_out, gen_truth_out;
  int gen_n = 0;
  std::uint64_t gen_seed = 1;
  gen->add_option("--study", gen_study, "built-in study design (1|2|3)");
  gen->add_option("--config", gen_config, "scenario config JSON");
  gen->add_option("--n", gen_n, "sample size override");
  gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_option("--out", gen_out, "output CSV path")->required();
  gen->add_option("--truth-out", gen_truth_out, "write the generative scenario JSON here");

  // ---- fit-rc ----
  auto* frc = app.add_subcommand("fit-rc", "generalized regression calibration");
  std::string rc_panel, rc_schema, rc_spec, rc_weights = "equal", rc_se = "sandwich";
  std::string rc_family = "linear", rc_out, rc_xi_out;
  bool rc_no_z = false, rc_standard = false;
  frc->add_option("--panel", rc_panel)->required();
  frc->add_option("--schema", rc_schema);
  frc->add_option("--spec", rc_spec, "error model spec JSON");
  frc->add_option("--family", rc_family, "linear|logistic|gamma");
  frc->add_option("--weights", rc_weights, "equal|optimal");
  frc->add_option("--se", rc_se, "sandwich|bootstrap[:B]|none");
  frc->add_flag("--no-z", rc_no_z, "identify and calibrate ignoring Z");
  frc->add_flag("--standard", rc_standard, "standard (iid replicate) baseline");
  frc->add_option("--out", rc_out, "fit JSON output");
  frc->add_option("--xi-out", rc_xi_out, "write identified xi JSON");

  // ---- fit-simex ----
  auto* fsx = app.add_subcommand("fit-simex", "generalized SIMEX");
  std::string sx_panel, sx_schema, sx_spec, sx_mode = "proxies", sx_grid = "0,0.5,1,1.5,2";
  std::string sx_extrap = "auto", sx_se = "sandwich", sx_family = "linear", sx_out, sx_curve_out;
  int sx_b = 100;
  std::uint64_t sx_seed = 20240101;
  bool sx_no_z = false, sx_standard = false;
  fsx->add_option("--panel", sx_panel)->required();
  fsx->add_option("--schema", sx_schema);
  fsx->add_option("--spec", sx_spec);
  fsx->add_option("--family", sx_family);
  fsx->add_option("--mode", sx_mode, "proxies|estimates");
  fsx->add_option("--grid", sx_grid, "comma-separated lambda grid");
  fsx->add_option("--B", sx_b, "pseudo-replications");
  fsx->add_option("--extrapolant", sx_extrap, "auto|linear|quadratic|nonlinear");
  fsx->add_option("--se", sx_se, "sandwich|bootstrap[:B]|none");
  fsx->add_option("--seed", sx_seed);
  fsx->add_flag("--no-z", sx_no_z);
  fsx->add_flag("--standard", sx_standard, "standard SIMEX baseline");
  fsx->add_option("--curve-out", sx_curve_out, "lambda curve CSV");
  fsx->add_option("--out", sx_out, "fit JSON output");

  // ---- fit-mr ----
  auto* fmr = app.add_subcommand("fit-mr", "moment reconstruction (logistic)");
  std::string mr_panel, mr_schema, mr_spec, mr_alpha = "equal", mr_out, mr_sigma = "conditional";
  fmr->add_option("--panel", mr_panel)->required();
  fmr->add_option("--schema", mr_schema);
  fmr->add_option("--spec", mr_spec);
  fmr->add_option("--alpha", mr_alpha, "equal|optimal");
  fmr->add_option("--sigma", mr_sigma, "conditional|marginal (G(Y) variance convention)");
  fmr->add_option("--out", mr_out);

  // ---- diagnose ----
  auto* diag = app.add_subcommand("diagnose", "proxy linearity diagnostics");
  std::string dg_panel, dg_schema, dg_out_json, dg_out_csv;
  diag->add_option("--panel", dg_panel)->required();
  diag->add_option("--schema", dg_schema);
  diag->add_option("--out-json", dg_out_json);
  diag->add_option("--out-csv", dg_out_csv);

  // ---- simulate ----
  auto* sim = app.add_subcommand("simulate", "run a simulation study");
  int sim_study = 1, sim_n = 2000, sim_reps = 200, sim_threads = 0, sim_b = 100;
  std::uint64_t sim_seed = 1;
  std::string sim_methods, sim_out;
  sim->add_option("--study", sim_study, "1|2|3")->required();
  sim->add_option("--n", sim_n);
  sim->add_option("--reps", sim_reps);
  sim->add_option("--methods", sim_methods, "comma-separated method tags");
  sim->add_option("--seed", sim_seed);
  sim->add_option("--threads", sim_threads);
  sim->add_option("--B", sim_b, "SIMEX pseudo-replications");
  sim->add_option("--out", sim_out, "summary CSV");

  // ---- analyze ----
  auto* ana = app.add_subcommand("analyze", "scenario analysis of a panel");
  std::string an_panel, an_schema, an_methods, an_out, an_family = "logistic";
  int an_scenario = 1, an_boot = 1000, an_b = 100, an_threads = 0;
  std::uint64_t an_seed = 7;
  ana->add_option("--panel", an_panel)->required();
  ana->add_option("--schema", an_schema);
  ana->add_option("--scenario", an_scenario, "1..4")->required();
  ana->add_option("--family", an_family);
  ana->add_option("--methods", an_methods);
  ana->add_option("--rc-boot", an_boot, "RC bootstrap replicates");
  ana->add_option("--B", an_b, "SIMEX pseudo-replications");
  ana->add_option("--seed", an_seed);
  ana->add_option("--threads", an_threads);
  ana->add_option("--out", an_out, "report CSV");

  CLI11_PARSE(app, argc, argv);

  auto split_methods = [](const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text + ",") {
      if (ch == ',') {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(ch);
      }
    }
    return out;
  };

  if (gen->parsed()) {
    ScenarioConfig cfg = gen_study > 0 ? studies::by_number(gen_study).cfg
                                       : load_scenario(gen_config);
    if (gen_config.empty() && gen_study == 0)
      throw ConfigError("gen-panel needs --study or --config");
    const int n = gen_n > 0 ? gen_n : cfg.n;
    ProxyPanel panel = generate_panel(cfg, n, gen_seed);
    write_panel_csv(gen_out, panel);
    if (!gen_truth_out.empty()) write_text_file(gen_truth_out, scenario_to_json(cfg));
    std::cout << "wrote " << panel.n << " rows to " << gen_out << "\n";
    return 0;
  }

  if (frc->parsed()) {
    ProxyPanel panel = load_panel(rc_panel, rc_schema);
    OutcomeModel model = model_for(rc_family, panel);
    auto [se_kind, se_b] = parse_se(rc_se);
    if (rc_standard) {
      RcFit fit = fit_standard_rc(panel, model);
      if (se_kind == "bootstrap") {
        BootstrapResult boot = bootstrap_ci(
            panel, fit.fit.theta, se_b, 99, 0.95,
            [&](const ProxyPanel& pb) { return fit_standard_rc(pb, model).fit.theta; });
        fit.fit.cov = boot.cov;
        fit.fit.n_used = panel.n;
        fit.fit.ci_lower = boot.ci_lower;
        fit.fit.ci_upper = boot.ci_upper;
      }
      print_fit(fit.fit, model);
      if (!rc_out.empty()) emit(rc_out, fit_to_json(fit.fit));
      return 0;
    }
    if (rc_spec.empty()) throw ConfigError("fit-rc needs --spec");
    ErrorModelSpec spec = load_spec(rc_spec);
    const bool use_z = panel.q > 0 && !rc_no_z;
    CorrectionParams xi = identify(estimate_raw_moments(panel), spec, use_z);
    const WeightMode mode = rc_weights == "optimal" ? WeightMode::Optimal : WeightMode::Equal;
    RcFit fit = fit_rc(panel, model, xi, mode);
    if (se_kind == "sandwich") {
      fit.fit.cov = rc_sandwich(panel, model, xi, fit, mode);
      fit.fit.n_used = panel.n;
    } else if (se_kind == "bootstrap") {
      BootstrapResult boot = bootstrap_ci(
          panel, fit.fit.theta, se_b, 99, 0.95, [&](const ProxyPanel& pb) {
            CorrectionParams xib = identify(estimate_raw_moments(pb), spec, use_z);
            return fit_rc(pb, model, xib, mode).fit.theta;
          });
      fit.fit.cov = boot.cov;
      fit.fit.n_used = panel.n;
      fit.fit.ci_lower = boot.ci_lower;
      fit.fit.ci_upper = boot.ci_upper;
    }
    print_fit(fit.fit, model);
    if (!rc_out.empty()) emit(rc_out, fit_to_json(fit.fit));
    if (!rc_xi_out.empty()) {
      if (se_kind == "sandwich") {
        MatrixXd xc = sandwich_xi(panel, xi);
        emit(rc_xi_out, xi_to_json(xi, &xc));
      } else {
        emit(rc_xi_out, xi_to_json(xi));
      }
    }
    return 0;
  }

  if (fsx->parsed()) {
    ProxyPanel panel = load_panel(sx_panel, sx_schema);
    OutcomeModel model = model_for(sx_family, panel);
    auto [se_kind, se_b] = parse_se(sx_se);
    SimexConfig cfg;
    cfg.lambda_grid = parse_grid(sx_grid);
    cfg.b_reps = sx_b;
    cfg.seed = sx_seed;
    cfg.mode = sx_mode == "estimates" ? SimexMode::Estimates : SimexMode::Proxies;
    if (sx_extrap == "linear") cfg.extrapolant = ExtrapolantChoice::Linear;
    else if (sx_extrap == "quadratic") cfg.extrapolant = ExtrapolantChoice::Quadratic;
    else if (sx_extrap == "nonlinear") cfg.extrapolant = ExtrapolantChoice::Nonlinear;

    SimexFit fit;
    CorrectionParams xi;
    if (sx_standard) {
      fit = simex_extrapolate(standard_simex_curve(panel, model, cfg));
    } else {
      if (sx_spec.empty()) throw ConfigError("fit-simex needs --spec");
      ErrorModelSpec spec = load_spec(sx_spec);
      xi = identify(estimate_raw_moments(panel), spec, panel.q > 0 && !sx_no_z);
      fit = simex_extrapolate(simex_curve(panel, model, xi, cfg));
      if (se_kind == "sandwich") simex_sandwich(panel, xi, fit);
    }
    if (se_kind == "bootstrap") {
      BootstrapResult boot = bootstrap_ci(
          panel, fit.fit.theta, se_b, 99, 0.95, [&](const ProxyPanel& pb) {
            SimexConfig cb = cfg;
            if (sx_standard) return simex_extrapolate(standard_simex_curve(pb, model, cb)).fit.theta;
            ErrorModelSpec spec = load_spec(sx_spec);
            CorrectionParams xib =
                identify(estimate_raw_moments(pb), spec, pb.q > 0 && !sx_no_z);
            return simex_extrapolate(simex_curve(pb, model, xib, cb)).fit.theta;
          });
      fit.fit.cov = boot.cov;
      fit.fit.n_used = panel.n;
      fit.fit.ci_lower = boot.ci_lower;
      fit.fit.ci_upper = boot.ci_upper;
    }
    print_fit(fit.fit, model);
    if (!sx_curve_out.empty()) {
      CurveTable tab = aggregate_curve(fit);
      std::ostringstream ss;
      ss.precision(10);
      ss << "coefficient,lambda,estimate,mc_se\n";
      for (int c = 0; c < static_cast<int>(tab.coef_names.size()); ++c)
        for (int r = 0; r < tab.lambdas.size(); ++r)
          ss << tab.coef_names[c] << "," << tab.lambdas[r] << "," << tab.estimate(r, c) << ","
             << tab.mc_se(r, c) << "\n";
      emit(sx_curve_out, ss.str());
    }
    if (!sx_out.empty()) emit(sx_out, fit_to_json(fit.fit));
    return 0;
  }

  if (fmr->parsed()) {
    ProxyPanel panel = load_panel(mr_panel, mr_schema);
    if (mr_spec.empty()) throw ConfigError("fit-mr needs --spec");
    ErrorModelSpec spec = load_spec(mr_spec);
    CorrectionParams xi = identify(estimate_raw_moments(panel), spec, panel.q > 0);
    VectorXd alpha = VectorXd::Constant(panel.k, 1.0 / panel.k);
    if (mr_alpha == "optimal")
      alpha = optimal_alpha(xi, patterns_of(panel), xi.has_z).alpha;
    const MrSigmaMode mode =
        mr_sigma == "marginal" ? MrSigmaMode::Marginal : MrSigmaMode::Conditional;
    MrFit fit = fit_mr_logistic(panel, xi, alpha, mode);
    OutcomeModel model{Family::Logistic, 1, panel.q};
    print_fit(fit.fit, model);
    if (!mr_out.empty()) emit(mr_out, fit_to_json(fit.fit));
    return 0;
  }

  if (diag->parsed()) {
    ProxyPanel panel = load_panel(dg_panel, dg_schema);
    std::ostringstream csv;
    csv << "j,l,component,n_pairs,slope,r2_linear,r2_quadratic,quad_wald,quad_p";
    for (int d = 1; d <= 10; ++d) csv << ",decile" << d;
    csv << "\n";
    std::ostringstream js;
    js << "[\n";
    bool first = true;
    for (int j = 0; j < panel.k; ++j)
      for (int l = 0; l < panel.k; ++l) {
        if (j == l) continue;
        for (const auto& rep : proxy_pair_linearity(panel, j, l)) {
          csv << rep.j << "," << rep.l << "," << rep.component << "," << rep.n_pairs << ","
              << rep.slope << "," << rep.r2_linear << "," << rep.r2_quadratic << ","
              << rep.quad_wald << "," << rep.quad_p;
          for (int d = 0; d < 10; ++d) csv << "," << rep.decile_residual_means[d];
          csv << "\n";
          if (!first) js << ",\n";
          first = false;
          js << "  {\"j\": " << rep.j << ", \"l\": " << rep.l << ", \"component\": "
             << rep.component << ", \"quad_wald\": " << rep.quad_wald
             << ", \"quad_p\": " << rep.quad_p << ", \"r2_increment\": "
             << rep.r2_quadratic - rep.r2_linear << "}";
        }
      }
    js << "\n]\n";
    if (!dg_out_csv.empty()) emit(dg_out_csv, csv.str());
    if (!dg_out_json.empty())
      emit(dg_out_json, js.str());
    else
      std::cout << js.str();
    return 0;
  }

  if (sim->parsed()) {
    StudyOptions opt;
    opt.n = sim_n;
    opt.reps = sim_reps;
    opt.seed = sim_seed;
    opt.threads = sim_threads;
    opt.simex_b = sim_b;
    std::vector<std::string> methods = split_methods(sim_methods);
    if (methods.empty()) {
      methods = {"naive", "standard-rc", "standard-simex", "gen-rc-equal", "gen-rc-optimal",
                 "gen-simex-proxies", "gen-simex-estimates"};
      if (sim_study == 3) methods.push_back("mr");
    }
    StudyResult res = run_study(sim_study, methods, opt);
    emit(sim_out, res.csv());
    return 0;
  }

  if (ana->parsed()) {
    ProxyPanel panel = load_panel(an_panel, an_schema);
    OutcomeModel model = model_for(an_family, panel);
    AnalysisOptions opt;
    opt.scenario = an_scenario;
    opt.methods = split_methods(an_methods);
    opt.rc_bootstrap = an_boot;
    opt.simex_b = an_b;
    opt.seed = an_seed;
    opt.threads = an_threads;
    AnalysisResult res = run_analysis(panel, model, opt);
    emit(an_out, res.csv());
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const meacorr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 2;
  } catch (const meacorr::ParseError& e) {
    std::cerr << "parse error: " << e.what() << std::endl;
    return 2;
  } catch (const meacorr::NotImplementedError& e) {
    std::cerr << "not implemented: " << e.what() << std::endl;
    return 2;
  } catch (const meacorr::Error& e) {
    std::cerr << "estimation error: " << e.what() << std::endl;
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 3;
  }
}
