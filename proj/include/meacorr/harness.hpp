#pragma once

#include <map>
#include <string>
#include <vector>

#include "meacorr/csv_io.hpp"
#include "meacorr/mr.hpp"
#include "meacorr/rc.hpp"
#include "meacorr/scenario.hpp"
#include "meacorr/simex.hpp"

namespace meacorr {

// Method tags accepted by the simulation harness and the analysis command.
// "empirical-simex" is recognized but reports not-implemented.
std::vector<std::string> known_methods();
void check_method(const std::string& method, int study);

struct StudyRow {
  std::string method;
  std::string coef;
  double truth = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  double bias = 0.0;
  double mc_se = 0.0;
};

struct StudyOptions {
  int n = 2000;
  int reps = 200;
  std::uint64_t seed = 1;
  int threads = 0;            // replicate-level parallelism; 0 = hardware
  int simex_b = 100;
  VectorXd simex_grid;        // empty = default grid
  bool collect_draws = false; // keep per-replicate estimates (tests)
};

struct StudyResult {
  int study = 0;
  std::vector<StudyRow> rows;
  // study 3: mean predicted-probability RMSE over the central-95% X grid
  std::map<std::string, double> prob_rmse;
  std::map<std::string, MatrixXd> draws;  // method -> reps x dim (collect_draws)
  std::map<std::string, int> failures;
  std::string csv() const;
};

StudyResult run_study(int study, const std::vector<std::string>& methods, const StudyOptions& opt);

// Error-model assumption sets for the four-proxy pressure schema.
ErrorModelSpec analysis_scenario_spec(int scenario, int k);

struct AnalysisOptions {
  int scenario = 1;
  std::vector<std::string> methods;  // empty = default set
  int rc_bootstrap = 1000;
  int simex_b = 100;
  std::uint64_t seed = 7;
  int threads = 0;
  double level = 0.95;
};

struct AnalysisRow {
  std::string method;
  std::string coef;
  double estimate = 0.0;
  double lo = 0.0, hi = 0.0;
  std::string interval;  // "bc-bootstrap" or "normal-sandwich"
};

struct AnalysisResult {
  int scenario = 0;
  std::vector<AnalysisRow> rows;
  std::map<std::string, double> eta_estimates;  // "eta0_1" -> value, for free etas
  std::vector<std::string> notes;
  std::string csv() const;
};

AnalysisResult run_analysis(const ProxyPanel& panel, const OutcomeModel& model,
                            const AnalysisOptions& opt);

// Synthetic panel in the four-proxy pressure-study shape with known truth
// satisfying the given scenario's assumptions.
struct FraminghamSynthetic {
  ScenarioConfig cfg;
  OutcomeModel model;
};
FraminghamSynthetic framingham_synthetic(int scenario);

std::vector<std::string> coef_names(const OutcomeModel& model);

}  // namespace meacorr
