#pragma once

#include <string>

#include "meacorr/correction.hpp"
#include "meacorr/csv_io.hpp"
#include "meacorr/outcome.hpp"
#include "meacorr/scenario.hpp"

namespace meacorr {

// JSON document interfaces: error-model specs, scenario configs, panel
// schemas, fit results and identified parameters.
std::string spec_to_json(const ErrorModelSpec& spec);
ErrorModelSpec spec_from_json(const std::string& text);
ErrorModelSpec load_spec(const std::string& path);

std::string scenario_to_json(const ScenarioConfig& cfg);
ScenarioConfig scenario_from_json(const std::string& text);
ScenarioConfig load_scenario(const std::string& path);

std::string schema_to_json(const PanelSchema& schema);
PanelSchema schema_from_json(const std::string& text);
PanelSchema load_schema(const std::string& path);

std::string fit_to_json(const FitResult& fit);

// xi and (optionally) its sandwich covariance.
std::string xi_to_json(const CorrectionParams& xi, const MatrixXd* cov = nullptr);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace meacorr
