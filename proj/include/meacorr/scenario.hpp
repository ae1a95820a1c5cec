#pragma once

#include <string>
#include <vector>

#include "meacorr/error_model.hpp"
#include "meacorr/outcome.hpp"
#include "meacorr/panel.hpp"

namespace meacorr {

enum class NoiseDist { Normal, Uniform };

// One error-free covariate column.
struct ZColumn {
  enum class Kind { Bernoulli, Normal } kind = Kind::Normal;
  double a = 0.0;  // Bernoulli: success probability; Normal: mean
  double b = 1.0;  // Normal: variance
  double mean() const { return kind == Kind::Bernoulli ? a : a; }
  double var() const { return kind == Kind::Bernoulli ? a * (1.0 - a) : b; }
};

// One latent covariate component: X_c = mean + z_coef'Z + N(0, var).
struct XComponent {
  double mean = 0.0;
  double var = 1.0;
  VectorXd z_coef;  // length q (empty when q = 0)
};

// Generative law of one proxy series.
// Additive:        X*_j = eta0 + eta1 .* X + e,            var(e_c) = noise_var[c]
// Multiplicative:  X*_j = eta0 + eta1 .* (X .* (1 + u)),   var(u_c) = noise_var[c]
// Uniform noise is stored through its variance so moment bookkeeping matches
// the normal case (a variance-v uniform spans +/- sqrt(3 v)).
struct ProxyLaw {
  ErrorStructure structure = ErrorStructure::Additive;
  VectorXd eta0, eta1;
  NoiseDist dist = NoiseDist::Normal;
  VectorXd noise_var;
  double missing_fraction = 0.0;
};

struct OutcomeSpec {
  Family family = Family::Linear;
  VectorXd theta;          // (intercept, X block, Z block)
  double noise_var = 1.0;  // linear family
  double gamma_shape = 1.0;
};

struct ScenarioConfig {
  std::string name;
  int p = 1;
  int n = 1000;  // default sample size; generate_panel can override
  std::uint64_t seed = 1;
  std::vector<ZColumn> z_cols;
  std::vector<XComponent> x_comps;  // p entries
  OutcomeSpec outcome;
  std::vector<ProxyLaw> proxy_laws;

  int q() const { return static_cast<int>(z_cols.size()); }
  int k() const { return static_cast<int>(proxy_laws.size()); }

  void validate() const;

  // Generative truth for oracles.
  VectorXd mu_x_true() const;
  MatrixXd sigma_xx_true() const;
  MatrixXd sigma_zx_true() const;  // q x p
  MatrixXd m_true(int j) const;    // error covariance of proxy j
};

// Draws a panel exactly per cfg. Deterministic given the seed; masked entries
// are flagged after values are drawn and keep their stored values.
ProxyPanel generate_panel(const ScenarioConfig& cfg, int n, std::uint64_t seed);
inline ProxyPanel generate_panel(const ScenarioConfig& cfg, std::uint64_t seed) {
  return generate_panel(cfg, cfg.n, seed);
}
inline ProxyPanel generate_panel(const ScenarioConfig& cfg) {
  return generate_panel(cfg, cfg.n, cfg.seed);
}

// Paper-style simulation designs at configurable scale.
struct StudyDesign {
  ScenarioConfig cfg;
  ErrorModelSpec spec;  // identification assumptions used by the estimators
  bool use_z = false;
  OutcomeModel model;
};

namespace studies {
StudyDesign study1();
StudyDesign study2();
StudyDesign study3();
StudyDesign by_number(int study);
}  // namespace studies

}  // namespace meacorr
