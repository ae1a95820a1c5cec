#pragma once

#include <string>
#include <vector>

#include "meacorr/correction.hpp"
#include "meacorr/outcome.hpp"
#include "meacorr/rc.hpp"

namespace meacorr {

enum class SimexMode { Proxies, Estimates };
enum class ExtrapolantFamily { Linear, Quadratic, Nonlinear };
enum class ExtrapolantChoice { Auto, Linear, Quadratic, Nonlinear };

struct SimexConfig {
  VectorXd lambda_grid = (VectorXd(5) << 0.0, 0.5, 1.0, 1.5, 2.0).finished();
  int b_reps = 100;
  SimexMode mode = SimexMode::Proxies;
  ExtrapolantChoice extrapolant = ExtrapolantChoice::Auto;
  VectorXd alpha;  // combine weights; empty = equal
  std::uint64_t seed = 20240101;
  int threads = 0;  // 0 = hardware default for the b-loop

  void validate() const;
};

// ---------------------------------------------------------------------------
// Extrapolants
// ---------------------------------------------------------------------------
struct ExtrapolantFit {
  ExtrapolantFamily family = ExtrapolantFamily::Quadratic;
  VectorXd gamma;      // (a0, b0) / (a0, b0, c0)
  VectorXd residuals;  // at the fitted grid
  bool downgraded = false;       // nonlinear fell back to quadratic
  bool finite_at_minus1 = true;  // nonlinear pole guard
};

// Least squares (C = I). Nonlinear family uses Levenberg-Marquardt started
// from the quadratic fit with multi-start over c0; falls back to quadratic
// with a downgrade flag when no start converges.
ExtrapolantFit fit_extrapolant(const VectorXd& lambdas, const VectorXd& values,
                               ExtrapolantFamily family);

double extrapolate(const ExtrapolantFit& fit);
// dG(lambda)/dGamma.
VectorXd extrapolant_gradient(const ExtrapolantFit& fit, double lambda);
double extrapolant_value(const ExtrapolantFit& fit, double lambda);

// ---------------------------------------------------------------------------
// Simulation step
// ---------------------------------------------------------------------------

// Pseudo-data law of one SIMEX system. With base_i the combined source value
// for subject i, the pseudo value at (lambda, b) is
//   eta1^{-1} o (base_i - eta0 + sqrt(lambda) * row_scale_i * M^{1/2} nu_{b,i}).
struct SimexSystem {
  std::string label;
  std::vector<int> rows;   // subjects entering the fits
  MatrixXd base;           // panel.n x p (rows outside `rows` unused)
  VectorXd eta0, eta1;     // p
  MatrixXd m;              // injected covariance (PSD)
  MatrixXd m_half;         // psd_sqrt(m)
  VectorXd row_scale;      // panel.n, usually all-ones
  int noise_slot = -1;     // -1 = combined slot, else proxy index
  VectorXd alpha;          // weights behind `base` (documentation/report)
  // sensitivity bookkeeping for the sandwich: which proxies feed this system
  std::vector<int> support;
};

// Exact Eq.-(4) pseudo value for one subject.
VectorXd pseudo_value(const SimexSystem& sys, int row, double lambda, const VectorXd& nu);

// Noise tensor for replicate b: one combined slot plus one slot per proxy,
// shared across lambda values (common random numbers) and across methods.
struct SimexNoise {
  MatrixXd combined;              // n x p
  std::vector<MatrixXd> per_proxy;  // k of n x p
};
SimexNoise make_noise(std::uint64_t seed, int b, int n, int p, int k);

struct SimexCurvePoint {
  double lambda = 0.0;
  VectorXd theta;     // b-averaged estimate
  MatrixXd theta_b;   // dim x B per-replicate estimates
  VectorXd mc_se;     // per-coefficient SD over b / sqrt(B)
  int failures = 0;
  bool dropped = false;  // >10% of b-fits failed
};

struct SimexSystemRun {
  SimexSystem sys;
  std::vector<SimexCurvePoint> points;
  VectorXd se0;  // plain per-coefficient SE of the lambda=0 fit (weighting aid)
};

struct SimexRun {
  SimexConfig cfg;
  OutcomeModel model;
  std::vector<SimexSystemRun> systems;
  bool standard = false;
};

// Builds the systems for the requested mode (per proxy for Estimates, per
// missingness group for Proxies) and runs the lambda grid.
SimexRun simex_curve(const ProxyPanel& panel, const OutcomeModel& model,
                     const CorrectionParams& xi, const SimexConfig& cfg);

// Standard SIMEX baseline: replicate mean plus sqrt(lambda Sigma_U / kappa_i)
// noise, single system.
SimexRun standard_simex_curve(const ProxyPanel& panel, const OutcomeModel& model,
                              const SimexConfig& cfg);

// ---------------------------------------------------------------------------
// Extrapolation and combination
// ---------------------------------------------------------------------------
struct SimexSystemFit {
  std::vector<ExtrapolantFit> per_coef;
  std::vector<double> used_lambdas;
  VectorXd theta_simex;
  std::vector<bool> flat;  // flatness flags (auto policy)
};

struct SimexFit {
  SimexRun run;
  std::vector<SimexSystemFit> systems;
  MatrixXd combine_weights;  // systems x dim, per-coefficient weights
  FitResult fit;             // combined estimate (+ covariance when computed)
};

SimexFit simex_extrapolate(SimexRun run,
                           const std::vector<ExtrapolantChoice>& per_coef_choice = {});

// Section-3.5 optimal two-estimator weight, clipped to [0,1].
double optimal_pair_weight(double var1, double var2, double cov12);
// k >= 2 weights minimizing w' Sigma w on the simplex.
VectorXd optimal_combine_weights(const MatrixXd& sigma);

// Re-combines a mode-(Estimates) fit with per-coefficient optimal weights
// using the joint covariance from the sandwich. Falls back (with a note) to
// the existing weights when the covariance is unavailable.
void combine_estimates_optimal(SimexFit& fit, const std::vector<MatrixXd>& per_coef_cov);

// ---------------------------------------------------------------------------
// Theorem-3 sandwich: covariance of sqrt(n)(theta_simex - theta).
// ---------------------------------------------------------------------------
MatrixXd simex_sandwich(const ProxyPanel& panel, const CorrectionParams& xi, SimexFit& fit,
                        std::vector<MatrixXd>* per_coef_system_cov = nullptr);

// Aggregated curve table (combine-weighted across systems) for diagnostics
// and curve-out files.
struct CurveTable {
  std::vector<std::string> coef_names;
  VectorXd lambdas;
  MatrixXd estimate;  // lambdas x dim
  MatrixXd mc_se;     // lambdas x dim
};
CurveTable aggregate_curve(const SimexFit& fit);

}  // namespace meacorr
