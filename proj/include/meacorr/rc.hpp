#pragma once

#include <functional>

#include "meacorr/blup.hpp"
#include "meacorr/outcome.hpp"

namespace meacorr {

enum class WeightMode { Equal, Optimal };

struct RcFit {
  FitResult fit;
  std::vector<PatternInfo> patterns;
  std::vector<BlupMap> blups;  // aligned with patterns
  VectorXd alpha;              // global weights before per-pattern renormalization
  MatrixXd xhat;               // n x p calibrated covariates
  bool alpha_fallback = false;
  bool use_z = false;
};

// Per-pattern BLUP calibration followed by the outcome M-estimation. The
// calibration conditions on Z exactly when xi was identified with Z.
RcFit fit_rc(const ProxyPanel& panel, const OutcomeModel& model, const CorrectionParams& xi,
             WeightMode mode);

// Theorem-2 sandwich from the stacked (Psi, h, g) system; returns the
// covariance of sqrt(n)(theta_hat - theta). The h block holds the BLUP normal
// equations per pattern; weight stationarity rows are added in optimal mode
// (skipped, with a note, when the optimum sits on the simplex boundary).
MatrixXd rc_sandwich(const ProxyPanel& panel, const OutcomeModel& model,
                     const CorrectionParams& xi, RcFit& rcfit, WeightMode mode);

// Full assembled A and B of the stacked system (exposed for tests).
struct StackedSystem {
  MatrixXd a;
  MatrixXd b;
  int theta_dim = 0;
  int h_dim = 0;  // pattern blocks (+ alpha rows when present)
  int f_dim = 0;
  int xi_dim = 0;
};
StackedSystem rc_stacked_system(const ProxyPanel& panel, const OutcomeModel& model,
                                const CorrectionParams& xi, const RcFit& rcfit, WeightMode mode,
                                bool with_alpha_rows);

// ---------------------------------------------------------------------------
// Standard regression calibration baseline: proxies treated as iid replicates
// (single pooled error covariance, per-kappa shrinkage, equal weights). On
// complete equal-variance unbiased data it coincides with the generalized fit.
// ---------------------------------------------------------------------------
struct StandardRcMoments {
  VectorXd mu_x;         // grand replicate-mean average
  VectorXd mu_xbar;      // same quantity, kept under its own name
  MatrixXd var_xbar;     // global covariance of the per-subject replicate mean
  MatrixXd sigma_xx;     // var_xbar - E[1/kappa] Sigma_U
  MatrixXd sigma_u;      // single pooled error covariance
  MatrixXd sigma_zx;     // q x p, cov(Z, replicate mean)
  double inv_kappa_bar = 0.0;
};
StandardRcMoments standard_rc_moments(const ProxyPanel& panel);
RcFit fit_standard_rc(const ProxyPanel& panel, const OutcomeModel& model);

// ---------------------------------------------------------------------------
// Nonparametric bootstrap (subject resampling, bias-corrected percentile).
// ---------------------------------------------------------------------------
struct BootstrapResult {
  MatrixXd cov;  // covariance of sqrt(n)(theta_hat - theta)
  VectorXd ci_lower, ci_upper;
  int requested = 0;
  int failures = 0;
};

// refit maps a resampled panel to a coefficient vector; replicates run in
// parallel with derived seeds and a deterministic reduction.
BootstrapResult bootstrap_ci(const ProxyPanel& panel, const VectorXd& theta_hat, int b_reps,
                             std::uint64_t seed, double level,
                             const std::function<VectorXd(const ProxyPanel&)>& refit,
                             int threads = 0);

}  // namespace meacorr
