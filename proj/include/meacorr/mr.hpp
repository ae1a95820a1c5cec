#pragma once

#include "meacorr/correction.hpp"
#include "meacorr/outcome.hpp"

namespace meacorr {

// Moment reconstruction for logistic outcomes with a scalar error-prone
// covariate. Theta1/Theta2 are class-conditional means of the alpha-weighted
// proxy, Theta3/Theta4 the class-conditional variances.
struct MrParams {
  double theta1 = 0.0, theta2 = 0.0;
  double theta3 = 0.0, theta4 = 0.0;
  double eta_dot0 = 0.0, eta_dot1 = 1.0;  // alpha-weighted eta sums
  double m_star = 0.0;                    // sum alpha_j^2 M_j
  VectorXd alpha;
  std::vector<int> rows;  // complete-pattern subsample used
};

// Which variance enters the G(Y) ratio: the class-conditional variance
// implied by Theta3/Theta4 (default; exact identity in the error-free case)
// or the marginal Sigma_XX from xi (sensitivity variant).
enum class MrSigmaMode { Conditional, Marginal };

MrParams estimate_mr_params(const ProxyPanel& panel, const CorrectionParams& xi,
                            const VectorXd& alpha);

double mr_reconstruct(double xstar_alpha, double y, const CorrectionParams& xi,
                      const MrParams& mr, MrSigmaMode mode = MrSigmaMode::Conditional);

// Reconstructed covariates for the MR subsample rows.
VectorXd mr_reconstruct_all(const ProxyPanel& panel, const CorrectionParams& xi,
                            const MrParams& mr, MrSigmaMode mode = MrSigmaMode::Conditional);

struct MrFit {
  FitResult fit;
  MrParams params;
  VectorXd xhat;  // reconstructed covariate per subsample row
};

// Closed-form MR parameters first, then the logistic M-estimation on the
// reconstructed covariate; sandwich covariance from the stacked
// (Psi, Theta-rows, g) system.
MrFit fit_mr_logistic(const ProxyPanel& panel, const CorrectionParams& xi, const VectorXd& alpha,
                      MrSigmaMode mode = MrSigmaMode::Conditional, bool with_sandwich = true);

}  // namespace meacorr
