#pragma once

#include <cstdint>
#include <vector>

#include "meacorr/correction.hpp"

namespace meacorr {

// Affine calibration map for one missingness pattern:
//   xhat = mu + beta * xstar(alpha) + gamma * z
// with alpha renormalized over the pattern's observed proxies.
struct BlupMap {
  std::uint32_t pattern = 0;
  VectorXd mu;      // p
  MatrixXd beta;    // p x p
  MatrixXd gamma;   // p x q (0 cols when the map ignores Z)
  VectorXd alpha;   // k; zero on unobserved proxies, sums to 1
  bool uses_z = false;
};

// Combined-proxy moments under xi for a pattern (transformation identities
// mu_X* = sum alpha_j mu_j, Sigma_X*X* = sum sum alpha_j alpha_l Sigma_jl, ...).
struct CombinedMoments {
  VectorXd mu_xstar;   // p
  MatrixXd s_xsxs;     // p x p
  MatrixXd s_xxs;      // p x p, cov(X, X*)
  MatrixXd s_xsz;      // p x q
  VectorXd eta0;       // p, alpha-weighted eta0 sum
  VectorXd eta1;       // p, alpha-weighted eta1 sum
  MatrixXd m_star;     // p x p, sum alpha_j^2 M_j
  VectorXd alpha;      // renormalized weights used
};

VectorXd renormalize_alpha(const VectorXd& alpha, std::uint32_t pattern, int k);

CombinedMoments combined_moments(const CorrectionParams& xi, const VectorXd& alpha,
                                 std::uint32_t pattern);

// Assembles the calibration map for one pattern. use_z selects whether Z
// enters the conditioning set (requires xi.has_z). Throws CalibrationError
// when the joint covariance is singular.
BlupMap build_blup(const CorrectionParams& xi, const VectorXd& alpha, std::uint32_t pattern,
                   bool use_z);

VectorXd apply_blup(const BlupMap& map, const ProxyPanel& panel, int row);

// Closed-form BLUP mean squared error tr(Sigma_XX - c J^{-1} c') for a
// pattern at the given (renormalized) weights.
double blup_mse(const CorrectionParams& xi, const VectorXd& alpha, std::uint32_t pattern,
                bool use_z);

// Frequency-weighted MSE over patterns; the optimal_alpha objective.
double blup_mse_objective(const CorrectionParams& xi, const VectorXd& alpha,
                          const std::vector<PatternInfo>& patterns, bool use_z);

struct OptimalAlphaResult {
  VectorXd alpha;
  double mse = 0.0;
  bool fallback_equal = false;  // optimizer failed everywhere; equal weights returned
};

// Minimizes the closed-form BLUP MSE over the probability simplex (projected
// gradient with multi-start: centroid, vertices, and the stacked-proxy BLUP
// candidate). Never returns weights worse than equal weighting.
OptimalAlphaResult optimal_alpha(const CorrectionParams& xi,
                                 const std::vector<PatternInfo>& patterns, bool use_z);

}  // namespace meacorr
