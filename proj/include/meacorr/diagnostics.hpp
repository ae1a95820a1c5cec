#pragma once

#include <string>
#include <vector>

#include "meacorr/panel.hpp"

namespace meacorr {

// Quadratic-augmentation check of the linear relationship between two proxy
// series (the empirical BLUP-adequacy diagnostic).
struct PairLinearityReport {
  int j = 0, l = 0;      // 1-based proxy indices
  int component = 0;     // proxy component (0-based)
  int n_pairs = 0;
  double slope = 0.0;
  double r2_linear = 0.0;
  double r2_quadratic = 0.0;
  double quad_coef = 0.0;
  double quad_wald = 0.0;    // Wald z statistic of the quadratic term
  double quad_p = 1.0;
  VectorXd decile_residual_means;  // 10 bins by fitted value
};

// Regresses X_j* on X_l* (component-wise). Needs >= 20 co-observed subjects.
std::vector<PairLinearityReport> proxy_pair_linearity(const ProxyPanel& panel, int j, int l);

// Weighted-least-squares slope of a lambda curve; flags coefficients whose
// slope is within 2 SE of zero as candidates for the linear extrapolant.
struct FlatnessReport {
  double slope = 0.0;
  double se = 0.0;
  bool flat = false;
};
FlatnessReport lambda_flatness(const VectorXd& lambdas, const VectorXd& estimates,
                               const VectorXd& mc_se);

}  // namespace meacorr
