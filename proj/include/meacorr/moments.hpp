#pragma once

#include <vector>

#include "meacorr/common.hpp"
#include "meacorr/panel.hpp"

namespace meacorr {

// First and second raw proxy moments under pairwise-complete observation.
// sigma[j][l] = cov(X_j*, X_l*) centered at the per-proxy observed means,
// divisor n_pair(j,l) (moment convention of the stacked M-estimator).
struct RawMoments {
  int k = 0, p = 0, q = 0, n = 0;
  std::vector<VectorXd> mu;                  // k vectors of length p
  std::vector<std::vector<MatrixXd>> sigma;  // k x k grid of p x p blocks
  VectorXd mu_z;                             // q
  MatrixXd sigma_zz;                         // q x q
  std::vector<MatrixXd> sigma_zj;            // k blocks of q x p, cov(Z, X_j*)
  Eigen::MatrixXi n_pair;                    // k x k co-observation counts
  Eigen::VectorXi n_obs;                     // k per-proxy counts

  const MatrixXd& cov(int j, int l) const { return sigma[j][l]; }
};

// Pairwise-complete moment pass with compensated summation (results do not
// depend on row chunking). Throws IdentifiabilityError naming (j,l) when a
// pair is co-observed fewer than twice.
RawMoments estimate_raw_moments(const ProxyPanel& panel);

}  // namespace meacorr
