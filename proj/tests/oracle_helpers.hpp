#pragma once

// Test-only oracles, independent of the estimation code paths they check.

#include "meacorr/correction.hpp"
#include "meacorr/moments.hpp"

namespace meacorr::testing {

// Generative description of the proxy model, used to construct exact
// population moments from the model identities
//   E X_j* = eta0_j + eta1_j o mu_X
//   cov(X_j*, X_l*) = eta1_j^(d) Sigma_XX eta1_l^(d) + I(j=l) M_j
//   cov(Z, X_j*) = Sigma_ZX eta1_j^(d)
struct PopulationTruth {
  VectorXd mu_x;
  MatrixXd sigma_xx;
  std::vector<VectorXd> eta0, eta1;
  std::vector<MatrixXd> m;
  VectorXd mu_z;      // empty when no Z
  MatrixXd sigma_zz;  // 0x0 when no Z
  MatrixXd sigma_zx;  // q x p
};

inline RawMoments population_moments(const PopulationTruth& t) {
  const int k = static_cast<int>(t.eta0.size());
  const int p = static_cast<int>(t.mu_x.size());
  const int q = static_cast<int>(t.mu_z.size());
  RawMoments rm;
  rm.k = k;
  rm.p = p;
  rm.q = q;
  rm.n = 1000000;  // nominal
  rm.n_pair = Eigen::MatrixXi::Constant(k, k, rm.n);
  rm.n_obs = Eigen::VectorXi::Constant(k, rm.n);
  rm.sigma.assign(k, std::vector<MatrixXd>(k));
  for (int j = 0; j < k; ++j) {
    rm.mu.push_back(t.eta0[j] + t.eta1[j].cwiseProduct(t.mu_x));
    for (int l = 0; l < k; ++l) {
      MatrixXd s = t.eta1[j].asDiagonal() * t.sigma_xx * t.eta1[l].asDiagonal();
      if (j == l) s += t.m[j];
      rm.sigma[j][l] = s;
    }
  }
  rm.mu_z = t.mu_z;
  rm.sigma_zz = t.sigma_zz;
  for (int j = 0; j < k; ++j)
    rm.sigma_zj.push_back(q > 0 ? MatrixXd(t.sigma_zx * t.eta1[j].asDiagonal())
                                : MatrixXd::Zero(0, p));
  return rm;
}

// Random PSD matrix with eigenvalues in [lo, hi].
inline MatrixXd random_psd(Rng& rng, int p, double lo, double hi) {
  MatrixXd a(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<MatrixXd> qr(a);
  MatrixXd qmat = qr.householderQ();
  VectorXd ev(p);
  for (int i = 0; i < p; ++i) ev[i] = rng.uniform(lo, hi);
  return qmat * ev.asDiagonal() * qmat.transpose();
}

// Simple Gauss-Hermite nodes/weights for E[f(N(mu, var))] style oracles.
inline void gauss_hermite(int n, std::vector<double>* nodes, std::vector<double>* weights) {
  // Golub-Welsch on the (probabilists') Hermite recurrence via Eigen.
  MatrixXd jac = MatrixXd::Zero(n, n);
  for (int i = 0; i < n - 1; ++i) {
    const double b = std::sqrt(static_cast<double>(i + 1));
    jac(i, i + 1) = b;
    jac(i + 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(jac);
  nodes->resize(n);
  weights->resize(n);
  for (int i = 0; i < n; ++i) {
    (*nodes)[i] = es.eigenvalues()[i];
    const double v = es.eigenvectors()(0, i);
    (*weights)[i] = v * v;  // weights sum to 1 (probabilist normalization)
  }
}

}  // namespace meacorr::testing
