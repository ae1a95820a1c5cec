#include "meacorr/moments.hpp"

namespace meacorr {

RawMoments estimate_raw_moments(const ProxyPanel& panel) {
  panel.validate();
  const int n = panel.n, k = panel.k, p = panel.p, q = panel.q;

  RawMoments rm;
  rm.k = k;
  rm.p = p;
  rm.q = q;
  rm.n = n;
  rm.n_pair.setZero(k, k);
  rm.n_obs.setZero(k);

  // Pass 1: per-proxy observed means and Z mean.
  rm.mu.assign(k, VectorXd::Zero(p));
  for (int j = 0; j < k; ++j) {
    std::vector<Kahan> acc(p);
    int cnt = 0;
    for (int i = 0; i < n; ++i) {
      if (!panel.observed(i, j)) continue;
      ++cnt;
      for (int c = 0; c < p; ++c) acc[c].add(panel.proxies[j](i, c));
    }
    rm.n_obs[j] = cnt;
    if (cnt < 1)
      throw IdentifiabilityError("proxy " + std::to_string(j + 1) + " is never observed");
    for (int c = 0; c < p; ++c) rm.mu[j][c] = acc[c].value() / cnt;
  }
  rm.mu_z = VectorXd::Zero(q);
  if (q > 0) {
    std::vector<Kahan> acc(q);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < q; ++c) acc[c].add(panel.z(i, c));
    for (int c = 0; c < q; ++c) rm.mu_z[c] = acc[c].value() / n;
  }

  // Pass 2: centered cross moments. Pairwise covariances center at the global
  // per-proxy means so they solve the same estimating equations as the
  // stacked M-estimator.
  rm.sigma.assign(k, std::vector<MatrixXd>(k, MatrixXd::Zero(p, p)));
  for (int j = 0; j < k; ++j) {
    for (int l = j; l < k; ++l) {
      std::vector<Kahan> acc(p * p);
      int cnt = 0;
      for (int i = 0; i < n; ++i) {
        if (!panel.observed(i, j) || !panel.observed(i, l)) continue;
        ++cnt;
        for (int b = 0; b < p; ++b) {
          const double xl = panel.proxies[l](i, b) - rm.mu[l][b];
          for (int a = 0; a < p; ++a)
            acc[a + b * p].add((panel.proxies[j](i, a) - rm.mu[j][a]) * xl);
        }
      }
      rm.n_pair(j, l) = cnt;
      rm.n_pair(l, j) = cnt;
      if (cnt < 2)
        throw IdentifiabilityError("proxies (" + std::to_string(j + 1) + "," +
                                   std::to_string(l + 1) +
                                   ") are co-observed fewer than 2 times");
      MatrixXd s(p, p);
      for (int b = 0; b < p; ++b)
        for (int a = 0; a < p; ++a) s(a, b) = acc[a + b * p].value() / cnt;
      if (j == l) s = symmetrize(s);
      rm.sigma[j][l] = s;
      rm.sigma[l][j] = s.transpose();
    }
  }

  rm.sigma_zz = MatrixXd::Zero(q, q);
  rm.sigma_zj.assign(k, MatrixXd::Zero(q, p));
  if (q > 0) {
    std::vector<Kahan> acc(q * q);
    for (int i = 0; i < n; ++i)
      for (int b = 0; b < q; ++b)
        for (int a = 0; a <= b; ++a)
          acc[a + b * q].add((panel.z(i, a) - rm.mu_z[a]) * (panel.z(i, b) - rm.mu_z[b]));
    for (int b = 0; b < q; ++b)
      for (int a = 0; a <= b; ++a) {
        rm.sigma_zz(a, b) = acc[a + b * q].value() / n;
        rm.sigma_zz(b, a) = rm.sigma_zz(a, b);
      }
    for (int j = 0; j < k; ++j) {
      std::vector<Kahan> zacc(q * p);
      int cnt = 0;
      for (int i = 0; i < n; ++i) {
        if (!panel.observed(i, j)) continue;
        ++cnt;
        for (int b = 0; b < p; ++b) {
          const double xv = panel.proxies[j](i, b) - rm.mu[j][b];
          for (int a = 0; a < q; ++a) zacc[a + b * q].add((panel.z(i, a) - rm.mu_z[a]) * xv);
        }
      }
      for (int b = 0; b < p; ++b)
        for (int a = 0; a < q; ++a) rm.sigma_zj[j](a, b) = zacc[a + b * q].value() / cnt;
    }
  }
  return rm;
}

}  // namespace meacorr
