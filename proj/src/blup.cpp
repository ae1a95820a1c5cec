#include "meacorr/blup.hpp"

#include <algorithm>
#include <cmath>

namespace meacorr {

VectorXd renormalize_alpha(const VectorXd& alpha, std::uint32_t pattern, int k) {
  if (alpha.size() != k) throw ConfigError("alpha length != k");
  VectorXd out = VectorXd::Zero(k);
  double s = 0.0;
  for (int j = 0; j < k; ++j)
    if (pattern & (1u << j)) {
      out[j] = alpha[j];
      s += alpha[j];
    }
  if (s <= 0.0) throw CalibrationError("pattern has zero total weight over observed proxies");
  return out / s;
}

CombinedMoments combined_moments(const CorrectionParams& xi, const VectorXd& alpha,
                                 std::uint32_t pattern) {
  const int k = xi.k(), p = xi.p(), q = xi.q();
  CombinedMoments cm;
  cm.alpha = renormalize_alpha(alpha, pattern, k);
  cm.mu_xstar = VectorXd::Zero(p);
  cm.s_xsxs = MatrixXd::Zero(p, p);
  cm.s_xxs = MatrixXd::Zero(p, p);
  cm.s_xsz = MatrixXd::Zero(p, q);
  cm.eta0 = VectorXd::Zero(p);
  cm.eta1 = VectorXd::Zero(p);
  cm.m_star = MatrixXd::Zero(p, p);
  for (int j = 0; j < k; ++j) {
    const double aj = cm.alpha[j];
    if (aj == 0.0) continue;
    cm.mu_xstar += aj * xi.raw.mu[j];
    cm.s_xxs += aj * xi.sigma_xxj[j];
    cm.eta0 += aj * xi.eta0[j];
    cm.eta1 += aj * xi.eta1[j];
    cm.m_star += aj * aj * xi.m[j];
    if (q > 0) cm.s_xsz += aj * xi.raw.sigma_zj[j].transpose();
    for (int l = 0; l < k; ++l) {
      const double al = cm.alpha[l];
      if (al == 0.0) continue;
      cm.s_xsxs += aj * al * xi.raw.cov(j, l);
    }
  }
  cm.s_xsxs = symmetrize(cm.s_xsxs);
  return cm;
}

BlupMap build_blup(const CorrectionParams& xi, const VectorXd& alpha, std::uint32_t pattern,
                   bool use_z) {
  if (use_z && !xi.has_z)
    throw ConfigError("build_blup: Z-conditioning requested but xi was identified without Z");
  const int p = xi.p();
  const int q = use_z ? xi.q() : 0;
  CombinedMoments cm = combined_moments(xi, alpha, pattern);

  MatrixXd joint(p + q, p + q);
  joint.topLeftCorner(p, p) = cm.s_xsxs;
  MatrixXd cross(p, p + q);
  cross.leftCols(p) = cm.s_xxs;
  if (q > 0) {
    joint.topRightCorner(p, q) = cm.s_xsz;
    joint.bottomLeftCorner(q, p) = cm.s_xsz.transpose();
    joint.bottomRightCorner(q, q) = xi.raw.sigma_zz;
    cross.rightCols(q) = xi.sigma_zx.transpose();
  }
  Eigen::FullPivLU<MatrixXd> lu(joint);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible())
    throw CalibrationError("singular joint covariance in BLUP for pattern " +
                           std::to_string(pattern));
  MatrixXd coef = cross * lu.inverse();  // p x (p+q)

  BlupMap map;
  map.pattern = pattern;
  map.alpha = cm.alpha;
  map.uses_z = q > 0;
  map.beta = coef.leftCols(p);
  map.gamma = q > 0 ? MatrixXd(coef.rightCols(q)) : MatrixXd(p, 0);
  map.mu = xi.mu_x - map.beta * cm.mu_xstar;
  if (q > 0) map.mu -= map.gamma * xi.raw.mu_z;
  return map;
}

VectorXd apply_blup(const BlupMap& map, const ProxyPanel& panel, int row) {
  const int p = panel.p;
  VectorXd xstar = VectorXd::Zero(p);
  for (int j = 0; j < panel.k; ++j) {
    if (map.alpha[j] == 0.0) continue;
    if (!panel.observed(row, j))
      throw CalibrationError("BLUP applied to a row missing a weighted proxy");
    xstar += map.alpha[j] * panel.proxies[j].row(row).transpose();
  }
  VectorXd xhat = map.mu + map.beta * xstar;
  if (map.uses_z) xhat += map.gamma * panel.z.row(row).transpose();
  return xhat;
}

double blup_mse(const CorrectionParams& xi, const VectorXd& alpha, std::uint32_t pattern,
                bool use_z) {
  const int p = xi.p();
  const int q = use_z ? xi.q() : 0;
  CombinedMoments cm = combined_moments(xi, alpha, pattern);
  MatrixXd joint(p + q, p + q);
  joint.topLeftCorner(p, p) = cm.s_xsxs;
  MatrixXd cross(p, p + q);
  cross.leftCols(p) = cm.s_xxs;
  if (q > 0) {
    joint.topRightCorner(p, q) = cm.s_xsz;
    joint.bottomLeftCorner(q, p) = cm.s_xsz.transpose();
    joint.bottomRightCorner(q, q) = xi.raw.sigma_zz;
    cross.rightCols(q) = xi.sigma_zx.transpose();
  }
  Eigen::LDLT<MatrixXd> ldlt(joint);
  if (ldlt.info() != Eigen::Success)
    throw CalibrationError("singular joint covariance in BLUP MSE");
  return (xi.sigma_xx - cross * ldlt.solve(cross.transpose())).trace();
}

double blup_mse_objective(const CorrectionParams& xi, const VectorXd& alpha,
                          const std::vector<PatternInfo>& patterns, bool use_z) {
  double acc = 0.0;
  for (const auto& pat : patterns) acc += pat.frequency * blup_mse(xi, alpha, pat.mask, use_z);
  return acc;
}

namespace {

// Stacked-proxy BLUP weights; exact optimum when nonnegative (scalar case).
bool stacked_blup_candidate(const CorrectionParams& xi, bool use_z, VectorXd* out) {
  if (xi.p() != 1) return false;
  const int k = xi.k();
  const int q = use_z ? xi.q() : 0;
  MatrixXd joint(k + q, k + q);
  VectorXd cross(k + q);
  for (int j = 0; j < k; ++j) {
    cross[j] = xi.sigma_xxj[j](0, 0);
    for (int l = 0; l < k; ++l) joint(j, l) = xi.raw.cov(j, l)(0, 0);
  }
  if (q > 0) {
    for (int j = 0; j < k; ++j) {
      joint.block(j, k, 1, q) = xi.raw.sigma_zj[j].col(0).transpose();
      joint.block(k, j, q, 1) = xi.raw.sigma_zj[j].col(0);
    }
    joint.bottomRightCorner(q, q) = xi.raw.sigma_zz;
    cross.tail(q) = xi.sigma_zx.col(0);
  }
  Eigen::FullPivLU<MatrixXd> lu(joint);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) return false;
  VectorXd w = lu.solve(cross).head(k);
  const double s = w.sum();
  if (s <= 0.0 || (w.array() < -1e-12).any()) return false;
  *out = w.cwiseMax(0.0) / w.cwiseMax(0.0).sum();
  return true;
}

// Projected gradient with Barzilai-Borwein steps and Armijo backtracking.
bool project_descend(const std::function<double(const VectorXd&)>& f, VectorXd alpha, double* best,
                     VectorXd* arg) {
  const int k = static_cast<int>(alpha.size());
  const double h = 1e-7;
  auto grad = [&](const VectorXd& a, double fa) {
    VectorXd g(k);
    for (int j = 0; j < k; ++j) {
      VectorXd ap = a, am = a;
      ap[j] += h;
      am[j] -= h;
      g[j] = (f(ap) - f(am)) / (2.0 * h);
    }
    (void)fa;
    return g;
  };
  double fa = f(alpha);
  if (!std::isfinite(fa)) return false;
  VectorXd g = grad(alpha, fa);
  double step = 1.0;
  VectorXd prev_a = alpha, prev_g = g;
  bool moved = false;
  for (int it = 0; it < 200; ++it) {
    VectorXd cand = project_simplex(alpha - step * g);
    double fc = f(cand);
    int bt = 0;
    while ((!std::isfinite(fc) || fc > fa - 1e-12 * (cand - alpha).squaredNorm() / std::max(step, 1e-12)) &&
           bt < 40) {
      step *= 0.5;
      cand = project_simplex(alpha - step * g);
      fc = f(cand);
      ++bt;
    }
    if (!(fc < fa) || (cand - alpha).lpNorm<Eigen::Infinity>() < 1e-12) break;
    prev_a = alpha;
    prev_g = g;
    alpha = cand;
    fa = fc;
    g = grad(alpha, fa);
    moved = true;
    // BB step for the next round
    VectorXd ds = alpha - prev_a, dg = g - prev_g;
    const double num = ds.dot(ds), den = ds.dot(dg);
    step = (den > 1e-16) ? std::min(std::max(num / den, 1e-6), 1e3) : 1.0;
  }
  if (fa < *best) {
    *best = fa;
    *arg = alpha;
  }
  return moved || std::isfinite(fa);
}

}  // namespace

OptimalAlphaResult optimal_alpha(const CorrectionParams& xi,
                                 const std::vector<PatternInfo>& patterns, bool use_z) {
  const int k = xi.k();
  auto objective = [&](const VectorXd& a) -> double {
    if ((a.array() < -1e-14).any()) return std::numeric_limits<double>::infinity();
    for (const auto& pat : patterns) {
      double s = 0.0;
      for (int j = 0; j < k; ++j)
        if (pat.mask & (1u << j)) s += a[j];
      if (s <= 1e-12) return std::numeric_limits<double>::infinity();
    }
    try {
      return blup_mse_objective(xi, a, patterns, use_z);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  const VectorXd equal = VectorXd::Constant(k, 1.0 / k);
  const double f_equal = objective(equal);

  double best = std::numeric_limits<double>::infinity();
  VectorXd arg = equal;
  bool any_ok = false;

  std::vector<VectorXd> starts;
  starts.push_back(equal);
  for (int j = 0; j < k; ++j) {
    VectorXd v = VectorXd::Constant(k, 1e-3);
    v[j] = 1.0;
    starts.push_back(v / v.sum());
  }
  VectorXd cand;
  if (stacked_blup_candidate(xi, use_z, &cand)) starts.push_back(cand);

  for (const auto& s : starts) any_ok |= project_descend(objective, s, &best, &arg);

  OptimalAlphaResult out;
  if (!any_ok || !std::isfinite(best) || best > f_equal + 1e-12) {
    out.alpha = equal;
    out.mse = f_equal;
    out.fallback_equal = !any_ok;
    return out;
  }
  out.alpha = arg;
  out.mse = best;
  // dominance contract: never worse than equal weights
  if (f_equal < out.mse) {
    out.alpha = equal;
    out.mse = f_equal;
  }
  return out;
}

}  // namespace meacorr
