#include "meacorr/diagnostics.hpp"

#include <algorithm>
#include <numeric>

namespace meacorr {

namespace {

struct OlsOut {
  VectorXd coef;
  VectorXd se;
  double r2 = 0.0;
  VectorXd fitted;
  VectorXd resid;
};

OlsOut ols(const MatrixXd& design, const VectorXd& y) {
  const int n = static_cast<int>(y.size());
  const int d = static_cast<int>(design.cols());
  Eigen::LDLT<MatrixXd> ldlt(design.transpose() * design);
  OlsOut out;
  out.coef = ldlt.solve(design.transpose() * y);
  out.fitted = design * out.coef;
  out.resid = y - out.fitted;
  const double sse = out.resid.squaredNorm();
  const double syy = (y.array() - y.mean()).square().sum();
  out.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  const double s2 = sse / std::max(n - d, 1);
  MatrixXd inv = ldlt.solve(MatrixXd::Identity(d, d));
  out.se = (s2 * inv.diagonal()).cwiseMax(0.0).cwiseSqrt();
  return out;
}

}  // namespace

std::vector<PairLinearityReport> proxy_pair_linearity(const ProxyPanel& panel, int j, int l) {
  if (j < 0 || j >= panel.k || l < 0 || l >= panel.k)
    throw ConfigError("proxy_pair_linearity: proxy index out of range");
  std::vector<int> rows;
  for (int i = 0; i < panel.n; ++i)
    if (panel.observed(i, j) && panel.observed(i, l)) rows.push_back(i);
  if (static_cast<int>(rows.size()) < 20)
    throw DiagnosticError("proxies (" + std::to_string(j + 1) + "," + std::to_string(l + 1) +
                          ") co-observed on fewer than 20 subjects");

  std::vector<PairLinearityReport> reports;
  const int n = static_cast<int>(rows.size());
  for (int c = 0; c < panel.p; ++c) {
    PairLinearityReport rep;
    rep.j = j + 1;
    rep.l = l + 1;
    rep.component = c;
    rep.n_pairs = n;
    VectorXd yv(n), xv(n);
    for (int ii = 0; ii < n; ++ii) {
      yv[ii] = panel.proxies[j](rows[ii], c);
      xv[ii] = panel.proxies[l](rows[ii], c);
    }
    if (j == l) {
      rep.slope = 1.0;
      rep.r2_linear = 1.0;
      rep.r2_quadratic = 1.0;
      rep.decile_residual_means = VectorXd::Zero(10);
      reports.push_back(rep);
      continue;
    }
    MatrixXd lin(n, 2), quad(n, 3);
    lin.col(0).setOnes();
    lin.col(1) = xv;
    quad.col(0).setOnes();
    quad.col(1) = xv;
    quad.col(2) = xv.cwiseProduct(xv);
    OlsOut fl = ols(lin, yv);
    OlsOut fq = ols(quad, yv);
    rep.slope = fl.coef[1];
    rep.r2_linear = fl.r2;
    rep.r2_quadratic = fq.r2;
    rep.quad_coef = fq.coef[2];
    rep.quad_wald = fq.se[2] > 0.0 ? fq.coef[2] / fq.se[2] : 0.0;
    rep.quad_p = 2.0 * (1.0 - norm_cdf(std::abs(rep.quad_wald)));

    // decile means of the linear-fit residuals, binned by fitted value
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return fl.fitted[a] < fl.fitted[b]; });
    rep.decile_residual_means = VectorXd::Zero(10);
    for (int bin = 0; bin < 10; ++bin) {
      const int lo = bin * n / 10, hi = (bin + 1) * n / 10;
      double acc = 0.0;
      for (int ii = lo; ii < hi; ++ii) acc += fl.resid[order[ii]];
      rep.decile_residual_means[bin] = hi > lo ? acc / (hi - lo) : 0.0;
    }
    reports.push_back(rep);
  }
  return reports;
}

FlatnessReport lambda_flatness(const VectorXd& lambdas, const VectorXd& estimates,
                               const VectorXd& mc_se) {
  const int r = static_cast<int>(lambdas.size());
  if (r < 2) throw DiagnosticError("lambda flatness needs at least 2 grid points");
  if (estimates.size() != r || mc_se.size() != r)
    throw ConfigError("lambda_flatness: size mismatch");

  // The lambda = 0 point has no pseudo-noise; floor its weight at the largest
  // finite weight among the others.
  double min_pos = std::numeric_limits<double>::infinity();
  for (int i = 0; i < r; ++i)
    if (mc_se[i] > 0.0) min_pos = std::min(min_pos, mc_se[i]);
  if (!std::isfinite(min_pos)) min_pos = 1.0;

  double sw = 0, swx = 0, swy = 0, swxx = 0, swxy = 0;
  for (int i = 0; i < r; ++i) {
    const double se = std::max(mc_se[i], min_pos);
    const double w = 1.0 / (se * se);
    sw += w;
    swx += w * lambdas[i];
    swy += w * estimates[i];
    swxx += w * lambdas[i] * lambdas[i];
    swxy += w * lambdas[i] * estimates[i];
  }
  const double det = sw * swxx - swx * swx;
  FlatnessReport out;
  if (det <= 0.0) {
    out.flat = true;
    return out;
  }
  out.slope = (sw * swxy - swx * swy) / det;
  out.se = std::sqrt(sw / det);
  out.flat = std::abs(out.slope) <= 2.0 * out.se + 1e-12;
  return out;
}

}  // namespace meacorr
