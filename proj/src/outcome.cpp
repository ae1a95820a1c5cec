#include "meacorr/outcome.hpp"

#include <algorithm>

namespace meacorr {

std::string family_name(Family f) {
  switch (f) {
    case Family::Linear: return "linear";
    case Family::LogLinearGamma: return "log-linear-gamma";
    case Family::Logistic: return "logistic";
  }
  return "?";
}

Family family_from_name(const std::string& s) {
  if (s == "linear") return Family::Linear;
  if (s == "log-linear-gamma" || s == "gamma") return Family::LogLinearGamma;
  if (s == "logistic") return Family::Logistic;
  throw ConfigError("unknown outcome family: " + s);
}

double mean_residual(const OutcomeModel& model, double y, double eta) {
  switch (model.family) {
    case Family::Linear: return y - eta;
    case Family::Logistic: return y - expit(eta);
    case Family::LogLinearGamma: return y - std::exp(eta);
  }
  return 0.0;
}

double mean_residual_deta(const OutcomeModel& model, double /*y*/, double eta) {
  switch (model.family) {
    case Family::Linear: return -1.0;
    case Family::Logistic: {
      const double m = expit(eta);
      return -m * (1.0 - m);
    }
    case Family::LogLinearGamma: return -std::exp(eta);
  }
  return 0.0;
}

VectorXd psi(const OutcomeModel& model, double y, const VectorXd& x, const VectorXd& z,
             const VectorXd& theta) {
  if (x.size() != model.p || z.size() != model.q || theta.size() != model.dim())
    throw ConfigError("psi: dimension mismatch");
  VectorXd w(model.dim());
  w[0] = 1.0;
  w.segment(1, model.p) = x;
  if (model.q > 0) w.tail(model.q) = z;
  return mean_residual(model, y, w.dot(theta)) * w;
}

namespace {

void check_shapes(const OutcomeModel& model, const VectorXd& y, const MatrixXd& x,
                  const MatrixXd& z, const VectorXd* weights) {
  const int n = static_cast<int>(y.size());
  if (x.rows() != n || x.cols() != model.p) throw ConfigError("fit: x has wrong shape");
  if (z.rows() != n || z.cols() != model.q) throw ConfigError("fit: z has wrong shape");
  if (weights && weights->size() != n) throw ConfigError("fit: weights have wrong length");
}

// Design row (1, x_i, z_i) folded into eta and accumulators without forming W.
struct DesignView {
  const MatrixXd& x;
  const MatrixXd& z;
  int p, q;
  double eta(int i, const VectorXd& theta) const {
    double e = theta[0];
    for (int c = 0; c < p; ++c) e += theta[1 + c] * x(i, c);
    for (int c = 0; c < q; ++c) e += theta[1 + p + c] * z(i, c);
    return e;
  }
  void add_scaled(int i, double s, VectorXd& acc) const {
    acc[0] += s;
    for (int c = 0; c < p; ++c) acc[1 + c] += s * x(i, c);
    for (int c = 0; c < q; ++c) acc[1 + p + c] += s * z(i, c);
  }
  void add_outer(int i, double s, MatrixXd& acc) const {
    const int d = 1 + p + q;
    VectorXd w(d);
    w[0] = 1.0;
    for (int c = 0; c < p; ++c) w[1 + c] = x(i, c);
    for (int c = 0; c < q; ++c) w[1 + p + c] = z(i, c);
    acc.selfadjointView<Eigen::Lower>().rankUpdate(w, s);
  }
};

}  // namespace

VectorXd score_mean(const OutcomeModel& model, const VectorXd& y, const MatrixXd& x,
                    const MatrixXd& z, const VectorXd& theta, const VectorXd* weights) {
  check_shapes(model, y, x, z, weights);
  const int n = static_cast<int>(y.size());
  DesignView dv{x, z, model.p, model.q};
  VectorXd u = VectorXd::Zero(model.dim());
  double wsum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double wi = weights ? (*weights)[i] : 1.0;
    if (wi == 0.0) continue;
    wsum += wi;
    dv.add_scaled(i, wi * mean_residual(model, y[i], dv.eta(i, theta)), u);
  }
  if (wsum <= 0.0) throw FitError("no effective observations in fit");
  return u / wsum;
}

MatrixXd score_jacobian(const OutcomeModel& model, const VectorXd& y, const MatrixXd& x,
                        const MatrixXd& z, const VectorXd& theta, const VectorXd* weights) {
  check_shapes(model, y, x, z, weights);
  const int n = static_cast<int>(y.size());
  DesignView dv{x, z, model.p, model.q};
  MatrixXd jac = MatrixXd::Zero(model.dim(), model.dim());
  double wsum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double wi = weights ? (*weights)[i] : 1.0;
    if (wi == 0.0) continue;
    wsum += wi;
    dv.add_outer(i, wi * mean_residual_deta(model, y[i], dv.eta(i, theta)), jac);
  }
  if (wsum <= 0.0) throw FitError("no effective observations in fit");
  MatrixXd full = jac.selfadjointView<Eigen::Lower>();
  return full / wsum;
}

namespace {

FitResult linear_closed_form(const OutcomeModel& model, const VectorXd& y, const MatrixXd& x,
                             const MatrixXd& z, const VectorXd* weights) {
  const int n = static_cast<int>(y.size());
  const int d = model.dim();
  DesignView dv{x, z, model.p, model.q};
  MatrixXd xtx = MatrixXd::Zero(d, d);
  VectorXd xty = VectorXd::Zero(d);
  int used = 0;
  for (int i = 0; i < n; ++i) {
    const double wi = weights ? (*weights)[i] : 1.0;
    if (wi == 0.0) continue;
    ++used;
    dv.add_outer(i, wi, xtx);
    dv.add_scaled(i, wi * y[i], xty);
  }
  MatrixXd full = xtx.selfadjointView<Eigen::Lower>();
  Eigen::LDLT<MatrixXd> ldlt(full);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw FitError("linear fit: design is rank deficient");
  FitResult out;
  out.theta = ldlt.solve(xty);
  out.iterations = 1;
  out.n_used = used;
  out.score_norm = score_mean(model, y, x, z, out.theta, weights).lpNorm<Eigen::Infinity>();
  if (!out.theta.allFinite()) throw FitError("linear fit produced non-finite coefficients");
  return out;
}

}  // namespace

FitResult solve_m(const OutcomeModel& model, const VectorXd& y, const MatrixXd& x,
                  const MatrixXd& z, const VectorXd& theta0, const VectorXd* weights) {
  check_shapes(model, y, x, z, weights);
  if (model.family == Family::Linear) return linear_closed_form(model, y, x, z, weights);

  const int n = static_cast<int>(y.size());
  const double tol = 1e-9;
  const int max_iter = 100;

  VectorXd theta = theta0;
  if (theta.size() != model.dim()) throw ConfigError("solve_m: bad starting value length");
  VectorXd u = score_mean(model, y, x, z, theta, weights);
  double unorm = u.lpNorm<Eigen::Infinity>();

  DesignView dv{x, z, model.p, model.q};
  double prev_max_eta = 0.0;
  int eta_grew = 0;

  FitResult out;
  out.n_used = weights ? static_cast<int>((weights->array() != 0.0).count()) : n;
  int iter = 0;
  for (; iter < max_iter && unorm > tol; ++iter) {
    MatrixXd jac = score_jacobian(model, y, x, z, theta, weights);
    Eigen::PartialPivLU<MatrixXd> lu(jac);
    VectorXd step = lu.solve(-u);
    if (!step.allFinite()) throw FitError("solve_m: Newton step failed (singular Jacobian)");

    double scale = 1.0;
    VectorXd cand;
    double cand_norm = std::numeric_limits<double>::infinity();
    for (int half = 0; half < 40; ++half) {
      cand = theta + scale * step;
      VectorXd uc = score_mean(model, y, x, z, cand, weights);
      cand_norm = uc.lpNorm<Eigen::Infinity>();
      if (std::isfinite(cand_norm) && cand_norm < unorm) {
        u = uc;
        break;
      }
      scale *= 0.5;
    }
    if (!(cand_norm < unorm)) {
      // stalled; report as non-convergence below
      theta = cand;
      unorm = cand_norm;
      break;
    }
    theta = cand;
    unorm = cand_norm;

    if (model.family == Family::Logistic) {
      double max_eta = 0.0;
      for (int i = 0; i < n; ++i) {
        if (weights && (*weights)[i] == 0.0) continue;
        max_eta = std::max(max_eta, std::abs(dv.eta(i, theta)));
      }
      if (max_eta > 30.0 && max_eta > prev_max_eta) {
        if (++eta_grew >= 2)
          throw SeparationError("logistic fit: linear predictor diverging (separation)");
      } else {
        eta_grew = 0;
      }
      prev_max_eta = max_eta;
    }
  }
  if (unorm > tol) {
    throw FitError("solve_m did not converge: ||U||_inf = " + std::to_string(unorm) + " after " +
                   std::to_string(iter) + " iterations");
  }
  if (model.family == Family::Logistic) {
    // a "converged" fit with a saturated linear predictor is separation
    double max_eta = 0.0;
    for (int i = 0; i < n; ++i) {
      if (weights && (*weights)[i] == 0.0) continue;
      max_eta = std::max(max_eta, std::abs(dv.eta(i, theta)));
    }
    if (max_eta > 20.0 && theta.lpNorm<Eigen::Infinity>() > 10.0)
      throw SeparationError("logistic fit: separated data (|eta| up to " +
                            std::to_string(max_eta) + ")");
  }
  out.theta = theta;
  out.iterations = iter;
  out.score_norm = unorm;
  return out;
}

FitResult solve_m(const OutcomeModel& model, const VectorXd& y, const MatrixXd& x,
                  const MatrixXd& z) {
  return solve_m(model, y, x, z, VectorXd::Zero(model.dim()), nullptr);
}

MatrixXd plain_sandwich(const OutcomeModel& model, const VectorXd& y, const MatrixXd& x,
                        const MatrixXd& z, const VectorXd& theta, const VectorXd* weights) {
  const int n = static_cast<int>(y.size());
  const int d = model.dim();
  MatrixXd a = score_jacobian(model, y, x, z, theta, weights);
  MatrixXd b = MatrixXd::Zero(d, d);
  DesignView dv{x, z, model.p, model.q};
  double wsum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double wi = weights ? (*weights)[i] : 1.0;
    if (wi == 0.0) continue;
    wsum += wi;
    const double r = mean_residual(model, y[i], dv.eta(i, theta));
    dv.add_outer(i, wi * wi * r * r, b);
  }
  MatrixXd bf = b.selfadjointView<Eigen::Lower>();
  bf /= wsum;
  Eigen::PartialPivLU<MatrixXd> lu(a);
  MatrixXd ainv_b = lu.solve(bf);
  return ainv_b * lu.inverse().transpose();
}

MatrixXd proxy_average(const ProxyPanel& panel, const VectorXd& weights) {
  if (weights.size() != panel.k) throw ConfigError("proxy_average: weight length != k");
  if ((weights.array() < 0.0).any()) throw ConfigError("proxy_average: negative weight");
  MatrixXd out = MatrixXd::Zero(panel.n, panel.p);
  for (int i = 0; i < panel.n; ++i) {
    double wsum = 0.0;
    for (int j = 0; j < panel.k; ++j) {
      if (!panel.observed(i, j)) continue;
      const double wj = weights[j];
      wsum += wj;
      out.row(i) += wj * panel.proxies[j].row(i);
    }
    if (wsum <= 0.0)
      throw DataError("proxy_average: row " + std::to_string(i + 1) +
                      " has zero total weight over observed proxies");
    out.row(i) /= wsum;
  }
  return out;
}

FitResult naive_fit(const ProxyPanel& panel, const OutcomeModel& model, const VectorXd& weights) {
  MatrixXd xbar = proxy_average(panel, weights);
  FitResult fit = solve_m(model, panel.y, xbar, panel.z);
  fit.cov = plain_sandwich(model, panel.y, xbar, panel.z, fit.theta, nullptr);
  fit.method = "naive";
  return fit;
}

FitResult naive_fit(const ProxyPanel& panel, const OutcomeModel& model) {
  return naive_fit(panel, model, VectorXd::Constant(panel.k, 1.0 / panel.k));
}

}  // namespace meacorr
