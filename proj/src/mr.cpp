#include "meacorr/mr.hpp"

namespace meacorr {

namespace {

std::vector<int> complete_rows(const ProxyPanel& panel) {
  std::vector<int> rows;
  const std::uint32_t full = (panel.k >= 32) ? 0xffffffffu : ((1u << panel.k) - 1u);
  for (int i = 0; i < panel.n; ++i)
    if (panel.pattern_of(i) == full) rows.push_back(i);
  return rows;
}

double xstar_alpha(const ProxyPanel& panel, int i, const VectorXd& alpha) {
  double acc = 0.0;
  for (int j = 0; j < panel.k; ++j) acc += alpha[j] * panel.proxies[j](i, 0);
  return acc;
}

}  // namespace

MrParams estimate_mr_params(const ProxyPanel& panel, const CorrectionParams& xi,
                            const VectorXd& alpha) {
  if (panel.p != 1) throw ConfigError("moment reconstruction requires scalar proxies");
  if (alpha.size() != panel.k) throw ConfigError("mr: alpha length != k");
  MrParams mr;
  mr.alpha = alpha / alpha.sum();
  mr.rows = complete_rows(panel);
  if (mr.rows.size() < 2) throw EstimationError("mr: no complete-pattern subsample");

  double n1 = 0, n0 = 0, s1 = 0, s0 = 0;
  for (int i : mr.rows) {
    const double y = panel.y[i];
    if (y != 0.0 && y != 1.0) throw ConfigError("mr: outcome must be binary");
    const double xs = xstar_alpha(panel, i, mr.alpha);
    if (y == 1.0) {
      n1 += 1;
      s1 += xs;
    } else {
      n0 += 1;
      s0 += xs;
    }
  }
  if (n1 == 0 || n0 == 0) throw EstimationError("mr: a single outcome class is present");
  mr.theta1 = s1 / n1;
  mr.theta2 = s0 / n0;
  double v1 = 0, v0 = 0;
  for (int i : mr.rows) {
    const double xs = xstar_alpha(panel, i, mr.alpha);
    if (panel.y[i] == 1.0)
      v1 += (xs - mr.theta1) * (xs - mr.theta1);
    else
      v0 += (xs - mr.theta2) * (xs - mr.theta2);
  }
  mr.theta3 = v1 / n1;
  mr.theta4 = v0 / n0;

  mr.eta_dot0 = 0.0;
  mr.eta_dot1 = 0.0;
  mr.m_star = 0.0;
  for (int j = 0; j < panel.k; ++j) {
    mr.eta_dot0 += mr.alpha[j] * xi.eta0[j][0];
    mr.eta_dot1 += mr.alpha[j] * xi.eta1[j][0];
    mr.m_star += mr.alpha[j] * mr.alpha[j] * xi.m[j](0, 0);
  }
  return mr;
}

double mr_reconstruct(double xs, double y, const CorrectionParams& xi, const MrParams& mr,
                      MrSigmaMode mode) {
  const double vy = y == 1.0 ? mr.theta3 : mr.theta4;
  const double ey = y == 1.0 ? mr.theta1 : mr.theta2;
  if (vy <= 0.0) throw EstimationError("mr: nonpositive conditional proxy variance");
  double gt;  // eta1. * G(Y)
  if (mode == MrSigmaMode::Conditional) {
    gt = std::sqrt(std::max(vy - mr.m_star, 0.0) / vy);
  } else {
    if (xi.sigma_xx(0, 0) < 0.0) throw EstimationError("mr: negative Sigma_XX");
    gt = mr.eta_dot1 * std::sqrt(xi.sigma_xx(0, 0) / vy);
  }
  return (ey * (1.0 - gt) + xs * gt - mr.eta_dot0) / mr.eta_dot1;
}

VectorXd mr_reconstruct_all(const ProxyPanel& panel, const CorrectionParams& xi,
                            const MrParams& mr, MrSigmaMode mode) {
  VectorXd out(mr.rows.size());
  for (std::size_t ii = 0; ii < mr.rows.size(); ++ii) {
    const int i = mr.rows[ii];
    out[ii] = mr_reconstruct(xstar_alpha(panel, i, mr.alpha), panel.y[i], xi, mr, mode);
  }
  return out;
}

namespace {

// Stacked (Psi, Theta rows, g) system for the MR sandwich.
struct MrStack {
  const ProxyPanel& panel;
  const OutcomeModel& model;
  XiLayout lay;
  VectorXd alpha;
  MrSigmaMode mode;
  std::vector<char> in_sub;  // row gate
  std::vector<int> rows;
  int m;
  int dim;

  MrStack(const ProxyPanel& pn, const OutcomeModel& md, const CorrectionParams& xi,
          const MrParams& mr, MrSigmaMode md2)
      : panel(pn), model(md), lay(xi.layout()), alpha(mr.alpha), mode(md2), rows(mr.rows) {
    m = model.dim();
    dim = m + 4 + lay.dim();
    in_sub.assign(panel.n, 0);
    for (int i : rows) in_sub[i] = 1;
  }

  MrParams mr_from(const VectorXd& s, const CorrectionParams& params) const {
    MrParams mr;
    mr.alpha = alpha;
    mr.rows = rows;
    mr.theta1 = s[m + 0];
    mr.theta2 = s[m + 1];
    mr.theta3 = s[m + 2];
    mr.theta4 = s[m + 3];
    mr.eta_dot0 = 0.0;
    mr.eta_dot1 = 0.0;
    mr.m_star = 0.0;
    for (int j = 0; j < panel.k; ++j) {
      mr.eta_dot0 += alpha[j] * params.eta0[j][0];
      mr.eta_dot1 += alpha[j] * params.eta1[j][0];
      mr.m_star += alpha[j] * alpha[j] * params.m[j](0, 0);
    }
    return mr;
  }

  VectorXd residual_mean(const VectorXd& s) const {
    VectorXd out = VectorXd::Zero(dim);
    const VectorXd beta = s.head(m);
    const VectorXd xi_flat = s.tail(lay.dim());
    CorrectionParams params = params_from_xi(lay, xi_flat);
    MrParams mr = mr_from(s, params);
    for (int i : rows) {
      const double xs = xstar_alpha(panel, i, alpha);
      const double xh = mr_reconstruct(xs, panel.y[i], params, mr, mode);
      VectorXd xv(1);
      xv[0] = xh;
      out.head(m) += psi(model, panel.y[i], xv, panel.z.row(i).transpose(), beta);
      const double y = panel.y[i];
      out[m + 0] += y * (xs - mr.theta1);
      out[m + 1] += (1.0 - y) * (xs - mr.theta2);
      out[m + 2] += y * ((xs - mr.theta1) * (xs - mr.theta1) - mr.theta3);
      out[m + 3] += (1.0 - y) * ((xs - mr.theta2) * (xs - mr.theta2) - mr.theta4);
    }
    out.head(m + 4) /= panel.n;
    out.tail(lay.dim()) = g_mean(panel, lay, xi_flat);
    return out;
  }
};

}  // namespace

MrFit fit_mr_logistic(const ProxyPanel& panel, const CorrectionParams& xi, const VectorXd& alpha,
                      MrSigmaMode mode, bool with_sandwich) {
  OutcomeModel model{Family::Logistic, 1, panel.q};
  MrFit out;
  out.params = estimate_mr_params(panel, xi, alpha);
  out.xhat = mr_reconstruct_all(panel, xi, out.params, mode);

  const int ns = static_cast<int>(out.params.rows.size());
  VectorXd ys(ns);
  MatrixXd zs(ns, panel.q);
  for (int ii = 0; ii < ns; ++ii) {
    ys[ii] = panel.y[out.params.rows[ii]];
    zs.row(ii) = panel.z.row(out.params.rows[ii]);
  }
  out.fit = solve_m(model, ys, out.xhat, zs, VectorXd::Zero(model.dim()), nullptr);
  out.fit.method = "mr";
  out.fit.n_used = ns;

  if (with_sandwich) {
    MrStack st(panel, model, xi, out.params, mode);
    VectorXd sol(st.dim);
    sol.head(st.m) = out.fit.theta;
    sol[st.m + 0] = out.params.theta1;
    sol[st.m + 1] = out.params.theta2;
    sol[st.m + 2] = out.params.theta3;
    sol[st.m + 3] = out.params.theta4;
    sol.tail(st.lay.dim()) = xi.pack();

    MatrixXd amat = numeric_jacobian([&](const VectorXd& s) { return st.residual_mean(s); }, sol,
                                     st.dim);
    MatrixXd bmat = MatrixXd::Zero(st.dim, st.dim);
    const VectorXd xi_flat = xi.pack();
    XiView view(st.lay, xi_flat);
    const VectorXd cons = g_constraint_rows(view);
    VectorXd gi(st.lay.dim());
    VectorXd resid(st.dim);
    for (int i = 0; i < panel.n; ++i) {
      resid.setZero();
      if (st.in_sub[i]) {
        const double xs = xstar_alpha(panel, i, out.params.alpha);
        const double xh = mr_reconstruct(xs, panel.y[i], xi, out.params, mode);
        VectorXd xv(1);
        xv[0] = xh;
        resid.head(st.m) = psi(model, panel.y[i], xv, panel.z.row(i).transpose(), out.fit.theta);
        const double y = panel.y[i];
        resid[st.m + 0] = y * (xs - out.params.theta1);
        resid[st.m + 1] = (1.0 - y) * (xs - out.params.theta2);
        resid[st.m + 2] = y * ((xs - out.params.theta1) * (xs - out.params.theta1) -
                               out.params.theta3);
        resid[st.m + 3] = (1.0 - y) * ((xs - out.params.theta2) * (xs - out.params.theta2) -
                                       out.params.theta4);
      }
      g_data_rows(panel, i, view, gi);
      resid.tail(st.lay.dim()) = gi + cons;
      bmat.selfadjointView<Eigen::Lower>().rankUpdate(resid, 1.0);
    }
    MatrixXd bf = bmat.selfadjointView<Eigen::Lower>();
    bf /= panel.n;

    Eigen::FullPivLU<MatrixXd> lu(amat);
    lu.setThreshold(1e-12);
    if (!lu.isInvertible())
      throw InferenceError("singular stacked Jacobian in MR sandwich (rank " +
                           std::to_string(lu.rank()) + " of " + std::to_string(st.dim) + ")");
    MatrixXd ainv = lu.inverse();
    MatrixXd full = ainv * bf * ainv.transpose();
    out.fit.cov = symmetrize(full.topLeftCorner(st.m, st.m));
    // covariance is on the sqrt(n) scale of the full panel size
    out.fit.n_used = panel.n;
  }
  return out;
}

}  // namespace meacorr
