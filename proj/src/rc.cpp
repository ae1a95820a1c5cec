#include "meacorr/rc.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

namespace meacorr {

namespace {

MatrixXd calibrate_panel(const ProxyPanel& panel, const std::vector<PatternInfo>& patterns,
                         const std::vector<BlupMap>& blups) {
  MatrixXd xhat(panel.n, panel.p);
  for (std::size_t s = 0; s < patterns.size(); ++s)
    for (int i : patterns[s].rows) xhat.row(i) = apply_blup(blups[s], panel, i).transpose();
  return xhat;
}

}  // namespace

RcFit fit_rc(const ProxyPanel& panel, const OutcomeModel& model, const CorrectionParams& xi,
             WeightMode mode) {
  if (model.p != panel.p || model.q != panel.q)
    throw ConfigError("fit_rc: outcome model dimensions do not match panel");
  RcFit out;
  out.use_z = xi.has_z;
  out.patterns = patterns_of(panel);

  if (mode == WeightMode::Optimal) {
    OptimalAlphaResult oa = optimal_alpha(xi, out.patterns, xi.has_z);
    out.alpha = oa.alpha;
    out.alpha_fallback = oa.fallback_equal;
  } else {
    out.alpha = VectorXd::Constant(panel.k, 1.0 / panel.k);
  }

  for (const auto& pat : out.patterns)
    out.blups.push_back(build_blup(xi, out.alpha, pat.mask, xi.has_z));
  out.xhat = calibrate_panel(panel, out.patterns, out.blups);

  out.fit = solve_m(model, panel.y, out.xhat, panel.z);
  out.fit.method = std::string("gen-rc-") + (mode == WeightMode::Optimal ? "optimal" : "equal") +
                   (xi.has_z ? "" : "-noz");
  if (out.alpha_fallback) out.fit.notes.push_back("optimal-alpha fell back to equal weights");
  return out;
}

// ---------------------------------------------------------------------------
// Stacked (Psi, h, [alpha, f], g) system for Theorem-2 inference.
// ---------------------------------------------------------------------------
namespace {

struct RcStack {
  const ProxyPanel& panel;
  const OutcomeModel& model;
  XiLayout lay;
  std::vector<PatternInfo> patterns;
  bool use_z;
  bool alpha_rows;  // optimal mode with interior weights
  int k, p, q_blup, m;

  int theta_off = 0;
  int pat_off = 0;     // per-pattern (mu, beta, gamma) blocks
  int pat_block = 0;   // p + p*p + p*q_blup
  int alpha_off = -1;  // k slots
  int f_off = -1;      // patterns.size() slots
  int xi_off = 0;
  int dim = 0;

  RcStack(const ProxyPanel& pn, const OutcomeModel& md, const CorrectionParams& xi,
          const RcFit& rcfit, bool with_alpha)
      : panel(pn), model(md), lay(xi.layout()), patterns(rcfit.patterns), use_z(rcfit.use_z) {
    k = pn.k;
    p = pn.p;
    q_blup = use_z ? pn.q : 0;
    m = md.dim();
    pat_block = p + p * p + p * q_blup;
    theta_off = 0;
    pat_off = m;
    int off = m + static_cast<int>(patterns.size()) * pat_block;
    alpha_rows = with_alpha;
    if (alpha_rows) {
      alpha_off = off;
      off += k;
      f_off = off;
      off += static_cast<int>(patterns.size());
    }
    xi_off = off;
    dim = off + lay.dim();
  }

  VectorXd pack(const RcFit& rcfit, const VectorXd& xi_flat) const {
    VectorXd s = VectorXd::Zero(dim);
    s.segment(theta_off, m) = rcfit.fit.theta;
    for (std::size_t si = 0; si < patterns.size(); ++si) {
      const BlupMap& bm = rcfit.blups[si];
      int off = pat_off + static_cast<int>(si) * pat_block;
      s.segment(off, p) = bm.mu;
      Eigen::Map<MatrixXd>(s.data() + off + p, p, p) = bm.beta;
      if (q_blup > 0) Eigen::Map<MatrixXd>(s.data() + off + p + p * p, p, q_blup) = bm.gamma;
    }
    if (alpha_rows) {
      s.segment(alpha_off, k) = rcfit.alpha;
      for (std::size_t si = 0; si < patterns.size(); ++si)
        s[f_off + static_cast<int>(si)] = patterns[si].frequency;
    }
    s.segment(xi_off, lay.dim()) = xi_flat;
    return s;
  }

  // Pattern lookup per row, precomputed once.
  std::vector<int> row_pattern() const {
    std::vector<int> rp(panel.n, -1);
    for (std::size_t si = 0; si < patterns.size(); ++si)
      for (int i : patterns[si].rows) rp[i] = static_cast<int>(si);
    return rp;
  }

  VectorXd alpha_of(const VectorXd& s, const VectorXd& fixed_alpha) const {
    return alpha_rows ? VectorXd(s.segment(alpha_off, k)) : fixed_alpha;
  }

  // xhat for row i under stacked parameters.
  VectorXd xhat_row(const VectorXd& s, int i, int si, const VectorXd& alpha) const {
    const int off = pat_off + si * pat_block;
    VectorXd aw = renormalize_alpha(alpha, patterns[si].mask, k);
    VectorXd xstar = VectorXd::Zero(p);
    for (int j = 0; j < k; ++j)
      if (aw[j] != 0.0) xstar += aw[j] * panel.proxies[j].row(i).transpose();
    VectorXd xh = s.segment(off, p) +
                  Eigen::Map<const MatrixXd>(s.data() + off + p, p, p) * xstar;
    if (q_blup > 0)
      xh += Eigen::Map<const MatrixXd>(s.data() + off + p + p * p, p, q_blup) *
            panel.z.row(i).transpose();
    return xh;
  }

  // Mean stacked residual as a function of the stacked parameters.
  VectorXd residual_mean(const VectorXd& s, const VectorXd& fixed_alpha,
                         const std::vector<int>& rp) const {
    VectorXd out = VectorXd::Zero(dim);
    const VectorXd theta = s.segment(theta_off, m);
    const VectorXd alpha = alpha_of(s, fixed_alpha);
    const VectorXd xi_flat = s.segment(xi_off, lay.dim());
    CorrectionParams params = params_from_xi(lay, xi_flat);

    // Psi block
    for (int i = 0; i < panel.n; ++i) {
      VectorXd xh = xhat_row(s, i, rp[i], alpha);
      out.segment(theta_off, m) += psi(model, panel.y[i], xh, panel.z.row(i).transpose(), theta);
    }
    out.segment(theta_off, m) /= panel.n;

    // h blocks: BLUP normal equations per pattern.
    for (std::size_t si = 0; si < patterns.size(); ++si) {
      const int off = pat_off + static_cast<int>(si) * pat_block;
      const VectorXd mu_s = s.segment(off, p);
      const MatrixXd beta_s = Eigen::Map<const MatrixXd>(s.data() + off + p, p, p);
      const MatrixXd gamma_s = q_blup > 0
                                   ? MatrixXd(Eigen::Map<const MatrixXd>(s.data() + off + p + p * p,
                                                                         p, q_blup))
                                   : MatrixXd(p, 0);
      CombinedMoments cm = combined_moments(params, alpha, patterns[si].mask);
      VectorXd h1 = params.mu_x - mu_s - beta_s * cm.mu_xstar;
      MatrixXd h2 = cm.s_xxs - beta_s * cm.s_xsxs;
      if (q_blup > 0) {
        h1 -= gamma_s * params.raw.mu_z;
        h2 -= gamma_s * cm.s_xsz.transpose();
      }
      out.segment(off, p) = h1;
      Eigen::Map<MatrixXd>(out.data() + off + p, p, p) = h2;
      if (q_blup > 0) {
        MatrixXd h3 = params.sigma_zx.transpose() - beta_s * cm.s_xsz - gamma_s * params.raw.sigma_zz;
        Eigen::Map<MatrixXd>(out.data() + off + p + p * p, p, q_blup) = h3;
      }
    }

    // alpha stationarity (projected gradient of the frequency-weighted MSE)
    // plus the simplex normalization, then pattern-frequency rows.
    if (alpha_rows) {
      VectorXd fvec = s.segment(f_off, static_cast<int>(patterns.size()));
      auto obj = [&](const VectorXd& a) {
        double acc = 0.0;
        for (std::size_t si = 0; si < patterns.size(); ++si)
          acc += fvec[static_cast<int>(si)] * blup_mse(params, a, patterns[si].mask, use_z);
        return acc;
      };
      VectorXd grad(k);
      for (int j = 0; j < k; ++j) {
        const double h = 1e-6;
        VectorXd ap = alpha, am = alpha;
        ap[j] += h;
        am[j] -= h;
        grad[j] = (obj(ap) - obj(am)) / (2.0 * h);
      }
      const double gbar = grad.mean();
      for (int j = 0; j < k - 1; ++j) out[alpha_off + j] = grad[j] - gbar;
      out[alpha_off + k - 1] = alpha.sum() - 1.0;
      for (std::size_t si = 0; si < patterns.size(); ++si)
        out[f_off + static_cast<int>(si)] =
            patterns[si].frequency - fvec[static_cast<int>(si)];
    }

    out.segment(xi_off, lay.dim()) = g_mean(panel, lay, xi_flat);
    return out;
  }
};

}  // namespace

StackedSystem rc_stacked_system(const ProxyPanel& panel, const OutcomeModel& model,
                                const CorrectionParams& xi, const RcFit& rcfit, WeightMode mode,
                                bool with_alpha_rows) {
  RcStack st(panel, model, xi, rcfit, mode == WeightMode::Optimal && with_alpha_rows);
  const std::vector<int> rp = st.row_pattern();
  const VectorXd xi_flat = xi.pack();
  const VectorXd sol = st.pack(rcfit, xi_flat);
  const VectorXd fixed_alpha = rcfit.alpha;

  StackedSystem sys;
  sys.theta_dim = st.m;
  sys.h_dim = static_cast<int>(st.patterns.size()) * st.pat_block + (st.alpha_rows ? st.k : 0);
  sys.f_dim = st.alpha_rows ? static_cast<int>(st.patterns.size()) : 0;
  sys.xi_dim = st.lay.dim();

  sys.a = numeric_jacobian(
      [&](const VectorXd& s) { return st.residual_mean(s, fixed_alpha, rp); }, sol, st.dim);

  // Empirical B: per-subject residuals. h and alpha rows are deterministic
  // (zero at the solution); f rows are indicator residuals; g rows vary.
  sys.b = MatrixXd::Zero(st.dim, st.dim);
  XiView view(st.lay, xi_flat);
  const VectorXd cons = g_constraint_rows(view);
  const VectorXd theta = rcfit.fit.theta;
  VectorXd gi(st.lay.dim());
  for (int i = 0; i < panel.n; ++i) {
    VectorXd resid = VectorXd::Zero(st.dim);
    resid.segment(0, st.m) =
        psi(model, panel.y[i], rcfit.xhat.row(i).transpose(), panel.z.row(i).transpose(), theta);
    if (st.alpha_rows)
      for (std::size_t si = 0; si < st.patterns.size(); ++si)
        resid[st.f_off + static_cast<int>(si)] =
            (rp[i] == static_cast<int>(si) ? 1.0 : 0.0) - st.patterns[si].frequency;
    g_data_rows(panel, i, view, gi);
    resid.segment(st.xi_off, st.lay.dim()) = gi + cons;
    sys.b.selfadjointView<Eigen::Lower>().rankUpdate(resid, 1.0);
  }
  MatrixXd bf = sys.b.selfadjointView<Eigen::Lower>();
  sys.b = bf / panel.n;
  return sys;
}

MatrixXd rc_sandwich(const ProxyPanel& panel, const OutcomeModel& model,
                     const CorrectionParams& xi, RcFit& rcfit, WeightMode mode) {
  bool with_alpha = mode == WeightMode::Optimal;
  if (with_alpha && (rcfit.alpha.array() < 1e-8).any()) {
    // boundary optimum: stationarity rows do not hold; treat weights as fixed
    rcfit.fit.notes.push_back("alpha at simplex boundary; weight uncertainty not propagated");
    with_alpha = false;
  }
  StackedSystem sys = rc_stacked_system(panel, model, xi, rcfit, mode, with_alpha);
  const int d = static_cast<int>(sys.a.rows());
  Eigen::FullPivLU<MatrixXd> lu(sys.a);
  lu.setThreshold(1e-10);
  if (!lu.isInvertible())
    throw InferenceError("singular stacked Jacobian in RC sandwich (rank " +
                         std::to_string(lu.rank()) + " of " + std::to_string(d) + ")");
  MatrixXd ainv = lu.inverse();
  MatrixXd full = ainv * sys.b * ainv.transpose();
  return symmetrize(full.topLeftCorner(sys.theta_dim, sys.theta_dim));
}

// ---------------------------------------------------------------------------
// Standard regression calibration baseline.
// ---------------------------------------------------------------------------
StandardRcMoments standard_rc_moments(const ProxyPanel& panel) {
  // iid working model: one pooled error covariance and the global moments of
  // the per-subject replicate mean (patterns mixed together).
  RawMoments rm = estimate_raw_moments(panel);
  const int k = panel.k, p = panel.p, n = panel.n;
  StandardRcMoments out;

  MatrixXd xbar = proxy_average(panel, VectorXd::Constant(k, 1.0 / k));
  out.mu_xbar = xbar.colwise().mean().transpose();
  out.mu_x = out.mu_xbar;  // replicate means are unbiased for the truth
  out.var_xbar = MatrixXd::Zero(p, p);
  for (int i = 0; i < n; ++i) {
    VectorXd d = xbar.row(i).transpose() - out.mu_xbar;
    out.var_xbar.selfadjointView<Eigen::Lower>().rankUpdate(d, 1.0);
  }
  MatrixXd vf = out.var_xbar.selfadjointView<Eigen::Lower>();
  out.var_xbar = vf / n;

  // pooled Sigma_U: excess of the average diagonal block over the average
  // cross block
  MatrixXd offdiag = MatrixXd::Zero(p, p);
  MatrixXd diag = MatrixXd::Zero(p, p);
  for (int j = 0; j < k; ++j) {
    diag += rm.sigma[j][j];
    for (int l = 0; l < k; ++l)
      if (l != j) offdiag += rm.sigma[j][l];
  }
  out.sigma_u = symmetrize(diag / k - offdiag / (k * (k - 1)));

  double inv_kappa = 0.0;
  for (int i = 0; i < n; ++i) inv_kappa += 1.0 / panel.kappa(i);
  out.inv_kappa_bar = inv_kappa / n;
  out.sigma_xx = symmetrize(out.var_xbar - out.inv_kappa_bar * out.sigma_u);

  if (panel.q > 0) {
    out.sigma_zx = MatrixXd::Zero(panel.q, p);
    for (int i = 0; i < n; ++i)
      out.sigma_zx += (panel.z.row(i).transpose() - rm.mu_z) *
                      (xbar.row(i) - out.mu_xbar.transpose());
    out.sigma_zx /= n;
  } else {
    out.sigma_zx = MatrixXd::Zero(0, p);
  }
  return out;
}

// The iid working model fits one calibration for everyone: replicate mean,
// single pooled Sigma_U, average inverse replicate count. Exact when the
// replicates really are exchangeable and complete; the single map is what
// fails under incomplete replication.
RcFit fit_standard_rc(const ProxyPanel& panel, const OutcomeModel& model) {
  if (panel.k < 2) throw ConfigError("standard RC needs at least two replicates");
  StandardRcMoments sm = standard_rc_moments(panel);
  RawMoments rm = estimate_raw_moments(panel);
  const int p = panel.p, q = panel.q;

  RcFit out;
  out.use_z = q > 0;
  out.patterns = patterns_of(panel);
  out.alpha = VectorXd::Constant(panel.k, 1.0 / panel.k);

  MatrixXd joint(p + q, p + q);
  joint.topLeftCorner(p, p) = sm.var_xbar;
  MatrixXd cross(p, p + q);
  cross.leftCols(p) = sm.sigma_xx;
  if (q > 0) {
    joint.topRightCorner(p, q) = sm.sigma_zx.transpose();
    joint.bottomLeftCorner(q, p) = sm.sigma_zx;
    joint.bottomRightCorner(q, q) = rm.sigma_zz;
    cross.rightCols(q) = sm.sigma_zx.transpose();
  }
  Eigen::FullPivLU<MatrixXd> lu(joint);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) throw CalibrationError("singular joint covariance in standard RC");
  MatrixXd coef = cross * lu.inverse();

  for (const auto& pat : out.patterns) {
    BlupMap map;
    map.pattern = pat.mask;
    map.alpha = renormalize_alpha(out.alpha, pat.mask, panel.k);
    map.uses_z = q > 0;
    map.beta = coef.leftCols(p);
    map.gamma = q > 0 ? MatrixXd(coef.rightCols(q)) : MatrixXd(p, 0);
    map.mu = sm.mu_x - map.beta * sm.mu_xbar;
    if (q > 0) map.mu -= map.gamma * rm.mu_z;
    out.blups.push_back(map);
  }
  out.xhat = calibrate_panel(panel, out.patterns, out.blups);
  out.fit = solve_m(model, panel.y, out.xhat, panel.z);
  out.fit.method = "standard-rc";
  return out;
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------
BootstrapResult bootstrap_ci(const ProxyPanel& panel, const VectorXd& theta_hat, int b_reps,
                             std::uint64_t seed, double level,
                             const std::function<VectorXd(const ProxyPanel&)>& refit,
                             int threads) {
  if (b_reps < 2) throw ConfigError("bootstrap needs at least 2 replicates");
  const int m = static_cast<int>(theta_hat.size());
  MatrixXd draws = MatrixXd::Constant(b_reps, m, std::numeric_limits<double>::quiet_NaN());

  auto one = [&](int b) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(b), 0xb007ULL}));
    std::vector<int> rows(panel.n);
    for (int i = 0; i < panel.n; ++i)
      rows[i] = static_cast<int>(rng.uniform01() * panel.n) % panel.n;
    try {
      ProxyPanel pb = restrict_rows(panel, rows);
      draws.row(b) = refit(pb).transpose();
    } catch (const Error&) {
      // left as NaN; counted below
    }
  };

  int nthreads = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  nthreads = std::max(1, std::min(nthreads, b_reps));
  if (nthreads == 1) {
    for (int b = 0; b < b_reps; ++b) one(b);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t)
      pool.emplace_back([&]() {
        for (;;) {
          const int b = next.fetch_add(1);
          if (b >= b_reps) return;
          one(b);
        }
      });
    for (auto& th : pool) th.join();
  }

  std::vector<int> ok;
  for (int b = 0; b < b_reps; ++b)
    if (draws.row(b).allFinite()) ok.push_back(b);
  BootstrapResult out;
  out.requested = b_reps;
  out.failures = b_reps - static_cast<int>(ok.size());
  if (static_cast<int>(ok.size()) < std::max(10, b_reps / 2))
    throw InferenceError("bootstrap: too many replicate failures (" +
                         std::to_string(out.failures) + " of " + std::to_string(b_reps) + ")");

  VectorXd mean = VectorXd::Zero(m);
  for (int b : ok) mean += draws.row(b).transpose();
  mean /= static_cast<double>(ok.size());
  MatrixXd cov = MatrixXd::Zero(m, m);
  for (int b : ok) {
    VectorXd d = draws.row(b).transpose() - mean;
    cov.selfadjointView<Eigen::Lower>().rankUpdate(d, 1.0);
  }
  MatrixXd covf = cov.selfadjointView<Eigen::Lower>();
  out.cov = panel.n * covf / std::max<std::size_t>(ok.size() - 1, 1);

  // bias-corrected percentile
  out.ci_lower.resize(m);
  out.ci_upper.resize(m);
  const double zal = norm_ppf((1.0 - level) / 2.0);
  for (int c = 0; c < m; ++c) {
    std::vector<double> xs;
    xs.reserve(ok.size());
    int below = 0;
    for (int b : ok) {
      xs.push_back(draws(b, c));
      if (draws(b, c) < theta_hat[c]) ++below;
    }
    double frac = static_cast<double>(below) / xs.size();
    frac = std::min(std::max(frac, 1.0 / (xs.size() + 1.0)), xs.size() / (xs.size() + 1.0));
    const double z0 = norm_ppf(frac);
    const double lo = norm_cdf(2.0 * z0 + zal);
    const double hi = norm_cdf(2.0 * z0 - zal);
    out.ci_lower[c] = sample_quantile(xs, lo);
    out.ci_upper[c] = sample_quantile(xs, hi);
  }
  return out;
}

}  // namespace meacorr
