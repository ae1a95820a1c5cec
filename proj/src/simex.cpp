#include "meacorr/simex.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#include "meacorr/diagnostics.hpp"

namespace meacorr {

void SimexConfig::validate() const {
  const int r = static_cast<int>(lambda_grid.size());
  if (r < 1) throw ConfigError("simex: empty lambda grid");
  if (lambda_grid[0] != 0.0) throw ConfigError("simex: lambda grid must start at 0");
  for (int i = 1; i < r; ++i)
    if (lambda_grid[i] <= lambda_grid[i - 1])
      throw ConfigError("simex: lambda grid must be strictly increasing");
  if (b_reps < 1) throw ConfigError("simex: b_reps must be >= 1");
  if ((extrapolant == ExtrapolantChoice::Quadratic || extrapolant == ExtrapolantChoice::Nonlinear) &&
      r < 3)
    throw ConfigError("simex: quadratic/nonlinear extrapolants need at least 3 grid points");
}

// ---------------------------------------------------------------------------
// Extrapolants
// ---------------------------------------------------------------------------
namespace {

VectorXd poly_ls(const VectorXd& lambdas, const VectorXd& values, int degree) {
  const int r = static_cast<int>(lambdas.size());
  if (r < degree + 1)
    throw ConfigError("extrapolant needs at least " + std::to_string(degree + 1) +
                      " grid points, got " + std::to_string(r));
  MatrixXd design(r, degree + 1);
  for (int i = 0; i < r; ++i) {
    double v = 1.0;
    for (int d = 0; d <= degree; ++d) {
      design(i, d) = v;
      v *= lambdas[i];
    }
  }
  return design.colPivHouseholderQr().solve(values);
}

struct LmResult {
  VectorXd gamma;
  double ssr = std::numeric_limits<double>::infinity();
  bool converged = false;
};

// Levenberg-Marquardt for G(lambda) = a0 + b0/(c0 + lambda).
LmResult lm_nonlinear(const VectorXd& lambdas, const VectorXd& values, double c0_init) {
  const int r = static_cast<int>(lambdas.size());
  const double lmin = lambdas.minCoeff();
  LmResult best;
  if (c0_init + lmin <= 1e-8) return best;

  MatrixXd design(r, 2);
  for (int i = 0; i < r; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = 1.0 / (c0_init + lambdas[i]);
  }
  VectorXd ab = design.colPivHouseholderQr().solve(values);
  if (!ab.allFinite()) return best;
  VectorXd gamma(3);
  gamma << ab[0], ab[1], c0_init;

  auto residuals = [&](const VectorXd& g, VectorXd& res) -> bool {
    for (int i = 0; i < r; ++i) {
      const double den = g[2] + lambdas[i];
      if (std::abs(den) < 1e-10) return false;
      res[i] = values[i] - (g[0] + g[1] / den);
    }
    return true;
  };

  VectorXd res(r);
  if (!residuals(gamma, res)) return best;
  double ssr = res.squaredNorm();
  double mu = 1e-3;
  bool converged = false;
  for (int it = 0; it < 200 && !converged; ++it) {
    MatrixXd jac(r, 3);
    for (int i = 0; i < r; ++i) {
      const double den = gamma[2] + lambdas[i];
      jac(i, 0) = 1.0;
      jac(i, 1) = 1.0 / den;
      jac(i, 2) = -gamma[1] / (den * den);
    }
    MatrixXd jtj = jac.transpose() * jac;
    VectorXd jtr = jac.transpose() * res;
    bool accepted = false;
    for (int tries = 0; tries < 30; ++tries) {
      MatrixXd damped = jtj;
      damped.diagonal() += mu * jtj.diagonal().cwiseMax(1e-12);
      VectorXd step = damped.ldlt().solve(jtr);
      VectorXd cand = gamma + step;
      VectorXd cres(r);
      if (cand.allFinite() && cand[2] + lmin > 1e-8 && residuals(cand, cres)) {
        const double cssr = cres.squaredNorm();
        if (cssr <= ssr) {
          if (ssr - cssr < 1e-15 * (1.0 + ssr) || step.norm() < 1e-13) converged = true;
          gamma = cand;
          res = cres;
          ssr = cssr;
          mu = std::max(mu * 0.3, 1e-12);
          accepted = true;
          break;
        }
      }
      mu *= 4.0;
    }
    if (!accepted) {
      converged = it > 0;
      break;
    }
  }
  best.gamma = gamma;
  best.ssr = ssr;
  best.converged = converged && gamma.allFinite();
  return best;
}

}  // namespace

ExtrapolantFit fit_extrapolant(const VectorXd& lambdas, const VectorXd& values,
                               ExtrapolantFamily family) {
  if (lambdas.size() != values.size()) throw ConfigError("extrapolant: size mismatch");
  ExtrapolantFit fit;
  fit.family = family;
  const int r = static_cast<int>(lambdas.size());

  if (family == ExtrapolantFamily::Linear) {
    fit.gamma = poly_ls(lambdas, values, 1);
  } else if (family == ExtrapolantFamily::Quadratic) {
    fit.gamma = poly_ls(lambdas, values, 2);
  } else {
    VectorXd quad = poly_ls(lambdas, values, 2);
    const double lmax = lambdas.maxCoeff();
    const double lmid = 0.5 * (lambdas.minCoeff() + lmax);
    std::vector<double> starts;
    if (std::abs(quad[2]) > 1e-12) {
      // tangency of the quadratic at the grid midpoint
      const double c0t = -(quad[1] + 2.0 * quad[2] * lmid) / quad[2] - lmid;
      if (std::isfinite(c0t) && c0t + lambdas.minCoeff() > 1e-3) starts.push_back(c0t);
    }
    if (starts.empty()) starts.push_back(2.0 * std::max(lmax, 1e-3));
    for (double f : {0.5, 1.0, 2.0, 4.0}) starts.push_back(f * std::max(lmax, 1e-3));

    LmResult best;
    for (double c0 : starts) {
      LmResult lr = lm_nonlinear(lambdas, values, c0);
      if (lr.converged && lr.ssr < best.ssr) best = lr;
    }
    if (!best.converged) {
      fit.family = ExtrapolantFamily::Quadratic;
      fit.gamma = quad;
      fit.downgraded = true;
    } else {
      fit.gamma = best.gamma;
      fit.finite_at_minus1 = std::abs(best.gamma[2] - 1.0) > 1e-6;
    }
  }
  fit.residuals.resize(r);
  for (int i = 0; i < r; ++i) fit.residuals[i] = values[i] - extrapolant_value(fit, lambdas[i]);
  return fit;
}

double extrapolant_value(const ExtrapolantFit& fit, double lambda) {
  switch (fit.family) {
    case ExtrapolantFamily::Linear: return fit.gamma[0] + fit.gamma[1] * lambda;
    case ExtrapolantFamily::Quadratic:
      return fit.gamma[0] + fit.gamma[1] * lambda + fit.gamma[2] * lambda * lambda;
    case ExtrapolantFamily::Nonlinear: return fit.gamma[0] + fit.gamma[1] / (fit.gamma[2] + lambda);
  }
  return 0.0;
}

double extrapolate(const ExtrapolantFit& fit) {
  if (fit.family == ExtrapolantFamily::Nonlinear &&
      (!fit.finite_at_minus1 || std::abs(fit.gamma[2] - 1.0) <= 1e-6))
    throw EstimationError("nonlinear extrapolant has a near-singular denominator at lambda = -1");
  return extrapolant_value(fit, -1.0);
}

VectorXd extrapolant_gradient(const ExtrapolantFit& fit, double lambda) {
  switch (fit.family) {
    case ExtrapolantFamily::Linear: return (VectorXd(2) << 1.0, lambda).finished();
    case ExtrapolantFamily::Quadratic:
      return (VectorXd(3) << 1.0, lambda, lambda * lambda).finished();
    case ExtrapolantFamily::Nonlinear: {
      const double den = fit.gamma[2] + lambda;
      return (VectorXd(3) << 1.0, 1.0 / den, -fit.gamma[1] / (den * den)).finished();
    }
  }
  return VectorXd();
}

// ---------------------------------------------------------------------------
// Simulation step
// ---------------------------------------------------------------------------
SimexNoise make_noise(std::uint64_t seed, int b, int n, int p, int k) {
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(b), 0x51e3ULL}));
  SimexNoise noise;
  noise.combined.resize(n, p);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < p; ++c) noise.combined(i, c) = rng.normal();
  noise.per_proxy.assign(k, MatrixXd(n, p));
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < p; ++c) noise.per_proxy[j](i, c) = rng.normal();
  return noise;
}

VectorXd pseudo_value(const SimexSystem& sys, int row, double lambda, const VectorXd& nu) {
  VectorXd v = sys.base.row(row).transpose() - sys.eta0;
  if (lambda > 0.0) v += std::sqrt(lambda) * sys.row_scale[row] * (sys.m_half * nu);
  return v.cwiseQuotient(sys.eta1);
}

namespace {

const MatrixXd& noise_slot(const SimexNoise& noise, int slot) {
  return slot < 0 ? noise.combined : noise.per_proxy[slot];
}

std::string mask_label(std::uint32_t mask, int k) {
  std::string s = "{";
  bool first = true;
  for (int j = 0; j < k; ++j)
    if (mask & (1u << j)) {
      if (!first) s += ",";
      s += std::to_string(j + 1);
      first = false;
    }
  return s + "}";
}

std::vector<SimexSystem> build_systems(const ProxyPanel& panel, const CorrectionParams& xi,
                                       const SimexConfig& cfg) {
  const int n = panel.n, p = panel.p, k = panel.k;
  VectorXd alpha = cfg.alpha.size() == k ? cfg.alpha : VectorXd::Constant(k, 1.0 / k);
  std::vector<SimexSystem> systems;

  if (cfg.mode == SimexMode::Estimates) {
    // one system per proxy; subjects missing that proxy are ignored
    for (int j = 0; j < k; ++j) {
      SimexSystem sys;
      sys.label = "proxy " + std::to_string(j + 1);
      sys.noise_slot = j;
      sys.eta0 = xi.eta0[j];
      sys.eta1 = xi.eta1[j];
      sys.m = xi.m[j];
      sys.m_half = psd_sqrt(sys.m);
      sys.row_scale = VectorXd::Ones(n);
      sys.base = panel.proxies[j];
      sys.alpha = VectorXd::Zero(k);
      sys.alpha[j] = 1.0;
      sys.support = {j};
      for (int i = 0; i < n; ++i)
        if (panel.observed(i, j)) sys.rows.push_back(i);
      systems.push_back(std::move(sys));
    }
    return systems;
  }

  // Proxies mode: group subjects by missingness pattern and average within.
  for (const auto& pat : patterns_of(panel)) {
    SimexSystem sys;
    sys.label = "group " + mask_label(pat.mask, k);
    sys.noise_slot = -1;
    sys.rows = pat.rows;
    sys.row_scale = VectorXd::Ones(n);
    VectorXd aw = renormalize_alpha(alpha, pat.mask, k);
    sys.alpha = aw;
    sys.eta0 = VectorXd::Zero(p);
    sys.eta1 = VectorXd::Zero(p);
    MatrixXd mstar = MatrixXd::Zero(p, p);
    sys.base = MatrixXd::Zero(n, p);
    for (int j = 0; j < k; ++j) {
      if (aw[j] == 0.0) continue;
      sys.support.push_back(j);
      sys.eta0 += aw[j] * xi.eta0[j];
      sys.eta1 += aw[j] * xi.eta1[j];
      mstar += aw[j] * aw[j] * xi.m[j];
      for (int i : sys.rows) sys.base.row(i) += aw[j] * panel.proxies[j].row(i);
    }
    if ((sys.eta1.array() <= 0.0).any())
      throw EstimationError("combined eta1 is not positive in SIMEX group " + sys.label);
    sys.m = symmetrize(mstar);
    sys.m_half = psd_sqrt(sys.m);
    systems.push_back(std::move(sys));
  }
  return systems;
}

SimexRun run_grid(const ProxyPanel& panel, const OutcomeModel& model, const SimexConfig& cfg,
                  std::vector<SimexSystem> systems, bool standard) {
  const int rgrid = static_cast<int>(cfg.lambda_grid.size());
  const int m = model.dim();
  const int bb = cfg.b_reps;

  SimexRun run;
  run.cfg = cfg;
  run.model = model;
  run.standard = standard;

  struct SysData {
    VectorXd y;
    MatrixXd z;
    std::vector<int> rows;
  };
  std::vector<SysData> data;
  for (auto& sys : systems) {
    SysData sd;
    sd.rows = sys.rows;
    sd.y.resize(sys.rows.size());
    sd.z.resize(sys.rows.size(), panel.q);
    for (std::size_t ii = 0; ii < sys.rows.size(); ++ii) {
      sd.y[ii] = panel.y[sys.rows[ii]];
      sd.z.row(ii) = panel.z.row(sys.rows[ii]);
    }
    data.push_back(std::move(sd));
  }

  // lambda = 0 fits (no pseudo-noise) anchor the curves and warm-start the rest
  std::vector<VectorXd> theta0(systems.size());
  std::vector<VectorXd> se0(systems.size());
  for (std::size_t s = 0; s < systems.size(); ++s) {
    MatrixXd xp(data[s].rows.size(), panel.p);
    for (std::size_t ii = 0; ii < data[s].rows.size(); ++ii)
      xp.row(ii) =
          pseudo_value(systems[s], data[s].rows[ii], 0.0, VectorXd::Zero(panel.p)).transpose();
    FitResult f0 = solve_m(model, data[s].y, xp, data[s].z);
    theta0[s] = f0.theta;
    MatrixXd v0 = plain_sandwich(model, data[s].y, xp, data[s].z, f0.theta);
    se0[s] = (v0.diagonal() / static_cast<double>(data[s].rows.size())).cwiseMax(0.0).cwiseSqrt();
  }

  // theta_b slabs: [system][grid index] -> m x B
  std::vector<std::vector<MatrixXd>> slab(systems.size());
  for (std::size_t s = 0; s < systems.size(); ++s)
    slab[s].assign(rgrid, MatrixXd::Constant(m, bb, std::numeric_limits<double>::quiet_NaN()));

  auto run_b = [&](int b) {
    SimexNoise noise = make_noise(cfg.seed, b, panel.n, panel.p, panel.k);
    for (std::size_t s = 0; s < systems.size(); ++s) {
      const SimexSystem& sys = systems[s];
      const MatrixXd& nu = noise_slot(noise, sys.noise_slot);
      MatrixXd xp(data[s].rows.size(), panel.p);
      for (int r = 0; r < rgrid; ++r) {
        const double lam = cfg.lambda_grid[r];
        if (lam == 0.0) {
          slab[s][r].col(b) = theta0[s];
          continue;
        }
        for (std::size_t ii = 0; ii < data[s].rows.size(); ++ii) {
          const int i = data[s].rows[ii];
          xp.row(ii) = pseudo_value(sys, i, lam, nu.row(i).transpose()).transpose();
        }
        try {
          FitResult fr = solve_m(model, data[s].y, xp, data[s].z, theta0[s], nullptr);
          slab[s][r].col(b) = fr.theta;
        } catch (const Error&) {
          // leave NaN
        }
      }
    }
  };

  int nthreads = cfg.threads > 0 ? cfg.threads
                                 : static_cast<int>(std::thread::hardware_concurrency());
  nthreads = std::max(1, std::min(nthreads, bb));
  if (nthreads == 1) {
    for (int b = 0; b < bb; ++b) run_b(b);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t)
      pool.emplace_back([&]() {
        for (;;) {
          const int b = next.fetch_add(1);
          if (b >= bb) return;
          run_b(b);
        }
      });
    for (auto& th : pool) th.join();
  }

  for (std::size_t s = 0; s < systems.size(); ++s) {
    SimexSystemRun sr;
    sr.sys = std::move(systems[s]);
    sr.se0 = se0[s];
    for (int r = 0; r < rgrid; ++r) {
      SimexCurvePoint pt;
      pt.lambda = cfg.lambda_grid[r];
      pt.theta_b = slab[s][r];
      VectorXd mean = VectorXd::Zero(m);
      VectorXd sq = VectorXd::Zero(m);
      int ok = 0;
      for (int b = 0; b < bb; ++b) {
        if (!pt.theta_b.col(b).allFinite()) continue;
        ++ok;
        mean += pt.theta_b.col(b);
      }
      pt.failures = bb - ok;
      if (ok == 0)
        throw FitError("SIMEX: every pseudo-fit failed at lambda = " + std::to_string(pt.lambda) +
                       " in " + sr.sys.label);
      mean /= ok;
      for (int b = 0; b < bb; ++b) {
        if (!pt.theta_b.col(b).allFinite()) continue;
        sq += (pt.theta_b.col(b) - mean).cwiseAbs2();
      }
      pt.theta = mean;
      pt.mc_se = ok > 1 ? VectorXd((sq / (ok - 1.0) / ok).cwiseSqrt()) : VectorXd::Zero(m);
      pt.dropped = pt.failures > 0.1 * bb;
      sr.points.push_back(std::move(pt));
    }
    int usable = 0;
    for (const auto& pt : sr.points)
      if (!pt.dropped) ++usable;
    if (usable < 2)
      throw FitError("SIMEX: fewer than 2 usable grid points in " + sr.sys.label);
    run.systems.push_back(std::move(sr));
  }
  return run;
}

}  // namespace

SimexRun simex_curve(const ProxyPanel& panel, const OutcomeModel& model,
                     const CorrectionParams& xi, const SimexConfig& cfg) {
  cfg.validate();
  if (model.p != panel.p || model.q != panel.q)
    throw ConfigError("simex: outcome model dimensions do not match panel");
  return run_grid(panel, model, cfg, build_systems(panel, xi, cfg), false);
}

// Replicate mean plus homoscedastic sqrt(lambda Sigma_U E[1/kappa]) noise;
// one error variance for everyone, as the iid working model dictates.
SimexRun standard_simex_curve(const ProxyPanel& panel, const OutcomeModel& model,
                              const SimexConfig& cfg) {
  cfg.validate();
  if (panel.k < 2) throw ConfigError("standard SIMEX needs at least two replicates");
  StandardRcMoments sm = standard_rc_moments(panel);

  SimexSystem sys;
  sys.label = "replicate-mean";
  sys.noise_slot = -1;
  sys.eta0 = VectorXd::Zero(panel.p);
  sys.eta1 = VectorXd::Ones(panel.p);
  double min_eig = 0.0;
  sys.m = psd_clip(sm.inv_kappa_bar * sm.sigma_u, &min_eig);
  sys.m_half = psd_sqrt(sys.m);
  sys.alpha = VectorXd::Constant(panel.k, 1.0 / panel.k);
  sys.row_scale = VectorXd::Ones(panel.n);
  for (int i = 0; i < panel.n; ++i) sys.rows.push_back(i);
  sys.base = proxy_average(panel, sys.alpha);
  return run_grid(panel, model, cfg, {std::move(sys)}, true);
}

// ---------------------------------------------------------------------------
// Extrapolation and combination
// ---------------------------------------------------------------------------
namespace {

struct ExtrapMap {
  VectorXd row;  // linear functional over the used grid values
};

ExtrapMap extrapolation_row(const ExtrapolantFit& fit, const VectorXd& lambdas) {
  const int r = static_cast<int>(lambdas.size());
  const int np = static_cast<int>(fit.gamma.size());
  MatrixXd s(np, r);
  for (int i = 0; i < r; ++i) s.col(i) = extrapolant_gradient(fit, lambdas[i]);
  MatrixXd omega = s * s.transpose();
  Eigen::FullPivLU<MatrixXd> lu(omega);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) throw InferenceError("singular Omega(Gamma) in SIMEX extrapolation map");
  VectorXd gm1 = extrapolant_gradient(fit, -1.0);
  ExtrapMap map;
  map.row = (gm1.transpose() * lu.inverse() * s).transpose();
  return map;
}

}  // namespace

SimexFit simex_extrapolate(SimexRun run, const std::vector<ExtrapolantChoice>& per_coef_choice) {
  const int m = run.model.dim();
  SimexFit out;
  out.fit.method = run.standard
                       ? "standard-simex"
                       : (run.cfg.mode == SimexMode::Proxies ? "gen-simex-proxies"
                                                             : "gen-simex-estimates");
  const std::size_t nsys = run.systems.size();

  for (std::size_t s = 0; s < nsys; ++s) {
    const SimexSystemRun& sr = run.systems[s];
    SimexSystemFit sf;
    std::vector<int> used;
    for (std::size_t r = 0; r < sr.points.size(); ++r)
      if (!sr.points[r].dropped) used.push_back(static_cast<int>(r));
    VectorXd lambdas(used.size());
    for (std::size_t u = 0; u < used.size(); ++u) {
      lambdas[u] = sr.points[used[u]].lambda;
      sf.used_lambdas.push_back(sr.points[used[u]].lambda);
    }
    sf.theta_simex.resize(m);
    for (int c = 0; c < m; ++c) {
      VectorXd vals(used.size()), ses(used.size());
      for (std::size_t u = 0; u < used.size(); ++u) {
        vals[u] = sr.points[used[u]].theta[c];
        ses[u] = sr.points[used[u]].mc_se[c];
      }
      ExtrapolantChoice choice = run.cfg.extrapolant;
      if (c < static_cast<int>(per_coef_choice.size())) choice = per_coef_choice[c];
      ExtrapolantFamily family = ExtrapolantFamily::Quadratic;
      bool flat = false;
      if (choice == ExtrapolantChoice::Auto) {
        FlatnessReport fr = lambda_flatness(lambdas, vals, ses);
        flat = fr.flat;
        family = flat ? ExtrapolantFamily::Linear : ExtrapolantFamily::Nonlinear;
      } else if (choice == ExtrapolantChoice::Linear) {
        family = ExtrapolantFamily::Linear;
      } else if (choice == ExtrapolantChoice::Nonlinear) {
        family = ExtrapolantFamily::Nonlinear;
      }
      ExtrapolantFit ef = fit_extrapolant(lambdas, vals, family);
      if (ef.family == ExtrapolantFamily::Nonlinear && !ef.finite_at_minus1) {
        ef = fit_extrapolant(lambdas, vals, ExtrapolantFamily::Quadratic);
        ef.downgraded = true;
      }
      if (ef.downgraded)
        out.fit.notes.push_back("coefficient " + std::to_string(c) + " in " + sr.sys.label +
                                ": nonlinear extrapolant downgraded to quadratic");
      sf.flat.push_back(flat);
      sf.theta_simex[c] = extrapolate(ef);
      sf.per_coef.push_back(std::move(ef));
    }
    out.systems.push_back(std::move(sf));
  }

  // Combination weights.
  out.combine_weights = MatrixXd::Zero(nsys, m);
  if (nsys == 1) {
    out.combine_weights.setOnes();
  } else if (run.cfg.mode == SimexMode::Estimates && !run.standard) {
    VectorXd alpha = run.cfg.alpha.size() == static_cast<int>(nsys)
                         ? run.cfg.alpha
                         : VectorXd::Constant(nsys, 1.0 / nsys);
    alpha /= alpha.sum();
    for (std::size_t s = 0; s < nsys; ++s) out.combine_weights.row(s).setConstant(alpha[s]);
  } else {
    // per-group inverse-variance weights; the variance proxy pushes the
    // pseudo-noise and the lambda=0 sampling noise through the extrapolation
    for (int c = 0; c < m; ++c) {
      VectorXd w(nsys);
      for (std::size_t s = 0; s < nsys; ++s) {
        const SimexSystemRun& sr = run.systems[s];
        const SimexSystemFit& sf = out.systems[s];
        VectorXd lambdas(sf.used_lambdas.size());
        for (std::size_t u = 0; u < sf.used_lambdas.size(); ++u) lambdas[u] = sf.used_lambdas[u];
        ExtrapMap em = extrapolation_row(sf.per_coef[c], lambdas);
        double v = 0.0;
        int u = 0;
        for (std::size_t r = 0; r < sr.points.size(); ++r) {
          if (sr.points[r].dropped) continue;
          const double se = sr.points[r].mc_se[c];
          v += em.row[u] * em.row[u] * (se * se + sr.se0[c] * sr.se0[c]);
          ++u;
        }
        w[static_cast<int>(s)] = 1.0 / std::max(v, 1e-300);
      }
      out.combine_weights.col(c) = w / w.sum();
    }
  }

  out.fit.theta.resize(m);
  for (int c = 0; c < m; ++c) {
    double acc = 0.0;
    for (std::size_t s = 0; s < nsys; ++s)
      acc += out.combine_weights(static_cast<int>(s), c) * out.systems[s].theta_simex[c];
    out.fit.theta[c] = acc;
  }
  out.fit.n_used = 0;
  for (const auto& sr : run.systems)
    out.fit.n_used = std::max(out.fit.n_used, static_cast<int>(sr.sys.rows.size()));
  out.run = std::move(run);
  return out;
}

double optimal_pair_weight(double var1, double var2, double cov12) {
  if (std::abs(cov12) < 1e-300) return 0.5;
  const double w = 0.5 + (var1 - var2) / (4.0 * cov12);
  return std::min(1.0, std::max(0.0, w));
}

VectorXd optimal_combine_weights(const MatrixXd& sigma) {
  const int s = static_cast<int>(sigma.rows());
  VectorXd w = VectorXd::Constant(s, 1.0 / s);
  double step = 1.0 / std::max(sigma.norm(), 1e-12);
  double f = w.dot(sigma * w);
  for (int it = 0; it < 500; ++it) {
    VectorXd grad = 2.0 * (sigma * w);
    VectorXd cand = project_simplex(w - step * grad);
    double fc = cand.dot(sigma * cand);
    int bt = 0;
    while (fc > f && bt < 40) {
      step *= 0.5;
      cand = project_simplex(w - step * grad);
      fc = cand.dot(sigma * cand);
      ++bt;
    }
    if ((cand - w).lpNorm<Eigen::Infinity>() < 1e-14) break;
    if (fc <= f) {
      w = cand;
      f = fc;
      step *= 1.5;
    } else {
      break;
    }
  }
  return w;
}

void combine_estimates_optimal(SimexFit& fit, const std::vector<MatrixXd>& per_coef_cov) {
  const int m = fit.run.model.dim();
  const std::size_t nsys = fit.run.systems.size();
  if (per_coef_cov.size() != static_cast<std::size_t>(m)) {
    fit.fit.notes.push_back("optimal combination skipped: per-estimate covariance unavailable");
    return;
  }
  for (int c = 0; c < m; ++c) {
    const MatrixXd& cov = per_coef_cov[c];
    VectorXd w;
    if (nsys == 2) {
      const double w1 = optimal_pair_weight(cov(0, 0), cov(1, 1), cov(0, 1));
      w = (VectorXd(2) << w1, 1.0 - w1).finished();
    } else {
      w = optimal_combine_weights(cov);
    }
    fit.combine_weights.col(c) = w;
    double acc = 0.0;
    for (std::size_t s = 0; s < nsys; ++s) acc += w[static_cast<int>(s)] * fit.systems[s].theta_simex[c];
    fit.fit.theta[c] = acc;
  }
  fit.fit.method += "-optimal";
}

CurveTable aggregate_curve(const SimexFit& fit) {
  const int m = fit.run.model.dim();
  const VectorXd& grid = fit.run.cfg.lambda_grid;
  CurveTable tab;
  tab.coef_names.push_back("intercept");
  for (int c = 0; c < fit.run.model.p; ++c) tab.coef_names.push_back("x" + std::to_string(c + 1));
  for (int c = 0; c < fit.run.model.q; ++c) tab.coef_names.push_back("z" + std::to_string(c + 1));
  tab.lambdas = grid;
  tab.estimate = MatrixXd::Constant(grid.size(), m, std::numeric_limits<double>::quiet_NaN());
  tab.mc_se = tab.estimate;
  for (int r = 0; r < grid.size(); ++r) {
    for (int c = 0; c < m; ++c) {
      double wsum = 0.0, acc = 0.0, var = 0.0;
      for (std::size_t s = 0; s < fit.run.systems.size(); ++s) {
        const auto& pt = fit.run.systems[s].points[r];
        if (pt.dropped) continue;
        const double w = fit.combine_weights(static_cast<int>(s), c);
        wsum += w;
        acc += w * pt.theta[c];
        var += w * w * pt.mc_se[c] * pt.mc_se[c];
      }
      if (wsum > 0.0) {
        tab.estimate(r, c) = acc / wsum;
        tab.mc_se(r, c) = std::sqrt(var) / wsum;
      }
    }
  }
  return tab;
}

// ---------------------------------------------------------------------------
// Theorem-3 sandwich
// ---------------------------------------------------------------------------
namespace {

// d psd_sqrt(M) under a symmetric perturbation dM, via the eigensystem of M.
MatrixXd dsqrt(const Eigen::SelfAdjointEigenSolver<MatrixXd>& es, const MatrixXd& dm) {
  const VectorXd s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const MatrixXd& qmat = es.eigenvectors();
  MatrixXd core = qmat.transpose() * dm * qmat;
  for (int u = 0; u < core.rows(); ++u)
    for (int v1 = 0; v1 < core.cols(); ++v1) {
      const double den = s[u] + s[v1];
      core(u, v1) = den > 1e-12 ? core(u, v1) / den : 0.0;
    }
  return qmat * core * qmat.transpose();
}

}  // namespace

MatrixXd simex_sandwich(const ProxyPanel& panel, const CorrectionParams& xi, SimexFit& fit,
                        std::vector<MatrixXd>* per_coef_system_cov) {
  if (fit.run.standard)
    throw InferenceError("the standard SIMEX baseline has no stacked sandwich; use bootstrap");
  const OutcomeModel& model = fit.run.model;
  const SimexConfig& cfg = fit.run.cfg;
  const int m = model.dim();
  const int n = panel.n;
  const int bb = cfg.b_reps;
  const std::size_t nsys = fit.run.systems.size();

  XiLayout lay = xi.layout();
  const VectorXd xi_flat = xi.pack();
  const int xdim = lay.dim();

  // Stack layout: per system, per used grid point, m coefficients; xi last.
  std::vector<std::vector<int>> block_off(nsys);
  int off = 0;
  for (std::size_t s = 0; s < nsys; ++s) {
    for (std::size_t r = 0; r < fit.run.systems[s].points.size(); ++r) {
      if (fit.run.systems[s].points[r].dropped) {
        block_off[s].push_back(-1);
      } else {
        block_off[s].push_back(off);
        off += m;
      }
    }
  }
  const int tdim = off + xdim;
  const int xi_off = off;

  // Sensitivity columns per system: eta0/eta1 slots and M vech slots of the
  // supporting proxies.
  struct SensCol {
    int xi_index;
    enum Kind { Eta0, Eta1, M } kind;
    int comp;      // component c for eta rows
    MatrixXd dhalf;  // dsqrt for M columns (p x p)
  };
  const int p = panel.p;
  std::vector<std::vector<SensCol>> sens(nsys);
  for (std::size_t s = 0; s < nsys; ++s) {
    const SimexSystem& sys = fit.run.systems[s].sys;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(sys.m);
    for (int j : sys.support) {
      const double aj = sys.alpha[j];
      if (lay.eta0_free(j))
        for (int c = 0; c < p; ++c)
          sens[s].push_back({lay.off_eta0(j) + c, SensCol::Eta0, c, MatrixXd()});
      if (lay.eta1_free(j))
        for (int c = 0; c < p; ++c)
          sens[s].push_back({lay.off_eta1(j) + c, SensCol::Eta1, c, MatrixXd()});
      int idx = 0;
      for (int col = 0; col < p; ++col)
        for (int row = col; row < p; ++row) {
          MatrixXd dm = MatrixXd::Zero(p, p);
          dm(row, col) = aj * aj;
          dm(col, row) = aj * aj;
          sens[s].push_back({lay.off_m(j) + idx, SensCol::M, -1, dsqrt(es, dm)});
          ++idx;
        }
    }
  }

  // Accumulators.
  MatrixXd psi_buf = MatrixXd::Zero(n, off);  // b-averaged scores
  std::vector<std::vector<MatrixXd>> a11(nsys), w_acc(nsys), sj_acc(nsys), s1_acc(nsys);
  for (std::size_t s = 0; s < nsys; ++s) {
    const auto& pts = fit.run.systems[s].points;
    a11[s].assign(pts.size(), MatrixXd::Zero(m, m));
    w_acc[s].assign(pts.size(), MatrixXd::Zero(m, p * p));
    sj_acc[s].assign(pts.size(), MatrixXd::Zero(m, p));
    s1_acc[s].assign(pts.size(), MatrixXd::Zero(m, p));
  }

  VectorXd wrow(m);
  for (int b = 0; b < bb; ++b) {
    SimexNoise noise = make_noise(cfg.seed, b, n, p, panel.k);
    for (std::size_t s = 0; s < nsys; ++s) {
      const SimexSystemRun& sr = fit.run.systems[s];
      const SimexSystem& sys = sr.sys;
      const MatrixXd& nu = noise_slot(noise, sys.noise_slot);
      for (std::size_t r = 0; r < sr.points.size(); ++r) {
        if (sr.points[r].dropped) continue;
        const double lam = sr.points[r].lambda;
        const VectorXd& theta = sr.points[r].theta;
        const VectorXd theta_x = theta.segment(1, p);
        const int boff = block_off[s][r];
        for (int i : sys.rows) {
          VectorXd xh = pseudo_value(sys, i, lam, nu.row(i).transpose());
          wrow[0] = 1.0;
          wrow.segment(1, p) = xh;
          if (model.q > 0) wrow.tail(model.q) = panel.z.row(i).transpose();
          const double eta = wrow.dot(theta);
          const double resid = mean_residual(model, panel.y[i], eta);
          const double dresid = mean_residual_deta(model, panel.y[i], eta);
          psi_buf.row(i).segment(boff, m) += (resid / bb) * wrow.transpose();
          a11[s][r].selfadjointView<Eigen::Lower>().rankUpdate(wrow, dresid);
          // J_psi_x columns: dresid * w * theta_x[c] + resid * e_{1+c}
          MatrixXd& sj = sj_acc[s][r];
          MatrixXd& s1 = s1_acc[s][r];
          MatrixXd& wt = w_acc[s][r];
          for (int c = 0; c < p; ++c) {
            VectorXd jcol = dresid * theta_x[c] * wrow;
            jcol[1 + c] += resid;
            sj.col(c) += jcol;
            s1.col(c) += xh[c] * jcol;
            const double sc = sys.row_scale[i];
            for (int d = 0; d < p; ++d) wt.col(c * p + d) += (sc * nu(i, d)) * jcol;
          }
        }
      }
    }
  }

  // A and B assembly.
  MatrixXd amat = MatrixXd::Zero(tdim, tdim);
  for (std::size_t s = 0; s < nsys; ++s) {
    const SimexSystemRun& sr = fit.run.systems[s];
    const VectorXd eta1inv = sr.sys.eta1.cwiseInverse();
    for (std::size_t r = 0; r < sr.points.size(); ++r) {
      const int boff = block_off[s][r];
      if (boff < 0) continue;
      MatrixXd a11full = a11[s][r].selfadjointView<Eigen::Lower>();
      amat.block(boff, boff, m, m) = a11full / (static_cast<double>(n) * bb);
      const double lam = sr.points[r].lambda;
      for (const SensCol& scn : sens[s]) {
        VectorXd col = VectorXd::Zero(m);
        if (scn.kind == SensCol::Eta0) {
          // find alpha of the owning proxy from the xi index
          // d xhat_c / d eta0j_c = -alpha_j / eta1._c
          // alpha weight recovered below by matching the support proxy
          for (int j : sr.sys.support) {
            if (lay.eta0_free(j) && scn.xi_index >= lay.off_eta0(j) &&
                scn.xi_index < lay.off_eta0(j) + p) {
              col = -(sr.sys.alpha[j] * eta1inv[scn.comp]) * sj_acc[s][r].col(scn.comp);
              break;
            }
          }
        } else if (scn.kind == SensCol::Eta1) {
          for (int j : sr.sys.support) {
            if (lay.eta1_free(j) && scn.xi_index >= lay.off_eta1(j) &&
                scn.xi_index < lay.off_eta1(j) + p) {
              col = -(sr.sys.alpha[j] * eta1inv[scn.comp]) * s1_acc[s][r].col(scn.comp);
              break;
            }
          }
        } else {
          if (lam > 0.0) {
            for (int c = 0; c < p; ++c)
              for (int d = 0; d < p; ++d) {
                const double f = std::sqrt(lam) * eta1inv[c] * scn.dhalf(c, d);
                if (f != 0.0) col += f * w_acc[s][r].col(c * p + d);
              }
          }
        }
        amat.block(boff, xi_off + scn.xi_index, m, 1) += col / (static_cast<double>(n) * bb);
      }
    }
  }
  amat.block(xi_off, xi_off, xdim, xdim) = numeric_jacobian(
      [&](const VectorXd& x) { return g_mean(panel, lay, x); }, xi_flat, xdim);

  MatrixXd bmat = MatrixXd::Zero(tdim, tdim);
  {
    XiView view(lay, xi_flat);
    const VectorXd cons = g_constraint_rows(view);
    VectorXd gi(xdim);
    VectorXd resid(tdim);
    for (int i = 0; i < n; ++i) {
      resid.setZero();
      resid.head(off) = psi_buf.row(i).transpose();
      g_data_rows(panel, i, view, gi);
      resid.tail(xdim) = gi + cons;
      bmat.selfadjointView<Eigen::Lower>().rankUpdate(resid, 1.0);
    }
    MatrixXd bf = bmat.selfadjointView<Eigen::Lower>();
    bmat = bf / n;
  }

  Eigen::FullPivLU<MatrixXd> lu(amat);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible())
    throw InferenceError("singular stacked Jacobian in SIMEX sandwich (rank " +
                         std::to_string(lu.rank()) + " of " + std::to_string(tdim) + ")");
  MatrixXd ainv = lu.inverse();
  MatrixXd vfull = ainv * bmat * ainv.transpose();

  // Delta step through the extrapolants, then the combination.
  MatrixXd pmap = MatrixXd::Zero(static_cast<int>(nsys) * m, tdim);
  for (std::size_t s = 0; s < nsys; ++s) {
    const SimexSystemFit& sf = fit.systems[s];
    VectorXd lambdas(sf.used_lambdas.size());
    for (std::size_t u = 0; u < sf.used_lambdas.size(); ++u) lambdas[u] = sf.used_lambdas[u];
    for (int c = 0; c < m; ++c) {
      ExtrapMap em = extrapolation_row(sf.per_coef[c], lambdas);
      int u = 0;
      for (std::size_t r = 0; r < fit.run.systems[s].points.size(); ++r) {
        const int boff = block_off[s][r];
        if (boff < 0) continue;
        pmap(static_cast<int>(s) * m + c, boff + c) = em.row[u];
        ++u;
      }
    }
  }
  MatrixXd vsys = pmap * vfull * pmap.transpose();  // (S*m) x (S*m)

  if (per_coef_system_cov) {
    per_coef_system_cov->clear();
    for (int c = 0; c < m; ++c) {
      MatrixXd sc(nsys, nsys);
      for (std::size_t s1 = 0; s1 < nsys; ++s1)
        for (std::size_t s2 = 0; s2 < nsys; ++s2)
          sc(static_cast<int>(s1), static_cast<int>(s2)) =
              vsys(static_cast<int>(s1) * m + c, static_cast<int>(s2) * m + c);
      per_coef_system_cov->push_back(sc);
    }
  }

  MatrixXd qstar = MatrixXd::Zero(m, static_cast<int>(nsys) * m);
  for (int c = 0; c < m; ++c)
    for (std::size_t s = 0; s < nsys; ++s)
      qstar(c, static_cast<int>(s) * m + c) = fit.combine_weights(static_cast<int>(s), c);
  MatrixXd cov = symmetrize(qstar * vsys * qstar.transpose());
  fit.fit.cov = cov;
  fit.fit.n_used = n;
  return cov;
}

}  // namespace meacorr
