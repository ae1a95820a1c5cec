#include "meacorr/scenario.hpp"

namespace meacorr {

void ScenarioConfig::validate() const {
  if (p <= 0) throw ConfigError("scenario: p must be positive");
  if (static_cast<int>(x_comps.size()) != p) throw ConfigError("scenario: x_comps size != p");
  for (const auto& xc : x_comps) {
    if (xc.var < 0.0) throw ConfigError("scenario: negative X variance");
    if (static_cast<int>(xc.z_coef.size()) != q() && xc.z_coef.size() != 0)
      throw ConfigError("scenario: z_coef length != q");
  }
  if (proxy_laws.empty()) throw ConfigError("scenario: no proxies");
  for (const auto& law : proxy_laws) {
    if (law.eta0.size() != p || law.eta1.size() != p || law.noise_var.size() != p)
      throw ConfigError("scenario: proxy law vectors must have length p");
    if ((law.noise_var.array() < 0.0).any()) throw ConfigError("scenario: negative noise variance");
    if (law.missing_fraction < 0.0 || law.missing_fraction >= 1.0)
      throw ConfigError("scenario: missing fraction must be in [0,1)");
  }
  if (outcome.theta.size() != 1 + p + q())
    throw ConfigError("scenario: outcome theta length != 1 + p + q");
  if (outcome.family == Family::Linear && outcome.noise_var < 0.0)
    throw ConfigError("scenario: negative outcome noise variance");
  if (outcome.family == Family::LogLinearGamma && outcome.gamma_shape <= 0.0)
    throw ConfigError("scenario: gamma shape must be positive");
}

VectorXd ScenarioConfig::mu_x_true() const {
  VectorXd mu(p);
  for (int c = 0; c < p; ++c) {
    double m = x_comps[c].mean;
    for (int d = 0; d < q(); ++d)
      if (x_comps[c].z_coef.size() > 0) m += x_comps[c].z_coef[d] * z_cols[d].mean();
    mu[c] = m;
  }
  return mu;
}

MatrixXd ScenarioConfig::sigma_xx_true() const {
  MatrixXd s = MatrixXd::Zero(p, p);
  for (int c = 0; c < p; ++c) s(c, c) = x_comps[c].var;
  // shared Z load introduces cross-component covariance
  for (int c = 0; c < p; ++c)
    for (int d = 0; d < p; ++d) {
      if (x_comps[c].z_coef.size() == 0 || x_comps[d].z_coef.size() == 0) continue;
      for (int e = 0; e < q(); ++e)
        s(c, d) += x_comps[c].z_coef[e] * x_comps[d].z_coef[e] * z_cols[e].var();
    }
  return s;
}

MatrixXd ScenarioConfig::sigma_zx_true() const {
  MatrixXd s = MatrixXd::Zero(q(), p);
  for (int c = 0; c < p; ++c) {
    if (x_comps[c].z_coef.size() == 0) continue;
    for (int e = 0; e < q(); ++e) s(e, c) = z_cols[e].var() * x_comps[c].z_coef[e];
  }
  return s;
}

MatrixXd ScenarioConfig::m_true(int j) const {
  const ProxyLaw& law = proxy_laws[j];
  if (law.structure == ErrorStructure::Additive)
    return law.noise_var.asDiagonal().toDenseMatrix();
  // multiplicative: eta1^(d) { E[X X'] o diag(noise_var) } eta1^(d)
  MatrixXd exx = sigma_xx_true() + mu_x_true() * mu_x_true().transpose();
  MatrixXd core = MatrixXd::Zero(p, p);
  for (int c = 0; c < p; ++c) core(c, c) = exx(c, c) * law.noise_var[c];
  return law.eta1.asDiagonal() * core * law.eta1.asDiagonal();
}

ProxyPanel generate_panel(const ScenarioConfig& cfg, int n, std::uint64_t seed) {
  cfg.validate();
  if (n <= 0) throw ConfigError("generate_panel: n must be positive");
  Rng rng(seed);
  const int qd = cfg.q();
  const int p = cfg.p;
  const int k = cfg.k();

  ProxyPanel panel;
  panel.n = n;
  panel.p = p;
  panel.q = qd;
  panel.k = k;

  // Fixed draw order: Z columns, X components, outcome noise, proxy errors,
  // missingness masks. Determinism depends on this order never changing.
  panel.z.resize(n, qd);
  for (int c = 0; c < qd; ++c) {
    const ZColumn& zc = cfg.z_cols[c];
    for (int i = 0; i < n; ++i)
      panel.z(i, c) = (zc.kind == ZColumn::Kind::Bernoulli)
                          ? (rng.bernoulli(zc.a) ? 1.0 : 0.0)
                          : rng.normal(zc.a, std::sqrt(zc.b));
  }

  MatrixXd x(n, p);
  for (int c = 0; c < p; ++c) {
    const XComponent& xc = cfg.x_comps[c];
    const double sd = std::sqrt(xc.var);
    for (int i = 0; i < n; ++i) {
      double m = xc.mean;
      if (xc.z_coef.size() > 0)
        for (int e = 0; e < qd; ++e) m += xc.z_coef[e] * panel.z(i, e);
      x(i, c) = m + sd * rng.normal();
    }
  }
  panel.x_true = x;

  panel.y.resize(n);
  for (int i = 0; i < n; ++i) {
    double eta = cfg.outcome.theta[0];
    for (int c = 0; c < p; ++c) eta += cfg.outcome.theta[1 + c] * x(i, c);
    for (int e = 0; e < qd; ++e) eta += cfg.outcome.theta[1 + p + e] * panel.z(i, e);
    switch (cfg.outcome.family) {
      case Family::Linear:
        panel.y[i] = eta + std::sqrt(cfg.outcome.noise_var) * rng.normal();
        break;
      case Family::LogLinearGamma:
        panel.y[i] = rng.gamma(cfg.outcome.gamma_shape, std::exp(eta) / cfg.outcome.gamma_shape);
        break;
      case Family::Logistic:
        panel.y[i] = rng.bernoulli(expit(eta)) ? 1.0 : 0.0;
        break;
    }
  }

  panel.proxies.assign(k, MatrixXd(n, p));
  for (int j = 0; j < k; ++j) {
    const ProxyLaw& law = cfg.proxy_laws[j];
    for (int c = 0; c < p; ++c) {
      const double v = law.noise_var[c];
      const double half_width = std::sqrt(3.0 * v);  // variance-v uniform
      const double sd = std::sqrt(v);
      for (int i = 0; i < n; ++i) {
        const double e =
            (law.dist == NoiseDist::Uniform) ? rng.uniform(-half_width, half_width) : sd * rng.normal();
        const double base = (law.structure == ErrorStructure::Additive)
                                ? law.eta1[c] * x(i, c) + e
                                : law.eta1[c] * x(i, c) * (1.0 + e);
        panel.proxies[j](i, c) = law.eta0[c] + base;
      }
    }
  }

  // Mask drawn after values (missing completely at random per proxy).
  panel.observed.resize(n, k);
  for (int j = 0; j < k; ++j) {
    const double frac = cfg.proxy_laws[j].missing_fraction;
    for (int i = 0; i < n; ++i) panel.observed(i, j) = !(frac > 0.0 && rng.uniform01() < frac);
  }
  // Guarantee the panel invariant: keep the first proxy when a row lost all.
  for (int i = 0; i < n; ++i)
    if (panel.kappa(i) == 0) panel.observed(i, 0) = true;

  panel.validate();
  return panel;
}

namespace studies {

StudyDesign study1() {
  StudyDesign d;
  ScenarioConfig& cfg = d.cfg;
  cfg.name = "study1";
  cfg.p = 3;
  cfg.n = 2000;
  cfg.x_comps = {{0.0, 1.0, {}}, {3.0, 2.0, {}}, {1.0, 3.0, {}}};
  cfg.outcome.family = Family::Linear;
  cfg.outcome.theta = (VectorXd(4) << 2.0, -1.0, 2.0, 0.5).finished();
  cfg.outcome.noise_var = 1.0;
  auto law = [](std::initializer_list<double> vars, double miss) {
    ProxyLaw l;
    l.structure = ErrorStructure::Additive;
    l.eta0 = VectorXd::Zero(3);
    l.eta1 = VectorXd::Ones(3);
    l.dist = NoiseDist::Normal;
    l.noise_var = VectorXd(3);
    int c = 0;
    for (double v : vars) l.noise_var[c++] = v;
    l.missing_fraction = miss;
    return l;
  };
  cfg.proxy_laws = {law({1.0, 1.0, 1.0}, 0.0), law({1.0, 4.0, 3.0}, 0.5), law({2.0, 2.0, 5.0}, 0.2)};
  d.spec = ErrorModelSpec::all_unbiased(3);
  d.use_z = false;
  d.model = {Family::Linear, 3, 0};
  return d;
}

StudyDesign study2() {
  StudyDesign d;
  ScenarioConfig& cfg = d.cfg;
  cfg.name = "study2";
  cfg.p = 1;
  cfg.n = 2000;
  cfg.z_cols = {{ZColumn::Kind::Bernoulli, 0.3, 0.0}};
  XComponent xc;
  xc.mean = 0.0;
  xc.var = 0.5;
  xc.z_coef = VectorXd::Constant(1, 0.02);
  cfg.x_comps = {xc};
  cfg.outcome.family = Family::LogLinearGamma;
  cfg.outcome.theta = (VectorXd(3) << 2.0, 2.0, -3.0).finished();  // intercept, X, Z
  cfg.outcome.gamma_shape = 1.0;
  ProxyLaw mult;  // X* = X V, V ~ Unif(0.7, 1.3)
  mult.structure = ErrorStructure::Multiplicative;
  mult.eta0 = VectorXd::Zero(1);
  mult.eta1 = VectorXd::Ones(1);
  mult.dist = NoiseDist::Uniform;
  mult.noise_var = VectorXd::Constant(1, 0.03);
  ProxyLaw add;
  add.structure = ErrorStructure::Additive;
  add.eta0 = VectorXd::Zero(1);
  add.eta1 = VectorXd::Ones(1);
  add.dist = NoiseDist::Normal;
  add.noise_var = VectorXd::Constant(1, 1.0);
  ProxyLaw add_miss = add;
  add_miss.missing_fraction = 0.5;
  cfg.proxy_laws = {mult, add, add_miss};
  d.spec = ErrorModelSpec::all_unbiased(3);
  d.spec.proxies[0].structure = ErrorStructure::Multiplicative;
  d.use_z = true;
  d.model = {Family::LogLinearGamma, 1, 1};
  return d;
}

StudyDesign study3() {
  StudyDesign d;
  ScenarioConfig& cfg = d.cfg;
  cfg.name = "study3";
  cfg.p = 1;
  cfg.n = 2000;
  cfg.x_comps = {{3.0, 1.0, {}}};
  cfg.outcome.family = Family::Logistic;
  cfg.outcome.theta = (VectorXd(2) << 0.5, -0.5).finished();
  ProxyLaw p1;
  p1.structure = ErrorStructure::Additive;
  p1.eta0 = VectorXd::Zero(1);
  p1.eta1 = VectorXd::Ones(1);
  p1.dist = NoiseDist::Normal;
  p1.noise_var = VectorXd::Constant(1, 1.0);
  ProxyLaw p2 = p1;
  p2.missing_fraction = 0.8;
  ProxyLaw p3;  // X3* = 0.5 + 0.5 X + Unif(-0.5, 0.5)
  p3.structure = ErrorStructure::Additive;
  p3.eta0 = VectorXd::Constant(1, 0.5);
  p3.eta1 = VectorXd::Constant(1, 0.5);
  p3.dist = NoiseDist::Uniform;
  p3.noise_var = VectorXd::Constant(1, 1.0 / 12.0);
  cfg.proxy_laws = {p1, p2, p3};
  d.spec = ErrorModelSpec::all_unbiased(3);
  d.spec.proxies[2].in_j0 = false;  // proxy 3 unrestricted
  d.spec.proxies[2].in_j1 = false;
  d.use_z = false;
  d.model = {Family::Logistic, 1, 0};
  return d;
}

StudyDesign by_number(int study) {
  switch (study) {
    case 1: return study1();
    case 2: return study2();
    case 3: return study3();
  }
  throw ConfigError("unknown study number: " + std::to_string(study));
}

}  // namespace studies

}  // namespace meacorr
