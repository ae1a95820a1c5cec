#include "meacorr/correction.hpp"

#include <algorithm>

namespace meacorr {

namespace {

MatrixXd safe_inverse(const MatrixXd& m, const char* what) {
  Eigen::FullPivLU<MatrixXd> lu(m);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible())
    throw IdentificationError(std::string("singular matrix in identification: ") + what +
                              " (rank " + std::to_string(lu.rank()) + " of " +
                              std::to_string(m.rows()) + ")");
  return lu.inverse();
}

}  // namespace

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------
XiLayout::XiLayout(int k, int p, int q, bool has_z, const ErrorModelSpec& spec)
    : k_(k), p_(p), q_(q), has_z_(has_z), spec_(spec) {
  if (spec.k() != k) throw ConfigError("spec proxy count does not match panel");
  spec.validate(has_z);
  int off = 0;
  off_mu_ = off;
  off += k * p;
  off_sigma_ = off;
  sigma_pair_off_.assign(k * k, -1);
  for (int j = 0; j < k; ++j)
    for (int l = j; l < k; ++l) {
      sigma_pair_off_[j * k + l] = off;
      off += (j == l) ? vech_size(p) : p * p;
    }
  if (has_z) {
    off_mu_z_ = off;
    off += q;
    off_sigma_zz_ = off;
    off += vech_size(q);
    off_sigma_zj_ = off;
    off += k * q * p;
  }
  off_mu_x_ = off;
  off += p;
  off_sigma_xx_ = off;
  off += vech_size(p);
  eta0_off_.assign(k, -1);
  for (int j = 0; j < k; ++j)
    if (eta0_free(j)) {
      eta0_off_[j] = off;
      off += p;
    }
  eta1_off_.assign(k, -1);
  for (int j = 0; j < k; ++j)
    if (eta1_free(j)) {
      eta1_off_[j] = off;
      off += p;
    }
  off_m_ = off;
  off += k * vech_size(p);
  off_sigma_xxj_ = off;
  off += k * p * p;
  if (has_z) {
    off_sigma_zx_ = off;
    off += q * p;
  }
  dim_ = off;
}

int XiLayout::off_sigma(int j, int l) const {
  if (j > l) throw Error("off_sigma requires j <= l");
  return sigma_pair_off_[j * k_ + l];
}

int XiLayout::off_eta0(int j) const {
  if (eta0_off_[j] < 0) throw Error("eta0 is restricted for this proxy");
  return eta0_off_[j];
}

int XiLayout::off_eta1(int j) const {
  if (eta1_off_[j] < 0) throw Error("eta1 is restricted for this proxy");
  return eta1_off_[j];
}

VectorXd XiLayout::eta0_known(int j) const {
  const auto& pr = spec_.proxies[j];
  if (pr.known_eta0) {
    if (pr.known_eta0->size() != p_) throw ConfigError("known eta0 has wrong length");
    return *pr.known_eta0;
  }
  if (pr.in_j0) return VectorXd::Zero(p_);
  throw Error("eta0 not known for this proxy");
}

VectorXd XiLayout::eta1_known(int j) const {
  const auto& pr = spec_.proxies[j];
  if (pr.known_eta1) {
    if (pr.known_eta1->size() != p_) throw ConfigError("known eta1 has wrong length");
    if ((pr.known_eta1->array() <= 0.0).any())
      throw ConfigError("known eta1 must be elementwise positive");
    return *pr.known_eta1;
  }
  if (pr.in_j1) return VectorXd::Ones(p_);
  throw Error("eta1 not known for this proxy");
}

std::string XiLayout::component_name(int idx) const {
  auto block = [&](const std::string& base, int off, int size) -> std::optional<std::string> {
    if (idx >= off && idx < off + size) return base + "[" + std::to_string(idx - off) + "]";
    return std::nullopt;
  };
  for (int j = 0; j < k_; ++j)
    if (auto s = block("mu_" + std::to_string(j + 1), off_mu(j), p_)) return *s;
  for (int j = 0; j < k_; ++j)
    for (int l = j; l < k_; ++l) {
      const int size = (j == l) ? vech_size(p_) : p_ * p_;
      if (auto s = block("sigma_" + std::to_string(j + 1) + std::to_string(l + 1), off_sigma(j, l),
                         size))
        return *s;
    }
  if (has_z_) {
    if (auto s = block("mu_z", off_mu_z_, q_)) return *s;
    if (auto s = block("sigma_zz", off_sigma_zz_, vech_size(q_))) return *s;
    for (int j = 0; j < k_; ++j)
      if (auto s = block("sigma_z" + std::to_string(j + 1), off_sigma_zj(j), q_ * p_)) return *s;
  }
  if (auto s = block("mu_x", off_mu_x_, p_)) return *s;
  if (auto s = block("sigma_xx", off_sigma_xx_, vech_size(p_))) return *s;
  for (int j = 0; j < k_; ++j) {
    if (eta0_free(j))
      if (auto s = block("eta0_" + std::to_string(j + 1), eta0_off_[j], p_)) return *s;
  }
  for (int j = 0; j < k_; ++j) {
    if (eta1_free(j))
      if (auto s = block("eta1_" + std::to_string(j + 1), eta1_off_[j], p_)) return *s;
  }
  for (int j = 0; j < k_; ++j)
    if (auto s = block("m_" + std::to_string(j + 1), off_m(j), vech_size(p_))) return *s;
  for (int j = 0; j < k_; ++j)
    if (auto s = block("sigma_xx" + std::to_string(j + 1) + "*", off_sigma_xxj(j), p_ * p_))
      return *s;
  if (has_z_)
    if (auto s = block("sigma_zx", off_sigma_zx_, q_ * p_)) return *s;
  return "xi[" + std::to_string(idx) + "]";
}

// ---------------------------------------------------------------------------
// View
// ---------------------------------------------------------------------------
MatrixXd XiView::sigma(int j, int l) const {
  const int p = lay_.p();
  const bool flip = j > l;
  const int a = flip ? l : j, b = flip ? j : l;
  MatrixXd s;
  if (a == b) {
    s = unvech(xi_.data() + lay_.off_sigma(a, b), p);
  } else {
    s = Eigen::Map<const MatrixXd>(xi_.data() + lay_.off_sigma(a, b), p, p);
  }
  return flip ? MatrixXd(s.transpose()) : s;
}

MatrixXd XiView::sigma_zz() const { return unvech(xi_.data() + lay_.off_sigma_zz(), lay_.q()); }

MatrixXd XiView::sigma_zj(int j) const {
  return Eigen::Map<const MatrixXd>(xi_.data() + lay_.off_sigma_zj(j), lay_.q(), lay_.p());
}

MatrixXd XiView::sigma_xx() const { return unvech(xi_.data() + lay_.off_sigma_xx(), lay_.p()); }

VectorXd XiView::eta0(int j) const {
  if (lay_.eta0_free(j)) return xi_.segment(lay_.off_eta0(j), lay_.p());
  return lay_.eta0_known(j);
}

VectorXd XiView::eta1(int j) const {
  if (lay_.eta1_free(j)) return xi_.segment(lay_.off_eta1(j), lay_.p());
  return lay_.eta1_known(j);
}

MatrixXd XiView::m(int j) const { return unvech(xi_.data() + lay_.off_m(j), lay_.p()); }

MatrixXd XiView::sigma_xxj(int j) const {
  return Eigen::Map<const MatrixXd>(xi_.data() + lay_.off_sigma_xxj(j), lay_.p(), lay_.p());
}

MatrixXd XiView::sigma_zx() const {
  return Eigen::Map<const MatrixXd>(xi_.data() + lay_.off_sigma_zx(), lay_.q(), lay_.p());
}

// ---------------------------------------------------------------------------
// Identification formulas, shared verbatim between identify() and the
// constraint rows of g so the sample solution zeroes the residuals exactly.
// ---------------------------------------------------------------------------
namespace formulas {

// No-Z: average of eta1-normalized cross-covariances over J1-effective peers.
MatrixXd sigma_xxj_noz(const XiView& v, int j) {
  const XiLayout& lay = v.layout();
  MatrixXd acc = MatrixXd::Zero(lay.p(), lay.p());
  int cnt = 0;
  for (int l = 0; l < lay.k(); ++l) {
    if (l == j || !lay.j1_eff(l)) continue;
    ++cnt;
    acc += lay.eta1_known(l).cwiseInverse().asDiagonal() * v.sigma(l, j);
  }
  if (cnt == 0)
    throw IdentificationError("no J1 peer available for Sigma_XXj* of proxy " +
                              std::to_string(j + 1));
  return acc / cnt;
}

VectorXd eta1_noz(const XiView& v, int j) {
  const XiLayout& lay = v.layout();
  MatrixXd acc = MatrixXd::Zero(lay.p(), lay.p());
  int cnt = 0;
  for (int l = 0; l < lay.k(); ++l) {
    if (l == j) continue;
    ++cnt;
    acc += v.sigma(j, l) * safe_inverse(v.sigma_xxj(l), "Sigma_XX_l*");
  }
  return (acc / cnt).diagonal();
}

MatrixXd sigma_zx(const XiView& v) {
  const XiLayout& lay = v.layout();
  MatrixXd acc = MatrixXd::Zero(lay.q(), lay.p());
  int cnt = 0;
  for (int j = 0; j < lay.k(); ++j) {
    if (!lay.j1_eff(j)) continue;
    ++cnt;
    acc += v.sigma_zj(j) * lay.eta1_known(j).cwiseInverse().asDiagonal();
  }
  return acc / cnt;
}

VectorXd eta1_z(const XiView& v, int j) {
  MatrixXd szx = v.sigma_zx();
  MatrixXd a = szx.transpose() * szx;  // Sigma_XZ Sigma_ZX
  MatrixXd b = v.sigma_zj(j).transpose() * v.sigma_zj(j);
  VectorXd d = (safe_inverse(a, "Sigma_XZ Sigma_ZX") * b).diagonal();
  if ((d.array() < 0.0).any())
    throw ModelViolationError("negative value under the eta1 square root for proxy " +
                              std::to_string(j + 1));
  return d.cwiseSqrt();  // positive elementwise root
}

MatrixXd sigma_xxj_z(const XiView& v, int j) {
  const XiLayout& lay = v.layout();
  MatrixXd acc = MatrixXd::Zero(lay.p(), lay.p());
  int cnt = 0;
  for (int l = 0; l < lay.k(); ++l) {
    if (l == j) continue;
    ++cnt;
    acc += v.eta1(l).cwiseInverse().asDiagonal() * v.sigma(l, j);
  }
  return acc / cnt;
}

MatrixXd sigma_xxj(const XiView& v, int j) {
  return v.layout().has_z() ? sigma_xxj_z(v, j) : sigma_xxj_noz(v, j);
}

VectorXd eta1(const XiView& v, int j) {
  return v.layout().has_z() ? eta1_z(v, j) : eta1_noz(v, j);
}

// Sigma_XXj* = Sigma_XX eta1^(d); un-scaling multiplies the inverse on the
// right. Symmetrized because finite-sample estimates are not exactly
// symmetric.
MatrixXd sigma_xx(const XiView& v) {
  const XiLayout& lay = v.layout();
  MatrixXd acc = MatrixXd::Zero(lay.p(), lay.p());
  for (int j = 0; j < lay.k(); ++j)
    acc += v.sigma_xxj(j) * v.eta1(j).cwiseInverse().asDiagonal();
  return symmetrize(acc / lay.k());
}

VectorXd mu_x(const XiView& v) {
  const XiLayout& lay = v.layout();
  VectorXd acc = VectorXd::Zero(lay.p());
  int cnt = 0;
  for (int j = 0; j < lay.k(); ++j) {
    if (!lay.j0_eff(j)) continue;
    ++cnt;
    acc += v.eta1(j).cwiseInverse().cwiseProduct(v.mu(j) - lay.eta0_known(j));
  }
  return acc / cnt;
}

VectorXd eta0(const XiView& v, int j) { return v.mu(j) - v.eta1(j).cwiseProduct(v.mu_x()); }

MatrixXd m(const XiView& v, int j) {
  return v.sigma(j, j) -
         v.eta1(j).asDiagonal() * v.sigma_xx() * v.eta1(j).asDiagonal().toDenseMatrix();
}

}  // namespace formulas

// ---------------------------------------------------------------------------
// identify
// ---------------------------------------------------------------------------
namespace {

void pack_raw(const RawMoments& rm, const XiLayout& lay, VectorXd& xi) {
  const int p = rm.p, q = rm.q;
  for (int j = 0; j < rm.k; ++j) xi.segment(lay.off_mu(j), p) = rm.mu[j];
  for (int j = 0; j < rm.k; ++j)
    for (int l = j; l < rm.k; ++l) {
      if (j == l)
        vech(rm.sigma[j][j], xi.data() + lay.off_sigma(j, j));
      else
        Eigen::Map<MatrixXd>(xi.data() + lay.off_sigma(j, l), p, p) = rm.sigma[j][l];
    }
  if (lay.has_z()) {
    xi.segment(lay.off_mu_z(), q) = rm.mu_z;
    vech(rm.sigma_zz, xi.data() + lay.off_sigma_zz());
    for (int j = 0; j < rm.k; ++j)
      Eigen::Map<MatrixXd>(xi.data() + lay.off_sigma_zj(j), q, p) = rm.sigma_zj[j];
  }
}

}  // namespace

VectorXd CorrectionParams::pack() const {
  XiLayout lay = layout();
  VectorXd xi = VectorXd::Zero(lay.dim());
  pack_raw(raw, lay, xi);
  xi.segment(lay.off_mu_x(), raw.p) = mu_x;
  vech(sigma_xx, xi.data() + lay.off_sigma_xx());
  for (int j = 0; j < raw.k; ++j) {
    if (lay.eta0_free(j)) xi.segment(lay.off_eta0(j), raw.p) = eta0[j];
    if (lay.eta1_free(j)) xi.segment(lay.off_eta1(j), raw.p) = eta1[j];
    vech(m_raw[j], xi.data() + lay.off_m(j));
    Eigen::Map<MatrixXd>(xi.data() + lay.off_sigma_xxj(j), raw.p, raw.p) = sigma_xxj[j];
  }
  if (lay.has_z()) Eigen::Map<MatrixXd>(xi.data() + lay.off_sigma_zx(), raw.q, raw.p) = sigma_zx;
  return xi;
}

CorrectionParams identify(const RawMoments& rm, const ErrorModelSpec& spec, bool has_z) {
  if (has_z && rm.q == 0) throw ConfigError("identify: has_z requested but panel has no Z");
  XiLayout lay(rm.k, rm.p, rm.q, has_z, spec);
  VectorXd xi = VectorXd::Zero(lay.dim());
  pack_raw(rm, lay, xi);
  const int p = rm.p;
  // XiView snapshots its vector, so refresh it after each evaluation stage.
  auto fresh = [&]() { return XiView(lay, xi); };

  if (!has_z) {
    XiView v = fresh();
    for (int j = 0; j < rm.k; ++j)
      Eigen::Map<MatrixXd>(xi.data() + lay.off_sigma_xxj(j), p, p) = formulas::sigma_xxj_noz(v, j);
    v = fresh();
    for (int j = 0; j < rm.k; ++j)
      if (lay.eta1_free(j)) xi.segment(lay.off_eta1(j), p) = formulas::eta1_noz(v, j);
  } else {
    XiView v = fresh();
    Eigen::Map<MatrixXd>(xi.data() + lay.off_sigma_zx(), rm.q, p) = formulas::sigma_zx(v);
    v = fresh();
    for (int j = 0; j < rm.k; ++j)
      if (lay.eta1_free(j)) xi.segment(lay.off_eta1(j), p) = formulas::eta1_z(v, j);
    v = fresh();
    for (int j = 0; j < rm.k; ++j)
      Eigen::Map<MatrixXd>(xi.data() + lay.off_sigma_xxj(j), p, p) = formulas::sigma_xxj_z(v, j);
  }
  {
    XiView v = fresh();
    vech(formulas::sigma_xx(v), xi.data() + lay.off_sigma_xx());
  }
  {
    XiView v = fresh();
    xi.segment(lay.off_mu_x(), p) = formulas::mu_x(v);
  }
  {
    XiView v = fresh();
    for (int j = 0; j < rm.k; ++j)
      if (lay.eta0_free(j)) xi.segment(lay.off_eta0(j), p) = formulas::eta0(v, j);
    for (int j = 0; j < rm.k; ++j) vech(formulas::m(v, j), xi.data() + lay.off_m(j));
  }
  XiView v = fresh();

  CorrectionParams out;
  out.raw = rm;
  out.spec = spec;
  out.has_z = has_z;
  out.mu_x = v.mu_x();
  out.sigma_xx = v.sigma_xx();
  out.sigma_zx = has_z ? v.sigma_zx() : MatrixXd::Zero(0, p);
  out.alpha = VectorXd::Constant(rm.k, 1.0 / rm.k);
  out.m_clip = VectorXd::Zero(rm.k);
  for (int j = 0; j < rm.k; ++j) {
    out.eta0.push_back(v.eta0(j));
    out.eta1.push_back(v.eta1(j));
    if ((out.eta1[j].array() <= 0.0).any())
      throw ModelViolationError("estimated eta1 is not positive for proxy " +
                                std::to_string(j + 1));
    out.sigma_xxj.push_back(v.sigma_xxj(j));
    MatrixXd mj = v.m(j);
    out.m_raw.push_back(symmetrize(mj));
    double min_eig = 0.0;
    MatrixXd clipped = psd_clip(mj, &min_eig);
    if (min_eig < 0.0) {
      // hard failure at -0.1 trace; the proxy-variance term keeps the rule
      // usable when the true error variance is near zero and the estimate is
      // a small sampling-noise negative
      const double scale = std::max(mj.trace(), 0.0) + std::abs(v.sigma(j, j).trace());
      if (min_eig < -0.1 * scale)
        throw ModelViolationError("error covariance of proxy " + std::to_string(j + 1) +
                                  " is far from PSD (min eigenvalue " + std::to_string(min_eig) +
                                  ")");
      out.m_clip[j] = -min_eig;
    }
    out.m.push_back(clipped);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stacked residual
// ---------------------------------------------------------------------------
void g_data_rows(const ProxyPanel& panel, int i, const XiView& v, VectorXd& g) {
  const XiLayout& lay = v.layout();
  const int k = lay.k(), p = lay.p(), q = lay.q();
  g.setZero();

  for (int j = 0; j < k; ++j) {
    if (!panel.observed(i, j)) continue;
    g.segment(lay.off_mu(j), p) = panel.proxies[j].row(i).transpose() - v.mu(j);
  }
  for (int j = 0; j < k; ++j) {
    if (!panel.observed(i, j)) continue;
    VectorXd dj = panel.proxies[j].row(i).transpose() - v.mu(j);
    for (int l = j; l < k; ++l) {
      if (!panel.observed(i, l)) continue;
      VectorXd dl = panel.proxies[l].row(i).transpose() - v.mu(l);
      MatrixXd outer = dj * dl.transpose();
      if (j == l) {
        MatrixXd resid = outer - v.sigma(j, j);
        vech(resid, g.data() + lay.off_sigma(j, j));
      } else {
        Eigen::Map<MatrixXd>(g.data() + lay.off_sigma(j, l), p, p) = outer - v.sigma(j, l);
      }
    }
  }
  if (lay.has_z()) {
    VectorXd dz = panel.z.row(i).transpose() - v.mu_z();
    g.segment(lay.off_mu_z(), q) = dz;
    MatrixXd zz = dz * dz.transpose() - v.sigma_zz();
    vech(zz, g.data() + lay.off_sigma_zz());
    for (int j = 0; j < k; ++j) {
      if (!panel.observed(i, j)) continue;
      VectorXd dj = panel.proxies[j].row(i).transpose() - v.mu(j);
      Eigen::Map<MatrixXd>(g.data() + lay.off_sigma_zj(j), q, p) =
          dz * dj.transpose() - v.sigma_zj(j);
    }
  }
}

VectorXd g_constraint_rows(const XiView& v) {
  const XiLayout& lay = v.layout();
  const int k = lay.k(), p = lay.p(), q = lay.q();
  VectorXd g = VectorXd::Zero(lay.dim());
  g.segment(lay.off_mu_x(), p) = formulas::mu_x(v) - v.mu_x();
  vech(MatrixXd(formulas::sigma_xx(v) - v.sigma_xx()), g.data() + lay.off_sigma_xx());
  for (int j = 0; j < k; ++j) {
    if (lay.eta0_free(j))
      g.segment(lay.off_eta0(j), p) = formulas::eta0(v, j) - v.eta0(j);
    if (lay.eta1_free(j))
      g.segment(lay.off_eta1(j), p) = formulas::eta1(v, j) - v.eta1(j);
    vech(MatrixXd(formulas::m(v, j) - v.m(j)), g.data() + lay.off_m(j));
    Eigen::Map<MatrixXd>(g.data() + lay.off_sigma_xxj(j), p, p) =
        formulas::sigma_xxj(v, j) - v.sigma_xxj(j);
  }
  if (lay.has_z())
    Eigen::Map<MatrixXd>(g.data() + lay.off_sigma_zx(), q, p) = formulas::sigma_zx(v) - v.sigma_zx();
  return g;
}

VectorXd g_residual(const ProxyPanel& panel, int i, const XiView& v) {
  VectorXd g(v.layout().dim());
  g_data_rows(panel, i, v, g);
  return g + g_constraint_rows(v);
}

VectorXd g_mean(const ProxyPanel& panel, const XiLayout& lay, const VectorXd& xi) {
  XiView v(lay, xi);
  VectorXd acc = VectorXd::Zero(lay.dim());
  VectorXd row(lay.dim());
  for (int i = 0; i < panel.n; ++i) {
    g_data_rows(panel, i, v, row);
    acc += row;
  }
  return acc / panel.n + g_constraint_rows(v);
}

MatrixXd sandwich_xi(const ProxyPanel& panel, const CorrectionParams& params) {
  XiLayout lay = params.layout();
  VectorXd xi = params.pack();
  const int d = lay.dim();

  MatrixXd a = numeric_jacobian(
      [&](const VectorXd& x) { return g_mean(panel, lay, x); }, xi, d);

  MatrixXd b = MatrixXd::Zero(d, d);
  XiView v(lay, xi);
  const VectorXd cons = g_constraint_rows(v);
  VectorXd g(d);
  for (int i = 0; i < panel.n; ++i) {
    g_data_rows(panel, i, v, g);
    g += cons;
    b.selfadjointView<Eigen::Lower>().rankUpdate(g, 1.0);
  }
  MatrixXd bf = b.selfadjointView<Eigen::Lower>();
  bf /= panel.n;

  Eigen::FullPivLU<MatrixXd> lu(a);
  lu.setThreshold(1e-10);
  if (!lu.isInvertible())
    throw InferenceError("singular A matrix in xi sandwich (rank " + std::to_string(lu.rank()) +
                         " of " + std::to_string(d) + ")");
  MatrixXd ainv = lu.inverse();
  return symmetrize(ainv * bf * ainv.transpose());
}

CorrectionParams params_from_xi(const XiLayout& lay, const VectorXd& xi) {
  XiView v(lay, xi);
  const int k = lay.k(), p = lay.p(), q = lay.q();
  CorrectionParams out;
  out.spec = lay.spec();
  out.has_z = lay.has_z();
  out.raw.k = k;
  out.raw.p = p;
  out.raw.q = lay.has_z() ? q : 0;
  out.raw.n = 0;
  out.raw.n_pair = Eigen::MatrixXi::Zero(k, k);
  out.raw.n_obs = Eigen::VectorXi::Zero(k);
  out.raw.sigma.assign(k, std::vector<MatrixXd>(k));
  for (int j = 0; j < k; ++j) {
    out.raw.mu.push_back(v.mu(j));
    for (int l = 0; l < k; ++l) out.raw.sigma[j][l] = v.sigma(j, l);
  }
  if (lay.has_z()) {
    out.raw.mu_z = v.mu_z();
    out.raw.sigma_zz = v.sigma_zz();
    for (int j = 0; j < k; ++j) out.raw.sigma_zj.push_back(v.sigma_zj(j));
    out.sigma_zx = v.sigma_zx();
  } else {
    out.raw.mu_z = VectorXd::Zero(0);
    out.raw.sigma_zz = MatrixXd::Zero(0, 0);
    out.raw.sigma_zj.assign(k, MatrixXd::Zero(0, p));
    out.sigma_zx = MatrixXd::Zero(0, p);
  }
  out.mu_x = v.mu_x();
  out.sigma_xx = v.sigma_xx();
  for (int j = 0; j < k; ++j) {
    out.eta0.push_back(v.eta0(j));
    out.eta1.push_back(v.eta1(j));
    out.m.push_back(v.m(j));
    out.m_raw.push_back(v.m(j));
    out.sigma_xxj.push_back(v.sigma_xxj(j));
  }
  out.alpha = VectorXd::Constant(k, 1.0 / k);
  out.m_clip = VectorXd::Zero(k);
  return out;
}

}  // namespace meacorr
