#pragma once

#include <optional>
#include <vector>

#include "meacorr/error_model.hpp"
#include "meacorr/moments.hpp"
#include "meacorr/panel.hpp"

namespace meacorr {

// ---------------------------------------------------------------------------
// Flat layout of the stacked parameter vector xi = (raw moments, identified
// parameters). Restricted or user-known eta components are constants and do
// not occupy slots. The estimating-equation rows follow the same layout, so
// the Jacobian of the stacked system is square.
// ---------------------------------------------------------------------------
class XiLayout {
 public:
  XiLayout(int k, int p, int q, bool has_z, const ErrorModelSpec& spec);

  int dim() const { return dim_; }
  int k() const { return k_; }
  int p() const { return p_; }
  int q() const { return q_; }
  bool has_z() const { return has_z_; }
  const ErrorModelSpec& spec() const { return spec_; }

  bool j0_eff(int j) const { return spec_.j0(j); }
  bool j1_eff(int j) const { return spec_.j1(j); }
  // Known constants (restriction value or user override); only valid when the
  // corresponding membership holds.
  VectorXd eta0_known(int j) const;
  VectorXd eta1_known(int j) const;

  // Block offsets into the flat vector.
  int off_mu(int j) const { return off_mu_ + j * p_; }
  int off_sigma(int j, int l) const;    // requires j <= l
  bool sigma_is_vech(int j, int l) const { return j == l; }
  int off_mu_z() const { return off_mu_z_; }
  int off_sigma_zz() const { return off_sigma_zz_; }
  int off_sigma_zj(int j) const { return off_sigma_zj_ + j * q_ * p_; }
  int off_mu_x() const { return off_mu_x_; }
  int off_sigma_xx() const { return off_sigma_xx_; }
  bool eta0_free(int j) const { return !j0_eff(j); }
  bool eta1_free(int j) const { return !j1_eff(j); }
  int off_eta0(int j) const;  // requires eta0_free(j)
  int off_eta1(int j) const;  // requires eta1_free(j)
  int off_m(int j) const { return off_m_ + j * vech_size(p_); }
  int off_sigma_xxj(int j) const { return off_sigma_xxj_ + j * p_ * p_; }
  int off_sigma_zx() const { return off_sigma_zx_; }

  std::string component_name(int idx) const;

 private:
  int k_, p_, q_;
  bool has_z_;
  ErrorModelSpec spec_;
  int off_mu_ = 0, off_sigma_ = 0, off_mu_z_ = -1, off_sigma_zz_ = -1, off_sigma_zj_ = -1;
  int off_mu_x_ = 0, off_sigma_xx_ = 0, off_m_ = 0, off_sigma_xxj_ = 0, off_sigma_zx_ = -1;
  std::vector<int> eta0_off_, eta1_off_;
  std::vector<int> sigma_pair_off_;
  int dim_ = 0;
};

// Read-only decoded view over a flat xi vector. Owns copies of the layout and
// vector, so temporaries are safe to pass.
class XiView {
 public:
  XiView(XiLayout layout, VectorXd xi) : lay_(std::move(layout)), xi_(std::move(xi)) {}

  VectorXd mu(int j) const { return xi_.segment(lay_.off_mu(j), lay_.p()); }
  MatrixXd sigma(int j, int l) const;  // cov(X_j*, X_l*), any order
  VectorXd mu_z() const { return xi_.segment(lay_.off_mu_z(), lay_.q()); }
  MatrixXd sigma_zz() const;
  MatrixXd sigma_zj(int j) const;  // q x p
  VectorXd mu_x() const { return xi_.segment(lay_.off_mu_x(), lay_.p()); }
  MatrixXd sigma_xx() const;
  // Full eta vectors: known constants where restricted, slots otherwise.
  VectorXd eta0(int j) const;
  VectorXd eta1(int j) const;
  MatrixXd m(int j) const;
  MatrixXd sigma_xxj(int j) const;  // cov(X, X_j*), p x p
  MatrixXd sigma_zx() const;        // q x p

  const XiLayout& layout() const { return lay_; }

 private:
  XiLayout lay_;
  VectorXd xi_;
};

// ---------------------------------------------------------------------------
// Identified correction parameters.
// ---------------------------------------------------------------------------
struct CorrectionParams {
  RawMoments raw;
  ErrorModelSpec spec;
  bool has_z = false;

  VectorXd mu_x;
  MatrixXd sigma_xx;
  std::vector<VectorXd> eta0;  // k full vectors (constants included)
  std::vector<VectorXd> eta1;
  std::vector<MatrixXd> m;       // PSD-clipped error covariances
  std::vector<MatrixXd> m_raw;   // unclipped estimating-equation solutions
  std::vector<MatrixXd> sigma_xxj;
  MatrixXd sigma_zx;  // q x p (0 x p without Z)
  VectorXd alpha;     // proxy weights on the simplex (equal by default)
  VectorXd m_clip;    // per-proxy clipped magnitude |min eigenvalue|

  int k() const { return raw.k; }
  int p() const { return raw.p; }
  int q() const { return raw.q; }

  XiLayout layout() const { return XiLayout(raw.k, raw.p, raw.q, has_z, spec); }
  VectorXd pack() const;  // flat xi (uses m_raw for the M blocks)
};

// Implements the identification formulas in their forced evaluation order.
// No-Z path: Sigma_XXj* -> eta1 -> Sigma_XX -> mu_X -> eta0 -> M_j.
// With-Z path: Sigma_ZX -> eta1 -> Sigma_XXj* -> Sigma_XX -> mu_X -> eta0 -> M_j.
// Square roots take the positive elementwise root; negative values under the
// root raise ModelViolationError; singular solves raise IdentificationError.
CorrectionParams identify(const RawMoments& moments, const ErrorModelSpec& spec, bool has_z);

// Stacked per-subject residual (Lemma-1 form with observation-indicator
// gating). At the exact sample solution the mean over subjects is zero.
VectorXd g_residual(const ProxyPanel& panel, int row, const XiView& view);
VectorXd g_mean(const ProxyPanel& panel, const XiLayout& layout, const VectorXd& xi);

// Split form: the moment rows depend on the subject, the identification rows
// do not. g_residual(i) = g_data_rows(i) + g_constraint_rows.
void g_data_rows(const ProxyPanel& panel, int row, const XiView& view, VectorXd& out);
VectorXd g_constraint_rows(const XiView& view);

// Sandwich covariance of sqrt(n)(xi_hat - xi): A^{-1} B A^{-T} with A the
// central-difference Jacobian of the mean residual and B the empirical outer
// product. Throws InferenceError (reporting rank) when A is singular.
MatrixXd sandwich_xi(const ProxyPanel& panel, const CorrectionParams& params);

// Rebuild a CorrectionParams from a flat xi vector (used when stacked systems
// differentiate through xi). M blocks are taken as stored, without clipping;
// alpha defaults to equal weights.
CorrectionParams params_from_xi(const XiLayout& lay, const VectorXd& xi);

}  // namespace meacorr
