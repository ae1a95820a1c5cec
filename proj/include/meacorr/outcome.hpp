#pragma once

#include <string>
#include <vector>

#include "meacorr/common.hpp"
#include "meacorr/panel.hpp"

namespace meacorr {

enum class Family { Linear, LogLinearGamma, Logistic };

std::string family_name(Family f);
Family family_from_name(const std::string& s);

// Outcome estimating function Psi shared by every correction method.
// Coefficient layout: intercept, X block (p), Z block (q).
struct OutcomeModel {
  Family family = Family::Linear;
  int p = 1;
  int q = 0;
  int dim() const { return 1 + p + q; }
};

struct FitResult {
  VectorXd theta;
  MatrixXd cov;  // covariance of sqrt(n)(theta_hat - theta); empty when not computed
  std::string method;
  int iterations = 0;
  double score_norm = 0.0;
  int n_used = 0;
  std::vector<std::string> notes;

  // CI bounds on theta scale (filled by bootstrap paths).
  VectorXd ci_lower, ci_upper;

  bool has_cov() const { return cov.size() > 0; }
  VectorXd se() const {
    if (!has_cov() || n_used <= 0) return VectorXd();
    return (cov.diagonal() / static_cast<double>(n_used)).cwiseMax(0.0).cwiseSqrt();
  }
};

// Mean-model residual: linear y - eta, logistic y - expit(eta), gamma quasi
// score y - exp(eta), each multiplied by (1, x, z).
VectorXd psi(const OutcomeModel& model, double y, const VectorXd& x, const VectorXd& z,
             const VectorXd& theta);

double mean_residual(const OutcomeModel& model, double y, double eta);
// d residual / d eta (analytic).
double mean_residual_deta(const OutcomeModel& model, double y, double eta);

// Newton-Raphson with step halving on the mean estimating equation.
// `weights` (optional) gates or reweights subjects; the linear family uses the
// closed-form least-squares solution. Stops at ||U||_inf <= 1e-9, max 100
// iterations.
FitResult solve_m(const OutcomeModel& model, const VectorXd& y, const MatrixXd& x,
                  const MatrixXd& z, const VectorXd& theta0, const VectorXd* weights = nullptr);

// Convenience: default start (zeros; linear uses the closed form directly).
FitResult solve_m(const OutcomeModel& model, const VectorXd& y, const MatrixXd& x,
                  const MatrixXd& z);

// Mean score n^{-1} sum_i w_i psi_i(theta) and its Jacobian.
VectorXd score_mean(const OutcomeModel& model, const VectorXd& y, const MatrixXd& x,
                    const MatrixXd& z, const VectorXd& theta, const VectorXd* weights = nullptr);
MatrixXd score_jacobian(const OutcomeModel& model, const VectorXd& y, const MatrixXd& x,
                        const MatrixXd& z, const VectorXd& theta,
                        const VectorXd* weights = nullptr);

// Plain sandwich for an M-estimate that ignores any first-stage uncertainty.
MatrixXd plain_sandwich(const OutcomeModel& model, const VectorXd& y, const MatrixXd& x,
                        const MatrixXd& z, const VectorXd& theta,
                        const VectorXd* weights = nullptr);

// Weighted per-pattern proxy average substituted for X, then solve_m.
FitResult naive_fit(const ProxyPanel& panel, const OutcomeModel& model, const VectorXd& weights);
FitResult naive_fit(const ProxyPanel& panel, const OutcomeModel& model);

// Per-pattern weighted proxy average (weights renormalized over observed
// series; masked entries never read).
MatrixXd proxy_average(const ProxyPanel& panel, const VectorXd& weights);

}  // namespace meacorr
