#include "meacorr/common.hpp"

#include <algorithm>

namespace meacorr {

// AS241 (Wichura), double-precision inverse normal CDF.
double norm_ppf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error("norm_ppf requires p in (0,1)");
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r +
                45921.953931549871457) *
                   r +
               13731.693765509461125) *
                  r +
              1971.5909503065514427) *
                 r +
             133.14166789178437745) *
                r +
            3.387132872796366608) /
           (((((((5226.495278852545703 * r + 28729.085735721942674) * r + 39307.89580009271061) * r +
                21213.794301586595867) *
                   r +
               5394.1960214247511077) *
                  r +
              687.1870074920579083) *
                 r +
             42.313330701600911252) *
                r +
            1.0);
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r +
               1.27045825245236838258) *
                  r +
              3.64784832476320460504) *
                 r +
             5.7694972214606914055) *
                r +
            4.6303378461565452959) *
               r +
           1.42343711074968357734) /
          (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r +
               0.14810397642748007459) *
                  r +
              0.68976733498510000455) *
                 r +
             1.6763848301838038494) *
                r +
            2.05319162663775882187) *
               r +
           1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r +
               0.026532189526576123093) *
                  r +
              0.29656057182850489123) *
                 r +
             1.7848265399172913358) *
                r +
            5.4637849111641143699) *
               r +
           6.6579046435011037772) /
          (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
               7.868691311456132591e-4) *
                  r +
              0.0148753612908506148525) *
                 r +
             0.13692988092273580531) *
                r +
            0.59983220655588793769) *
               r +
           1.0);
  }
  return (q < 0.0) ? -val : val;
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

void vech(const MatrixXd& m, double* out) {
  const int p = static_cast<int>(m.rows());
  int idx = 0;
  for (int j = 0; j < p; ++j)
    for (int i = j; i < p; ++i) out[idx++] = m(i, j);
}

VectorXd vech_vec(const MatrixXd& m) {
  VectorXd v(vech_size(static_cast<int>(m.rows())));
  vech(m, v.data());
  return v;
}

MatrixXd unvech(const double* in, int p) {
  MatrixXd m(p, p);
  int idx = 0;
  for (int j = 0; j < p; ++j)
    for (int i = j; i < p; ++i) {
      m(i, j) = in[idx];
      m(j, i) = in[idx];
      ++idx;
    }
  return m;
}

MatrixXd psd_sqrt(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(m));
  if (es.info() != Eigen::Success) throw Error("eigendecomposition failed in psd_sqrt");
  VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

MatrixXd psd_clip(const MatrixXd& m, double* min_eig) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(m));
  if (es.info() != Eigen::Success) throw Error("eigendecomposition failed in psd_clip");
  if (min_eig) *min_eig = es.eigenvalues().minCoeff();
  if (es.eigenvalues().minCoeff() >= 0.0) return symmetrize(m);
  VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

VectorXd project_simplex(const VectorXd& v) {
  const int n = static_cast<int>(v.size());
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0;
  double theta = 0.0;
  int rho = 0;
  for (int i = 0; i < n; ++i) {
    css += u[i];
    const double t = (css - 1.0) / (i + 1);
    if (u[i] - t > 0.0) {
      rho = i + 1;
      theta = t;
    }
  }
  (void)rho;
  VectorXd out(n);
  for (int i = 0; i < n; ++i) out[i] = std::max(v[i] - theta, 0.0);
  return out;
}

MatrixXd numeric_jacobian(const std::function<VectorXd(const VectorXd&)>& f, const VectorXd& x,
                          int out_dim) {
  const int n = static_cast<int>(x.size());
  MatrixXd jac(out_dim, n);
  VectorXd xp = x;
  for (int i = 0; i < n; ++i) {
    const double h = std::max(1e-6, 1e-6 * std::abs(x[i]));
    xp[i] = x[i] + h;
    VectorXd fp = f(xp);
    xp[i] = x[i] - h;
    VectorXd fm = f(xp);
    xp[i] = x[i];
    jac.col(i) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

double sample_quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw Error("quantile of empty sample");
  std::sort(xs.begin(), xs.end());
  const double h = (xs.size() - 1) * std::min(std::max(q, 0.0), 1.0);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (h - lo) * (xs[hi] - xs[lo]);
}

}  // namespace meacorr
