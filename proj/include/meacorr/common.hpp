#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace meacorr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps ConfigError/ParseError to exit code 2 and the
// rest to exit code 3.
// ---------------------------------------------------------------------------
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct IdentifiabilityError : Error {
  using Error::Error;
};
struct IdentificationError : Error {
  using Error::Error;
};
struct ModelViolationError : Error {
  using Error::Error;
};
struct CalibrationError : Error {
  using Error::Error;
};
struct FitError : Error {
  using Error::Error;
};
struct SeparationError : FitError {
  using FitError::FitError;
};
struct InferenceError : Error {
  using Error::Error;
};
struct EstimationError : Error {
  using Error::Error;
};
struct DiagnosticError : Error {
  using Error::Error;
};
struct NotImplementedError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Random numbers. All draws go through Rng so that a fixed seed gives a fixed
// stream regardless of how the standard library implements its distributions.
// mt19937_64 output is pinned by the standard; the transforms below are ours.
// ---------------------------------------------------------------------------
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stable seed for a substream identified by a list of integer tags.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = splitmix64(base);
  for (auto t : tags) s = splitmix64(s ^ splitmix64(t + 0x632be59bd9b4e019ULL));
  return s;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // Uniform on (0,1); never returns 0 or 1.
  double uniform01() {
    const std::uint64_t bits = eng_();
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
  }
  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  // Box-Muller without caching: two uniforms per normal, deterministic order.
  double normal() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  double normal(double mean, double sd) { return mean + sd * normal(); }

  bool bernoulli(double p) { return uniform01() < p; }

  // Marsaglia-Tsang; shape 1 short-circuits to the exponential.
  double gamma(double shape, double scale) {
    if (shape <= 0.0 || scale <= 0.0) throw ConfigError("gamma draw requires positive parameters");
    if (shape == 1.0) return -std::log(uniform01()) * scale;
    if (shape < 1.0) {
      const double u = uniform01();
      return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform01();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
    }
  }

  std::uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
};

// ---------------------------------------------------------------------------
// Small numeric helpers.
// ---------------------------------------------------------------------------
inline double expit(double u) {
  if (u >= 0.0) {
    const double e = std::exp(-u);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(u);
  return e / (1.0 + e);
}

double norm_ppf(double p);   // Wichura AS241, double precision
double norm_cdf(double x);

// Compensated (Kahan) accumulator so that chunked and sequential reductions
// agree to the last bit.
struct Kahan {
  double sum = 0.0;
  double c = 0.0;
  void add(double x) {
    const double y = x - c;
    const double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
  double value() const { return sum; }
};

// vech (lower triangle, column-major) packing for symmetric matrices.
inline int vech_size(int p) { return p * (p + 1) / 2; }
void vech(const MatrixXd& m, double* out);
MatrixXd unvech(const double* in, int p);
VectorXd vech_vec(const MatrixXd& m);

inline MatrixXd symmetrize(const MatrixXd& a) { return 0.5 * (a + a.transpose()); }

// Symmetric PSD square root via eigendecomposition; negative eigenvalues are
// treated as zero.
MatrixXd psd_sqrt(const MatrixXd& m);

// Clip a symmetric matrix to PSD. Returns the clipped matrix and reports the
// most negative eigenvalue encountered (0 if none).
MatrixXd psd_clip(const MatrixXd& m, double* min_eig);

// Euclidean projection onto the probability simplex.
VectorXd project_simplex(const VectorXd& v);

// Central-difference Jacobian of f (mapping R^n -> R^m) with per-coordinate
// step max(1e-6, 1e-6*|x_i|).
MatrixXd numeric_jacobian(const std::function<VectorXd(const VectorXd&)>& f, const VectorXd& x,
                          int out_dim);

// Quantile of a sample (linear interpolation, as in type-7).
double sample_quantile(std::vector<double> xs, double q);

}  // namespace meacorr
