#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "meacorr/common.hpp"

namespace meacorr {

// Observed-data panel: outcome, error-free covariates, and k proxy series for
// the latent covariate. Masked proxy entries keep their stored values (useful
// for oracle checks) but must never be read by an estimator. Immutable after
// construction; safe to share across threads.
struct ProxyPanel {
  int n = 0;   // subjects
  int k = 0;   // proxy series
  int p = 0;   // proxy dimension
  int q = 0;   // error-free covariate dimension

  VectorXd y;                     // n
  MatrixXd z;                     // n x q
  std::vector<MatrixXd> proxies;  // k matrices, each n x p (column-major per series)
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> observed;  // n x k

  std::optional<MatrixXd> x_true;  // n x p, generated panels only
  std::vector<std::string> ids;    // optional row ids from CSV

  bool is_observed(int i, int j) const { return observed(i, j); }
  int kappa(int i) const {
    int c = 0;
    for (int j = 0; j < k; ++j) c += observed(i, j);
    return c;
  }

  // Bitmask over proxy series (bit j set when series j observed).
  std::uint32_t pattern_of(int i) const {
    std::uint32_t m = 0;
    for (int j = 0; j < k; ++j)
      if (observed(i, j)) m |= (1u << j);
    return m;
  }

  // Throws DataError when an invariant fails: every row needs at least one
  // observed proxy and all observed entries (plus y, z) must be finite.
  void validate() const;
};

struct PatternInfo {
  std::uint32_t mask;
  std::vector<int> rows;
  double frequency;  // rows.size() / n
};

// Distinct missingness patterns in canonical (ascending mask) order.
std::vector<PatternInfo> patterns_of(const ProxyPanel& panel);

// Restriction to a subset of proxy series (e.g. the iid-only variants).
ProxyPanel restrict_proxies(const ProxyPanel& panel, const std::vector<int>& keep);

// Restriction to a subset of rows, preserving proxy structure.
ProxyPanel restrict_rows(const ProxyPanel& panel, const std::vector<int>& rows);

}  // namespace meacorr
