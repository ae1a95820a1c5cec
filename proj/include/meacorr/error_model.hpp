#pragma once

#include <optional>
#include <string>
#include <vector>

#include "meacorr/common.hpp"

namespace meacorr {

enum class ErrorStructure { Additive, Multiplicative };

// Per-proxy error-model assumptions used for identification.
//
// in_j0:  eta0_j = 0 is imposed.
// in_j1:  eta1_j = 1 is imposed.
// known_eta0/known_eta1: user-supplied constants. A proxy with both etas known
// behaves like an unbiased proxy after the affine pre-transform
// (x* - eta0)/eta1, so known values strengthen the identifiability sets.
struct ProxySpec {
  ErrorStructure structure = ErrorStructure::Additive;
  bool in_j0 = false;
  bool in_j1 = false;
  std::optional<VectorXd> known_eta0;
  std::optional<VectorXd> known_eta1;
};

struct ErrorModelSpec {
  std::vector<ProxySpec> proxies;

  int k() const { return static_cast<int>(proxies.size()); }

  // Effective identifiability sets (restrictions or known constants).
  bool j0(int j) const { return proxies[j].in_j0 || proxies[j].known_eta0.has_value(); }
  bool j1(int j) const { return proxies[j].in_j1 || proxies[j].known_eta1.has_value(); }

  std::vector<int> j0_set() const;
  std::vector<int> j1_set() const;

  // |J0| >= 1 always; |J1| > 1 without error-free covariates, >= 1 with them.
  void validate(bool has_z) const;

  static ErrorModelSpec all_unbiased(int k, ErrorStructure s = ErrorStructure::Additive);
};

}  // namespace meacorr
