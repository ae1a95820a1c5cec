#include "meacorr/error_model.hpp"

namespace meacorr {

std::vector<int> ErrorModelSpec::j0_set() const {
  std::vector<int> out;
  for (int j = 0; j < k(); ++j)
    if (j0(j)) out.push_back(j);
  return out;
}

std::vector<int> ErrorModelSpec::j1_set() const {
  std::vector<int> out;
  for (int j = 0; j < k(); ++j)
    if (j1(j)) out.push_back(j);
  return out;
}

void ErrorModelSpec::validate(bool has_z) const {
  if (proxies.empty()) throw ConfigError("error model spec has no proxies");
  const int n0 = static_cast<int>(j0_set().size());
  const int n1 = static_cast<int>(j1_set().size());
  if (n0 < 1) throw ConfigError("identifiability requires at least one proxy with eta0 = 0 (J0)");
  if (has_z) {
    if (n1 < 1)
      throw ConfigError("identifiability requires at least one proxy with eta1 = 1 (J1)");
  } else if (n1 < 2) {
    throw ConfigError(
        "identifiability without error-free covariates requires more than one proxy with eta1 = 1 "
        "(J1)");
  }
}

ErrorModelSpec ErrorModelSpec::all_unbiased(int k, ErrorStructure s) {
  ErrorModelSpec spec;
  spec.proxies.resize(k);
  for (auto& pr : spec.proxies) {
    pr.structure = s;
    pr.in_j0 = true;
    pr.in_j1 = true;
  }
  return spec;
}

}  // namespace meacorr
