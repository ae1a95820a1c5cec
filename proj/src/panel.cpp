#include "meacorr/panel.hpp"

#include <algorithm>
#include <map>

namespace meacorr {

void ProxyPanel::validate() const {
  if (n <= 0) throw DataError("panel has no rows");
  if (k <= 0 || p <= 0) throw DataError("panel has no proxy series");
  if (y.size() != n) throw DataError("outcome length does not match subject count");
  if (z.rows() != n || z.cols() != q) throw DataError("covariate matrix has wrong shape");
  if (static_cast<int>(proxies.size()) != k) throw DataError("proxy series count mismatch");
  for (int j = 0; j < k; ++j)
    if (proxies[j].rows() != n || proxies[j].cols() != p)
      throw DataError("proxy series " + std::to_string(j + 1) + " has wrong shape");
  if (observed.rows() != n || observed.cols() != k) throw DataError("observed mask has wrong shape");

  for (int i = 0; i < n; ++i) {
    if (kappa(i) == 0)
      throw DataError("row " + std::to_string(i + 1) + " has no observed proxy");
    if (!std::isfinite(y[i])) throw DataError("non-finite outcome at row " + std::to_string(i + 1));
    for (int c = 0; c < q; ++c)
      if (!std::isfinite(z(i, c)))
        throw DataError("non-finite covariate at row " + std::to_string(i + 1));
    for (int j = 0; j < k; ++j) {
      if (!observed(i, j)) continue;
      for (int c = 0; c < p; ++c)
        if (!std::isfinite(proxies[j](i, c)))
          throw DataError("non-finite proxy value at row " + std::to_string(i + 1) +
                          ", series " + std::to_string(j + 1));
    }
  }
}

std::vector<PatternInfo> patterns_of(const ProxyPanel& panel) {
  std::map<std::uint32_t, std::vector<int>> buckets;
  for (int i = 0; i < panel.n; ++i) buckets[panel.pattern_of(i)].push_back(i);
  std::vector<PatternInfo> out;
  out.reserve(buckets.size());
  for (auto& [mask, rows] : buckets)
    out.push_back({mask, std::move(rows), static_cast<double>(buckets[mask].size()) / panel.n});
  for (auto& pi : out) pi.frequency = static_cast<double>(pi.rows.size()) / panel.n;
  return out;
}

ProxyPanel restrict_proxies(const ProxyPanel& panel, const std::vector<int>& keep) {
  ProxyPanel out;
  out.n = panel.n;
  out.k = static_cast<int>(keep.size());
  out.p = panel.p;
  out.q = panel.q;
  out.y = panel.y;
  out.z = panel.z;
  out.x_true = panel.x_true;
  out.ids = panel.ids;
  out.observed.resize(panel.n, out.k);
  for (int jj = 0; jj < out.k; ++jj) {
    const int j = keep[jj];
    if (j < 0 || j >= panel.k) throw ConfigError("proxy index out of range in restriction");
    out.proxies.push_back(panel.proxies[j]);
    out.observed.col(jj) = panel.observed.col(j);
  }
  out.validate();
  return out;
}

ProxyPanel restrict_rows(const ProxyPanel& panel, const std::vector<int>& rows) {
  ProxyPanel out;
  out.n = static_cast<int>(rows.size());
  out.k = panel.k;
  out.p = panel.p;
  out.q = panel.q;
  out.y.resize(out.n);
  out.z.resize(out.n, panel.q);
  out.observed.resize(out.n, panel.k);
  out.proxies.assign(panel.k, MatrixXd(out.n, panel.p));
  if (panel.x_true) out.x_true = MatrixXd(out.n, panel.p);
  for (int ii = 0; ii < out.n; ++ii) {
    const int i = rows[ii];
    out.y[ii] = panel.y[i];
    out.z.row(ii) = panel.z.row(i);
    out.observed.row(ii) = panel.observed.row(i);
    for (int j = 0; j < panel.k; ++j) out.proxies[j].row(ii) = panel.proxies[j].row(i);
    if (panel.x_true) (*out.x_true).row(ii) = (*panel.x_true).row(i);
    if (!panel.ids.empty()) out.ids.push_back(panel.ids[i]);
  }
  out.validate();
  return out;
}

}  // namespace meacorr
