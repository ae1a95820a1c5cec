#pragma once

#include <optional>
#include <string>
#include <vector>

#include "meacorr/panel.hpp"

namespace meacorr {

// Column transformation hook applied to proxy values at read time.
struct ColumnTransform {
  enum class Kind { None, Log, LogShift } kind = Kind::None;
  double shift = 0.0;  // log(x - shift) for LogShift

  double apply(double x, const std::string& where) const;
};

// Maps CSV columns onto a panel. Proxy j, component c reads from
// proxy_cols[j][c]; empty cells are masked entries.
struct PanelSchema {
  std::string id_col;  // optional (empty = none)
  std::string y_col = "y";
  std::vector<std::string> z_cols;
  std::vector<std::vector<std::string>> proxy_cols;
  std::vector<ColumnTransform> transforms;  // per proxy; empty = no transforms

  int k() const { return static_cast<int>(proxy_cols.size()); }
  int p() const { return proxy_cols.empty() ? 0 : static_cast<int>(proxy_cols[0].size()); }
  void validate() const;

  // Canonical columns id,y,z1..zq,x1..xk (p = 1) or x{j}_{c}.
  static PanelSchema standard(int k, int p, int q);
  // Framingham-style schema: named pressure columns with log(x - 50).
  static PanelSchema framingham();
};

// Infers the standard schema from a header line (columns named id, y, z*, x*).
PanelSchema infer_schema(const std::vector<std::string>& header);

ProxyPanel read_panel_csv(const std::string& path, const PanelSchema& schema);
// Schema inferred from the file header.
ProxyPanel read_panel_csv(const std::string& path);

void write_panel_csv(const std::string& path, const ProxyPanel& panel);

}  // namespace meacorr
