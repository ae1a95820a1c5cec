#include "meacorr/csv_io.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace meacorr {

double ColumnTransform::apply(double x, const std::string& where) const {
  switch (kind) {
    case Kind::None: return x;
    case Kind::Log:
      if (x <= 0.0) throw DataError("log transform of nonpositive value at " + where);
      return std::log(x);
    case Kind::LogShift:
      if (x <= shift)
        throw DataError("log(x - " + std::to_string(shift) + ") of out-of-domain value at " +
                        where);
      return std::log(x - shift);
  }
  return x;
}

void PanelSchema::validate() const {
  if (y_col.empty()) throw ConfigError("schema: outcome column missing");
  if (proxy_cols.empty()) throw ConfigError("schema: no proxy columns");
  const int pp = p();
  if (pp == 0) throw ConfigError("schema: empty proxy column list");
  for (const auto& cols : proxy_cols)
    if (static_cast<int>(cols.size()) != pp)
      throw ConfigError("schema: proxy series have inconsistent component counts");
  if (!transforms.empty() && static_cast<int>(transforms.size()) != k())
    throw ConfigError("schema: transform list must match proxy count");
}

PanelSchema PanelSchema::standard(int k, int p, int q) {
  PanelSchema s;
  s.id_col = "id";
  s.y_col = "y";
  for (int c = 0; c < q; ++c) s.z_cols.push_back("z" + std::to_string(c + 1));
  for (int j = 0; j < k; ++j) {
    std::vector<std::string> cols;
    for (int c = 0; c < p; ++c)
      cols.push_back(p == 1 ? "x" + std::to_string(j + 1)
                            : "x" + std::to_string(j + 1) + "_" + std::to_string(c + 1));
    s.proxy_cols.push_back(cols);
  }
  return s;
}

PanelSchema PanelSchema::framingham() {
  PanelSchema s;
  s.id_col = "id";
  s.y_col = "chd";
  s.z_cols = {"age", "smoke", "chol"};
  for (const char* col : {"sbp21", "sbp22", "sbp31", "sbp32"})
    s.proxy_cols.push_back({col});
  ColumnTransform tf;
  tf.kind = ColumnTransform::Kind::LogShift;
  tf.shift = 50.0;
  s.transforms.assign(4, tf);
  return s;
}

PanelSchema infer_schema(const std::vector<std::string>& header) {
  PanelSchema s;
  std::vector<std::string> xs;
  for (const auto& h : header) {
    if (h == "id")
      s.id_col = h;
    else if (h == "y")
      s.y_col = h;
    else if (h.rfind("z", 0) == 0 && h.size() > 1 && std::isdigit(static_cast<unsigned char>(h[1])))
      s.z_cols.push_back(h);
    else if (h.rfind("x", 0) == 0 && h.size() > 1 && std::isdigit(static_cast<unsigned char>(h[1])))
      xs.push_back(h);
  }
  if (xs.empty()) throw ParseError("cannot infer schema: no x* proxy columns in header");
  // group x{j}_{c} by series; bare x{j} means p = 1
  std::map<int, std::vector<std::pair<int, std::string>>> series;
  for (const auto& h : xs) {
    const auto us = h.find('_');
    const int j = std::stoi(h.substr(1, us == std::string::npos ? std::string::npos : us - 1));
    const int c = us == std::string::npos ? 1 : std::stoi(h.substr(us + 1));
    series[j].push_back({c, h});
  }
  for (auto& [j, cols] : series) {
    std::sort(cols.begin(), cols.end());
    std::vector<std::string> names;
    for (auto& [c, h] : cols) names.push_back(h);
    s.proxy_cols.push_back(names);
  }
  s.validate();
  return s;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& s, int line_no, const std::string& col) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw ParseError("line " + std::to_string(line_no) + ": cannot parse '" + s + "' in column " +
                     col);
  if (!std::isfinite(v))
    throw DataError("line " + std::to_string(line_no) + ": non-finite value in column " + col);
  return v;
}

}  // namespace

ProxyPanel read_panel_csv(const std::string& path, const PanelSchema& schema) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw DataError("cannot open panel file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty panel file: " + path);
  const std::vector<std::string> header = split_csv_line(line);
  std::map<std::string, int> col_of;
  for (std::size_t c = 0; c < header.size(); ++c) col_of[header[c]] = static_cast<int>(c);

  auto need = [&](const std::string& name) {
    auto it = col_of.find(name);
    if (it == col_of.end()) throw ParseError("panel file is missing column '" + name + "'");
    return it->second;
  };

  const int k = schema.k(), p = schema.p(), q = static_cast<int>(schema.z_cols.size());
  const int id_idx = schema.id_col.empty() || !col_of.count(schema.id_col) ? -1
                                                                           : col_of[schema.id_col];
  const int y_idx = need(schema.y_col);
  std::vector<int> z_idx;
  for (const auto& zc : schema.z_cols) z_idx.push_back(need(zc));
  std::vector<std::vector<int>> x_idx(k);
  for (int j = 0; j < k; ++j)
    for (const auto& xc : schema.proxy_cols[j]) x_idx[j].push_back(need(xc));

  std::vector<double> ys;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> zrows;
  std::vector<std::vector<std::vector<double>>> xrows;  // [row][j][c]
  std::vector<std::vector<bool>> obs;

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " cells, got " +
                       std::to_string(cells.size()));
    ids.push_back(id_idx >= 0 ? cells[id_idx] : std::to_string(line_no - 1));
    ys.push_back(parse_number(cells[y_idx], line_no, schema.y_col));
    std::vector<double> zr;
    for (int c = 0; c < q; ++c)
      zr.push_back(parse_number(cells[z_idx[c]], line_no, schema.z_cols[c]));
    zrows.push_back(zr);
    std::vector<std::vector<double>> xr(k);
    std::vector<bool> ob(k, true);
    for (int j = 0; j < k; ++j) {
      bool any_empty = false, all_empty = true;
      for (int c = 0; c < p; ++c) {
        const std::string& cell = cells[x_idx[j][c]];
        if (cell.empty()) {
          any_empty = true;
          xr[j].push_back(0.0);
        } else {
          all_empty = false;
          double v = parse_number(cell, line_no, schema.proxy_cols[j][c]);
          if (!schema.transforms.empty())
            v = schema.transforms[j].apply(v, "line " + std::to_string(line_no) + ", column " +
                                                  schema.proxy_cols[j][c]);
          xr[j].push_back(v);
        }
      }
      if (any_empty && !all_empty)
        throw ParseError("line " + std::to_string(line_no) + ": proxy " + std::to_string(j + 1) +
                         " is partially missing");
      ob[j] = !any_empty;
    }
    if (std::none_of(ob.begin(), ob.end(), [](bool b) { return b; }))
      throw DataError("line " + std::to_string(line_no) + ": every proxy is missing");
    xrows.push_back(xr);
    obs.push_back(ob);
  }

  const int n = static_cast<int>(ys.size());
  if (n == 0) throw DataError("panel file has no data rows: " + path);
  ProxyPanel panel;
  panel.n = n;
  panel.k = k;
  panel.p = p;
  panel.q = q;
  panel.y.resize(n);
  panel.z.resize(n, q);
  panel.observed.resize(n, k);
  panel.proxies.assign(k, MatrixXd::Zero(n, p));
  panel.ids = ids;
  for (int i = 0; i < n; ++i) {
    panel.y[i] = ys[i];
    for (int c = 0; c < q; ++c) panel.z(i, c) = zrows[i][c];
    for (int j = 0; j < k; ++j) {
      panel.observed(i, j) = obs[i][j];
      for (int c = 0; c < p; ++c) panel.proxies[j](i, c) = xrows[i][j][c];
    }
  }
  panel.validate();
  return panel;
}

ProxyPanel read_panel_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open panel file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty panel file: " + path);
  return read_panel_csv(path, infer_schema(split_csv_line(line)));
}

void write_panel_csv(const std::string& path, const ProxyPanel& panel) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open output file: " + path);
  out.precision(17);
  out << "id,y";
  for (int c = 0; c < panel.q; ++c) out << ",z" << c + 1;
  for (int j = 0; j < panel.k; ++j)
    for (int c = 0; c < panel.p; ++c) {
      if (panel.p == 1)
        out << ",x" << j + 1;
      else
        out << ",x" << j + 1 << "_" << c + 1;
    }
  out << "\n";
  for (int i = 0; i < panel.n; ++i) {
    out << (i < static_cast<int>(panel.ids.size()) ? panel.ids[i] : std::to_string(i + 1));
    out << "," << panel.y[i];
    for (int c = 0; c < panel.q; ++c) out << "," << panel.z(i, c);
    for (int j = 0; j < panel.k; ++j)
      for (int c = 0; c < panel.p; ++c) {
        out << ",";
        if (panel.observed(i, j)) out << panel.proxies[j](i, c);
      }
    out << "\n";
  }
}

}  // namespace meacorr
