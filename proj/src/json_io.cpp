#include "meacorr/json_io.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace meacorr {

using nlohmann::json;

namespace {

json vec_to_json(const VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

VectorXd vec_from_json(const json& a) {
  VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<int>(i)] = a[i].get<double>();
  return v;
}

json mat_to_json(const MatrixXd& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (int j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

std::string spec_to_json(const ErrorModelSpec& spec) {
  json doc;
  doc["proxies"] = json::array();
  for (const auto& pr : spec.proxies) {
    json p;
    p["structure"] = pr.structure == ErrorStructure::Additive ? "additive" : "multiplicative";
    p["in_j0"] = pr.in_j0;
    p["in_j1"] = pr.in_j1;
    if (pr.known_eta0) p["eta0"] = vec_to_json(*pr.known_eta0);
    if (pr.known_eta1) p["eta1"] = vec_to_json(*pr.known_eta1);
    doc["proxies"].push_back(p);
  }
  return doc.dump(2);
}

ErrorModelSpec spec_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("spec JSON: ") + e.what());
  }
  ErrorModelSpec spec;
  if (!doc.contains("proxies") || !doc["proxies"].is_array())
    throw ConfigError("spec JSON: missing 'proxies' array");
  for (const auto& p : doc["proxies"]) {
    ProxySpec pr;
    const std::string st = p.value("structure", "additive");
    if (st == "additive")
      pr.structure = ErrorStructure::Additive;
    else if (st == "multiplicative")
      pr.structure = ErrorStructure::Multiplicative;
    else
      throw ConfigError("spec JSON: unknown structure '" + st + "'");
    pr.in_j0 = p.value("in_j0", false);
    pr.in_j1 = p.value("in_j1", false);
    if (p.contains("eta0") && !p["eta0"].is_null()) pr.known_eta0 = vec_from_json(p["eta0"]);
    if (p.contains("eta1") && !p["eta1"].is_null()) pr.known_eta1 = vec_from_json(p["eta1"]);
    spec.proxies.push_back(pr);
  }
  return spec;
}

std::string scenario_to_json(const ScenarioConfig& cfg) {
  json doc;
  doc["name"] = cfg.name;
  doc["p"] = cfg.p;
  doc["n"] = cfg.n;
  doc["seed"] = cfg.seed;
  doc["z"] = json::array();
  for (const auto& zc : cfg.z_cols) {
    json z;
    z["kind"] = zc.kind == ZColumn::Kind::Bernoulli ? "bernoulli" : "normal";
    z["a"] = zc.a;
    z["b"] = zc.b;
    doc["z"].push_back(z);
  }
  doc["x"] = json::array();
  for (const auto& xc : cfg.x_comps) {
    json x;
    x["mean"] = xc.mean;
    x["var"] = xc.var;
    if (xc.z_coef.size() > 0) x["z_coef"] = vec_to_json(xc.z_coef);
    doc["x"].push_back(x);
  }
  json oc;
  oc["family"] = family_name(cfg.outcome.family);
  oc["theta"] = vec_to_json(cfg.outcome.theta);
  oc["noise_var"] = cfg.outcome.noise_var;
  oc["gamma_shape"] = cfg.outcome.gamma_shape;
  doc["outcome"] = oc;
  doc["proxies"] = json::array();
  for (const auto& law : cfg.proxy_laws) {
    json l;
    l["structure"] = law.structure == ErrorStructure::Additive ? "additive" : "multiplicative";
    l["eta0"] = vec_to_json(law.eta0);
    l["eta1"] = vec_to_json(law.eta1);
    l["dist"] = law.dist == NoiseDist::Normal ? "normal" : "uniform";
    l["noise_var"] = vec_to_json(law.noise_var);
    l["missing"] = law.missing_fraction;
    doc["proxies"].push_back(l);
  }
  return doc.dump(2);
}

ScenarioConfig scenario_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("scenario JSON: ") + e.what());
  }
  ScenarioConfig cfg;
  try {
    cfg.name = doc.value("name", "scenario");
    cfg.p = doc.at("p").get<int>();
    cfg.n = doc.value("n", 1000);
    cfg.seed = doc.value("seed", 1ULL);
    for (const auto& z : doc.value("z", json::array())) {
      ZColumn zc;
      zc.kind = z.value("kind", "normal") == "bernoulli" ? ZColumn::Kind::Bernoulli
                                                         : ZColumn::Kind::Normal;
      zc.a = z.value("a", 0.0);
      zc.b = z.value("b", 1.0);
      cfg.z_cols.push_back(zc);
    }
    for (const auto& x : doc.at("x")) {
      XComponent xc;
      xc.mean = x.value("mean", 0.0);
      xc.var = x.value("var", 1.0);
      if (x.contains("z_coef")) xc.z_coef = vec_from_json(x["z_coef"]);
      cfg.x_comps.push_back(xc);
    }
    const auto& oc = doc.at("outcome");
    cfg.outcome.family = family_from_name(oc.at("family").get<std::string>());
    cfg.outcome.theta = vec_from_json(oc.at("theta"));
    cfg.outcome.noise_var = oc.value("noise_var", 1.0);
    cfg.outcome.gamma_shape = oc.value("gamma_shape", 1.0);
    for (const auto& l : doc.at("proxies")) {
      ProxyLaw law;
      law.structure = l.value("structure", "additive") == "multiplicative"
                          ? ErrorStructure::Multiplicative
                          : ErrorStructure::Additive;
      law.eta0 = vec_from_json(l.at("eta0"));
      law.eta1 = vec_from_json(l.at("eta1"));
      law.dist = l.value("dist", "normal") == "uniform" ? NoiseDist::Uniform : NoiseDist::Normal;
      law.noise_var = vec_from_json(l.at("noise_var"));
      law.missing_fraction = l.value("missing", 0.0);
      cfg.proxy_laws.push_back(law);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario JSON: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string schema_to_json(const PanelSchema& schema) {
  json doc;
  doc["id"] = schema.id_col;
  doc["y"] = schema.y_col;
  doc["z"] = schema.z_cols;
  doc["proxies"] = schema.proxy_cols;
  if (!schema.transforms.empty()) {
    json tf = json::array();
    for (const auto& t : schema.transforms) {
      json e;
      switch (t.kind) {
        case ColumnTransform::Kind::None: e["type"] = "none"; break;
        case ColumnTransform::Kind::Log: e["type"] = "log"; break;
        case ColumnTransform::Kind::LogShift:
          e["type"] = "log_shift";
          e["shift"] = t.shift;
          break;
      }
      tf.push_back(e);
    }
    doc["transforms"] = tf;
  }
  return doc.dump(2);
}

PanelSchema schema_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("schema JSON: ") + e.what());
  }
  PanelSchema s;
  try {
    s.id_col = doc.value("id", "");
    s.y_col = doc.at("y").get<std::string>();
    s.z_cols = doc.value("z", std::vector<std::string>{});
    for (const auto& pc : doc.at("proxies")) {
      if (pc.is_string())
        s.proxy_cols.push_back({pc.get<std::string>()});
      else
        s.proxy_cols.push_back(pc.get<std::vector<std::string>>());
    }
    if (doc.contains("transforms")) {
      for (const auto& t : doc["transforms"]) {
        ColumnTransform tf;
        const std::string ty = t.value("type", "none");
        if (ty == "log")
          tf.kind = ColumnTransform::Kind::Log;
        else if (ty == "log_shift") {
          tf.kind = ColumnTransform::Kind::LogShift;
          tf.shift = t.value("shift", 0.0);
        } else if (ty != "none") {
          throw ConfigError("schema JSON: unknown transform '" + ty + "'");
        }
        s.transforms.push_back(tf);
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("schema JSON: ") + e.what());
  }
  s.validate();
  return s;
}

std::string fit_to_json(const FitResult& fit) {
  json doc;
  doc["method"] = fit.method;
  doc["theta"] = vec_to_json(fit.theta);
  if (fit.has_cov()) {
    doc["cov_sqrt_n"] = mat_to_json(fit.cov);
    doc["se"] = vec_to_json(fit.se());
    doc["n"] = fit.n_used;
  }
  if (fit.ci_lower.size() > 0) {
    doc["ci_lower"] = vec_to_json(fit.ci_lower);
    doc["ci_upper"] = vec_to_json(fit.ci_upper);
  }
  doc["iterations"] = fit.iterations;
  doc["score_norm"] = fit.score_norm;
  if (!fit.notes.empty()) doc["notes"] = fit.notes;
  return doc.dump(2);
}

std::string xi_to_json(const CorrectionParams& xi, const MatrixXd* cov) {
  json doc;
  doc["k"] = xi.k();
  doc["p"] = xi.p();
  doc["q"] = xi.q();
  doc["has_z"] = xi.has_z;
  doc["mu_x"] = vec_to_json(xi.mu_x);
  doc["sigma_xx"] = mat_to_json(xi.sigma_xx);
  doc["eta0"] = json::array();
  doc["eta1"] = json::array();
  doc["m_j"] = json::array();
  doc["sigma_xxj"] = json::array();
  for (int j = 0; j < xi.k(); ++j) {
    doc["eta0"].push_back(vec_to_json(xi.eta0[j]));
    doc["eta1"].push_back(vec_to_json(xi.eta1[j]));
    doc["m_j"].push_back(mat_to_json(xi.m[j]));
    doc["sigma_xxj"].push_back(mat_to_json(xi.sigma_xxj[j]));
  }
  if (xi.has_z) doc["sigma_zx"] = mat_to_json(xi.sigma_zx);
  doc["alpha"] = vec_to_json(xi.alpha);
  doc["m_clip"] = vec_to_json(xi.m_clip);
  json raw;
  raw["mu_j"] = json::array();
  for (int j = 0; j < xi.k(); ++j) raw["mu_j"].push_back(vec_to_json(xi.raw.mu[j]));
  raw["sigma_jl"] = json::array();
  for (int j = 0; j < xi.k(); ++j) {
    json row = json::array();
    for (int l = 0; l < xi.k(); ++l) row.push_back(mat_to_json(xi.raw.sigma[j][l]));
    raw["sigma_jl"].push_back(row);
  }
  doc["raw"] = raw;
  if (cov) doc["xi_cov_sqrt_n"] = mat_to_json(*cov);
  return doc.dump(2);
}

ErrorModelSpec load_spec(const std::string& path) { return spec_from_json(read_text_file(path)); }
ScenarioConfig load_scenario(const std::string& path) {
  return scenario_from_json(read_text_file(path));
}
PanelSchema load_schema(const std::string& path) { return schema_from_json(read_text_file(path)); }

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open output file: " + path);
  out << text;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace meacorr
