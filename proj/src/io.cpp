#include "mergest/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace mergest {

namespace fs = std::filesystem;

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && s[b] == ' ') ++b;
  return s.substr(b);
}

double parse_double(const std::string& s, std::size_t line, const std::string& column) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ValidationError("line " + std::to_string(line) + ", column " + column + ": '" + s + "' is not a number");
  return v;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  return out;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vector_json(m.row(i).transpose()));
  return a;
}

double number(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

Eigen::VectorXd vector_from(const json& a) {
  Eigen::VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v(i) = number(a[i]);
  return v;
}

Eigen::MatrixXd matrix_from(const json& a) {
  const std::size_t r = a.size(), c = r ? a[0].size() : 0;
  Eigen::MatrixXd m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    if (a[i].size() != c) throw ValidationError("ragged matrix in JSON");
    for (std::size_t k = 0; k < c; ++k) m(i, k) = number(a[i][k]);
  }
  return m;
}

const std::map<std::string, Condition::Op>& op_names() {
  static const std::map<std::string, Condition::Op> m{{"==", Condition::Op::Eq}, {"!=", Condition::Op::Ne},
                                                      {"<", Condition::Op::Lt},  {"<=", Condition::Op::Le},
                                                      {">", Condition::Op::Gt},  {">=", Condition::Op::Ge},
                                                      {"in", Condition::Op::In}};
  return m;
}

std::string op_name(Condition::Op op) {
  for (const auto& [k, v] : op_names())
    if (v == op) return k;
  return "?";
}

}  // namespace

std::string sampling_mode_name(SamplingMode m) {
  switch (m) {
    case SamplingMode::Wor: return "wor";
    case SamplingMode::Bernoulli: return "bernoulli";
    case SamplingMode::StratifiedWor: return "stratified-wor";
  }
  return "?";
}

SamplingMode sampling_mode_from_name(const std::string& name) {
  if (name == "wor") return SamplingMode::Wor;
  if (name == "bernoulli") return SamplingMode::Bernoulli;
  if (name == "stratified-wor") return SamplingMode::StratifiedWor;
  throw ValidationError("unknown sampling mode '" + name + "' (known: wor, bernoulli, stratified-wor)");
}

json rule_to_json(const Rule& rule) {
  json a = json::array();
  for (const auto& c : rule.all_of) {
    json o;
    o["column"] = c.column;
    o["op"] = op_name(c.op);
    if (c.op == Condition::Op::In)
      o["values"] = c.values;
    else
      o["value"] = c.values.at(0);
    a.push_back(std::move(o));
  }
  return a;
}

Rule rule_from_json(const json& j) {
  if (!j.is_array()) throw ValidationError("a rule is a list of conditions");
  Rule r;
  for (const auto& o : j) {
    Condition c;
    c.column = o.at("column").get<std::string>();
    const auto op = o.at("op").get<std::string>();
    const auto it = op_names().find(op);
    if (it == op_names().end()) throw ValidationError("unknown rule operator '" + op + "'");
    c.op = it->second;
    if (c.op == Condition::Op::In)
      c.values = o.at("values").get<std::vector<double>>();
    else
      c.values = {o.at("value").get<double>()};
    r.all_of.push_back(std::move(c));
  }
  return r;
}

DesignSpec DesignFile::design() const {
  DesignSpec d;
  d.mode = mode;
  for (const auto& s : sources) {
    d.fractions.push_back(s.fraction);
    d.stratum_fractions.push_back(s.stratum_fractions);
  }
  if (mode != SamplingMode::StratifiedWor) d.stratum_fractions.clear();
  return d;
}

std::vector<double> DesignFile::fractions() const {
  std::vector<double> p;
  for (const auto& s : sources) p.push_back(s.fraction);
  return p;
}

std::optional<SourceLayout> DesignFile::layout() const {
  std::vector<std::string> names;
  std::vector<Rule> rules;
  std::vector<std::vector<Rule>> strata;
  bool any_strata = false;
  for (const auto& s : sources) {
    if (!s.rule) return std::nullopt;
    names.push_back(s.name);
    rules.push_back(*s.rule);
    strata.push_back(s.strata);
    any_strata = any_strata || !s.strata.empty();
  }
  if (!any_strata) strata.clear();
  return SourceLayout(names, rules, strata);
}

json design_to_json(const DesignFile& d) {
  json j;
  j["mode"] = sampling_mode_name(d.mode);
  if (d.N)
    j["N"] = *d.N;
  else
    j["N"] = "unknown";
  json src = json::array();
  for (const auto& s : d.sources) {
    json o;
    o["name"] = s.name;
    o["fraction"] = s.fraction;
    if (s.N) o["N"] = *s.N;
    if (s.n) o["n"] = *s.n;
    if (s.rule) o["rule"] = rule_to_json(*s.rule);
    if (!s.strata.empty()) {
      json st = json::array();
      for (const auto& r : s.strata) st.push_back(rule_to_json(r));
      o["strata"] = std::move(st);
    }
    if (!s.stratum_fractions.empty()) o["stratum_fractions"] = s.stratum_fractions;
    if (!s.stratum_sizes.empty()) o["stratum_sizes"] = s.stratum_sizes;
    src.push_back(std::move(o));
  }
  j["sources"] = std::move(src);
  return j;
}

DesignFile design_from_json(const json& j) {
  try {
    DesignFile d;
    d.mode = sampling_mode_from_name(get_or<std::string>(j, "mode", "wor"));
    if (j.contains("N")) {
      const auto& n = j.at("N");
      if (n.is_string()) {
        if (n.get<std::string>() != "unknown") throw ValidationError("N must be a number or \"unknown\"");
      } else {
        d.N = n.get<double>();
      }
    }
    for (const auto& o : j.at("sources")) {
      SourceSpec s;
      s.name = o.at("name").get<std::string>();
      s.fraction = get_or<double>(o, "fraction", 1.0);
      if (o.contains("N")) s.N = o.at("N").get<std::size_t>();
      if (o.contains("n")) s.n = o.at("n").get<std::size_t>();
      if (o.contains("rule")) s.rule = rule_from_json(o.at("rule"));
      if (o.contains("strata"))
        for (const auto& r : o.at("strata")) s.strata.push_back(rule_from_json(r));
      s.stratum_fractions = get_or<std::vector<double>>(o, "stratum_fractions", {});
      s.stratum_sizes = get_or<std::vector<std::size_t>>(o, "stratum_sizes", {});
      d.sources.push_back(std::move(s));
    }
    if (d.sources.empty()) throw ValidationError("design declares no sources");
    return d;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("design file: ") + e.what());
  }
}

DesignFile read_design(const fs::path& path) { return design_from_json(read_json(path)); }
void write_design(const fs::path& path, const DesignFile& d) { write_json(path, design_to_json(d)); }

DesignFile describe_design(const MergedSample& sample, SamplingMode mode) {
  DesignFile d;
  d.mode = mode;
  d.N = sample.population_size();
  for (int j = 0; j < sample.sources(); ++j) {
    SourceSpec s;
    s.name = sample.source_name(j);
    s.fraction = sample.sampling_fraction(j);
    if (!sample.full_roster()) s.N = sample.source_size(j);
    s.n = sample.subsample_size(j);
    d.sources.push_back(std::move(s));
  }
  return d;
}

std::string column_label(const Schema& schema, int column) {
  return (schema.auxiliary[column] ? "v_" : "x_") + schema.names[column];
}

MergedSample read_sample(const fs::path& csv, const DesignFile& design) {
  std::ifstream in(csv);
  if (!in) throw ValidationError("cannot read " + csv.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(csv.string() + ": empty file");
  const auto header = split_csv(trim(line));
  const int J = design.count();

  std::vector<int> member_col(J, -1), selected_col(J, -1), stratum_col(J, -1);
  int id_col = -1;
  SampleData d;
  d.sources = J;
  std::vector<int> value_col;  // csv column -> schema column
  value_col.assign(header.size(), -1);
  auto source_index = [&](const std::string& suffix, const std::string& col) {
    int j = -1;
    const auto r = std::from_chars(suffix.data(), suffix.data() + suffix.size(), j);
    if (r.ec != std::errc() || r.ptr != suffix.data() + suffix.size() || j < 1 || j > J)
      throw ValidationError("column " + col + ": source index must be in 1.." + std::to_string(J));
    return j - 1;
  };
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& h = header[c];
    if (h == "id") {
      id_col = static_cast<int>(c);
    } else if (h.rfind("member_", 0) == 0) {
      member_col[source_index(h.substr(7), h)] = static_cast<int>(c);
    } else if (h.rfind("selected_", 0) == 0) {
      selected_col[source_index(h.substr(9), h)] = static_cast<int>(c);
    } else if (h.rfind("stratum_", 0) == 0) {
      stratum_col[source_index(h.substr(8), h)] = static_cast<int>(c);
    } else if (h.rfind("v_", 0) == 0) {
      value_col[c] = static_cast<int>(d.schema.size());
      d.schema.add(h.substr(2), true);
    } else {
      value_col[c] = static_cast<int>(d.schema.size());
      d.schema.add(h.rfind("x_", 0) == 0 ? h.substr(2) : h, false);
    }
  }
  for (int j = 0; j < J; ++j) {
    if (member_col[j] < 0) throw ValidationError("missing column member_" + std::to_string(j + 1));
    if (selected_col[j] < 0) throw ValidationError("missing column selected_" + std::to_string(j + 1));
  }
  const bool stratified = std::any_of(stratum_col.begin(), stratum_col.end(), [](int c) { return c >= 0; });

  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size())
      throw ValidationError("line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                            " fields, found " + std::to_string(f.size()));
    std::vector<double> row(d.schema.size(), std::numeric_limits<double>::quiet_NaN());
    SourceMask member = 0, selected = 0;
    auto flag = [&](int c) {
      const auto& s = f[c];
      if (s == "0") return false;
      if (s == "1") return true;
      throw ValidationError("line " + std::to_string(lineno) + ", column " + header[c] + ": expected 0 or 1");
    };
    for (int j = 0; j < J; ++j) {
      if (flag(member_col[j])) member |= source_bit(j);
      if (flag(selected_col[j])) selected |= source_bit(j);
    }
    for (std::size_t c = 0; c < f.size(); ++c) {
      const int k = value_col[c];
      if (k < 0) continue;
      const auto v = trim(f[c]);
      if (v.empty()) {
        if (d.schema.auxiliary[k])
          throw ValidationError("line " + std::to_string(lineno) + ", column " + header[c] +
                                ": auxiliary values must be present for every unit");
        continue;
      }
      row[k] = parse_double(v, lineno, header[c]);
    }
    if (stratified) {
      for (int j = 0; j < J; ++j) {
        int k = -1;
        if (stratum_col[j] >= 0 && in_mask(member, j) && !trim(f[stratum_col[j]]).empty())
          k = static_cast<int>(parse_double(trim(f[stratum_col[j]]), lineno, header[stratum_col[j]])) - 1;
        d.strata.push_back(k);
      }
    }
    d.ids.push_back(id_col >= 0 ? f[id_col] : std::to_string(rows.size() + 1));
    d.member.push_back(member);
    d.selected.push_back(selected);
    rows.push_back(std::move(row));
  }

  d.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d.schema.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < d.schema.size(); ++k) d.values(i, k) = rows[i][k];
  for (const auto& s : design.sources) d.source_names.push_back(s.name);
  d.population_size = design.N;
  d.full_roster = design.N.has_value() && *design.N == static_cast<double>(rows.size());
  d.source_size_override.resize(J);
  for (int j = 0; j < J; ++j) {
    const auto& s = design.sources[j];
    if (s.N) d.source_size_override[j] = *s.N;
    else if (!d.full_roster && design.N)
      throw ValidationError("source " + s.name + ": the dataset is not a full roster of N = " +
                            format_double(*design.N) + " units, so the design must give its N");
  }
  if (stratified) {
    d.strata_counts.assign(J, 1);
    for (int j = 0; j < J; ++j) {
      int K = static_cast<int>(design.sources[j].strata.size());
      for (std::size_t i = 0; i < rows.size(); ++i) K = std::max(K, d.strata[i * J + j] + 1);
      d.strata_counts[j] = std::max(K, 1);
    }
    for (const auto& s : design.sources) d.stratum_size_override.push_back(s.stratum_sizes);
  }

  MergedSample sample(std::move(d));
  std::vector<Violation> report = validate_sample(sample);
  if (const auto layout = design.layout()) {
    const auto more = validate_sample(sample, *layout);
    for (const auto& v : more)
      if (std::none_of(report.begin(), report.end(),
                       [&](const Violation& r) { return r.row == v.row && r.message == v.message; }))
        report.push_back(v);
  }
  for (int j = 0; j < J; ++j) {
    const auto& s = design.sources[j];
    if (s.n && *s.n != sample.subsample_size(j))
      report.push_back({std::nullopt, j,
                        "design declares n = " + std::to_string(*s.n) + " but " +
                            std::to_string(sample.subsample_size(j)) + " units are selected"});
  }
  if (!report.empty()) {
    std::string msg = csv.string() + ": " + std::to_string(report.size()) + " schema violation(s)";
    for (std::size_t i = 0; i < report.size() && i < 10; ++i) msg += "\n  " + describe(report[i], sample);
    throw ValidationError(msg);
  }
  return sample;
}

void write_sample(const fs::path& csv, const MergedSample& s) {
  auto out = open_out(csv);
  const int J = s.sources();
  out << "id";
  for (int j = 1; j <= J; ++j) out << ",member_" << j;
  for (int j = 1; j <= J; ++j) out << ",selected_" << j;
  if (s.has_strata())
    for (int j = 1; j <= J; ++j) out << ",stratum_" << j;
  const auto& schema = s.schema();
  std::vector<int> order;
  for (std::size_t c = 0; c < schema.size(); ++c)
    if (schema.auxiliary[c]) order.push_back(static_cast<int>(c));
  for (std::size_t c = 0; c < schema.size(); ++c)
    if (!schema.auxiliary[c]) order.push_back(static_cast<int>(c));
  for (int c : order) out << ',' << csv_field(column_label(schema, c));
  out << '\n';
  for (std::size_t i = 0; i < s.rows(); ++i) {
    out << csv_field(s.id(i));
    for (int j = 0; j < J; ++j) out << ',' << (in_mask(s.member(i), j) ? 1 : 0);
    for (int j = 0; j < J; ++j) out << ',' << (in_mask(s.selected(i), j) ? 1 : 0);
    if (s.has_strata())
      for (int j = 0; j < J; ++j) {
        out << ',';
        if (s.stratum(i, j) >= 0) out << s.stratum(i, j) + 1;
      }
    for (int c : order) {
      out << ',';
      const double v = s.value(i, c);
      if (!std::isnan(v)) out << format_double(v);
    }
    out << '\n';
  }
}

json fit_to_json(const FitResult& f) {
  json j;
  j["model"] = f.model;
  j["calibration"] = f.calibration;
  j["unknown_N"] = f.unknown_n;
  j["coefficients"] = f.coefficients;
  j["theta"] = vector_json(f.theta);
  j["se"] = vector_json(f.se);
  j["var_population"] = matrix_json(f.var_population);
  json design = json::array();
  for (const auto& m : f.var_design) design.push_back(matrix_json(m));
  j["var_design"] = std::move(design);
  j["n_used"] = f.n_used;
  j["N_effective"] = f.N_effective;
  if (f.unknown_n) j["N_hat"] = f.N_effective;  // the normalizer is the estimated population size
  json diag;
  diag["iterations"] = f.diagnostics.iterations;
  diag["converged"] = f.diagnostics.converged;
  diag["score_norm"] = f.diagnostics.score_norm;
  diag["warnings"] = f.diagnostics.warnings;
  j["diagnostics"] = std::move(diag);
  if (!f.baseline.times.empty()) {
    json b;
    b["times"] = f.baseline.times;
    b["cumulative"] = f.baseline.cumulative;
    j["baseline"] = std::move(b);
  }
  return j;
}

FitResult fit_from_json(const json& j) {
  try {
    FitResult f;
    f.model = j.at("model").get<std::string>();
    f.calibration = j.at("calibration").get<std::string>();
    f.unknown_n = j.at("unknown_N").get<bool>();
    f.coefficients = j.at("coefficients").get<std::vector<std::string>>();
    f.theta = vector_from(j.at("theta"));
    f.se = vector_from(j.at("se"));
    f.var_population = matrix_from(j.at("var_population"));
    for (const auto& m : j.at("var_design")) f.var_design.push_back(matrix_from(m));
    f.n_used = j.at("n_used").get<std::size_t>();
    f.N_effective = number(j.at("N_effective"));
    const auto& d = j.at("diagnostics");
    f.diagnostics.iterations = d.at("iterations").get<int>();
    f.diagnostics.converged = d.at("converged").get<bool>();
    f.diagnostics.score_norm = number(d.at("score_norm"));
    f.diagnostics.warnings = d.at("warnings").get<std::vector<std::string>>();
    if (j.contains("baseline")) {
      f.baseline.times = j.at("baseline").at("times").get<std::vector<double>>();
      f.baseline.cumulative = j.at("baseline").at("cumulative").get<std::vector<double>>();
    }
    return f;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("fit file: ") + e.what());
  }
}

void write_fit(const fs::path& path, const FitResult& fit) { write_json(path, fit_to_json(fit)); }
FitResult read_fit(const fs::path& path) { return fit_from_json(read_json(path)); }

void write_influence(const fs::path& path, const FitResult& fit, const MergedSample& sample) {
  auto out = open_out(path);
  out << "id";
  for (const auto& c : fit.coefficients) out << ',' << csv_field(c);
  out << '\n';
  for (std::size_t i = 0; i < fit.influence_rows.size(); ++i) {
    out << csv_field(sample.id(fit.influence_rows[i]));
    for (Eigen::Index k = 0; k < fit.influence.cols(); ++k) out << ',' << format_double(fit.influence(i, k));
    out << '\n';
  }
}

json scheme_to_json(const WeightScheme& scheme, const std::vector<std::string>& names) {
  json cells = json::array();
  for (const auto& [mask, c] : scheme.cells()) {
    json o;
    json members = json::array();
    json constants = json::array();
    for (int j : mask_members(mask)) {
      members.push_back(j < static_cast<int>(names.size()) ? names[j] : std::to_string(j + 1));
      constants.push_back(c[j]);
    }
    o["cell"] = std::move(members);
    o["constants"] = std::move(constants);
    cells.push_back(std::move(o));
  }
  json j;
  j["sources"] = names;
  j["cells"] = std::move(cells);
  return j;
}

json scenario_to_json(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["description"] = s.description;
  const auto& p = s.population;
  json pop;
  pop["recipe"] = recipe_kind_name(p.kind);
  pop["theta"] = p.theta;
  if (p.kind == RecipeConfig::Kind::CoxWeibull) {
    pop["weibull_scale"] = p.weibull_scale;
    pop["weibull_shape"] = p.weibull_shape;
    pop["censor_c"] = p.censor_c;
    pop["sensitivity"] = p.sensitivity;
    pop["specificity"] = p.specificity;
    if (!p.membership_logit.empty()) pop["membership_logit"] = p.membership_logit;
  } else {
    pop["noise_sd"] = p.noise_sd;
    pop["auxiliary"] = p.auxiliary;
  }
  j["population"] = std::move(pop);
  j["mode"] = sampling_mode_name(s.design.mode);
  json src = json::array();
  for (int k = 0; k < s.layout.sources(); ++k) {
    json o;
    o["name"] = s.layout.name(k);
    o["rule"] = rule_to_json(s.layout.membership(k));
    o["fraction"] = s.design.fractions.at(k);
    if (s.layout.has_strata() && !s.layout.strata(k).empty()) {
      json st = json::array();
      for (const auto& r : s.layout.strata(k)) st.push_back(rule_to_json(r));
      o["strata"] = std::move(st);
      o["stratum_fractions"] = s.design.stratum_fractions.at(k);
    }
    src.push_back(std::move(o));
  }
  j["sources"] = std::move(src);
  json model;
  model["kind"] = model_kind_name(s.model.kind);
  if (s.model.kind == ModelKind::Cox) {
    model["time"] = s.model.time;
    model["status"] = s.model.status;
  } else {
    model["response"] = s.model.response;
    model["intercept"] = s.model.intercept;
  }
  model["covariates"] = s.model.covariates;
  j["model"] = std::move(model);
  j["theta0"] = vector_json(s.theta0);
  j["rho"] = rho_kind_name(s.rho);
  json cal;
  cal["method"] = s.calibration.label();
  cal["variables"] = s.calibration.variables;
  cal["g"] = s.calibration.g.name();
  j["calibration"] = std::move(cal);
  j["replicates"] = s.replicates;
  j["n_grid"] = s.n_grid;
  j["seed"] = s.seed;
  return j;
}

Scenario scenario_from_json(const json& j) {
  try {
    Scenario s;
    s.name = j.at("name").get<std::string>();
    s.description = get_or<std::string>(j, "description", "");
    const auto& pop = j.at("population");
    auto& p = s.population;
    p.kind = recipe_kind_from_name(pop.at("recipe").get<std::string>());
    p.theta = pop.at("theta").get<std::vector<double>>();
    p.noise_sd = get_or<double>(pop, "noise_sd", p.noise_sd);
    p.auxiliary = get_or<std::vector<std::string>>(pop, "auxiliary", p.auxiliary);
    p.weibull_scale = get_or<double>(pop, "weibull_scale", p.weibull_scale);
    p.weibull_shape = get_or<double>(pop, "weibull_shape", p.weibull_shape);
    p.censor_c = get_or<double>(pop, "censor_c", p.censor_c);
    p.sensitivity = get_or<double>(pop, "sensitivity", p.sensitivity);
    p.specificity = get_or<double>(pop, "specificity", p.specificity);
    p.membership_logit = get_or<std::vector<double>>(pop, "membership_logit", {});
    s.design.mode = sampling_mode_from_name(get_or<std::string>(j, "mode", "wor"));
    std::vector<std::string> names;
    std::vector<Rule> rules;
    std::vector<std::vector<Rule>> strata;
    bool any_strata = false;
    for (const auto& o : j.at("sources")) {
      names.push_back(o.at("name").get<std::string>());
      rules.push_back(rule_from_json(o.at("rule")));
      s.design.fractions.push_back(o.at("fraction").get<double>());
      std::vector<Rule> st;
      if (o.contains("strata"))
        for (const auto& r : o.at("strata")) st.push_back(rule_from_json(r));
      any_strata = any_strata || !st.empty();
      strata.push_back(std::move(st));
      s.design.stratum_fractions.push_back(get_or<std::vector<double>>(o, "stratum_fractions", {}));
    }
    if (!any_strata) {
      strata.clear();
      s.design.stratum_fractions.clear();
    }
    s.layout = SourceLayout(names, rules, strata);
    const auto& m = j.at("model");
    const auto kind = model_kind_from_name(m.at("kind").get<std::string>());
    const auto z = m.at("covariates").get<std::vector<std::string>>();
    if (kind == ModelKind::Cox)
      s.model = cox_model(m.at("time").get<std::string>(), m.at("status").get<std::string>(), z);
    else
      s.model = ModelSpec{kind, m.at("response").get<std::string>(), "", "", z, get_or<bool>(m, "intercept", true)};
    s.theta0 = vector_from(j.at("theta0"));
    s.rho = rho_kind_from_name(get_or<std::string>(j, "rho", "opt-bernoulli"));
    if (j.contains("calibration")) {
      const auto& c = j.at("calibration");
      const auto method = get_or<std::string>(c, "method", "none");
      if (method != "none") s.calibration.method = calibration_method_from_name(method);
      s.calibration.variables = get_or<std::vector<std::string>>(c, "variables", {});
      s.calibration.g = GFunction::from_name(get_or<std::string>(c, "g", "affine"));
    }
    s.replicates = get_or<int>(j, "replicates", s.replicates);
    s.n_grid = get_or<std::vector<std::size_t>>(j, "n_grid", s.n_grid);
    s.seed = get_or<std::uint64_t>(j, "seed", s.seed);
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("scenario file: ") + e.what());
  }
}

Scenario read_scenario(const fs::path& path) { return scenario_from_json(read_json(path)); }

fs::path default_preset_dir() {
  if (const char* env = std::getenv("MERGEST_PRESET_DIR")) return env;
#ifdef MERGEST_PRESET_DIR
  return MERGEST_PRESET_DIR;
#else
  return "presets";
#endif
}

std::vector<std::string> list_presets(const fs::path& dir) {
  std::vector<std::string> out;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(dir, ec))
    if (e.path().extension() == ".json") out.push_back(e.path().stem().string());
  std::sort(out.begin(), out.end());
  return out;
}

Scenario load_preset(const std::string& name, const fs::path& dir) {
  const auto path = dir / (name + ".json");
  if (!fs::exists(path)) {
    std::string known;
    for (const auto& p : list_presets(dir)) known += (known.empty() ? "" : ", ") + p;
    throw ValidationError("unknown preset '" + name + "' (available: " + (known.empty() ? "none" : known) + ")");
  }
  return read_scenario(path);
}

void write_summary_csv(const fs::path& path, const std::vector<MCSummary>& summaries) {
  auto out = open_out(path);
  out << "scenario,rho,calibration,N,coefficient,truth,bias,sd,see,coverage,mean,mean_abs_error,"
         "replicates,failures,unstable\n";
  for (const auto& s : summaries)
    for (const auto& c : s.coefficients)
      out << csv_field(s.scenario) << ',' << s.rho << ',' << s.calibration << ',' << s.N << ','
          << csv_field(c.name) << ',' << format_double(c.truth) << ',' << format_double(c.bias) << ','
          << format_double(c.sd) << ',' << format_double(c.see) << ',' << format_double(c.coverage) << ','
          << format_double(c.mean) << ',' << format_double(c.mean_abs_error) << ',' << s.requested << ','
          << s.failures << ',' << (s.unstable ? 1 : 0) << '\n';
}

void write_rows_csv(const fs::path& path, const std::vector<MCSummary>& summaries) {
  auto out = open_out(path);
  std::vector<std::string> names;
  if (!summaries.empty())
    for (const auto& c : summaries.front().coefficients) names.push_back(c.name);
  std::size_t J = 0;
  for (const auto& s : summaries)
    for (const auto& r : s.rows) J = std::max(J, r.source_sizes.size());
  out << "scenario,rho,calibration,N,replicate,ok";
  for (const auto& n : names) out << ",theta_" << csv_field(n);
  for (const auto& n : names) out << ",se_" << csv_field(n);
  for (const auto& n : names) out << ",var_design_" << csv_field(n);
  out << ",N_hat,n_used";
  for (std::size_t j = 1; j <= J; ++j) out << ",N_" << j;
  for (std::size_t j = 1; j <= J; ++j) out << ",n_" << j;
  out << ",twice,thrice,fpc_margin,iterations,error\n";
  for (const auto& s : summaries)
    for (const auto& r : s.rows) {
      out << csv_field(s.scenario) << ',' << s.rho << ',' << s.calibration << ',' << s.N << ',' << r.replicate
          << ',' << (r.ok ? 1 : 0);
      auto cells = [&](const Eigen::VectorXd& v) {
        for (std::size_t k = 0; k < names.size(); ++k)
          out << ',' << (r.ok && static_cast<Eigen::Index>(k) < v.size() ? format_double(v(k)) : "");
      };
      cells(r.theta);
      cells(r.se);
      cells(r.var_design);
      out << ',' << (r.ok ? format_double(r.N_hat) : "") << ',' << r.n_used;
      for (std::size_t j = 0; j < J; ++j) out << ',' << (j < r.source_sizes.size() ? r.source_sizes[j] : 0);
      for (std::size_t j = 0; j < J; ++j) out << ',' << (j < r.subsample_sizes.size() ? r.subsample_sizes[j] : 0);
      out << ',' << r.selected_twice << ',' << r.selected_thrice << ','
          << (r.ok ? format_double(r.fpc_margin) : "") << ',' << r.iterations << ',' << csv_field(r.error) << '\n';
    }
}

void write_qq_csv(const fs::path& path, const std::vector<QQPoint>& points, std::size_t N) {
  auto out = open_out(path);
  out << "N,coefficient,theoretical,empirical\n";
  for (const auto& p : points)
    out << N << ',' << csv_field(p.coefficient) << ',' << format_double(p.theoretical) << ','
        << format_double(p.empirical) << '\n';
}

namespace {

std::string rho_label(RhoKind k) {
  switch (k) {
    case RhoKind::OptBernoulli: return "S";
    case RhoKind::SingleFrame: return "SF";
    case RhoKind::Balanced: return "B";
    case RhoKind::OptWor: return "S-WOR";
  }
  return "?";
}

std::string calibration_label(const CalibrationConfig& c) {
  if (!c.method) return "w/o";
  switch (*c.method) {
    case CalibrationMethod::SampleSpecific: return "SC";
    case CalibrationMethod::Standard: return "C";
    case CalibrationMethod::SourceSpecific: return "DC";
  }
  return "?";
}

}  // namespace

void write_grid_csv(const fs::path& path, const ComparisonGrid& g) {
  auto out = open_out(path);
  out << "coefficient,statistic,rho";
  for (const auto& c : g.calibrations) out << ',' << csv_field(calibration_label(c));
  out << '\n';
  if (g.cells.empty() || g.cells.front().empty()) return;
  const auto& coefs = g.cells.front().front().coefficients;
  for (std::size_t k = 0; k < coefs.size(); ++k)
    for (const char* stat : {"sd", "see", "bias"})
      for (std::size_t a = 0; a < g.recipes.size(); ++a) {
        out << csv_field(coefs[k].name) << ',' << stat << ',' << rho_label(g.recipes[a]);
        for (std::size_t b = 0; b < g.calibrations.size(); ++b) {
          const auto& c = g.cells[a][b].coefficients[k];
          const double v = std::string(stat) == "sd" ? c.sd : std::string(stat) == "see" ? c.see : c.bias;
          out << ',' << format_double(v);
        }
        out << '\n';
      }
}

}  // namespace mergest
