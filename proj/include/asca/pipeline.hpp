#pragma once

// Batch pipeline behind the command line tool: read data and design, apply
// exclusions and preprocessing, fit, test and write every artifact.

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "asca/coding.hpp"
#include "asca/design.hpp"
#include "asca/diagnostics.hpp"
#include "asca/error.hpp"
#include "asca/glm.hpp"
#include "asca/inference.hpp"
#include "asca/io/csv.hpp"
#include "asca/power.hpp"
#include "asca/prep.hpp"
#include "asca/sca.hpp"
#include "asca/svg.hpp"

namespace asca {

/// Flat key=value settings; later sources override earlier ones.
using ConfigMap = std::map<std::string, std::string>;

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = std::min(s.find(sep, start), s.size());
    if (auto item = trim(s.substr(start, end - start)); !item.empty()) out.push_back(std::move(item));
    start = end + 1;
  }
  return out;
}

/// Lines of `key = value`; `#` starts a comment.
inline ConfigMap parse_config(std::istream& in, std::string_view source = "config") {
  ConfigMap map;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::io, std::string(source) + ": line " + std::to_string(line_no) + " is not 'key = value'");
    }
    map[trim(std::string_view(line).substr(0, eq))] = trim(std::string_view(line).substr(eq + 1));
  }
  return map;
}

inline ConfigMap read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open config '" + path + "'");
  return parse_config(in, path);
}

/// 64-bit FNV-1a over the canonical `key=value` lines.
inline std::uint64_t config_hash(const ConfigMap& map) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : map) {
    for (char c : k + "=" + v + "\n") {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

struct ScaRequest {
  std::string term;
  std::size_t components = 1;
};

enum class Command { fit, sca, power, check };

struct RunConfig {
  std::string data_csv;
  std::string design_csv;
  std::string output_dir = "asca_out";
  std::string formula;
  CodingScheme coding = CodingScheme::sum;
  SsType ss = SsType::simultaneous;
  DesignOptions design;
  std::optional<ImputeOptions> impute;
  std::optional<TransformOptions> transform;
  std::optional<ScaleOptions> scale;
  PermutationPlan plan;
  double alpha = 0.05;
  std::vector<ScaRequest> sca;
  std::vector<std::string> exclude;
  std::size_t outlier_components = 2;
  bool svg = false;
  bool dump_x = false;  // write the coded model matrix as model_matrix.csv
  std::optional<SimulationScenario> power;
  ConfigMap source;  // the settings this config was built from
};

namespace detail {

inline std::size_t to_count(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long n = std::stoull(v, &used);
    if (used == v.size() && v.find('-') == std::string::npos) return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
  }
  fail(ErrorKind::invalid_argument, "'" + key + "' expects a nonnegative integer, got '" + v + "'");
}

inline double to_number(const std::string& key, const std::string& v) {
  double d = 0.0;
  if (!io::parse_double(v, d)) fail(ErrorKind::invalid_argument, "'" + key + "' expects a number, got '" + v + "'");
  return d;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  fail(ErrorKind::invalid_argument, "'" + key + "' expects true or false, got '" + v + "'");
}

/// "box_cox:0.5", "box_cox:auto", "log", "none".
inline std::optional<TransformOptions> parse_transform_setting(const std::string& v, double shift) {
  if (v.empty() || v == "none") return std::nullopt;
  TransformOptions t;
  const auto colon = v.find(':');
  t.method = parse_transform(v.substr(0, colon));
  t.shift = shift;
  if (colon != std::string::npos) {
    const std::string arg = v.substr(colon + 1);
    if (t.method != TransformMethod::box_cox) fail(ErrorKind::invalid_argument, "only box_cox takes a parameter");
    if (arg != "auto") t.lambda = to_number("transform", arg);
  }
  return t;
}

/// "autoscale", "mean_center", "reference_group:Factor=Level", "none".
inline std::optional<ScaleOptions> parse_scale_setting(const std::string& v) {
  if (v.empty() || v == "none") return std::nullopt;
  ScaleOptions s;
  const auto colon = v.find(':');
  s.method = parse_scale(v.substr(0, colon));
  if (s.method == ScaleMethod::reference_group) {
    const std::string arg = colon == std::string::npos ? "" : v.substr(colon + 1);
    const auto eq = arg.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::invalid_argument, "reference_group scaling needs 'reference_group:Factor=Level'");
    }
    s.factor = trim(arg.substr(0, eq));
    s.level = trim(arg.substr(eq + 1));
  }
  return s;
}

/// "A:3", "Patient:4:random:in=Responder".
inline FactorTemplate parse_factor_template(const std::string& v) {
  const auto parts = split_list(v, ':');
  if (parts.size() < 2) fail(ErrorKind::invalid_argument, "factor template '" + v + "' needs 'name:levels'");
  FactorTemplate f;
  f.name = parts[0];
  f.levels = to_count("power.factors", parts[1]);
  for (std::size_t i = 2; i < parts.size(); ++i) {
    if (parts[i] == "random") {
      f.nature = FactorNature::random;
    } else if (parts[i].rfind("in=", 0) == 0) {
      f.nested_in = parts[i].substr(3);
    } else {
      fail(ErrorKind::invalid_argument, "unknown factor template option '" + parts[i] + "'");
    }
  }
  return f;
}

}  // namespace detail

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      "data", "design", "out", "model", "coding", "ss", "perms", "strategy", "seed", "statistic", "threads",
      "exact", "alpha", "scale", "transform", "transform_shift", "impute", "impute_threshold", "exclude",
      "random", "ordinal", "closure", "sca", "outlier_components", "svg", "dump_x", "power.factors", "power.effects",
      "power.replicates", "power.grid", "power.axis", "power.datasets", "power.vars", "power.noise",
      "power.budget_ms"};
  return keys;
}

inline RunConfig make_run_config(const ConfigMap& map) {
  for (const auto& [k, v] : map) {
    if (!known_config_keys().count(k)) fail(ErrorKind::invalid_argument, "unknown setting '" + k + "'");
  }
  auto get = [&](const std::string& k, const std::string& fallback = "") {
    const auto it = map.find(k);
    return it == map.end() ? fallback : it->second;
  };
  RunConfig c;
  c.source = map;
  c.data_csv = get("data");
  c.design_csv = get("design");
  c.output_dir = get("out", c.output_dir);
  c.formula = get("model");
  c.coding = parse_coding(get("coding", "sum"));
  c.ss = parse_ss_type(get("ss", "simultaneous"));
  for (auto& f : split_list(get("random"))) c.design.random_factors.insert(f);
  for (auto& f : split_list(get("ordinal"))) c.design.ordinal_factors.insert(f);
  c.design.hierarchy_closure = detail::to_bool("closure", get("closure", "true"));
  if (const auto m = get("impute"); !m.empty() && m != "none") {
    c.impute = ImputeOptions{parse_impute(m), detail::to_number("impute_threshold", get("impute_threshold", "0"))};
  }
  c.transform = detail::parse_transform_setting(get("transform"),
                                                detail::to_number("transform_shift", get("transform_shift", "0")));
  c.scale = detail::parse_scale_setting(get("scale", "autoscale"));
  c.plan.n_permutations = detail::to_count("perms", get("perms", "999"));
  c.plan.strategy = parse_strategy(get("strategy", "rows"));
  c.plan.seed = detail::to_count("seed", get("seed", "1"));
  c.plan.statistic = parse_statistic(get("statistic", "F"));
  c.plan.threads = detail::to_count("threads", get("threads", "1"));
  c.plan.allow_exact = detail::to_bool("exact", get("exact", "true"));
  c.plan.ss = c.ss;
  c.plan.validate();
  c.alpha = detail::to_number("alpha", get("alpha", "0.05"));
  for (const auto& item : split_list(get("sca"))) {
    const auto colon = item.rfind(':');
    ScaRequest r{item, 2};
    if (colon != std::string::npos) {
      r.term = trim(item.substr(0, colon));
      r.components = detail::to_count("sca", trim(item.substr(colon + 1)));
    }
    c.sca.push_back(r);
  }
  if (const auto ex = get("exclude"); ex != "none") c.exclude = split_list(ex);
  c.outlier_components = detail::to_count("outlier_components", get("outlier_components", "2"));
  c.svg = detail::to_bool("svg", get("svg", "false"));
  c.dump_x = detail::to_bool("dump_x", get("dump_x", "false"));

  if (map.count("power.factors")) {
    SimulationScenario s;
    for (const auto& f : split_list(get("power.factors"))) s.factors.push_back(detail::parse_factor_template(f));
    s.formula = c.formula;
    s.replicates = detail::to_count("power.replicates", get("power.replicates", "2"));
    for (const auto& item : split_list(get("power.effects"))) {
      const auto colon = item.rfind(':');
      if (colon == std::string::npos) fail(ErrorKind::invalid_argument, "power.effects entries are 'term:theta'");
      s.effect_sizes[trim(item.substr(0, colon))] = detail::to_number("power.effects", item.substr(colon + 1));
    }
    s.n_vars = detail::to_count("power.vars", get("power.vars", "10"));
    s.n_datasets = detail::to_count("power.datasets", get("power.datasets", "100"));
    s.alpha = c.alpha;
    s.plan = c.plan;
    s.coding = c.coding;
    if (c.transform) s.preprocess.steps.emplace_back(*c.transform);
    if (const auto n = get("power.noise", "gaussian"); n == "heavy_tailed" || n == "t3") {
      s.noise = NoiseModel::heavy_tailed;
    } else if (n != "gaussian") {
      fail(ErrorKind::invalid_argument, "unknown noise model '" + n + "'");
    }
    s.axis = parse_grid_axis(get("power.axis", "effect_size"));
    s.grid.clear();
    for (const auto& g : split_list(get("power.grid", "1"))) s.grid.push_back(detail::to_number("power.grid", g));
    s.seed = c.plan.seed;
    if (map.count("power.budget_ms")) {
      s.budget = std::chrono::milliseconds(detail::to_count("power.budget_ms", get("power.budget_ms")));
    }
    c.power = std::move(s);
  }
  return c;
}

/// Data matrix and design rows joined by sample id, after exclusions.
struct LoadedData {
  RawResponseMatrix raw;
  DesignTable design;
  std::vector<PrepAction> excluded;
};

inline LoadedData load_inputs(const RunConfig& c) {
  if (c.data_csv.empty() || c.design_csv.empty()) fail(ErrorKind::invalid_argument, "both data and design CSVs are required");
  const io::CsvTable data_csv = io::read_csv(c.data_csv);
  const io::CsvTable design_csv = io::read_csv(c.design_csv);
  RawResponseMatrix all = RawResponseMatrix::from_csv(data_csv, c.data_csv);
  if (design_csv.header.size() < 2) fail(ErrorKind::io, c.design_csv + ": needs a sample id column and factor columns");

  std::map<std::string, std::size_t> data_row;
  for (std::size_t i = 0; i < all.sample_ids.size(); ++i) {
    if (!data_row.emplace(all.sample_ids[i], i).second) {
      fail(ErrorKind::io, c.data_csv + ": duplicate sample id '" + all.sample_ids[i] + "'");
    }
  }
  if (design_csv.rows.size() != all.sample_ids.size()) {
    fail(ErrorKind::io, "data has " + std::to_string(all.sample_ids.size()) + " samples but design has " +
                            std::to_string(design_csv.rows.size()));
  }

  LoadedData out;
  out.design.factor_names.assign(design_csv.header.begin() + 1, design_csv.header.end());
  std::set<std::string> seen;
  std::vector<std::size_t> keep;
  std::set<std::string> used_exclusions;
  for (std::size_t r = 0; r < design_csv.rows.size(); ++r) {
    const auto& row = design_csv.rows[r];
    const std::string& id = row[0];
    if (!seen.insert(id).second) fail(ErrorKind::io, c.design_csv + ": duplicate sample id '" + id + "'");
    const auto it = data_row.find(id);
    if (it == data_row.end()) fail(ErrorKind::io, "sample '" + id + "' is in the design but not in the data");
    std::optional<std::string> reason;
    for (const auto& ex : c.exclude) {
      const auto eq = ex.find('=');
      bool hit = false;
      if (eq == std::string::npos) {
        hit = ex == id;
      } else {
        const std::string factor = trim(ex.substr(0, eq));
        const std::string level = trim(ex.substr(eq + 1));
        for (std::size_t f = 0; f < out.design.factor_names.size(); ++f) {
          if (out.design.factor_names[f] == factor && row[f + 1] == level) hit = true;
        }
      }
      if (hit) {
        used_exclusions.insert(ex);
        reason = ex;
      }
    }
    if (reason) {
      out.excluded.push_back({id, "", "excluded:" + *reason});
      continue;
    }
    keep.push_back(it->second);
    out.design.sample_ids.push_back(id);
    out.design.rows.emplace_back(row.begin() + 1, row.end());
  }
  for (const auto& ex : c.exclude) {
    if (!used_exclusions.count(ex)) fail(ErrorKind::invalid_argument, "exclusion '" + ex + "' matches no sample");
  }
  if (keep.empty()) fail(ErrorKind::invalid_argument, "every sample was excluded");

  out.raw.variables = all.variables;
  out.raw.values.resize(static_cast<Eigen::Index>(keep.size()), all.values.cols());
  out.raw.missing.resize(static_cast<Eigen::Index>(keep.size()), all.values.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    out.raw.values.row(static_cast<Eigen::Index>(i)) = all.values.row(static_cast<Eigen::Index>(keep[i]));
    out.raw.missing.row(static_cast<Eigen::Index>(i)) = all.missing.row(static_cast<Eigen::Index>(keep[i]));
    out.raw.sample_ids.push_back(all.sample_ids[keep[i]]);
  }
  return out;
}

/// Everything computed by a fit run.
struct FitResult {
  DesignSpec design;
  ResponseMatrix data;
  ModelMatrix X;
  Decomposition decomposition;
  SsReport ss;
  PermutationResult permutations;
  AscaTable table;
  std::vector<PrepAction> report;
  std::vector<std::string> warnings;
};

inline FitResult run_fit(const RunConfig& c) {
  if (c.formula.empty()) fail(ErrorKind::invalid_argument, "a model formula is required");
  LoadedData in = load_inputs(c);
  DesignSpec spec = build_design(in.design, c.formula, c.design);

  PreprocessPlan plan;
  if (c.impute) plan.steps.emplace_back(*c.impute);
  if (c.transform) plan.steps.emplace_back(*c.transform);
  if (c.scale) plan.steps.emplace_back(*c.scale);
  PreprocessResult prepped = preprocess(in.raw, spec, plan);

  ModelMatrix X = build_model_matrix(prepped.design, c.coding);
  Decomposition d = fit_ols(prepped.design, X, prepped.data);
  SsReport ss = sum_of_squares(prepped.design, X, prepped.data, d, c.ss);
  PermutationResult perm = permutation_test(c.plan, prepped.design, X, prepped.data);

  std::vector<double> f_values(prepped.design.terms().size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t t = 1; t < f_values.size(); ++t) {
    f_values[t] = f_ratio(ss, prepped.design, prepped.design.terms()[t]);
  }
  AscaTable table = build_asca_table(prepped.design, ss, f_values, perm.p_values);

  std::vector<PrepAction> report = std::move(in.excluded);
  report.insert(report.end(), prepped.report.begin(), prepped.report.end());
  std::vector<std::string> warnings = std::move(prepped.warnings);
  if (std::abs(ss.percent_sum() - 100.0) > 1e-6) {
    warnings.push_back("explained variances sum to " + io::format_sig(ss.percent_sum()) +
                       "% (effect matrices are not orthogonal)");
  }
  return {std::move(prepped.design), std::move(prepped.data), std::move(X), std::move(d), std::move(ss),
          std::move(perm), std::move(table), std::move(report), std::move(warnings)};
}

namespace detail {

inline std::string file_safe(const std::string& name) {
  std::string out;
  for (char c : name) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

class OutputDir {
 public:
  explicit OutputDir(std::string dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) fail(ErrorKind::io, "cannot create output directory '" + dir_ + "': " + ec.message());
  }

  void write(const std::string& name, const std::string& content) {
    io::write_file((std::filesystem::path(dir_) / name).string(), content);
    written_.push_back(name);
  }

  const std::vector<std::string>& written() const { return written_; }

 private:
  std::string dir_;
  std::vector<std::string> written_;
};

inline std::vector<std::string> level_fields(const DesignSpec& spec, std::size_t sample) {
  std::vector<std::string> out;
  for (std::size_t f = 0; f < spec.factors().size(); ++f) out.push_back(spec.factors()[f].levels[spec.level(sample, f)]);
  return out;
}

inline std::vector<std::string> factor_headers(const DesignSpec& spec) {
  std::vector<std::string> out;
  for (const auto& f : spec.factors()) out.push_back(f.name);
  return out;
}

template <typename... Parts>
std::vector<std::string> concat(Parts&&... parts) {
  std::vector<std::string> out;
  (out.insert(out.end(), parts.begin(), parts.end()), ...);
  return out;
}

inline void write_diagnostics(OutputDir& out, const FitResult& r, const RunConfig& c,
                              std::vector<std::string>& warnings) {
  const Eigen::VectorXd q = residual_q(r.decomposition);
  {
    std::ostringstream s;
    io::CsvWriter w(s);
    w.row(concat(std::vector<std::string>{"sample", "Q"}, factor_headers(r.design)));
    for (std::size_t i = 0; i < r.design.n_samples(); ++i) {
      w.row(concat(std::vector<std::string>{r.data.sample_ids[i], io::format_double(q(static_cast<Eigen::Index>(i)))},
                   level_fields(r.design, i)));
    }
    out.write("residual_diagnostics.csv", s.str());
  }

  const AssumptionReport a = check_assumptions(r.decomposition, r.design);
  {
    std::ostringstream s;
    io::CsvWriter w(s);
    w.row({"theoretical", "sample"});
    for (const auto& p : a.qq) w.row({io::format_double(p.theoretical), io::format_double(p.sample)});
    out.write("check_qq.csv", s.str());
  }
  {
    std::ostringstream s;
    io::CsvWriter w(s);
    w.row({"factor", "level", "n", "min", "q1", "median", "q3", "max"});
    for (const auto& b : a.boxes) {
      w.row({b.factor, b.level, std::to_string(b.n), io::format_double(b.q.min), io::format_double(b.q.q1),
             io::format_double(b.q.median), io::format_double(b.q.q3), io::format_double(b.q.max)});
    }
    out.write("check_boxplots.csv", s.str());
  }
  {
    std::ostringstream s;
    io::CsvWriter w(s);
    w.row({"order", "sample", "Q"});
    for (Eigen::Index i = 0; i < a.sample_q.size(); ++i) {
      w.row({std::to_string(i + 1), r.data.sample_ids[static_cast<std::size_t>(i)], io::format_double(a.sample_q(i))});
    }
    out.write("check_order.csv", s.str());
  }
  {
    std::ostringstream s;
    io::CsvWriter w(s);
    w.row({"check", "value", "ok"});
    w.row({"qq_correlation", io::format_double(a.qq_correlation), ""});
    w.row({"jarque_bera", io::format_double(a.jarque_bera), ""});
    w.row({"normality_p", io::format_double(a.normality_p), a.normality_ok ? "true" : "false"});
    w.row({"variance_ratio", io::format_double(a.variance_ratio), a.variance_ok ? "true" : "false"});
    out.write("check_summary.csv", s.str());
  }
  warnings.insert(warnings.end(), a.warnings.begin(), a.warnings.end());

  if (c.outlier_components > 0) {
    const Eigen::MatrixXd centered = r.data.values.rowwise() - r.data.values.colwise().mean();
    const std::size_t rank = rank_of(Eigen::JacobiSVD<Eigen::MatrixXd>(centered).singularValues(), centered.rows(),
                                     centered.cols());
    const std::size_t k = std::min(c.outlier_components, rank);
    if (k > 0) {
      const OutlierReport o = outlier_diagnostics(r.data.values, k);
      std::ostringstream s;
      io::CsvWriter w(s);
      w.row({"sample", "D", "Q", "flagged"});
      for (Eigen::Index i = 0; i < o.q.size(); ++i) {
        const bool flagged = std::find(o.flagged.begin(), o.flagged.end(), static_cast<std::size_t>(i)) != o.flagged.end();
        w.row({r.data.sample_ids[static_cast<std::size_t>(i)], io::format_double(o.d(i)), io::format_double(o.q(i)),
               flagged ? "true" : "false"});
      }
      out.write("outliers.csv", s.str());
    }
  }

  if (c.svg && !a.qq.empty()) {
    svg::Series s{"residuals", {}, {}};
    for (const auto& p : a.qq) {
      s.x.push_back(p.theoretical);
      s.y.push_back(p.sample);
    }
    out.write("check_qq.svg", svg::scatter({s}, "Residual Q-Q", "Gaussian quantile", "standardized residual"));
  }
}

/// Coded model matrix, one column per coefficient labelled term[k].
inline std::string model_matrix_csv(const DesignSpec& spec, const ModelMatrix& X) {
  std::ostringstream s;
  io::CsvWriter w(s);
  std::vector<std::string> header{"sample"};
  for (std::size_t t = 0; t < X.spans.size(); ++t) {
    const std::string name = spec.term_name(spec.terms()[t]);
    for (std::size_t k = 0; k < X.spans[t].width; ++k) {
      header.push_back(X.spans[t].width == 1 ? name : name + "[" + std::to_string(k + 1) + "]");
    }
  }
  w.row(header);
  for (std::size_t i = 0; i < X.rows(); ++i) {
    std::vector<std::string> row{spec.sample_ids()[i]};
    for (std::size_t j = 0; j < X.cols(); ++j) {
      row.push_back(io::format_double(X.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    }
    w.row(row);
  }
  return s.str();
}

inline void write_prep_report(OutputDir& out, const std::vector<PrepAction>& report) {
  std::ostringstream s;
  io::CsvWriter w(s);
  w.row({"sample", "variable", "action"});
  for (const auto& a : report) w.row({a.sample_id, a.variable, a.action});
  out.write("prep_report.csv", s.str());
}

inline void write_component_outputs(OutputDir& out, const FitResult& r, const RunConfig& c,
                                    std::vector<std::string>& warnings) {
  std::vector<ScaRequest> requests = c.sca;
  if (requests.empty()) {
    for (std::size_t t = 1; t < r.design.terms().size(); ++t) {
      const Term& term = r.design.terms()[t];
      requests.push_back({r.design.term_name(term), std::min<std::size_t>(2, dof_of_term(r.design, term))});
    }
  }
  for (const auto& req : requests) {
    const std::size_t t = r.design.term_index(req.term);
    const Term& term = r.design.terms()[t];
    const std::string name = r.design.term_name(term);
    const std::string tag = file_safe(name);
    if (r.permutations.p_values[t] > c.alpha) {
      warnings.push_back("term '" + name + "' is not significant (p = " + io::format_sig(r.permutations.p_values[t]) +
                         "); its component model should not be interpreted");
    }
    const ScaModel m = fit_sca(r.decomposition, t, req.components, r.design);
    const DqStatistics dq = dq_statistics(m);
    const auto cells = r.design.term_cells(term);
    std::vector<std::string> pcs;
    std::vector<std::string> apcs;
    for (std::size_t k = 0; k < m.n_components(); ++k) {
      pcs.push_back("PC" + std::to_string(k + 1));
      apcs.push_back("aug_PC" + std::to_string(k + 1));
    }
    {
      std::ostringstream s;
      io::CsvWriter w(s);
      w.row(concat(std::vector<std::string>{"sample", "group"}, factor_headers(r.design), pcs, apcs));
      for (std::size_t i = 0; i < r.design.n_samples(); ++i) {
        std::vector<std::string> values;
        for (std::size_t k = 0; k < m.n_components(); ++k) {
          values.push_back(io::format_double(m.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))));
        }
        for (std::size_t k = 0; k < m.n_components(); ++k) {
          values.push_back(
              io::format_double(m.augmented_scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))));
        }
        w.row(concat(std::vector<std::string>{r.data.sample_ids[i], r.design.cell_label(term.factors, i)},
                     level_fields(r.design, i), values));
      }
      out.write("scores_" + tag + ".csv", s.str());
    }
    {
      std::ostringstream s;
      io::CsvWriter w(s);
      w.row(concat(std::vector<std::string>{"variable"}, pcs));
      for (Eigen::Index j = 0; j < m.loadings.rows(); ++j) {
        std::vector<std::string> row{r.data.variables[static_cast<std::size_t>(j)]};
        for (Eigen::Index k = 0; k < m.loadings.cols(); ++k) row.push_back(io::format_double(m.loadings(j, k)));
        w.row(row);
      }
      out.write("loadings_" + tag + ".csv", s.str());
    }
    {
      std::ostringstream s;
      io::CsvWriter w(s);
      w.row({"sample", "group", "D", "Q"});
      for (std::size_t i = 0; i < r.design.n_samples(); ++i) {
        w.row({r.data.sample_ids[i], r.design.cell_label(term.factors, i),
               io::format_double(dq.d(static_cast<Eigen::Index>(i))), io::format_double(dq.q(static_cast<Eigen::Index>(i)))});
      }
      out.write("dq_" + tag + ".csv", s.str());
    }
    {
      std::ostringstream s;
      io::CsvWriter w(s);
      w.row({"component", "singular_value", "explained"});
      for (Eigen::Index k = 0; k < m.scree.size(); ++k) {
        const double ex = m.effect_ss > 0 ? m.scree(k) * m.scree(k) / m.effect_ss : 0.0;
        w.row({std::to_string(k + 1), io::format_double(m.scree(k)), io::format_double(ex)});
      }
      out.write("scree_" + tag + ".csv", s.str());
    }
    if (c.svg) {
      std::map<std::string, svg::Series> groups;
      for (std::size_t i = 0; i < r.design.n_samples(); ++i) {
        const auto label = r.design.cell_label(term.factors, i);
        auto& g = groups[label];
        g.label = label;
        const auto row = static_cast<Eigen::Index>(i);
        if (m.n_components() >= 2) {
          g.x.push_back(m.augmented_scores(row, 0));
          g.y.push_back(m.augmented_scores(row, 1));
        } else {
          g.x.push_back(static_cast<double>(i + 1));
          g.y.push_back(m.augmented_scores(row, 0));
        }
      }
      std::vector<svg::Series> series;
      for (auto& [label, g] : groups) series.push_back(std::move(g));
      const bool two = m.n_components() >= 2;
      out.write("scores_" + tag + ".svg", svg::scatter(series, name + " augmented scores", two ? "PC1" : "sample",
                                                       two ? "PC2" : "PC1"));
      out.write("scree_" + tag + ".svg",
                svg::bars(std::vector<double>(m.scree.data(), m.scree.data() + m.scree.size()), name + " scree",
                          "component", "singular value"));
    }
  }

  const std::size_t rdof = residual_dof(r.design);
  if (rdof > 0) {
    const Eigen::MatrixXd centered = r.decomposition.residuals.rowwise() - r.decomposition.residuals.colwise().mean();
    const std::size_t rank = rank_of(Eigen::JacobiSVD<Eigen::MatrixXd>(centered).singularValues(), centered.rows(),
                                     centered.cols());
    if (rank > 0) {
      const ResidualPca pca = residual_pca(r.decomposition, std::min<std::size_t>(2, rank));
      std::ostringstream s;
      io::CsvWriter w(s);
      w.row({"component", "singular_value", "explained"});
      const double ss = centered.squaredNorm();
      for (Eigen::Index k = 0; k < pca.fit.singular_values.size(); ++k) {
        const double sv = pca.fit.singular_values(k);
        w.row({std::to_string(k + 1), io::format_double(sv), io::format_double(sv * sv / ss)});
      }
      out.write("residual_pca_scree.csv", s.str());
    }
  }
}

inline std::string iso_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string_view command_name(Command c) {
  switch (c) {
    case Command::fit: return "fit";
    case Command::sca: return "sca";
    case Command::power: return "power";
    case Command::check: return "check";
  }
  return "";
}

}  // namespace detail

struct RunOutcome {
  std::vector<std::string> files;
  std::vector<std::string> warnings;
};

inline RunOutcome run_pipeline(const RunConfig& c, Command command) {
  detail::OutputDir out(c.output_dir);
  std::error_code ec;
  std::filesystem::remove(std::filesystem::path(c.output_dir) / "error.json", ec);
  std::vector<std::string> warnings;
  nlohmann::json manifest;
  manifest["command"] = detail::command_name(command);
  manifest["seed"] = c.plan.seed;
  manifest["config_hash"] = [&] {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash(c.source)));
    return std::string(buf);
  }();
  manifest["config"] = c.source;

  if (command == Command::power) {
    if (!c.power) fail(ErrorKind::invalid_argument, "power runs need power.factors and the related settings");
    const PowerCurve curve = power_curve(*c.power);
    out.write("power_curve.csv", to_csv(curve));
    if (c.svg) {
      std::vector<svg::Series> series;
      for (std::size_t t = 0; t < curve.terms.size(); ++t) {
        svg::Series s{curve.terms[t], {}, {}};
        for (std::size_t g = 0; g < curve.grid.size(); ++g) {
          if (!curve.completed[g]) continue;
          s.x.push_back(curve.grid[g]);
          s.y.push_back(curve.power[g][t]);
        }
        series.push_back(std::move(s));
      }
      out.write("power_curve.svg", svg::lines(series, "Power", curve.axis == GridAxis::effect_size ? "effect size"
                                                                                                     : "replicates",
                                              "rejection rate"));
    }
    if (std::find(curve.completed.begin(), curve.completed.end(), false) != curve.completed.end()) {
      warnings.push_back("time budget exhausted; the power curve is partial");
    }
  } else {
    FitResult r = run_fit(c);
    warnings.insert(warnings.end(), r.warnings.begin(), r.warnings.end());
    manifest["n_samples"] = r.design.n_samples();
    manifest["n_variables"] = r.data.n_vars();
    manifest["formula"] = r.design.formula();
    manifest["permutations"] = {{"strategy", to_string(c.plan.strategy)},
                                {"count", r.permutations.n_permutations},
                                {"exact", r.permutations.exact}};
    detail::write_prep_report(out, r.report);
    if (c.dump_x) out.write("model_matrix.csv", detail::model_matrix_csv(r.design, r.X));
    detail::write_diagnostics(out, r, c, warnings);
    if (command != Command::check) {
      out.write("asca_table.csv", to_csv(r.table));
      out.write("asca_table.txt", to_text(r.table));
    }
    if (command == Command::sca || (command == Command::fit && !c.sca.empty())) {
      detail::write_component_outputs(out, r, c, warnings);
    }
  }
  manifest["warnings"] = warnings;
  manifest["timestamp"] = detail::iso_timestamp();
  auto files = out.written();
  files.push_back("run_manifest.json");
  manifest["outputs"] = files;
  out.write("run_manifest.json", manifest.dump(2) + "\n");
  return {files, warnings};
}

/// Process exit status for a failure of the given kind.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io:
    case ErrorKind::formula:
    case ErrorKind::invalid_argument: return 2;
    default: return 3;
  }
}

inline std::string error_record(std::string_view kind, std::string_view message) {
  nlohmann::json j;
  j["error"] = kind;
  j["message"] = message;
  return j.dump();
}

}  // namespace asca
