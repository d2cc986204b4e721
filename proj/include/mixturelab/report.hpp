#pragma once

// CSV ingestion and serialization of fit, study, theory and causal reports.
// JSON goes through nlohmann::json (std::map objects, so keys come out
// sorted) and is written by a small printer that formats every double
// with %.17g; nlohmann's own shortest-round-trip output is not used.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixturelab/causal.hpp"
#include "mixturelab/errors.hpp"
#include "mixturelab/estimation.hpp"
#include "mixturelab/information.hpp"
#include "mixturelab/model.hpp"
#include "mixturelab/simgen.hpp"
#include "mixturelab/theory.hpp"

namespace mixturelab {

using Json = nlohmann::json;

// ---- CSV -------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;  // source line of each row, 1-based

  int column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return static_cast<int>(j);
    throw InputError("CSV has no column named '" + name + "'");
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, int line_no) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
    } else if (ch == '"' && field.find_first_not_of(" \t") == std::string::npos) {
      field.clear();
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(field);
      field.clear();
    } else {
      field += ch;
    }
  }
  if (quoted) throw InputError("line " + std::to_string(line_no) + ": unterminated quote");
  fields.push_back(field);
  return fields;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

}  // namespace detail

inline CsvTable parse_csv(std::istream& in) {
  CsvTable table;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line, line_no);
    for (auto& f : fields) f = detail::trim(f);
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size())
      throw InputError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(table.header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    table.rows.push_back(std::move(fields));
    table.line_numbers.push_back(line_no);
  }
  if (!have_header) throw InputError("CSV is empty (a header row is required)");
  return table;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  return parse_csv(in);
}

/// Strict decimal parse: the whole field must be consumed and finite.
inline double parse_number(const std::string& text, int line_no, const std::string& column) {
  const char* begin = text.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (text.empty() || end != begin + text.size() || !std::isfinite(v))
    throw InputError("line " + std::to_string(line_no) + ", column '" + column +
                     "': not a finite number: '" + text + "'");
  return v;
}

inline Matrix numeric_columns(const CsvTable& table, const std::vector<int>& columns) {
  Matrix out(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    for (std::size_t j = 0; j < columns.size(); ++j)
      out(i, j) = parse_number(table.rows[i][columns[j]], table.line_numbers[i],
                               table.header[columns[j]]);
  return out;
}

inline std::vector<int> integer_column(const CsvTable& table, int column) {
  std::vector<int> out;
  out.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const double v = parse_number(table.rows[i][column], table.line_numbers[i], table.header[column]);
    if (v != std::floor(v))
      throw InputError("line " + std::to_string(table.line_numbers[i]) + ", column '" +
                       table.header[column] + "': expected an integer");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline void write_csv(std::ostream& out, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t j = 0; j < fields.size(); ++j) out << (j ? "," : "") << csv_field(fields[j]);
    out << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
}

// ---- JSON printing ---------------------------------------------------------

namespace detail {

inline void write_json_string(std::ostream& out, const std::string& s) {
  out << Json(s).dump();
}

inline void write_json(std::ostream& out, const Json& j, int indent, int depth) {
  const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
  const std::string close_pad(static_cast<std::size_t>(indent * depth), ' ');
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out << "{}";
        return;
      }
      out << "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out << ",\n";
        first = false;
        out << pad;
        write_json_string(out, it.key());
        out << ": ";
        write_json(out, it.value(), indent, depth + 1);
      }
      out << '\n' << close_pad << '}';
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out << "[]";
        return;
      }
      out << "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out << ",\n";
        out << pad;
        write_json(out, j[i], indent, depth + 1);
      }
      out << '\n' << close_pad << ']';
      return;
    }
    case Json::value_t::number_float: {
      const double v = j.get<double>();
      // JSON has no inf/nan; those become null.
      if (std::isfinite(v))
        out << format_double(v);
      else
        out << "null";
      return;
    }
    default:
      out << j.dump();
  }
}

}  // namespace detail

inline std::string to_json_text(const Json& j) {
  std::ostringstream out;
  detail::write_json(out, j, 2, 0);
  out << '\n';
  return out.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << text;
  if (!out) throw InputError("write to '" + path + "' failed");
}

inline Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Json to_json(const Matrix& m) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(to_json(Vector(m.row(i).transpose())));
  return out;
}

inline Json to_json(const MixtureModel& model) {
  Json comps = Json::array();
  for (int k = 0; k < model.components(); ++k)
    comps.push_back({{"weight", model.weight(k)},
                     {"mean", to_json(model.mean(k))},
                     {"covariance", to_json(model.covariance(k))}});
  return comps;
}

// ---- fit reports -----------------------------------------------------------

/// One root: parameters, SEs from the three estimators, allocation rates.
inline Json fit_root_json(const FitResult& fit, const Sample& sample) {
  Json j;
  j["loglik"] = fit.loglik;
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  j["start_index"] = fit.start_index;
  j["spurious"] = fit.spurious.spurious;
  j["spurious_reason"] = fit.spurious.reason;
  j["model"] = to_json(fit.model);
  const InfoReport info = information_report(fit, sample);
  j["i2_positive_definite"] = info.i2_positive_definite;
  Json params = Json::array();
  std::vector<std::vector<NaturalParameter>> per_estimator;
  for (int e = 1; e <= 3; ++e)
    per_estimator.push_back(natural_parameters(fit.model, info.layout, info.estimator(e).variance));
  for (std::size_t r = 0; r < per_estimator[0].size(); ++r) {
    Json row{{"name", per_estimator[0][r].name}, {"estimate", per_estimator[0][r].value}};
    for (int e = 0; e < 3; ++e)
      row["se_i" + std::to_string(e + 1)] = optional_number(per_estimator[e][r].se);
    params.push_back(row);
  }
  j["parameters"] = params;
  Json notes = Json::array();
  for (int e = 1; e <= 3; ++e)
    if (!info.estimator(e).note.empty())
      notes.push_back("I" + std::to_string(e) + ": " + info.estimator(e).note);
  j["notes"] = notes;
  const AllocationRate ar = allocation_rate(fit.responsibilities, sample.labels());
  j["allocation_rate"] = ar.overall;
  if (ar.overall_correct) {
    j["allocation_rate_labels"] = *ar.overall_correct;
    j["allocation_rate_labels_per_component"] = *ar.per_component_correct;
  }
  return j;
}

/// Flat CSV view of a fit report: one row per (root, parameter).
inline std::vector<std::vector<std::string>> fit_csv_rows(const Json& report) {
  std::vector<std::vector<std::string>> rows;
  auto num = [](const Json& v) { return v.is_null() ? std::string() : format_double(v.get<double>()); };
  int r = 0;
  for (const auto& root : report.at("roots")) {
    for (const auto& p : root.at("parameters"))
      rows.push_back({std::to_string(r), root.at("spurious").get<bool>() ? "1" : "0",
                      p.at("name").get<std::string>(), num(p.at("estimate")), num(p.at("se_i1")),
                      num(p.at("se_i2")), num(p.at("se_i3"))});
    rows.push_back({std::to_string(r), root.at("spurious").get<bool>() ? "1" : "0", "AR",
                    num(root.at("allocation_rate")),
                    root.contains("allocation_rate_labels") ? num(root.at("allocation_rate_labels"))
                                                            : "",
                    "", ""});
    ++r;
  }
  return rows;
}

inline const std::vector<std::string> kFitCsvHeader{"root", "spurious", "parameter", "estimate",
                                                    "se_i1", "se_i2", "se_i3"};

// ---- study reports ---------------------------------------------------------

inline Json setting_json(const SimSetting& s) {
  return {{"setting", to_string(s.kind)},
          {"n", s.n},
          {"p", s.p},
          {"df", s.df},
          {"lambda", s.lambda},
          {"d2_grid", s.d2_grid},
          {"rho_grid", s.rho_grid},
          {"rho_panel_d2", s.rho_panel_d2},
          {"replicates", s.replicates},
          {"mc_truth_replicates", s.mc_truth_replicates},
          {"seed", s.seed}};
}

inline Json analysis_json(const AnalysisSummary& a) {
  Json est = Json::array();
  for (const auto& e : a.estimators) {
    Json j{{"estimator", "I" + std::to_string(e.estimator)},
           {"used", e.used},
           {"mean_se", e.mean_se},
           {"abs_bias", e.abs_bias},
           {"rmse", e.rmse}};
    if (e.star_count) j["star_count"] = *e.star_count;
    est.push_back(j);
  }
  return {{"true_sd", a.true_sd},
          {"true_sd_mu12", a.true_sd_mu12},
          {"truth_mean_mu11", a.truth_mean_mu11},
          {"truth_used", a.truth_used},
          {"truth_excluded", a.truth_excluded},
          {"used", a.used},
          {"excluded", a.excluded},
          {"nonconverged", a.nonconverged},
          {"mean_ar", a.mean_ar},
          {"mean_mu11", a.mean_mu11},
          {"estimators", est},
          {"unreliable", a.unreliable},
          {"assessed", a.assessed},
          {"failure_samples", a.failure_samples}};
}

inline Json study_json(const StudyReport& report) {
  Json cells = Json::array();
  for (const auto& c : report.cells)
    cells.push_back({{"cell", c.cell.name},
                     {"panel", c.cell.panel},
                     {"d2", c.cell.d2},
                     {"rho", c.cell.rho},
                     {"bivariate", analysis_json(c.bivariate)},
                     {"univariate", analysis_json(c.univariate)}});
  return {{"config", setting_json(report.setting)}, {"cells", cells}};
}

inline const std::vector<std::string> kStudyCsvHeader{
    "cell", "analysis", "estimator", "abs_bias", "mean_se", "rmse", "star", "ar", "true_sd",
    "used", "excluded", "assessed"};

inline std::vector<std::vector<std::string>> study_csv_rows(const StudyReport& report) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& c : report.cells)
    for (const AnalysisSummary* a : {&c.bivariate, &c.univariate})
      for (const auto& e : a->estimators)
        rows.push_back({c.cell.name, a->analysis, "I" + std::to_string(e.estimator),
                        format_double(e.abs_bias), format_double(e.mean_se), format_double(e.rmse),
                        e.star_count ? std::to_string(*e.star_count) : "",
                        format_double(a->mean_ar), format_double(a->true_sd),
                        std::to_string(a->used), std::to_string(a->excluded),
                        a->assessed ? "1" : "0"});
  return rows;
}

// ---- theory reports --------------------------------------------------------

inline Json theory_json(const TheoryReport& report) {
  Json checks = Json::array();
  for (const auto& c : report.checks)
    checks.push_back({{"name", c.name},
                      {"passed", c.passed},
                      {"max_error", c.max_error},
                      {"tolerance", c.tolerance},
                      {"detail", c.detail}});
  Json rows = Json::array();
  for (const auto& r : report.dominance)
    rows.push_back({{"p", r.scenario.p},
                    {"d1", r.scenario.d1},
                    {"d2", r.scenario.d2},
                    {"sigma2", r.scenario.sigma2},
                    {"I", r.univariate},
                    {"II", r.bivariate},
                    {"bound", r.bound},
                    {"margin", r.margin},
                    {"exceeds_bound", r.exceeds_bound},
                    {"II_normalized", r.bivariate_normalized}});
  Json levels = Json::array();
  for (const auto& l : report.s1_limit.levels)
    levels.push_back({{"level", l.level},
                      {"monte_carlo", l.monte_carlo},
                      {"mc_standard_error", l.mc_standard_error},
                      {"quadrature", optional_number(l.quadrature)}});
  return {{"checks", checks},
          {"all_passed", report.all_passed()},
          {"dominance", rows},
          {"allocation_limit", {{"levels", levels}, {"nondecreasing", report.s1_limit.nondecreasing}}}};
}

// ---- causal reports --------------------------------------------------------

inline Json iv_model_json(const IvMixtureModel& model) {
  Json cells;
  for (int c = 0; c < kIvCells; ++c)
    cells[kIvCellNames[c]] = {{"mean", to_json(model.mean(c))},
                              {"covariance", to_json(model.covariance(c))}};
  return {{"pi", model.pi()},
          {"omega_a", model.omega(kAlways)},
          {"omega_n", model.omega(kNever)},
          {"omega_c", model.omega(kComplier)},
          {"cells", cells}};
}

inline Json cace_json(const CaceReport& report) {
  Json rows = Json::array();
  for (const auto& r : report.rows) {
    Json j{{"name", r.name}, {"estimate", r.estimate}, {"contrast", r.contrast}};
    for (int e = 0; e < 3; ++e) {
      j["se_i" + std::to_string(e + 1)] = optional_number(r.se[e]);
      if (r.contrast) j["p_i" + std::to_string(e + 1)] = optional_number(r.p_value[e]);
    }
    rows.push_back(j);
  }
  Json notes = Json::array();
  for (int e = 1; e <= 3; ++e)
    if (!report.info.estimator(e).note.empty())
      notes.push_back("I" + std::to_string(e) + ": " + report.info.estimator(e).note);
  return {{"rows", rows}, {"notes", notes}, {"i2_positive_definite", report.info.i2_positive_definite}};
}

/// Root catalog, moment anchor, chosen ELE and its estimate table.
inline Json causal_analysis_json(const IvSample& sample, const IvFitConfig& config) {
  Json j;
  j["n"] = sample.n();
  j["outcome_columns"] = sample.dim();
  Json counts;
  for (int d = 0; d < 2; ++d)
    for (int z = 0; z < 2; ++z)
      counts["d" + std::to_string(d) + "z" + std::to_string(z)] = sample.count(d, z);
  j["cell_counts"] = counts;
  j["warnings"] = sample.warnings();
  const IvMultiStartReport search = iv_fit_multistart(sample, config);
  Json roots = Json::array();
  for (const auto& r : search.roots)
    roots.push_back({{"loglik", r.loglik},
                     {"iterations", r.iterations},
                     {"converged", r.converged},
                     {"start_index", r.start_index},
                     {"model", iv_model_json(r.model)}});
  j["roots"] = roots;
  Json failures = Json::array();
  for (const auto& f : search.failures)
    failures.push_back({{"start_index", f.start_index}, {"reason", f.reason}});
  j["failed_starts"] = failures;
  if (search.roots.empty()) return j;
  const EleChoice choice = choose_ele(search.roots, sample);
  if (choice.mom)
    j["mom"] = {{"pi", choice.mom->pi},
                {"omega_a", choice.mom->omega_a},
                {"omega_n", choice.mom->omega_n},
                {"omega_c", choice.mom->omega_c}};
  else
    j["mom"] = nullptr;
  j["ele_index"] = choice.index;
  j["ele_note"] = choice.note;
  j["ele_is_max_loglik"] = choice.index == 0;
  j["ele"] = cace_json(cace_report(search.roots[choice.index].model, sample));
  return j;
}

inline const std::vector<std::string> kCausalCsvHeader{"analysis", "parameter", "estimate", "se_i1",
                                                       "se_i2", "se_i3", "p_i1", "p_i2", "p_i3"};

inline std::vector<std::vector<std::string>> causal_csv_rows(const Json& analysis,
                                                             const std::string& label) {
  std::vector<std::vector<std::string>> rows;
  if (!analysis.contains("ele")) return rows;
  auto num = [](const Json& row, const char* key) {
    return row.contains(key) && !row.at(key).is_null() ? format_double(row.at(key).get<double>())
                                                       : std::string();
  };
  for (const auto& r : analysis.at("ele").at("rows"))
    rows.push_back({label, r.at("name").get<std::string>(), num(r, "estimate"), num(r, "se_i1"),
                    num(r, "se_i2"), num(r, "se_i3"), num(r, "p_i1"), num(r, "p_i2"),
                    num(r, "p_i3")});
  return rows;
}

}  // namespace mixturelab
