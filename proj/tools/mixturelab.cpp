// mixturelab command-line front end.
//
//   mixturelab fit data.csv --columns RW,CL -k 2
//   mixturelab simulate --setting s1 --json s1.json --csv s1.csv
//   mixturelab theory-check
//   mixturelab causal iv.csv --outcome x --aux h --bivariate
//   mixturelab contour --preset d --csv grid.csv
//
// Exit codes: 0 success, 2 input error, 3 numeric failure, 4 theory gate.

#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mixturelab/mixturelab.hpp"

namespace ml = mixturelab;
using ml::Json;

namespace {

constexpr const char* kVersion = "1.0.0";
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitGate = 4;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Output {
  std::string json_path;
  std::string csv_path;
  std::string format = "json";
  bool timings = false;
};

void add_output_options(CLI::App* sub, Output& out) {
  sub->add_option("--json", out.json_path, "Write the JSON report here");
  sub->add_option("--csv", out.csv_path, "Write the CSV table here");
  sub->add_option("--format", out.format, "Stdout format when no file is given")
      ->check(CLI::IsMember({"json", "csv"}));
  sub->add_flag("--timings", out.timings, "Embed wall-clock phase timings (breaks byte identity)");
}

// Flags echoed into reports. Output destinations are left out so that two
// runs writing to different places still produce identical files.
Json flag_set(const CLI::App* sub) {
  Json flags = Json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_name(false, true);
    if (name == "--help" || name == "--json" || name == "--csv" || name == "--points-csv")
      continue;
    if (opt->count() == 0) continue;
    const auto& results = opt->results();
    if (results.size() == 1)
      flags[name] = results.front();
    else
      flags[name] = results;
  }
  return flags;
}

Json envelope(const CLI::App* sub, std::uint64_t seed) {
  return {{"tool", "mixturelab"},
          {"version", kVersion},
          {"command", sub->get_name()},
          {"flags", flag_set(sub)},
          {"seed", seed}};
}

void emit(const Output& out, const Json& report, const std::vector<std::string>& header,
          const std::vector<std::vector<std::string>>& rows) {
  if (!out.json_path.empty()) ml::write_text_file(out.json_path, ml::to_json_text(report));
  if (!out.csv_path.empty()) {
    std::ostringstream csv;
    ml::write_csv(csv, header, rows);
    ml::write_text_file(out.csv_path, csv.str());
  }
  if (out.json_path.empty() && out.csv_path.empty()) {
    if (out.format == "csv")
      ml::write_csv(std::cout, header, rows);
    else
      std::cout << ml::to_json_text(report);
  }
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = ml::detail::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ---- fit -------------------------------------------------------------------

struct FitArgs {
  std::string data;
  std::string columns;
  std::string label_column;
  int k = 2;
  std::vector<double> fix_weights;
  std::string fix_cov;
  int starts = 10;
  std::uint64_t seed = 1;
  int max_iterations = 1000;
  double tolerance = 1e-8;
  Output out;
};

// K stacked m x m blocks, one header row naming the columns.
std::vector<ml::Matrix> read_covariances(const std::string& path, int k, int m) {
  const ml::CsvTable table = ml::read_csv(path);
  if (static_cast<int>(table.header.size()) != m)
    throw ml::InputError(path + ": covariance file needs " + std::to_string(m) + " columns");
  if (static_cast<int>(table.rows.size()) != k * m)
    throw ml::InputError(path + ": covariance file needs " + std::to_string(k * m) + " rows");
  std::vector<int> cols(m);
  for (int j = 0; j < m; ++j) cols[j] = j;
  const ml::Matrix all = ml::numeric_columns(table, cols);
  std::vector<ml::Matrix> out;
  for (int c = 0; c < k; ++c) out.push_back(all.middleRows(c * m, m));
  return out;
}

int run_fit(const CLI::App* sub, const FitArgs& a) {
  const auto t0 = Clock::now();
  const ml::CsvTable table = ml::read_csv(a.data);
  std::vector<int> cols;
  if (a.columns.empty()) {
    for (std::size_t j = 0; j < table.header.size(); ++j)
      if (table.header[j] != a.label_column) cols.push_back(static_cast<int>(j));
  } else {
    for (const auto& name : split_list(a.columns)) cols.push_back(table.column(name));
  }
  if (cols.empty()) throw ml::InputError("no numeric columns selected");
  std::optional<std::vector<int>> labels;
  if (!a.label_column.empty()) labels = ml::integer_column(table, table.column(a.label_column));
  const ml::Sample sample(ml::numeric_columns(table, cols), labels);

  ml::FitConfig config;
  config.k = a.k;
  config.seed = a.seed;
  config.max_iterations = a.max_iterations;
  config.rel_tolerance = a.tolerance;
  config.threads = 0;
  if (!a.fix_weights.empty()) config.fix_weights = a.fix_weights;
  if (!a.fix_cov.empty()) config.fix_covariances = read_covariances(a.fix_cov, a.k, sample.dim());
  if (labels && sample.max_label() <= a.k) config.starts.push_back(ml::start_from_labels(sample, a.k));
  for (int j = 0; j < sample.dim(); ++j) config.starts.push_back(ml::QuantileSplitStart{j});
  for (int s = 0; s < a.starts; ++s) config.starts.push_back(ml::RandomResponsibilityStart{});
  const auto t1 = Clock::now();

  const ml::MultiStartReport search = ml::multi_start_search(sample, config);
  Json report = envelope(sub, a.seed);
  std::vector<std::string> names;
  for (int c : cols) names.push_back(table.header[c]);
  report["columns"] = names;
  report["n"] = sample.n();
  report["components"] = a.k;
  Json roots = Json::array();
  bool any_regular = false;
  for (const auto& root : search.roots) {
    roots.push_back(ml::fit_root_json(root, sample));
    any_regular = any_regular || !root.spurious.spurious;
  }
  report["roots"] = roots;
  Json failures = Json::array();
  for (const auto& f : search.failures)
    failures.push_back({{"start_index", f.start_index}, {"reason", f.reason}});
  report["failed_starts"] = failures;
  report["has_non_spurious_root"] = any_regular;
  if (a.out.timings) report["timings"] = {{"ingest", seconds_since(t0) - seconds_since(t1)},
                                          {"fit", seconds_since(t1)}};
  emit(a.out, report, ml::kFitCsvHeader, ml::fit_csv_rows(report));
  if (!any_regular) {
    std::cerr << "mixturelab fit: every root is spurious\n";
    return kExitNumeric;
  }
  return 0;
}

// ---- simulate --------------------------------------------------------------

struct SimulateArgs {
  std::string setting;
  std::string profile = "desk";
  std::vector<double> d2_grid;
  std::vector<double> rho_grid;
  bool no_rho_panel = false;
  std::optional<double> rho_panel_d2;
  std::optional<int> replicates;
  std::optional<int> truth_replicates;
  std::optional<int> n;
  std::uint64_t seed = 1;
  Output out;
};

int run_simulate(const CLI::App* sub, const SimulateArgs& a) {
  const ml::SettingKind kind = ml::parse_setting_kind(a.setting);
  ml::SimSetting s = a.profile == "paper" ? ml::SimSetting::paper(kind) : ml::SimSetting::desk(kind);
  if (!a.d2_grid.empty()) s.d2_grid = a.d2_grid;
  if (!a.rho_grid.empty()) s.rho_grid = a.rho_grid;
  if (a.no_rho_panel) s.rho_grid.clear();
  if (a.rho_panel_d2) s.rho_panel_d2 = *a.rho_panel_d2;
  if (a.replicates) s.replicates = *a.replicates;
  if (a.truth_replicates) s.mc_truth_replicates = *a.truth_replicates;
  if (a.n) s.n = *a.n;
  s.seed = a.seed;
  s.threads = 0;

  const ml::StudyReport study = ml::run_study(s);
  Json report = envelope(sub, a.seed);
  report["profile"] = a.profile;
  report["study"] = ml::study_json(study);
  if (a.out.timings)
    report["timings"] = {{"truth", study.truth_seconds}, {"replicates", study.replicate_seconds}};
  emit(a.out, report, ml::kStudyCsvHeader, ml::study_csv_rows(study));

  int failed = 0;
  for (const auto& c : study.cells)
    if (c.bivariate.used == 0 && c.univariate.used == 0) ++failed;
  for (const auto& c : study.cells)
    if (c.bivariate.unreliable || c.univariate.unreliable)
      std::cerr << "mixturelab simulate: cell " << c.cell.name
                << " excluded more than 10% of replicates\n";
  if (!study.cells.empty() && failed == static_cast<int>(study.cells.size())) {
    std::cerr << "mixturelab simulate: every cell failed\n";
    return kExitNumeric;
  }
  return 0;
}

// ---- theory-check ----------------------------------------------------------

struct TheoryArgs {
  std::string scenario_file;
  int scenarios = 1000;
  double tolerance = 1e-8;
  int mc_draws = 200000;
  std::uint64_t seed = 1;
  std::vector<double> d1_grid, d2_grid, sigma2_grid, p_grid;
  Output out;
};

Json scenario_row(const ml::TheoryScenario& s) {
  Json j{{"p", s.p}, {"d1", s.d1}, {"d2", s.d2}, {"sigma1", s.sigma1}, {"sigma2", s.sigma2},
         {"rho", s.rho}};
  j["correct_allocation_probability"] = ml::correct_allocation_probability(s);
  if (!s.homoscedastic()) return j;
  const ml::Minimum md2 = ml::argmin_d2(s.d1, s.sigma1, s.sigma2, s.rho);
  j["argmin_d2"] = md2.argmin;
  j["min_distance_over_d2"] = md2.value;
  j["standardized_distance"] = ml::standardized_distance(s.gap());
  if (s.d1 != 0.0 && s.d2 != 0.0) {
    Json cands = Json::array();
    for (const auto& c : ml::argmin_rho(s.d1, s.d2, s.sigma1, s.sigma2))
      cands.push_back({{"rho", c.rho}, {"value", c.value}, {"feasible", c.feasible}});
    j["argmin_rho"] = cands;
  }
  if (s.rho == 0.0) {
    const ml::DominanceRow r = ml::result4_dominance({s}).front();
    j["I"] = r.univariate;
    j["II"] = r.bivariate;
    j["bound"] = r.bound;
    j["margin"] = r.margin;
  }
  return j;
}

std::vector<ml::TheoryScenario> read_scenarios(const std::string& path) {
  const ml::CsvTable table = ml::read_csv(path);
  auto find = [&](const char* name) -> std::optional<int> {
    for (std::size_t j = 0; j < table.header.size(); ++j)
      if (table.header[j] == name) return static_cast<int>(j);
    return std::nullopt;
  };
  std::vector<ml::TheoryScenario> out;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    auto get = [&](const char* name, double fallback) {
      const auto col = find(name);
      return col ? ml::parse_number(table.rows[i][*col], table.line_numbers[i], name) : fallback;
    };
    ml::TheoryScenario s;
    s.p = get("p", 0.5);
    s.d1 = get("d1", 0.0);
    s.d2 = get("d2", 0.0);
    s.sigma1 = get("sigma1", 1.0);
    s.sigma2 = get("sigma2", 1.0);
    s.rho = get("rho", 0.0);
    if (find("s11"))
      s.heteroscedastic = std::array<double, 4>{get("s11", 1.0), get("s21", 1.0), get("s12", 1.0),
                                                get("s22", 1.0)};
    try {
      s.validate();
    } catch (const ml::ArgumentError& e) {
      throw ml::InputError("line " + std::to_string(table.line_numbers[i]) + ": " + e.what());
    }
    out.push_back(s);
  }
  return out;
}

int run_theory(const CLI::App* sub, const TheoryArgs& a) {
  ml::TheoryCheckOptions opt;
  opt.scenarios = a.scenarios;
  opt.tolerance = a.tolerance;
  opt.mc_draws = a.mc_draws;
  opt.seed = a.seed;
  if (!a.d1_grid.empty()) opt.d1_grid = a.d1_grid;
  if (!a.d2_grid.empty()) opt.d2_grid = a.d2_grid;
  if (!a.sigma2_grid.empty()) opt.sigma2_grid = a.sigma2_grid;
  if (!a.p_grid.empty()) opt.p_grid = a.p_grid;
  opt.threads = 0;
  std::vector<ml::TheoryScenario> scenarios;
  if (!a.scenario_file.empty()) scenarios = read_scenarios(a.scenario_file);

  const auto t0 = Clock::now();
  const ml::TheoryReport theory = ml::run_theory_checks(opt);
  Json report = envelope(sub, a.seed);
  report["theory"] = ml::theory_json(theory);
  if (!scenarios.empty()) {
    Json rows = Json::array();
    for (const auto& s : scenarios) rows.push_back(scenario_row(s));
    report["scenarios"] = rows;
  }
  if (a.out.timings) report["timings"] = {{"checks", seconds_since(t0)}};

  std::vector<std::vector<std::string>> csv;
  for (const auto& c : theory.checks)
    csv.push_back({c.name, c.passed ? "PASS" : "FAIL", ml::format_double(c.max_error),
                   ml::format_double(c.tolerance), c.detail});
  emit(a.out, report, {"check", "status", "max_error", "tolerance", "detail"}, csv);
  for (const auto& c : theory.checks)
    if (!c.passed) std::cerr << "FAIL " << c.name << " (" << c.max_error << " vs " << c.tolerance << ")\n";
  return theory.all_passed() ? 0 : kExitGate;
}

// ---- causal ----------------------------------------------------------------

struct CausalArgs {
  std::string data;
  std::string outcome = "x";
  std::string aux;
  std::string treatment = "d";
  std::string instrument = "z";
  bool bivariate = false;
  int starts = 10;
  std::uint64_t seed = 1;
  Output out;
};

Json causal_notes(const Json& analysis) {
  Json notes = Json::array();
  for (const auto& w : analysis.at("warnings")) notes.push_back(w);
  if (analysis.contains("mom") && analysis.at("mom").is_null())
    notes.push_back(
        "no compliers under the moment estimate: the (d=0, z=0) and (d=1, z=1) cells are not "
        "mixtures, the strata are separable and the ELE falls back to the highest likelihood");
  else if (analysis.contains("ele") && analysis.at("roots").size() > 0) {
    const double wc = analysis.at("roots")[analysis.at("ele_index").get<std::size_t>()]
                          .at("model").at("omega_c").get<double>();
    if (wc < 0.01)
      notes.push_back("estimated complier share below 0.01: mixed cells are nearly trivial");
  }
  return notes;
}

int run_causal(const CLI::App* sub, const CausalArgs& a) {
  const auto t0 = Clock::now();
  if (a.bivariate && a.aux.empty()) throw ml::InputError("--bivariate needs --aux");
  const ml::CsvTable table = ml::read_csv(a.data);
  std::vector<int> cols{table.column(a.outcome)};
  if (a.bivariate) cols.push_back(table.column(a.aux));
  const ml::IvSample full(ml::numeric_columns(table, cols),
                          ml::integer_column(table, table.column(a.treatment)),
                          ml::integer_column(table, table.column(a.instrument)));
  ml::IvFitConfig config;
  config.starts = a.starts;
  config.seed = a.seed;
  config.threads = 0;

  Json report = envelope(sub, a.seed);
  for (const auto& w : full.warnings()) std::cerr << "WARNING: " << w << '\n';
  Json uni = ml::causal_analysis_json(full.primary_only(), config);
  uni["notes"] = causal_notes(uni);
  report["univariate"] = uni;
  auto rows = ml::causal_csv_rows(uni, "univariate");
  bool ok = uni.contains("ele");
  if (a.bivariate) {
    Json biv = ml::causal_analysis_json(full, config);
    biv["notes"] = causal_notes(biv);
    auto more = ml::causal_csv_rows(biv, "bivariate");
    rows.insert(rows.end(), more.begin(), more.end());
    ok = ok && biv.contains("ele");
    report["bivariate"] = biv;
  }
  for (const char* key : {"univariate", "bivariate"})
    if (report.contains(key))
      for (const auto& note : report[key]["notes"]) std::cerr << "NOTE (" << key << "): " << note.get<std::string>() << '\n';
  if (a.out.timings) report["timings"] = {{"total", seconds_since(t0)}};
  emit(a.out, report, ml::kCausalCsvHeader, rows);
  return ok ? 0 : kExitNumeric;
}

// ---- contour ---------------------------------------------------------------

struct ContourArgs {
  std::string preset;
  double p = 0.5;
  std::vector<double> mu1{0.0, 0.0};
  std::vector<double> mu2{0.05, 1.0};
  double sigma1 = 1.0;
  double sigma2 = 1.0;
  double rho = 0.0;
  int resolution = 101;
  double extent = 4.0;
  int points = 0;
  std::string points_csv;
  std::uint64_t seed = 1;
  Output out;
};

void apply_preset(ContourArgs& a) {
  if (a.preset.empty()) return;
  a.p = 0.5;
  a.mu1 = {0.0, 0.0};
  a.sigma1 = a.sigma2 = 1.0;
  const char c = a.preset[0];
  a.mu2 = {0.05, c == 'a' || c == 'b' ? 1.0 : 4.0};
  a.rho = c == 'b' || c == 'd' ? 0.9 : 0.0;
}

int run_contour(const CLI::App* sub, ContourArgs a) {
  apply_preset(a);
  if (a.mu1.size() != 2 || a.mu2.size() != 2) throw ml::InputError("--mu1 and --mu2 take two values");
  if (a.resolution < 2) throw ml::InputError("--grid-resolution must be at least 2");
  ml::TheoryScenario scen;
  scen.p = a.p;
  scen.sigma1 = a.sigma1;
  scen.sigma2 = a.sigma2;
  scen.rho = a.rho;
  scen.validate();
  ml::Matrix v(2, 2);
  v << a.sigma1 * a.sigma1, a.rho * a.sigma1 * a.sigma2, a.rho * a.sigma1 * a.sigma2,
      a.sigma2 * a.sigma2;
  const ml::MixtureModel model({a.p, 1.0 - a.p},
                               {ml::Vector{{a.mu1[0], a.mu1[1]}}, ml::Vector{{a.mu2[0], a.mu2[1]}}},
                               {v, v});
  // Centered on the midpoint of the means so symmetric models give symmetric grids.
  const double sd[2] = {a.sigma1, a.sigma2};
  std::vector<std::vector<double>> axis(2, std::vector<double>(a.resolution));
  for (int c = 0; c < 2; ++c) {
    const double center = 0.5 * (a.mu1[c] + a.mu2[c]);
    const double half = 0.5 * std::abs(a.mu2[c] - a.mu1[c]) + a.extent * sd[c];
    const double h = 2.0 * half / (a.resolution - 1);
    for (int i = 0; i < a.resolution; ++i) {
      axis[c][i] = center + h * (i - 0.5 * (a.resolution - 1));
    }
  }
  std::vector<std::vector<std::string>> rows;
  rows.reserve(static_cast<std::size_t>(a.resolution) * a.resolution);
  for (int i = 0; i < a.resolution; ++i)
    for (int j = 0; j < a.resolution; ++j) {
      const ml::Vector x{{axis[0][i], axis[1][j]}};
      rows.push_back({ml::format_double(x[0]), ml::format_double(x[1]),
                      ml::format_double(std::exp(ml::log_density(model, x)))});
    }

  Json report = envelope(sub, a.seed);
  report["model"] = ml::to_json(model);
  report["grid"] = {{"resolution", a.resolution}, {"x1", axis[0]}, {"x2", axis[1]}};
  if (a.points > 0) {
    const ml::Matrix chol = ml::SpdFactor(v, "contour covariance").lower();
    ml::Rng rng(ml::stream_seed(a.seed, {0x434f4e54ULL}));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal;
    std::vector<std::vector<std::string>> pts;
    for (int i = 0; i < a.points; ++i) {
      const int label = unif(rng) < a.p ? 1 : 2;
      const double z0 = normal(rng);
      const double z1 = normal(rng);
      const ml::Vector x = model.mean(label - 1) + chol * ml::Vector{{z0, z1}};
      pts.push_back({ml::format_double(x[0]), ml::format_double(x[1]), std::to_string(label)});
    }
    if (a.points_csv.empty()) throw ml::InputError("--points needs --points-csv");
    std::ostringstream csv;
    ml::write_csv(csv, {"x1", "x2", "label"}, pts);
    ml::write_text_file(a.points_csv, csv.str());
  }
  Output out = a.out;
  if (out.json_path.empty() && out.csv_path.empty()) out.format = "csv";
  emit(out, report, {"x1", "x2", "density"}, rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian mixture fitting, standard-error studies and IV compliance mixtures"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  FitArgs fit;
  CLI::App* fit_cmd = app.add_subcommand("fit", "Fit a K-component Gaussian mixture to CSV columns");
  fit_cmd->add_option("data", fit.data, "CSV file with a header row")->required();
  fit_cmd->add_option("--columns", fit.columns, "Comma-separated column names (default: all)");
  fit_cmd->add_option("--label-column", fit.label_column, "Column of true labels 1..K");
  fit_cmd->add_option("-k,--components", fit.k, "Number of components")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--fix-weights", fit.fix_weights, "Fix the weights at these values");
  fit_cmd->add_option("--fix-cov", fit.fix_cov, "CSV of K stacked covariance blocks to fix");
  fit_cmd->add_option("--starts", fit.starts, "Random-responsibility starts")->check(CLI::NonNegativeNumber);
  fit_cmd->add_option("--seed", fit.seed, "Root seed");
  fit_cmd->add_option("--max-iterations", fit.max_iterations)->check(CLI::PositiveNumber);
  fit_cmd->add_option("--tolerance", fit.tolerance, "Relative log-likelihood tolerance");
  add_output_options(fit_cmd, fit.out);

  SimulateArgs sim;
  CLI::App* sim_cmd = app.add_subcommand("simulate", "Run a simulation study (S1, S2 or S3)");
  sim_cmd->add_option("--setting", sim.setting, "s1, s2 or s3")->required();
  sim_cmd->add_option("--profile", sim.profile)->check(CLI::IsMember({"desk", "paper"}));
  sim_cmd->add_option("--d2-grid", sim.d2_grid, "d2 levels of the rho = 0 panel")->delimiter(',');
  sim_cmd->add_option("--rho-grid", sim.rho_grid, "rho levels of the second panel")->delimiter(',');
  sim_cmd->add_flag("--no-rho-panel", sim.no_rho_panel, "Skip the rho panel");
  sim_cmd->add_option("--rho-panel-d2", sim.rho_panel_d2, "d2 held fixed along the rho panel");
  sim_cmd->add_option("--replicates", sim.replicates)->check(CLI::PositiveNumber);
  sim_cmd->add_option("--truth-replicates", sim.truth_replicates)->check(CLI::PositiveNumber);
  sim_cmd->add_option("--n", sim.n, "Sample size")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--seed", sim.seed, "Root seed");
  add_output_options(sim_cmd, sim.out);

  TheoryArgs th;
  CLI::App* th_cmd = app.add_subcommand("theory-check", "Closed forms against numerics");
  th_cmd->add_option("--scenario-file", th.scenario_file, "CSV of scenarios (p,d1,d2,sigma1,sigma2,rho)");
  th_cmd->add_option("--scenarios", th.scenarios, "Random scenarios per argmin check")->check(CLI::PositiveNumber);
  th_cmd->add_option("--tolerance", th.tolerance, "Closed form vs numeric tolerance");
  th_cmd->add_option("--mc-draws", th.mc_draws)->check(CLI::PositiveNumber);
  th_cmd->add_option("--seed", th.seed);
  th_cmd->add_option("--d1-grid", th.d1_grid)->delimiter(',');
  th_cmd->add_option("--d2-grid", th.d2_grid)->delimiter(',');
  th_cmd->add_option("--sigma2-grid", th.sigma2_grid)->delimiter(',');
  th_cmd->add_option("--p-grid", th.p_grid)->delimiter(',');
  add_output_options(th_cmd, th.out);

  CausalArgs cz;
  CLI::App* cz_cmd = app.add_subcommand("causal", "IV compliance mixture with ELE selection");
  cz_cmd->add_option("data", cz.data, "CSV with outcome, treatment and instrument columns")->required();
  cz_cmd->add_option("--outcome", cz.outcome);
  cz_cmd->add_option("--aux", cz.aux, "Auxiliary outcome column");
  cz_cmd->add_option("--treatment", cz.treatment);
  cz_cmd->add_option("--instrument", cz.instrument);
  cz_cmd->add_flag("--bivariate", cz.bivariate, "Also fit outcome and auxiliary jointly");
  cz_cmd->add_option("--starts", cz.starts)->check(CLI::PositiveNumber);
  cz_cmd->add_option("--seed", cz.seed);
  add_output_options(cz_cmd, cz.out);

  ContourArgs ct;
  CLI::App* ct_cmd = app.add_subcommand("contour", "Density grid of a bivariate two-component mixture");
  ct_cmd->add_option("--preset", ct.preset)->check(CLI::IsMember({"a", "b", "c", "d"}));
  ct_cmd->add_option("--p", ct.p);
  ct_cmd->add_option("--mu1", ct.mu1)->delimiter(',');
  ct_cmd->add_option("--mu2", ct.mu2)->delimiter(',');
  ct_cmd->add_option("--sigma1", ct.sigma1);
  ct_cmd->add_option("--sigma2", ct.sigma2);
  ct_cmd->add_option("--rho", ct.rho);
  ct_cmd->add_option("--grid-resolution", ct.resolution);
  ct_cmd->add_option("--extent", ct.extent, "Half-width beyond the means, in SDs");
  ct_cmd->add_option("--points", ct.points, "Also sample this many labelled points");
  ct_cmd->add_option("--points-csv", ct.points_csv);
  ct_cmd->add_option("--seed", ct.seed);
  add_output_options(ct_cmd, ct.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (fit_cmd->parsed()) return run_fit(fit_cmd, fit);
    if (sim_cmd->parsed()) return run_simulate(sim_cmd, sim);
    if (th_cmd->parsed()) return run_theory(th_cmd, th);
    if (cz_cmd->parsed()) return run_causal(cz_cmd, cz);
    if (ct_cmd->parsed()) return run_contour(ct_cmd, ct);
  } catch (const ml::ArgumentError& e) {
    std::cerr << "mixturelab: input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const ml::Error& e) {
    std::cerr << "mixturelab: numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitInput;
}
