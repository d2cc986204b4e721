// Acceptance gate: one PASS/FAIL line per criterion. Arguments select a
// subset by number; the exit status is nonzero when any selected one fails.
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "mixturelab/mixturelab.hpp"

using namespace mixturelab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

Matrix random_spd(int m, Rng& rng) {
  std::normal_distribution<double> z;
  Matrix a(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) a(i, j) = z(rng);
  return a * a.transpose() / m + 0.5 * Matrix::Identity(m, m);
}

MixtureModel random_model(int k, int m, Rng& rng, double spread = 1.5) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::normal_distribution<double> z;
  std::vector<double> w(k);
  double total = 0;
  for (auto& x : w) total += (x = u(rng));
  for (auto& x : w) x /= total;
  std::vector<Vector> mu;
  std::vector<Matrix> v;
  for (int c = 0; c < k; ++c) {
    Vector mean(m);
    for (int j = 0; j < m; ++j) mean[j] = spread * z(rng);
    mu.push_back(mean);
    v.push_back(random_spd(m, rng));
  }
  return MixtureModel(w, mu, v);
}

Matrix draw(const MixtureModel& model, int n, Rng& rng) {
  std::normal_distribution<double> z;
  std::discrete_distribution<int> pick(model.weights().begin(), model.weights().end());
  const int m = model.dim();
  Matrix x(n, m);
  for (int i = 0; i < n; ++i) {
    const int k = pick(rng);
    Vector e(m);
    for (int j = 0; j < m; ++j) e[j] = z(rng);
    x.row(i) = (model.mean(k) + model.factor(k).lower() * e).transpose();
  }
  return x;
}

double cross_block_ratio(const Matrix& info, const ParamLayout& layout) {
  const int m = layout.m;
  const int a = layout.mean_index(0, 0), b = layout.mean_index(1, 0);
  const double cross = info.block(a, b, m, m).norm();
  const double diag = std::hypot(info.block(a, a, m, m).norm(), info.block(b, b, m, m).norm());
  return cross / diag;
}

const CellReport& cell_named(const StudyReport& r, const std::string& name) {
  for (const auto& c : r.cells)
    if (c.cell.name == name) return c;
  throw ArgumentError("no cell " + name);
}

const EstimatorSummary& estimator(const AnalysisSummary& a, int which) {
  for (const auto& e : a.estimators)
    if (e.estimator == which) return e;
  throw ArgumentError("estimator missing");
}

// ---------------------------------------------------------------------------

Outcome gradient() {
  Rng rng(101);
  std::normal_distribution<double> z;
  double worst = 0;
  int entries = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 1 + trial % 3, m = 1 + (trial / 3) % 3;
    const MixtureModel model = random_model(k, m, rng);
    const ParamLayout layout{k, m, true, true};
    Vector x(m);
    for (int j = 0; j < m; ++j) x[j] = model.mean(trial % k)[j] + 1.5 * z(rng);
    const Matrix score = score_contributions(model, layout, x.transpose());
    const Vector theta = pack(model, layout);
    const double row_scale = score.cwiseAbs().maxCoeff();
    for (int p = 0; p < layout.size(); ++p) {
      const double h = 1e-6 * (1 + std::abs(theta[p]));
      Vector up = theta, down = theta;
      up[p] += h;
      down[p] -= h;
      const double fd = (log_density(unpack(up, layout, model), x) -
                         log_density(unpack(down, layout, model), x)) / (2 * h);
      // Entries that cancel to ~0 are measured against the row scale.
      const double denom = std::max(std::abs(fd), 1e-3 * row_scale);
      worst = std::max(worst, std::abs(score(0, p) - fd) / denom);
      ++entries;
    }
  }
  return {worst < 1e-5, fmt("max relative error %.2e over %d entries", worst, entries)};
}

Outcome hessian_block() {
  Rng rng(202);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 1 + trial % 3;
    const Matrix v = random_spd(m, rng);
    const MixtureModel base = random_model(2, m, rng);
    const MixtureModel model(base.weights(), base.means(), {v, v});
    const Matrix x = draw(model, 80, rng);
    const ParamLayout layout{2, m, false, false};
    const Matrix analytic = analytic_mean_hessian(model, x);
    const HessianResult fd = finite_difference_hessian(model, layout, x);
    worst = std::max(worst, (analytic - fd.hessian).norm() / analytic.norm());
  }
  return {worst < 1e-4, fmt("max relative Frobenius error %.2e over 50 cases", worst)};
}

Outcome em_monotone() {
  Rng rng(303);
  std::uniform_int_distribution<int> kd(1, 3), md(1, 3), nd(80, 300);
  int fits = 0, failed = 0, violations = 0;
  double worst_drop = 0;
  while (fits < 1000) {
    const int k_true = kd(rng), m = md(rng), k_fit = kd(rng);
    const MixtureModel truth = random_model(k_true, m, rng, 2.0);
    const Sample sample(draw(truth, nd(rng), rng));
    FitConfig config;
    config.k = k_fit;
    config.seed = rng();
    const int mode = fits % 4;
    if (mode == 3 && k_fit == k_true) config.fix_covariances = truth.covariances();
    const StartSpec start = mode == 0 ? StartSpec{QuantileSplitStart{}} : StartSpec{RandomResponsibilityStart{}};
    try {
      const FitResult fit = em_fit(sample, config, start, fits);
      ++fits;
      bool bad = false;
      for (std::size_t i = 1; i < fit.loglik_trace.size(); ++i) {
        const double drop = fit.loglik_trace[i - 1] - fit.loglik_trace[i];
        worst_drop = std::max(worst_drop, drop);
        if (drop > 1e-9) bad = true;
      }
      violations += bad;
    } catch (const Error&) {
      ++failed;  // degenerate start; no trace to judge
    }
  }
  return {violations == 0, fmt("%d fits, %d traces decreasing, largest drop %.2e (%d starts degenerate, redrawn)",
                               fits, violations, worst_drop, failed)};
}

Outcome result1_oracles() {
  const TheoryCheck d2 = check_argmin_d2(1000, 1e-8, 404);
  const TheoryCheck rho = check_argmin_rho(1000, 1e-8, 404);
  return {d2.passed && rho.passed,
          fmt("argmin_d2 max gap %.2e, argmin_rho max gap %.2e (%s)", d2.max_error, rho.max_error,
              rho.detail.c_str())};
}

Outcome block_limit() {
  const SimSetting setting = SimSetting::desk(SettingKind::kS1);
  auto ratio_at = [&](double d2, double rho) {
    const SimCell cell{"", "d2", d2, rho};
    const Sample s = generate(setting, cell, 505);
    FitConfig c = study_fit_config(setting, cell, 2);
    c.rel_tolerance = 1e-14;
    const FitResult fit = align_labels(em_fit(s, c, c.starts.front()), true_model(setting, cell));
    return cross_block_ratio(info_outer(fit, s), layout_for(fit));
  };
  std::string trail;
  double previous = std::numeric_limits<double>::infinity(), last = 0;
  bool monotone = true;
  for (double d2 : {0.0, 1.0, 3.0, 5.0, 50.0}) {
    last = ratio_at(d2, 0.0);
    monotone = monotone && last < previous;
    previous = last;
    trail += fmt(" %g:%.1e", d2, last);
  }
  const double rho_ratio = ratio_at(0.0, 0.99);
  const bool pass = monotone && last < 1e-6 && rho_ratio < 1e-6;
  return {pass, fmt("ratio by d2%s; monotone %s; rho=0.99,d2=0: %.2e (limit 1e-6)", trail.c_str(),
                    monotone ? "yes" : "no", rho_ratio)};
}

Outcome quadrature() {
  TheoryCheckOptions options;
  options.scenarios = 10;  // argmin checks belong to criterion 4
  const TheoryReport report = run_theory_checks(options);
  bool pass = true;
  std::string detail;
  for (const TheoryCheck& c : report.checks) {
    const bool relevant = c.name.find("II") != std::string::npos;
    if (!relevant) continue;
    pass = pass && c.passed;
    detail += fmt("%s [%s %.2e]; ", c.name.c_str(), c.passed ? "ok" : "fail", c.max_error);
  }
  detail += fmt("%zu grid points", report.dominance.size());
  return {pass, detail};
}

Outcome table1() {
  SimSetting s = SimSetting::desk(SettingKind::kS1);
  s.seed = 707;
  const StudyReport r = run_study(s);
  const CellReport& far = cell_named(r, "d2=50");
  const double uni = estimator(far.univariate, 1).mean_se;
  const double biv = estimator(far.bivariate, 1).mean_se;
  const double ratio = biv / uni;
  double worst_star = 1.0;
  for (const auto& c : r.cells)
    if (c.cell.panel == "d2" && c.cell.d2 >= 3) {
      const auto& e = estimator(c.bivariate, 1);
      worst_star = std::min(worst_star, static_cast<double>(*e.star_count) / s.replicates);
    }
  const bool pass = uni >= 0.095 && uni <= 0.125 && biv >= 0.065 && biv <= 0.078 &&
                    std::abs(ratio - std::sqrt(0.4)) <= 0.05 && far.bivariate.mean_ar >= 0.999 &&
                    worst_star >= 0.95;
  return {pass, fmt("univariate se %.4f, bivariate se %.4f, ratio %.4f (sqrt 0.4 = %.4f), AR %.5f, "
                    "min star share %.3f",
                    uni, biv, ratio, std::sqrt(0.4), far.bivariate.mean_ar, worst_star)};
}

Outcome table2() {
  SimSetting s = SimSetting::desk(SettingKind::kS2);
  s.rho_grid.clear();
  s.seed = 808;
  const StudyReport r = run_study(s);
  double near = std::numeric_limits<double>::infinity(), far = 0;
  double previous_ar = 0;
  bool ar_increasing = true;
  std::string trail;
  for (const auto& c : r.cells) {
    const double bias = estimator(c.bivariate, 1).abs_bias;
    if (c.cell.d2 < 3)
      near = std::min(near, bias);
    else
      far = std::max(far, bias);
    ar_increasing = ar_increasing && c.bivariate.mean_ar > previous_ar;
    previous_ar = c.bivariate.mean_ar;
    trail += fmt(" %g:%.1e/%.3f", c.cell.d2, bias, c.bivariate.mean_ar);
  }
  return {near >= 10 * far && ar_increasing,
          fmt("|bias|/AR by d2%s; smallest d2<3 bias / largest d2>=3 bias = %.1f", trail.c_str(),
              near / far)};
}

Outcome s3_generator() {
  const TMoments t = noncentral_t_moments(20, 7);
  bool pass = std::abs(t.mean - 7.28) <= 0.01 && std::abs(t.variance - 2.60) <= 0.01;
  std::string detail = fmt("t mean %.4f var %.4f; ", t.mean, t.variance);

  SimSetting s = SimSetting::desk(SettingKind::kS3);
  s.n = 100000;
  const SimCell cell{"", "rho", 4.0, 0.5};
  const Sample x = generate(s, cell, 909);
  const MixtureModel truth = true_model(s, cell);
  double worst_z = 0;
  for (int k = 0; k < 2; ++k) {
    std::vector<int> rows;
    for (int i = 0; i < x.n(); ++i)
      if ((*x.labels())[i] == k + 1) rows.push_back(i);
    const double cnt = rows.size();
    Vector mean = Vector::Zero(2);
    for (int i : rows) mean += x.row(i);
    mean /= cnt;
    Matrix m2 = Matrix::Zero(2, 2), m4 = Matrix::Zero(2, 2);
    for (int i : rows) {
      const Vector r = x.row(i) - mean;
      const Matrix rr = r * r.transpose();
      m2 += rr;
      m4 += rr.cwiseProduct(rr);
    }
    m2 /= cnt;
    m4 /= cnt;
    for (int a = 0; a < 2; ++a) {
      worst_z = std::max(worst_z, std::abs(mean[a] - truth.mean(k)[a]) / std::sqrt(m2(a, a) / cnt));
      for (int b = 0; b <= a; ++b) {
        const double target = truth.covariance(k)(a, b);
        const double se = std::sqrt((m4(a, b) - m2(a, b) * m2(a, b)) / cnt);
        worst_z = std::max(worst_z, std::abs(m2(a, b) - target) / se);
      }
    }
  }
  pass = pass && worst_z < 5;
  detail += fmt("component moments max |z| %.2f; ", worst_z);

  SimSetting study = SimSetting::desk(SettingKind::kS3);
  study.d2_grid = {4.0};
  study.rho_grid.clear();
  study.seed = 910;
  const StudyReport r = run_study(study);
  const AnalysisSummary& a = r.cells.front().bivariate;
  const double targets[3] = {8.1e-2, 7.6e-2, 9.0e-2};
  double se[3];
  bool window = true;
  for (int e = 1; e <= 3; ++e) {
    se[e - 1] = estimator(a, e).mean_se;
    window = window && std::abs(se[e - 1] / targets[e - 1] - 1) <= 0.15;
  }
  const bool order = se[1] < se[0] && se[0] < se[2];
  pass = pass && order && window;
  detail += fmt("d2=4 mean se I1 %.4f I2 %.4f I3 %.4f (order %s, windows %s, true sd %.4f)", se[0],
                se[1], se[2], order ? "ok" : "wrong", window ? "ok" : "missed", a.true_sd);
  return {pass, detail};
}

IvMixtureModel iv_univariate(double pi, std::array<double, 3> omega,
                             std::array<std::pair<double, double>, kIvCells> cells) {
  std::array<Vector, kIvCells> means;
  std::array<Matrix, kIvCells> covs;
  for (int c = 0; c < kIvCells; ++c) {
    means[c] = Vector::Constant(1, cells[c].first);
    covs[c] = Matrix::Constant(1, 1, cells[c].second * cells[c].second);
  }
  return IvMixtureModel(pi, omega, means, covs);
}

Outcome causal_recovery() {
  const IvMixtureModel truth = iv_univariate(
      0.5, {0.73, 0.21, 0.06},
      {{{0.0, 0.3}, {0.05, 0.3}, {1.0, 0.3}, {1.05, 0.3}, {8.0, 0.4}, {-7.0, 0.4}}});
  const Vector theta0 = iv_pack(truth);
  const int reps = 200;
  std::vector<Vector> est(reps);
  std::vector<double> contrast(reps), contrast_se(reps, std::nan(""));
  parallel_for(reps, [&](std::size_t r) {
    const IvSample s = simulate_iv(truth, 1000, stream_seed(1010, {r}));
    IvFitConfig c;
    c.seed = stream_seed(1011, {r});
    const IvMultiStartReport report = iv_fit_multistart(s, c);
    const IvFitResult& fit = report.roots[choose_ele(report.roots, s).index];
    est[r] = iv_pack(fit.model);
    const CaceReport cace = cace_report(fit.model, s);
    for (const CaceRow& row : cace.rows)
      if (row.name == "mu_c1-mu_c0") {
        contrast[r] = row.estimate;
        if (row.se[0]) contrast_se[r] = *row.se[0];
      }
  });
  const auto names = IvLayout{1}.names();
  double worst_z = 0;
  std::string worst_name;
  for (int p = 0; p < theta0.size(); ++p) {
    std::vector<double> v(reps);
    for (int r = 0; r < reps; ++r) v[r] = est[r][p];
    const double mcse = detail::sd_of(v) / std::sqrt(reps);
    const double z = std::abs(detail::mean_of(v) - theta0[p]) / mcse;
    if (z > worst_z) worst_z = z, worst_name = names[p];
  }
  const double mc_sd = detail::sd_of(contrast);
  std::vector<double> ses;
  for (double v : contrast_se)
    if (std::isfinite(v)) ses.push_back(v);
  const double mean_se = detail::mean_of(ses);
  const double se_gap = std::abs(mean_se / mc_sd - 1);

  // Entangled construction: complier cells sit on top of the other groups, so
  // several stationary points compete and the likelihood favours a wrong share.
  const IvMixtureModel entangled = iv_univariate(
      0.5, {0.4, 0.3, 0.3}, {{{0.0, 1.0}, {0.2, 1.0}, {0.6, 1.0}, {0.8, 1.0}, {0.3, 1.2}, {0.5, 1.2}}});
  int instance = -1, roots_seen = 0;
  for (int seed = 1; seed <= 60 && instance < 0; ++seed) {
    const IvSample s = simulate_iv(entangled, 400, seed);
    IvFitConfig c;
    c.seed = seed;
    c.starts = 12;
    IvMultiStartReport report;
    try {
      report = iv_fit_multistart(s, c);
    } catch (const Error&) {
      continue;
    }
    roots_seen = std::max(roots_seen, static_cast<int>(report.roots.size()));
    if (report.roots.size() >= 2 && choose_ele(report.roots, s).index != 0) instance = seed;
  }
  const bool pass = worst_z < 5 && se_gap <= 0.2 && instance > 0;
  return {pass,
          fmt("worst parameter %s at %.2f MC SEs; contrast se %.4f vs MC sd %.4f (%.0f%% off, %zu/%d "
              "with se); entangled: %s",
              worst_name.c_str(), worst_z, mean_se, mc_sd, 100 * se_gap, ses.size(), reps,
              instance > 0 ? fmt("ELE differs from max-loglik at seed %d", instance).c_str()
                           : fmt("no differing instance, max roots %d", roots_seen).c_str())};
}

// CLI determinism ---------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, const std::string& env, const fs::path& log) {
  const std::string cmd = env + " \"" MIXTURELAB_CLI "\" " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome cli_determinism() {
  const fs::path dir = fs::temp_directory_path() / ("mixturelab_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "two.csv");
    f << "a,b\n";
    Rng rng(11);
    std::normal_distribution<double> z;
    for (int i = 0; i < 300; ++i) f << z(rng) + (i % 3 ? 4 : 0) << ',' << z(rng) << '\n';
  }
  {
    const IvMixtureModel truth = iv_univariate(
        0.5, {0.6, 0.2, 0.2}, {{{0, 0.5}, {0.1, 0.5}, {2, 0.5}, {2.1, 0.5}, {5, 0.5}, {-4, 0.5}}});
    const IvSample s = simulate_iv(truth, 400, 12);
    std::ofstream f(dir / "iv.csv");
    f << "x,d,z\n";
    for (int i = 0; i < s.n(); ++i) f << format_double(s.x()(i, 0)) << ',' << s.d()[i] << ',' << s.z()[i] << '\n';
  }
  const std::string d = dir.string() + "/";
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"fit", "fit " + d + "two.csv -k 2 --starts 6 --seed 5 --json {}.json --csv {}.csv"},
      {"simulate", "simulate --setting s2 --d2-grid 1,3 --rho-grid 0.5 --replicates 20 "
                   "--truth-replicates 20 --n 200 --seed 9 --json {}.json --csv {}.csv"},
      {"theory", "theory-check --scenarios 100 --mc-draws 20000 --seed 3 --json {}.json --csv {}.csv"},
      {"causal", "causal " + d + "iv.csv --outcome x --treatment d --instrument z --starts 6 "
                 "--seed 4 --json {}.json --csv {}.csv"},
      {"contour", "contour --preset b --grid-resolution 40 --points 50 --seed 2 --points-csv "
                  "{}.points.csv --json {}.json --csv {}.csv"},
  };
  int identical = 0, total = 0;
  std::string broken;
  for (const auto& [name, pattern] : commands) {
    std::vector<std::string> contents;
    int run = 0;
    for (const char* threads : {"1", "1", "3"}) {
      const std::string stem = d + name + std::to_string(run++);
      std::string args = pattern;
      for (std::size_t at; (at = args.find("{}")) != std::string::npos;) args.replace(at, 2, stem);
      const int code = run_cli(args, std::string("MIXTURELAB_THREADS=") + threads, stem + ".log");
      if (code != 0) broken += name + " exit " + std::to_string(code) + "; ";
      std::string all;
      for (const char* ext : {".json", ".csv", ".points.csv"})
        if (fs::exists(stem + ext)) all += slurp(stem + ext) + '\x1f';
      contents.push_back(all);
    }
    ++total;
    if (!contents[0].empty() && contents[0] == contents[1] && contents[0] == contents[2])
      ++identical;
    else
      broken += name + " differs; ";
  }
  fs::remove_all(dir);
  return {identical == total && broken.empty(),
          fmt("%d/%d subcommands byte-identical across repeats and MIXTURELAB_THREADS 1/3%s%s",
              identical, total, broken.empty() ? "" : ": ", broken.c_str())};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", gradient},
      {2, "means-block Hessian", hessian_block},
      {3, "EM monotonicity", em_monotone},
      {4, "argmin closed forms", result1_oracles},
      {5, "block-diagonal limit of I1", block_limit},
      {6, "information quadrature", quadrature},
      {7, "S1 desk-scale standard errors", table1},
      {8, "S2 bias and allocation trend", table2},
      {9, "S3 generator and estimator ordering", s3_generator},
      {10, "IV recovery and ELE selection", causal_recovery},
      {11, "CLI determinism", cli_determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("%s %2d %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
