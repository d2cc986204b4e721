#pragma once

// Generators for the three simulation settings and the two-phase Monte Carlo
// harness that compares standard-error estimators for mu_11.
//
//   S1  Gaussian mixture, weights and covariances fixed at the truth
//   S2  Gaussian mixture, everything estimated
//   S3  mixture of standardized non-central t vectors, everything estimated

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mixturelab/errors.hpp"
#include "mixturelab/estimation.hpp"
#include "mixturelab/information.hpp"
#include "mixturelab/model.hpp"
#include "mixturelab/parallel.hpp"
#include "mixturelab/rng.hpp"

namespace mixturelab {

enum class SettingKind { kS1, kS2, kS3 };

inline std::string to_string(SettingKind kind) {
  switch (kind) {
    case SettingKind::kS1: return "s1";
    case SettingKind::kS2: return "s2";
    case SettingKind::kS3: return "s3";
  }
  return "?";
}

inline SettingKind parse_setting_kind(const std::string& text) {
  if (text == "s1" || text == "S1") return SettingKind::kS1;
  if (text == "s2" || text == "S2") return SettingKind::kS2;
  if (text == "s3" || text == "S3") return SettingKind::kS3;
  throw ArgumentError("unknown setting '" + text + "' (expected s1, s2 or s3)");
}

struct SimCell {
  std::string name;  // "d2=3" or "rho=0.9"
  std::string panel;  // "d2" or "rho"
  double d2 = 0.0;
  double rho = 0.0;
};

struct SimSetting {
  SettingKind kind = SettingKind::kS1;
  int n = 500;
  double p = 0.4;
  double df = 20.0;      // S3 only
  double lambda = 7.0;   // S3 only
  std::vector<double> d2_grid{0.0, 1.0, 3.0, 5.0, 50.0};
  std::vector<double> rho_grid{0.5, 0.75, 0.9, 0.99};
  double rho_panel_d2 = 0.0;  // d2 held fixed along the rho panel
  int replicates = 500;
  int mc_truth_replicates = 2000;
  std::uint64_t seed = 1;
  unsigned threads = 0;

  static SimSetting desk(SettingKind kind) {
    SimSetting s;
    s.kind = kind;
    if (kind == SettingKind::kS3) {
      s.d2_grid = {4.0, 5.0, 50.0};
      s.rho_panel_d2 = 4.0;
    }
    return s;
  }

  static SimSetting paper(SettingKind kind) {
    SimSetting s = desk(kind);
    s.replicates = 1000;
    s.mc_truth_replicates = 10000;
    return s;
  }

  void validate() const {
    if (n < 2) throw ArgumentError("simulation needs n >= 2");
    if (replicates < 1) throw ArgumentError("simulation needs at least one replicate");
    if (mc_truth_replicates < 2) throw ArgumentError("truth phase needs at least two replicates");
    if (!(p > 0.0 && p < 1.0)) throw ArgumentError("mixing weight must lie in (0, 1)");
    for (const auto* grid : {&d2_grid, &rho_grid}) {
      for (double v : *grid)
        if (!std::isfinite(v)) throw ArgumentError("grid levels must be finite");
      if (!std::is_sorted(grid->begin(), grid->end()))
        throw ArgumentError("grid levels must be sorted");
    }
    if (kind == SettingKind::kS3 && !(df > 2.0)) throw ArgumentError("S3 needs df > 2");
  }

  /// d2 panel at rho = 0, then rho panel at d2 = rho_panel_d2.
  std::vector<SimCell> cells() const {
    std::vector<SimCell> out;
    auto label = [](const char* prefix, double v) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s=%g", prefix, v);
      return std::string(buf);
    };
    for (double d2 : d2_grid) out.push_back({label("d2", d2), "d2", d2, 0.0});
    for (double rho : rho_grid) out.push_back({label("rho", rho), "rho", rho_panel_d2, rho});
    return out;
  }
};

inline Matrix correlation_matrix(double rho) {
  Matrix v(2, 2);
  v << 1.0, rho, rho, 1.0;
  return v;
}

/// True bivariate model of a cell: mu_1 = (0, 0), mu_2 = (1, d2), unit
/// variances with within-component correlation rho, weight p on component 1.
inline MixtureModel true_model(const SimSetting& setting, const SimCell& cell) {
  const Matrix v = correlation_matrix(cell.rho);
  return MixtureModel({setting.p, 1.0 - setting.p}, {Vector::Zero(2), Vector{{1.0, cell.d2}}},
                      {v, v});
}

inline Sample gen_gaussian_mixture(const SimSetting& setting, const SimCell& cell,
                                   std::uint64_t seed) {
  if (setting.kind == SettingKind::kS3)
    throw ArgumentError("gen_gaussian_mixture serves S1 and S2 only");
  const MixtureModel truth = true_model(setting, cell);
  const Matrix chol = SpdFactor(truth.covariance(0), "target correlation matrix").lower();
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal;
  Matrix x(setting.n, 2);
  std::vector<int> labels(setting.n);
  for (int i = 0; i < setting.n; ++i) {
    labels[i] = unif(rng) < setting.p ? 1 : 2;
    const Vector z{{normal(rng), normal(rng)}};
    x.row(i) = (truth.mean(labels[i] - 1) + chol * z).transpose();
  }
  return Sample(std::move(x), std::move(labels));
}

struct TMoments {
  double mean = 0.0;
  double variance = 0.0;
};

inline TMoments noncentral_t_moments(double df, double lambda) {
  if (!(df > 2.0)) throw ArgumentError("non-central t variance needs df > 2");
  const double ratio = std::exp(std::lgamma((df - 1.0) / 2.0) - std::lgamma(df / 2.0));
  const double mean = lambda * std::sqrt(df / 2.0) * ratio;
  const double variance =
      df * (1.0 + lambda * lambda) / (df - 2.0) - lambda * lambda * df / 2.0 * ratio * ratio;
  return {mean, variance};
}

/// S3: Bernoulli labels for all units, then two t = (Z + lambda)/sqrt(W/df)
/// draws per unit, standardized by the analytic moments and mapped through
/// x = mu_k + C_k eps (C_k the lower Cholesky factor, so Cov = V).
inline Sample gen_t_mixture(const SimSetting& setting, const SimCell& cell, std::uint64_t seed) {
  if (setting.kind != SettingKind::kS3) throw ArgumentError("gen_t_mixture serves S3 only");
  const MixtureModel truth = true_model(setting, cell);
  const Matrix chol = SpdFactor(correlation_matrix(cell.rho), "target correlation matrix").lower();
  const TMoments moments = noncentral_t_moments(setting.df, setting.lambda);
  const double sd = std::sqrt(moments.variance);
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal;
  std::chi_squared_distribution<double> chi2(setting.df);
  std::vector<int> labels(setting.n);
  for (int& l : labels) l = unif(rng) < setting.p ? 1 : 2;
  auto draw = [&] {
    const double z = normal(rng);
    const double w = chi2(rng);
    return ((z + setting.lambda) / std::sqrt(w / setting.df) - moments.mean) / sd;
  };
  Matrix x(setting.n, 2);
  for (int i = 0; i < setting.n; ++i) {
    const double e1 = draw();
    const double e2 = draw();
    x.row(i) = (truth.mean(labels[i] - 1) + chol * Vector{{e1, e2}}).transpose();
  }
  return Sample(std::move(x), std::move(labels));
}

inline Sample generate(const SimSetting& setting, const SimCell& cell, std::uint64_t seed) {
  return setting.kind == SettingKind::kS3 ? gen_t_mixture(setting, cell, seed)
                                          : gen_gaussian_mixture(setting, cell, seed);
}

/// Fitting configuration for the bivariate (dims = 2) or marginal (dims = 1)
/// analysis of a cell.
inline FitConfig study_fit_config(const SimSetting& setting, const SimCell& cell, int dims) {
  MixtureModel truth = true_model(setting, cell);
  if (dims == 1) truth = marginalize(truth, {0});
  FitConfig config;
  config.k = 2;
  config.threads = 1;
  if (setting.kind == SettingKind::kS1) {
    config.fix_weights = truth.weights();
    config.fix_covariances = truth.covariances();
    config.starts = {ExplicitStart{truth}};
  } else {
    for (int j = 0; j < dims; ++j) config.starts.push_back(QuantileSplitStart{j});
  }
  return config;
}

struct ReplicateOutcome {
  bool ok = false;
  std::string failure;
  double mu11 = 0.0;
  double mu12 = 0.0;
  std::array<std::optional<double>, 3> se;  // I1, I2, I3
  double allocation_rate = 0.0;
  bool converged = false;
};

/// One fit: EM from every configured start, the highest non-spurious root,
/// alignment to the truth, then (optionally) the three standard errors of mu_11.
inline ReplicateOutcome analyse_replicate(const Sample& sample, const MixtureModel& truth,
                                          const FitConfig& config, bool with_information) {
  ReplicateOutcome out;
  try {
    const MultiStartReport search = multi_start_search(sample, config);
    const FitResult* chosen = nullptr;
    for (const FitResult& root : search.roots)
      if (!root.spurious.spurious) {
        chosen = &root;
        break;
      }
    if (chosen == nullptr) {
      out.failure = "spurious: " + search.roots.front().spurious.reason;
      return out;
    }
    FitResult fit = align_labels(*chosen, truth);
    out.mu11 = fit.model.mean(0)[0];
    out.mu12 = fit.model.mean(1)[0];
    out.converged = fit.converged;
    out.allocation_rate = allocation_rate(fit.responsibilities).overall;
    if (with_information) {
      const InfoReport info = information_report(fit, sample);
      const int idx = info.layout.mean_index(0, 0);
      for (int e = 1; e <= 3; ++e)
        if (const auto& se = info.estimator(e).se) out.se[e - 1] = (*se)[idx];
    }
    out.ok = true;
  } catch (const Error& e) {
    out.failure = e.what();
  }
  return out;
}

struct EstimatorSummary {
  int estimator = 1;
  int used = 0;  // replicates with this SE available
  double mean_se = 0.0;
  double abs_bias = 0.0;  // |mean se - true sd|
  double rmse = 0.0;      // sqrt(mean (se - true sd)^2)
  std::optional<int> star_count;  // bivariate se strictly below univariate se
};

struct AnalysisSummary {
  std::string analysis;  // "bivariate" or "univariate"
  // Phase A.
  double true_sd = 0.0;       // empirical SD of mu11-hat
  double true_sd_mu12 = 0.0;  // empirical SD of mu12-hat
  double truth_mean_mu11 = 0.0;
  int truth_used = 0;
  int truth_excluded = 0;
  // Phase B.
  int used = 0;
  int excluded = 0;
  int nonconverged = 0;
  double mean_ar = 0.0;
  double mean_mu11 = 0.0;
  std::vector<EstimatorSummary> estimators;
  bool unreliable = false;  // more than 10% of either phase excluded
  bool assessed = true;     // S3: |mean mu11-hat - E x11| < 0.03 in phase A
  std::vector<std::string> failure_samples;  // first few reasons, in replicate order
};

struct CellReport {
  SimCell cell;
  AnalysisSummary bivariate;
  AnalysisSummary univariate;
};

struct StudyReport {
  SimSetting setting;
  std::vector<CellReport> cells;
  double truth_seconds = 0.0;
  double replicate_seconds = 0.0;
};

inline constexpr std::uint64_t kTruthPhase = 1;
inline constexpr std::uint64_t kReplicatePhase = 2;
inline constexpr double kS3BiasThreshold = 0.03;

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : compensated_sum(v) / static_cast<double>(v.size());
}

inline double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - m) * (v[i] - m);
  return std::sqrt(compensated_sum(sq) / static_cast<double>(v.size() - 1));
}

inline void record_failures(AnalysisSummary& summary, const std::vector<ReplicateOutcome>& runs) {
  for (const auto& r : runs)
    if (!r.ok && summary.failure_samples.size() < 5) summary.failure_samples.push_back(r.failure);
}

}  // namespace detail

/// Phase A (truth) then phase B (replicates) for every cell of the setting.
inline StudyReport run_study(const SimSetting& setting) {
  setting.validate();
  StudyReport report;
  report.setting = setting;
  const std::vector<SimCell> cells = setting.cells();
  const bool sandwich = setting.kind == SettingKind::kS3;
  const std::vector<int> estimators = sandwich ? std::vector<int>{1, 2, 3} : std::vector<int>{1, 2};
  using Clock = std::chrono::steady_clock;

  for (std::size_t c = 0; c < cells.size(); ++c) {
    const SimCell& cell = cells[c];
    const MixtureModel truth2 = true_model(setting, cell);
    const MixtureModel truth1 = marginalize(truth2, {0});
    const FitConfig config2 = study_fit_config(setting, cell, 2);
    const FitConfig config1 = study_fit_config(setting, cell, 1);
    const double e_x11 = truth2.mean(0)[0];

    auto run_phase = [&](std::uint64_t phase, int count, bool info) {
      std::vector<ReplicateOutcome> biv(count), uni(count);
      parallel_for(
          static_cast<std::size_t>(count),
          [&](std::size_t r) {
            const Sample sample = generate(setting, cell, stream_seed(setting.seed, {phase, c, r}));
            biv[r] = analyse_replicate(sample, truth2, config2, info);
            uni[r] = analyse_replicate(select_columns(sample, {0}), truth1, config1, info);
          },
          setting.threads);
      return std::pair{std::move(biv), std::move(uni)};
    };

    const auto t0 = Clock::now();
    const auto [truth_biv, truth_uni] = run_phase(kTruthPhase, setting.mc_truth_replicates, false);
    const auto t1 = Clock::now();
    const auto [rep_biv, rep_uni] = run_phase(kReplicatePhase, setting.replicates, true);
    const auto t2 = Clock::now();
    report.truth_seconds += std::chrono::duration<double>(t1 - t0).count();
    report.replicate_seconds += std::chrono::duration<double>(t2 - t1).count();

    auto summarize = [&](const char* name, const std::vector<ReplicateOutcome>& truth_runs,
                         const std::vector<ReplicateOutcome>& runs) {
      AnalysisSummary s;
      s.analysis = name;
      std::vector<double> mu11, mu12;
      for (const auto& r : truth_runs) {
        if (!r.ok) {
          ++s.truth_excluded;
          continue;
        }
        mu11.push_back(r.mu11);
        mu12.push_back(r.mu12);
      }
      s.truth_used = static_cast<int>(mu11.size());
      s.true_sd = detail::sd_of(mu11);
      s.true_sd_mu12 = detail::sd_of(mu12);
      s.truth_mean_mu11 = detail::mean_of(mu11);
      if (sandwich) s.assessed = std::abs(s.truth_mean_mu11 - e_x11) < kS3BiasThreshold;

      std::vector<double> ar, rep_mu11;
      for (const auto& r : runs) {
        if (!r.ok) {
          ++s.excluded;
          continue;
        }
        if (!r.converged) ++s.nonconverged;
        ar.push_back(r.allocation_rate);
        rep_mu11.push_back(r.mu11);
      }
      s.used = static_cast<int>(ar.size());
      s.mean_ar = detail::mean_of(ar);
      s.mean_mu11 = detail::mean_of(rep_mu11);
      for (int e : estimators) {
        EstimatorSummary est;
        est.estimator = e;
        std::vector<double> se, sq;
        for (const auto& r : runs)
          if (r.ok && r.se[e - 1]) {
            se.push_back(*r.se[e - 1]);
            sq.push_back((*r.se[e - 1] - s.true_sd) * (*r.se[e - 1] - s.true_sd));
          }
        est.used = static_cast<int>(se.size());
        est.mean_se = detail::mean_of(se);
        est.abs_bias = std::abs(est.mean_se - s.true_sd);
        est.rmse = std::sqrt(detail::mean_of(sq));
        s.estimators.push_back(est);
      }
      s.unreliable = s.excluded * 10 > static_cast<int>(runs.size()) ||
                     s.truth_excluded * 10 > static_cast<int>(truth_runs.size());
      detail::record_failures(s, runs);
      return s;
    };

    CellReport row{cell, summarize("bivariate", truth_biv, rep_biv),
                   summarize("univariate", truth_uni, rep_uni)};
    for (std::size_t j = 0; j < estimators.size(); ++j) {
      const int e = estimators[j];
      int stars = 0;
      for (int r = 0; r < setting.replicates; ++r)
        if (rep_biv[r].ok && rep_uni[r].ok && rep_biv[r].se[e - 1] && rep_uni[r].se[e - 1] &&
            *rep_biv[r].se[e - 1] < *rep_uni[r].se[e - 1])
          ++stars;
      row.bivariate.estimators[j].star_count = stars;
    }
    report.cells.push_back(std::move(row));
  }
  return report;
}

}  // namespace mixturelab
