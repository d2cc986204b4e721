#include <cmath>

#include <gtest/gtest.h>

#include "mixturelab/simgen.hpp"

using namespace mixturelab;

namespace {

struct Moments {
  Vector mean;
  Matrix cov;
  int count = 0;
};

Moments component_moments(const Sample& s, int label) {
  Moments out{Vector::Zero(2), Matrix::Zero(2, 2), 0};
  for (int i = 0; i < s.n(); ++i)
    if ((*s.labels())[i] == label) {
      out.mean += s.row(i);
      ++out.count;
    }
  out.mean /= out.count;
  for (int i = 0; i < s.n(); ++i)
    if ((*s.labels())[i] == label) {
      const Vector r = s.row(i) - out.mean;
      out.cov += r * r.transpose();
    }
  out.cov /= out.count - 1;
  return out;
}

SimSetting tiny(SettingKind kind) {
  SimSetting s = SimSetting::desk(kind);
  s.d2_grid = {3.0};
  s.rho_grid = {0.5};
  s.replicates = 6;
  s.mc_truth_replicates = 8;
  s.n = 200;
  s.seed = 42;
  return s;
}

}  // namespace

TEST(NoncentralT, MomentOracle) {
  // Independent high-precision evaluation of the gamma-ratio formulas.
  const TMoments m = noncentral_t_moments(20, 7);
  EXPECT_NEAR(m.mean, 7.2769268439822046, 1e-12);
  EXPECT_NEAR(m.variance, 2.6018912628867463, 1e-11);
  EXPECT_THROW(noncentral_t_moments(2, 7), ArgumentError);
}

TEST(Generators, GaussianComponentMoments) {
  SimSetting setting = SimSetting::desk(SettingKind::kS2);
  setting.n = 100000;
  const SimCell cell{"", "rho", 2.0, 0.6};
  const Sample s = generate(setting, cell, 1234);
  const MixtureModel truth = true_model(setting, cell);
  for (int k = 0; k < 2; ++k) {
    const Moments m = component_moments(s, k + 1);
    for (int j = 0; j < 2; ++j)
      EXPECT_NEAR(m.mean[j], truth.mean(k)[j], 5 / std::sqrt(m.count));
    EXPECT_NEAR(m.cov(0, 1), 0.6, 5 * (1 + 0.36) / std::sqrt(m.count));
    EXPECT_NEAR(m.cov(1, 1), 1.0, 5 * std::sqrt(2.0 / m.count));
  }
  EXPECT_NEAR(std::count(s.labels()->begin(), s.labels()->end(), 1) / 1e5, 0.4,
              5 * std::sqrt(0.24 / 1e5));
}

TEST(Generators, SkewedComponentMoments) {
  SimSetting setting = SimSetting::desk(SettingKind::kS3);
  setting.n = 100000;
  const SimCell cell{"", "rho", 4.0, 0.5};
  const Sample s = generate(setting, cell, 99);
  const MixtureModel truth = true_model(setting, cell);
  for (int k = 0; k < 2; ++k) {
    const Moments m = component_moments(s, k + 1);
    for (int j = 0; j < 2; ++j) {
      EXPECT_NEAR(m.mean[j], truth.mean(k)[j], 5 / std::sqrt(m.count));
      EXPECT_NEAR(m.cov(j, j), 1.0, 0.05);
    }
    EXPECT_NEAR(m.cov(0, 1), 0.5, 0.04);
  }
  // First coordinate is a raw standardized draw: skewness of the t law.
  double m2 = 0, m3 = 0;
  int count = 0;
  for (int i = 0; i < s.n(); ++i)
    if ((*s.labels())[i] == 1) {
      const double v = s.data()(i, 0);
      m2 += v * v;
      m3 += v * v * v;
      ++count;
    }
  m2 /= count;
  m3 /= count;
  EXPECT_NEAR(m3 / std::pow(m2, 1.5), 0.7232498134053124, 0.08);
}

TEST(Generators, WrongKindThrows) {
  const SimCell cell{"", "d2", 1.0, 0.0};
  EXPECT_THROW(gen_t_mixture(SimSetting::desk(SettingKind::kS1), cell, 1), ArgumentError);
  EXPECT_THROW(gen_gaussian_mixture(SimSetting::desk(SettingKind::kS3), cell, 1), ArgumentError);
}

TEST(SimSetting, CellsAndValidation) {
  const SimSetting s = SimSetting::desk(SettingKind::kS1);
  const auto cells = s.cells();
  ASSERT_EQ(cells.size(), 9u);
  EXPECT_EQ(cells[0].name, "d2=0");
  EXPECT_EQ(cells[8].name, "rho=0.99");
  EXPECT_DOUBLE_EQ(cells[8].d2, 0.0);
  SimSetting bad = s;
  bad.replicates = 0;
  EXPECT_THROW(bad.validate(), ArgumentError);
  bad = s;
  bad.d2_grid = {3.0, 1.0};
  EXPECT_THROW(bad.validate(), ArgumentError);
  EXPECT_EQ(SimSetting::desk(SettingKind::kS3).cells()[0].name, "d2=4");
  EXPECT_EQ(SimSetting::paper(SettingKind::kS2).replicates, 1000);
}

TEST(StudyFitConfig, FixedBlocksOnlyInS1) {
  const SimCell cell{"", "d2", 3.0, 0.0};
  const FitConfig s1 = study_fit_config(SimSetting::desk(SettingKind::kS1), cell, 2);
  EXPECT_TRUE(s1.fix_weights && s1.fix_covariances);
  const FitConfig s2 = study_fit_config(SimSetting::desk(SettingKind::kS2), cell, 2);
  EXPECT_FALSE(s2.fix_weights || s2.fix_covariances);
  EXPECT_EQ(s2.starts.size(), 2u);
  EXPECT_EQ(study_fit_config(SimSetting::desk(SettingKind::kS2), cell, 1).starts.size(), 1u);
}

TEST(RunStudy, SummaryIdentities) {
  for (SettingKind kind : {SettingKind::kS1, SettingKind::kS2, SettingKind::kS3}) {
    const StudyReport report = run_study(tiny(kind));
    ASSERT_EQ(report.cells.size(), 2u);
    for (const CellReport& cell : report.cells)
      for (const AnalysisSummary* a : {&cell.bivariate, &cell.univariate}) {
        EXPECT_EQ(a->used + a->excluded, 6);
        EXPECT_EQ(a->estimators.size(), kind == SettingKind::kS3 ? 3u : 2u);
        EXPECT_GE(a->mean_ar, 0.5);
        EXPECT_LE(a->mean_ar, 1.0);
        for (const EstimatorSummary& e : a->estimators) {
          EXPECT_GE(e.rmse, e.abs_bias - 1e-15);
          if (e.star_count) EXPECT_LE(*e.star_count, e.used);
        }
      }
    for (const auto& e : report.cells[0].univariate.estimators) EXPECT_FALSE(e.star_count);
  }
}

TEST(RunStudy, SingleReplicateMatchesDirectAnalysis) {
  SimSetting s = tiny(SettingKind::kS1);
  s.rho_grid.clear();
  s.replicates = 1;
  s.mc_truth_replicates = 2;
  const StudyReport report = run_study(s);
  const SimCell cell = s.cells()[0];
  const Sample sample = generate(s, cell, stream_seed(s.seed, {kReplicatePhase, 0, 0}));
  const ReplicateOutcome direct =
      analyse_replicate(sample, true_model(s, cell), study_fit_config(s, cell, 2), true);
  ASSERT_TRUE(direct.ok);
  const AnalysisSummary& biv = report.cells[0].bivariate;
  EXPECT_EQ(biv.mean_mu11, direct.mu11);
  EXPECT_EQ(biv.estimators[0].mean_se, *direct.se[0]);
  EXPECT_EQ(biv.mean_ar, direct.allocation_rate);
}

TEST(RunStudy, IdenticalAcrossThreadCounts) {
  SimSetting a = tiny(SettingKind::kS2);
  a.threads = 1;
  SimSetting b = a;
  b.threads = 3;
  const StudyReport ra = run_study(a), rb = run_study(b);
  for (std::size_t c = 0; c < ra.cells.size(); ++c) {
    const AnalysisSummary& x = ra.cells[c].bivariate;
    const AnalysisSummary& y = rb.cells[c].bivariate;
    EXPECT_EQ(x.true_sd, y.true_sd);
    EXPECT_EQ(x.mean_ar, y.mean_ar);
    for (std::size_t e = 0; e < x.estimators.size(); ++e) {
      EXPECT_EQ(x.estimators[e].mean_se, y.estimators[e].mean_se);
      EXPECT_EQ(x.estimators[e].rmse, y.estimators[e].rmse);
      EXPECT_EQ(x.estimators[e].star_count, y.estimators[e].star_count);
    }
  }
}
