#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "mixturelab/estimation.hpp"
#include "mixturelab/simgen.hpp"

using namespace mixturelab;

namespace {

Matrix eye(int m) { return Matrix::Identity(m, m); }

Sample draw(const MixtureModel& m, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::normal_distribution<double> z;
  Matrix x(n, m.dim());
  std::vector<int> labels(n);
  std::vector<Matrix> chol;
  for (int k = 0; k < m.components(); ++k) chol.push_back(m.factor(k).lower());
  for (int i = 0; i < n; ++i) {
    double acc = 0, r = u(rng);
    int k = 0;
    while (k + 1 < m.components() && r > (acc += m.weight(k))) ++k;
    Vector e(m.dim());
    for (int j = 0; j < m.dim(); ++j) e[j] = z(rng);
    x.row(i) = (m.mean(k) + chol[k] * e).transpose();
    labels[i] = k + 1;
  }
  return Sample(x, labels);
}

FitConfig config_with(std::vector<StartSpec> starts, int k = 2) {
  FitConfig c;
  c.k = k;
  c.starts = std::move(starts);
  return c;
}

}  // namespace

TEST(EmStep, SixPointOracle) {
  // Hand oracle (40-digit arithmetic) for one E+M step on six points.
  Matrix x(6, 1);
  x << -1.2, -0.3, 0.1, 1.8, 2.4, 3.1;
  const Sample s(x);
  const MixtureModel start({0.5, 0.5}, {Vector{{0.0}}, Vector{{2.0}}},
                           {Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 1.5)});
  const MixtureModel next = em_step(start, s, config_with({}));
  EXPECT_NEAR(next.weight(0), 0.4836429696193839, 1e-15);
  EXPECT_NEAR(next.weight(1), 0.5163570303806161, 1e-15);
  EXPECT_NEAR(next.mean(0)[0], -0.26036986158436352, 1e-14);
  EXPECT_NEAR(next.mean(1)[0], 2.1482410834451653, 1e-14);
  EXPECT_NEAR(next.covariance(0)(0, 0), 0.83563993233120287, 1e-14);
  EXPECT_NEAR(next.covariance(1)(0, 0), 1.042763026753642, 1e-14);
}

TEST(EmStep, SingleComponentGivesSampleMoments) {
  const Sample s = draw(MixtureModel({1.0}, {Vector{{1.0, -2.0}}}, {eye(2)}), 200, 4);
  const MixtureModel start({1.0}, {Vector::Zero(2)}, {eye(2)});
  const MixtureModel next = em_step(start, s, config_with({}, 1));
  const Vector mean = s.data().colwise().mean();
  const Matrix centered = s.data().rowwise() - mean.transpose();
  const Matrix cov = centered.transpose() * centered / s.n();
  EXPECT_LT((next.mean(0) - mean).norm(), 1e-13);
  EXPECT_LT((next.covariance(0) - cov).norm(), 1e-9 * cov.norm());
}

TEST(EmStep, HardLabelsReproduceWeightedMoments) {
  const MixtureModel truth({0.4, 0.6}, {Vector::Zero(2), Vector{{2.0, 1.0}}}, {eye(2), eye(2)});
  const Sample s = draw(truth, 300, 8);
  const ExplicitStart from_labels = start_from_labels(s, 2);
  for (int k = 0; k < 2; ++k) {
    Vector sum = Vector::Zero(2);
    int count = 0;
    for (int i = 0; i < s.n(); ++i)
      if ((*s.labels())[i] == k + 1) {
        sum += s.row(i);
        ++count;
      }
    EXPECT_LT((from_labels.model.mean(k) - sum / count).norm(), 1e-13);
    EXPECT_NEAR(from_labels.model.weight(k), static_cast<double>(count) / s.n(), 1e-15);
  }
}

TEST(EmStep, DimensionMismatchThrows) {
  const Sample s(Matrix::Zero(4, 2));
  const MixtureModel m({1.0}, {Vector::Zero(1)}, {eye(1)});
  EXPECT_THROW(em_step(m, s, config_with({}, 1)), ArgumentError);
}

TEST(EmFit, SingleGaussianConvergesFast) {
  const Sample s = draw(MixtureModel({1.0}, {Vector{{0.5}}}, {Matrix::Constant(1, 1, 2.0)}), 100, 2);
  const FitResult fit = em_fit(s, config_with({QuantileSplitStart{}}, 1), QuantileSplitStart{});
  EXPECT_TRUE(fit.converged);
  EXPECT_LE(fit.iterations, 2);
  EXPECT_NEAR(fit.model.mean(0)[0], s.data().col(0).mean(), 1e-12);
}

TEST(EmFit, S1MeanWithinThreeStandardErrors) {
  SimSetting setting = SimSetting::desk(SettingKind::kS1);
  const SimCell cell{"d2=5", "d2", 5.0, 0.0};
  const Sample s = generate(setting, cell, 123);
  const FitConfig config = study_fit_config(setting, cell, 2);
  const FitResult fit = em_fit(s, config, config.starts.front());
  EXPECT_TRUE(fit.converged);
  EXPECT_LT(std::abs(fit.model.mean(0)[0]), 3 * 0.072);
  // Fixed blocks come back bit-identical.
  EXPECT_EQ(fit.model.weights(), *config.fix_weights);
  EXPECT_EQ(fit.model.covariance(1), (*config.fix_covariances)[1]);
}

TEST(EmFit, BeatsMeanGridSlice) {
  const MixtureModel truth({0.5, 0.5}, {Vector{{0.0}}, Vector{{3.0}}},
                           {Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 1.0)});
  const Sample s = draw(truth, 50, 21);
  FitConfig c = config_with({QuantileSplitStart{}});
  c.rel_tolerance = 1e-12;
  const FitResult fit = em_fit(s, c, QuantileSplitStart{});
  double best = -1e300;
  for (int i = 0; i < 100; ++i)
    for (int j = 0; j < 100; ++j) {
      const MixtureModel m(fit.model.weights(),
                           {Vector{{-2.0 + 6.0 * i / 99}}, Vector{{-2.0 + 6.0 * j / 99}}},
                           fit.model.covariances());
      best = std::max(best, log_likelihood(m, s));
    }
  EXPECT_GE(fit.loglik, best - 1e-9);
}

TEST(EmFit, TraceMonotoneAndRowsNormalized) {
  Rng rng(17);
  for (int t = 0; t < 40; ++t) {
    const MixtureModel truth({0.3, 0.7}, {Vector::Zero(2), Vector{{1.0, 1.0 + t * 0.1}}},
                             {eye(2), eye(2) * 1.5});
    const Sample s = draw(truth, 150, 100 + t);
    FitConfig c = config_with({RandomResponsibilityStart{}});
    c.seed = t;
    const FitResult fit = em_fit(s, c, RandomResponsibilityStart{});
    for (std::size_t i = 1; i < fit.loglik_trace.size(); ++i)
      EXPECT_GE(fit.loglik_trace[i], fit.loglik_trace[i - 1] - 1e-9);
    EXPECT_LT((fit.responsibilities.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-10);
  }
}

TEST(EmFit, DegenerateComponentReportsIteration) {
  Matrix x(20, 1);
  for (int i = 0; i < 20; ++i) x(i, 0) = 0.1 * i;
  const Sample s(x);
  const MixtureModel start({0.5, 0.5}, {Vector{{0.5}}, Vector{{1e6}}},
                           {Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 1e-4)});
  try {
    em_fit(s, config_with({ExplicitStart{start}}), ExplicitStart{start});
    FAIL() << "expected a degenerate component";
  } catch (const DegenerateComponentError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 1"), std::string::npos) << e.what();
  }
}

TEST(EmFit, SeededDeterminism) {
  const MixtureModel truth({0.4, 0.6}, {Vector::Zero(2), Vector{{1.0, 2.0}}}, {eye(2), eye(2)});
  const Sample s = draw(truth, 200, 5);
  FitConfig c = config_with({RandomResponsibilityStart{}});
  c.seed = 99;
  const FitResult a = em_fit(s, c, RandomResponsibilityStart{}, 3);
  const FitResult b = em_fit(s, c, RandomResponsibilityStart{}, 3);
  EXPECT_EQ(a.loglik_trace, b.loglik_trace);
  EXPECT_EQ(flatten_parameters(a.model), flatten_parameters(b.model));
}

TEST(EmFit, PermutationEquivariance) {
  const MixtureModel truth({0.4, 0.6}, {Vector::Zero(2), Vector{{1.0, 3.0}}}, {eye(2), eye(2)});
  const Sample s = draw(truth, 300, 6);
  const MixtureModel swapped({0.6, 0.4}, {truth.mean(1), truth.mean(0)}, {eye(2), eye(2)});
  FitConfig c = config_with({});
  const FitResult a = em_fit(s, c, ExplicitStart{truth});
  const FitResult b = align_labels(em_fit(s, c, ExplicitStart{swapped}), a.model);
  EXPECT_LT((flatten_parameters(a.model) - flatten_parameters(b.model)).norm(), 1e-10);
}

TEST(EmFit, LargeSampleConsistency) {
  Matrix v2(2, 2);
  v2 << 1.0, 0.3, 0.3, 0.8;
  const MixtureModel truth({0.4, 0.6}, {Vector::Zero(2), Vector{{2.0, 2.5}}}, {eye(2), v2});
  const Sample s = draw(truth, 20000, 77);
  const FitResult fit = align_labels(em_fit(s, config_with({}), QuantileSplitStart{}), truth);
  // Monte Carlo SE of a component mean is roughly sqrt(V_jj / (n p_k)).
  for (int k = 0; k < 2; ++k)
    for (int j = 0; j < 2; ++j) {
      const double se = std::sqrt(truth.covariance(k)(j, j) / (20000 * truth.weight(k)));
      EXPECT_NEAR(fit.model.mean(k)[j], truth.mean(k)[j], 5 * se);
    }
  EXPECT_NEAR(fit.model.weight(0), 0.4, 5 * std::sqrt(0.24 / 20000));
}

TEST(MultiStart, SingleComponentHasOneRoot) {
  const Sample s = draw(MixtureModel({1.0}, {Vector::Zero(2)}, {eye(2)}), 100, 1);
  FitConfig c = config_with({}, 1);
  for (int i = 0; i < 6; ++i) c.starts.push_back(RandomResponsibilityStart{});
  EXPECT_EQ(multi_start_fit(s, c).size(), 1u);
}

TEST(MultiStart, WellSeparatedHasOneRegularRootAtGridMaximum) {
  const MixtureModel truth({0.5, 0.5}, {Vector{{0.0}}, Vector{{6.0}}},
                           {Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 1.0)});
  const Sample s = draw(truth, 200, 31);
  FitConfig c = config_with({});
  c.seed = 4;
  for (int i = 0; i < 10; ++i) c.starts.push_back(RandomResponsibilityStart{});
  const auto roots = multi_start_fit(s, c);
  int regular = 0;
  for (const auto& r : roots) regular += !r.spurious.spurious;
  EXPECT_EQ(regular, 1);
  const FitResult& top = roots.front();
  EXPECT_FALSE(top.spurious.spurious);
  double best = -1e300;
  for (int i = 0; i < 60; ++i)
    for (int j = 0; j < 60; ++j) {
      const MixtureModel m(top.model.weights(),
                           {Vector{{-1.0 + 2.5 * i / 59}}, Vector{{4.5 + 3.0 * j / 59}}},
                           top.model.covariances());
      best = std::max(best, log_likelihood(m, s));
    }
  EXPECT_GE(top.loglik, best - 1e-9);
}

TEST(MultiStart, OutlierClusterYieldsFlaggedSpuriousRoot) {
  // Two regular groups plus eight near-identical outliers.
  Matrix x(100, 2);
  Rng rng(12);
  std::normal_distribution<double> z;
  for (int i = 0; i < 92; ++i) x.row(i) << (i % 2 ? 4.0 : 0.0) + z(rng), z(rng);
  for (int i = 92; i < 100; ++i) x.row(i) << 2.0 + 1e-3 * z(rng), 7.0 + 1e-3 * z(rng);
  const Sample s(x);
  Matrix tiny = eye(2) * 1e-6;
  const MixtureModel collapse({0.92, 0.08}, {Vector{{2.0, 0.0}}, Vector{{2.0, 7.0}}},
                              {eye(2) * 5.0, tiny});
  FitConfig c = config_with({QuantileSplitStart{}, ExplicitStart{collapse}});
  const auto roots = multi_start_fit(s, c);
  ASSERT_GE(roots.size(), 2u);
  bool spurious = false, regular = false;
  for (const auto& r : roots) (r.spurious.spurious ? spurious : regular) = true;
  EXPECT_TRUE(spurious);
  EXPECT_TRUE(regular);
}

TEST(MultiStart, AllStartsDegenerateThrowsWithReasons) {
  Matrix x(10, 1);
  for (int i = 0; i < 10; ++i) x(i, 0) = i;
  const Sample s(x);
  const MixtureModel far({0.5, 0.5}, {Vector{{4.0}}, Vector{{1e7}}},
                         {Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 1e-4)});
  FitConfig c = config_with({ExplicitStart{far}, ExplicitStart{far}});
  try {
    multi_start_fit(s, c);
    FAIL();
  } catch (const FittingFailedError& e) {
    EXPECT_EQ(e.reasons().size(), 2u);
  }
}

TEST(DetectSpurious, BalancedFitIsRegular) {
  const MixtureModel truth({0.5, 0.5}, {Vector::Zero(2), Vector{{5.0, 5.0}}}, {eye(2), eye(2)});
  const Sample s = draw(truth, 200, 3);
  const FitResult fit = em_fit(s, config_with({}), ExplicitStart{truth});
  EXPECT_FALSE(detect_spurious(fit, s).spurious);
}

TEST(DetectSpurious, EightCollapsedPointsOutOfHundred) {
  // Eight units carry mass 8 > max(2, 0.02 n) = 2, so the mass rule stays
  // silent; the collapsed generalized variance is what flags this root.
  Matrix x(100, 1);
  Rng rng(4);
  std::normal_distribution<double> z;
  for (int i = 0; i < 92; ++i) x(i, 0) = z(rng);
  for (int i = 92; i < 100; ++i) x(i, 0) = 5.0 + 1e-4 * z(rng);
  const Sample s(x);
  Matrix resp = Matrix::Zero(100, 2);
  for (int i = 0; i < 100; ++i) resp(i, i < 92 ? 0 : 1) = 1.0;
  FitConfig c = config_with({});
  const MixtureModel m = detail::maximize(s.data(), resp, c);
  FitResult fit{m, log_likelihood(m, s), {}, posterior(m, s.data()).responsibilities};
  const SpuriousVerdict v = detect_spurious(fit, s);
  EXPECT_TRUE(v.spurious);
  EXPECT_NE(v.reason.find("generalized variance"), std::string::npos) << v.reason;
}

TEST(DetectSpurious, DeterminantRatioRule) {
  Matrix x(100, 1);
  for (int i = 0; i < 100; ++i) x(i, 0) = 0.01 * i;
  const Sample s(x);
  auto verdict = [&](double ratio) {
    const MixtureModel m({0.5, 0.5}, {Vector::Zero(1), Vector::Zero(1)},
                         {Matrix::Constant(1, 1, ratio), Matrix::Constant(1, 1, 1.0)});
    return detect_spurious(FitResult{m, 0.0, {}, Matrix::Constant(100, 2, 0.5)}, s);
  };
  // With K = 2 the geometric mean is sqrt(|V1||V2|), so |V1| / |V2| must drop
  // below 1e-6 before |V1| falls under 1e-3 of it.
  EXPECT_FALSE(verdict(1e-4).spurious);
  EXPECT_FALSE(verdict(2e-6).spurious);
  const SpuriousVerdict v = verdict(1e-7);
  EXPECT_TRUE(v.spurious);
  EXPECT_NE(v.reason.find("component 1"), std::string::npos);
  SpuriousThresholds loose;
  loose.det_ratio = 0.05;
  const MixtureModel m({0.5, 0.5}, {Vector::Zero(1), Vector::Zero(1)},
                       {Matrix::Constant(1, 1, 1e-4), Matrix::Constant(1, 1, 1.0)});
  EXPECT_TRUE(detect_spurious(FitResult{m, 0.0, {}, Matrix::Constant(100, 2, 0.5)}, s, loose).spurious);
}

TEST(DetectSpurious, MassRule) {
  Matrix x(100, 1);
  for (int i = 0; i < 100; ++i) x(i, 0) = 0.01 * i;
  const Sample s(x);
  const MixtureModel m({0.5, 0.5}, {Vector::Zero(1), Vector::Zero(1)},
                       {Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 1.0)});
  Matrix resp = Matrix::Zero(100, 2);
  resp.col(0).setOnes();
  resp.col(0).head(1).setConstant(0.0);
  resp.col(1).head(1).setConstant(1.0);
  FitResult fit{m, 0.0, {}, resp};
  const SpuriousVerdict v = detect_spurious(fit, s);
  EXPECT_TRUE(v.spurious);
  EXPECT_NE(v.reason.find("mass"), std::string::npos);
}

TEST(AlignLabels, IdentitySwapAndBruteForce) {
  const MixtureModel ref({0.3, 0.3, 0.4}, {Vector{{0.0}}, Vector{{5.0}}, Vector{{-4.0}}},
                         {Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 2.0),
                          Matrix::Constant(1, 1, 3.0)});
  EXPECT_EQ(best_alignment(ref, ref), (std::vector<int>{0, 1, 2}));
  std::vector<int> perm{0, 1, 2};
  do {
    std::vector<double> w;
    std::vector<Vector> mu;
    std::vector<Matrix> v;
    for (int j : perm) {
      w.push_back(ref.weight(j));
      mu.push_back(ref.mean(j) + Vector::Constant(1, 0.1));
      v.push_back(ref.covariance(j));
    }
    const MixtureModel shuffled(w, mu, v);
    const auto order = best_alignment(shuffled, ref);
    for (int k = 0; k < 3; ++k) EXPECT_EQ(perm[order[k]], k);
  } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST(AlignLabels, SwapAppliedToFit) {
  const MixtureModel ref({0.4, 0.6}, {Vector{{0.0}}, Vector{{3.0}}},
                         {Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 1.0)});
  const MixtureModel swapped({0.6, 0.4}, {Vector{{3.1}}, Vector{{0.1}}},
                             {Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 1.0)});
  Matrix resp(2, 2);
  resp << 0.9, 0.1, 0.2, 0.8;
  FitResult fit{swapped, 0.0, {}, resp};
  const FitResult out = align_labels(fit, ref);
  EXPECT_DOUBLE_EQ(out.model.mean(0)[0], 0.1);
  EXPECT_DOUBLE_EQ(out.responsibilities(0, 0), 0.1);
}
