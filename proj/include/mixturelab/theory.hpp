#pragma once

// Numeric counterparts of the two-component bivariate results: where the
// standardized distance is minimized, how the correct-allocation probability
// behaves, and the limiting information integrals for the primary mean
// (univariate "I" and bivariate "II", both written with un-normalized
// Gaussian kernels).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mixturelab/errors.hpp"
#include "mixturelab/model.hpp"
#include "mixturelab/parallel.hpp"
#include "mixturelab/quadrature.hpp"
#include "mixturelab/rng.hpp"

namespace mixturelab {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/// Two-component bivariate scenario: mu_1 = (0, 0), mu_2 = (d1, d2), weight p
/// on component 1. Homoscedastic with (sigma1, sigma2, rho) unless
/// `heteroscedastic` holds per-component SDs {s11, s21, s12, s22} (s_mk for
/// variable m, component k) with zero within-component correlation.
struct TheoryScenario {
  double p = 0.5;
  double d1 = 0.0;
  double d2 = 0.0;
  double sigma1 = 1.0;
  double sigma2 = 1.0;
  double rho = 0.0;
  std::optional<std::array<double, 4>> heteroscedastic;

  void validate() const {
    if (!(p > 0.0 && p < 1.0)) throw ArgumentError("scenario weight p must lie in (0, 1)");
    if (!(sigma1 > 0.0 && sigma2 > 0.0)) throw ArgumentError("scenario SDs must be positive");
    if (!(std::abs(rho) < 1.0)) throw ArgumentError("scenario correlation must satisfy |rho| < 1");
    if (heteroscedastic)
      for (double s : *heteroscedastic)
        if (!(s > 0.0)) throw ArgumentError("scenario SDs must be positive");
  }

  bool homoscedastic() const { return !heteroscedastic.has_value(); }

  HomoscedasticGap gap() const {
    if (!homoscedastic()) throw ArgumentError("gap requires a homoscedastic scenario");
    return HomoscedasticGap::bivariate(d1, d2, sigma1, sigma2, rho);
  }

  MixtureModel model() const {
    validate();
    auto cov = [](double s1, double s2, double r) {
      Matrix v(2, 2);
      v << s1 * s1, r * s1 * s2, r * s1 * s2, s2 * s2;
      return v;
    };
    std::vector<Matrix> covs;
    if (heteroscedastic) {
      const auto& s = *heteroscedastic;
      covs = {cov(s[0], s[1], 0.0), cov(s[2], s[3], 0.0)};
    } else {
      covs = {cov(sigma1, sigma2, rho), cov(sigma1, sigma2, rho)};
    }
    return MixtureModel({p, 1.0 - p}, {Vector::Zero(2), Vector{{d1, d2}}}, std::move(covs));
  }
};

struct Minimum {
  double argmin = 0.0;
  double value = 0.0;
};

/// d'V^{-1}d over d2 for fixed (d1, sigma1, sigma2, rho): minimized at
/// rho d1 sigma2 / sigma1 with value d1^2 / sigma1^2.
inline Minimum argmin_d2(double d1, double sigma1, double sigma2, double rho) {
  if (!(sigma1 > 0.0 && sigma2 > 0.0) || !(std::abs(rho) < 1.0))
    throw ArgumentError("argmin_d2: invalid scenario");
  return {rho * d1 * sigma2 / sigma1, d1 * d1 / (sigma1 * sigma1)};
}

struct RhoCandidate {
  double rho = 0.0;
  double value = 0.0;
  bool feasible = false;  // |rho| < 1
};

/// Stationary points of d'V^{-1}d in rho: d2 s1 / (d1 s2) with value
/// d1^2/s1^2, and d1 s2 / (d2 s1) with value d2^2/s2^2. At most one is
/// feasible.
inline std::array<RhoCandidate, 2> argmin_rho(double d1, double d2, double sigma1, double sigma2) {
  if (d1 == 0.0 || d2 == 0.0) throw ArgumentError("argmin_rho: d1 and d2 must be nonzero");
  if (!(sigma1 > 0.0 && sigma2 > 0.0)) throw ArgumentError("argmin_rho: SDs must be positive");
  const double first = d2 * sigma1 / (d1 * sigma2);
  const double second = d1 * sigma2 / (d2 * sigma1);
  return {RhoCandidate{first, d1 * d1 / (sigma1 * sigma1), std::abs(first) < 1.0},
          RhoCandidate{second, d2 * d2 / (sigma2 * sigma2), std::abs(second) < 1.0}};
}

inline double bivariate_standardized_distance(double d1, double d2, double sigma1, double sigma2,
                                              double rho) {
  return (d1 * d1 * sigma2 * sigma2 + d2 * d2 * sigma1 * sigma1 -
          2.0 * rho * sigma1 * sigma2 * d1 * d2) /
         ((1.0 - rho * rho) * sigma1 * sigma1 * sigma2 * sigma2);
}

/// Minimizer of a unimodal smooth function on [lo, hi]: golden-section
/// bracketing, then bisection on the sign of a central-difference slope.
inline Minimum numeric_minimize(const std::function<double(double)>& f, double lo, double hi) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > 1e-4 * (hi - lo)) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  const double h = 1e-6 * (hi - lo);
  auto slope = [&](double x) { return f(x + h) - f(x - h); };
  // Widen the bracket until the slope changes sign (or the domain ends).
  double left = std::max(lo + h, a - (b - a)), right = std::min(hi - h, b + (b - a));
  if (slope(left) > 0.0 || slope(right) < 0.0) {
    const double x = fc < fd ? c : d;
    return {x, f(x)};
  }
  for (int it = 0; it < 200 && right - left > 0.0; ++it) {
    const double mid = 0.5 * (left + right);
    if (mid <= left || mid >= right) break;
    if (slope(mid) > 0.0)
      right = mid;
    else
      left = mid;
  }
  const double x = 0.5 * (left + right);
  return {x, f(x)};
}

/// Pr(k = 1 | h(x) < 0) for the homoscedastic two-component mixture with
/// standardized distance `distance` = d'V^{-1}d.
inline double correct_allocation_probability(double p, double distance) {
  if (!(p > 0.0 && p < 1.0)) throw ArgumentError("p must lie in (0, 1)");
  if (!(distance >= 0.0)) throw ArgumentError("standardized distance must be nonnegative");
  const double phi = normal_cdf(std::sqrt(distance) / 2.0);
  return 1.0 / (1.0 + (1.0 - p) / p * (1.0 / phi - 1.0));
}

inline double correct_allocation_probability(const TheoryScenario& scenario) {
  scenario.validate();
  return correct_allocation_probability(scenario.p, standardized_distance(scenario.gap()));
}

enum class LimitPath { kD2, kRho };

struct AllocationLevel {
  double level = 0.0;
  double monte_carlo = 0.0;     // mean correct-allocation responsibility
  double mc_standard_error = 0.0;
  std::optional<double> quadrature;  // homoscedastic only
};

struct AllocationLimitTable {
  std::vector<AllocationLevel> levels;
  bool nondecreasing = true;  // beyond 3 MC standard errors of the step
};

/// E[tau_k(x) | x from component k], averaged over k ~ (p, 1-p): the expected
/// responsibility the true component receives. Homoscedastic closed form via
/// h ~ N(-/+ D/2, D).
inline double expected_correct_responsibility(double p, double distance) {
  if (distance <= 0.0) return p * p + (1.0 - p) * (1.0 - p);
  const double sd = std::sqrt(distance);
  const double logit = std::log((1.0 - p) / p);
  // tau_1 = 1 / (1 + e^{logit + h}), h ~ N(-D/2, D) under component 1;
  // tau_2 = 1 / (1 + e^{-logit - h}), h ~ N(+D/2, D) under component 2.
  auto integrand1 = [&](double z) {
    const double h = -0.5 * distance + sd * z;
    return normal_pdf(z) / (1.0 + std::exp(logit + h));
  };
  auto integrand2 = [&](double z) {
    const double h = 0.5 * distance + sd * z;
    return normal_pdf(z) / (1.0 + std::exp(-logit - h));
  };
  const double e1 = integrate(integrand1, -12.0, 12.0, 1e-12).value;
  const double e2 = integrate(integrand2, -12.0, 12.0, 1e-12).value;
  return p * e1 + (1.0 - p) * e2;
}

/// Monte Carlo table of the mean correct-allocation responsibility along a
/// d2 or rho path. Draws are shared across levels (common random numbers).
inline AllocationLimitTable allocation_limit_check(const TheoryScenario& base, LimitPath path,
                                                   const std::vector<double>& levels,
                                                   int draws = 1000000, std::uint64_t seed = 1) {
  base.validate();
  for (std::size_t i = 1; i < levels.size(); ++i)
    if (!(levels[i] >= levels[i - 1]))
      throw ArgumentError("allocation_limit_check: levels must be nondecreasing");
  Rng rng = make_rng(seed, {0x414c4c4fULL});
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  Matrix z(draws, 2);
  std::vector<int> comp(draws);
  for (int i = 0; i < draws; ++i) {
    comp[i] = unif(rng) < base.p ? 0 : 1;
    z(i, 0) = normal(rng);
    z(i, 1) = normal(rng);
  }
  AllocationLimitTable table;
  std::vector<double> previous;
  for (double level : levels) {
    TheoryScenario s = base;
    if (path == LimitPath::kD2)
      s.d2 = level;
    else
      s.rho = level;
    const MixtureModel model = s.model();
    std::array<Matrix, 2> chol;
    for (int k = 0; k < 2; ++k) chol[k] = model.covariance(k).llt().matrixL();
    Matrix x(draws, 2);
    for (int i = 0; i < draws; ++i)
      x.row(i) = (model.mean(comp[i]) + chol[comp[i]] * z.row(i).transpose()).transpose();
    const Posterior post = posterior(model, x);
    std::vector<double> tau(draws);
    double sum = 0.0;
    for (int i = 0; i < draws; ++i) sum += (tau[i] = post.responsibilities(i, comp[i]));
    const double mean = sum / draws;
    double ss = 0.0;
    for (double t : tau) ss += (t - mean) * (t - mean);
    AllocationLevel row{level, mean, std::sqrt(ss / (draws - 1.0) / draws), std::nullopt};
    if (s.homoscedastic())
      row.quadrature = expected_correct_responsibility(s.p, standardized_distance(s.gap()));
    if (!previous.empty()) {
      double sd = 0.0;
      for (int i = 0; i < draws; ++i) {
        const double diff = tau[i] - previous[i];
        sd += diff * diff;
      }
      const double step_se = std::sqrt(sd / draws / draws);
      if (row.monte_carlo < table.levels.back().monte_carlo - 3.0 * step_se - 1e-15)
        table.nondecreasing = false;
    }
    previous = std::move(tau);
    table.levels.push_back(row);
  }
  return table;
}

/// Quadratic a x^2 + b x + c whose negative region is where the
/// component-k̄-to-k density ratio of the auxiliary variable is below one
/// (rho = 0, component k centred at 0 with SD sigma_k, k̄ at d2 with SD
/// sigma_kbar).
struct AllocationQuadratic {
  double a = 0.0, b = 0.0, c = 0.0;
  double discriminant = 0.0;
  std::optional<double> x_inf, x_sup;

  double operator()(double x) const { return (a * x + b) * x + c; }
};

inline AllocationQuadratic allocation_quadratic(double sigma_k, double sigma_kbar, double d2) {
  const double vk = sigma_k * sigma_k, vkb = sigma_kbar * sigma_kbar;
  AllocationQuadratic q;
  q.a = (vkb - vk) / (2.0 * vkb * vk);
  q.b = d2 / vkb;
  q.c = std::log(sigma_k / sigma_kbar) - d2 * d2 / (2.0 * vkb);
  q.discriminant = q.b * q.b - 4.0 * q.a * q.c;
  if (q.a != 0.0 && q.discriminant >= 0.0) {
    const double r = std::sqrt(q.discriminant);
    const double lo = (-q.b - r) / (2.0 * q.a), hi = (-q.b + r) / (2.0 * q.a);
    q.x_inf = std::min(lo, hi);
    q.x_sup = std::max(lo, hi);
  }
  return q;
}

/// Pr(auxiliary density ratio < 1 | unit in k) from the quadratic's roots.
inline double ratio_below_one_probability(double sigma_k, double sigma_kbar, double d2) {
  const AllocationQuadratic q = allocation_quadratic(sigma_k, sigma_kbar, d2);
  auto cdf = [&](double x) { return normal_cdf(x / sigma_k); };
  if (q.a == 0.0) {
    // Linear: b x + c < 0.
    if (q.b == 0.0) return q.c < 0.0 ? 1.0 : 0.0;
    const double root = -q.c / q.b;
    return q.b > 0.0 ? cdf(root) : 1.0 - cdf(root);
  }
  if (!q.x_inf) return q.a > 0.0 ? 0.0 : 1.0;
  if (q.a > 0.0) return cdf(*q.x_sup) - cdf(*q.x_inf);
  return 1.0 - cdf(*q.x_sup) + cdf(*q.x_inf);
}

namespace detail {

inline double log_add_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(-std::abs(a - b)));
}

// log{p + (1 - p) exp(s)}
inline double log_mixture_denominator(double p, double s) {
  const double log_q = p < 1.0 ? std::log1p(-p) : -std::numeric_limits<double>::infinity();
  return log_add_exp(std::log(p), log_q + s);
}

inline double univariate_info_integrand(double x, double d1, double sigma1, double p,
                                        double extra_exponent = 0.0) {
  if (x == 0.0) return 0.0;
  const double v = sigma1 * sigma1;
  const double s = -d1 * d1 / (2.0 * v) + x * d1 / v + extra_exponent;
  return std::exp(2.0 * std::log(std::abs(x)) - 2.0 * std::log(v) - x * x / (2.0 * v) -
                  log_mixture_denominator(p, s));
}

}  // namespace detail

inline constexpr double kInfoUnivariateTolerance = 1e-10;
inline constexpr double kInfoBivariateTolerance = 1e-8;

/// I = int x^2/s1^4 exp(-x^2/(2 s1^2)) / {p + (1-p) exp(-d1^2/(2 s1^2) + x d1/s1^2)} dx
/// on [-10 s1 - |d1|, 10 s1 + |d1|].
inline double info_integral_univariate(double d1, double sigma1, double p,
                                       double tolerance = kInfoUnivariateTolerance) {
  if (!(sigma1 > 0.0)) throw ArgumentError("sigma1 must be positive");
  if (!(p > 0.0 && p <= 1.0)) throw ArgumentError("p must lie in (0, 1]");
  const double edge = 10.0 * sigma1 + std::abs(d1);
  return integrate([&](double x) { return detail::univariate_info_integrand(x, d1, sigma1, p); },
                   -edge, edge, tolerance)
      .value;
}

/// II = int exp(-x2^2/(2 s2^2)) int x1^2/s1^4 exp(-x1^2/(2 s1^2)) /
///      {p + (1-p) exp(-d1^2/(2 s1^2) + x1 d1/s1^2) exp(-d2^2/(2 s2^2) + x2 d2/s2^2)} dx1 dx2
inline double info_integral_bivariate(double d1, double d2, double sigma1, double sigma2, double p,
                                      double tolerance = kInfoBivariateTolerance) {
  if (!(sigma1 > 0.0 && sigma2 > 0.0)) throw ArgumentError("SDs must be positive");
  if (!(p > 0.0 && p <= 1.0)) throw ArgumentError("p must lie in (0, 1]");
  const double v2 = sigma2 * sigma2;
  const double edge1 = 10.0 * sigma1 + std::abs(d1);
  const double edge2 = 10.0 * sigma2 + std::abs(d2);
  const double kernel_mass = std::sqrt(2.0 * std::numbers::pi) * sigma2;
  const double inner_tolerance = 0.25 * tolerance / (kernel_mass + 1.0);
  auto outer = [&](double x2) {
    const double kernel = std::exp(-x2 * x2 / (2.0 * v2));
    if (kernel == 0.0) return 0.0;
    const double shift = -d2 * d2 / (2.0 * v2) + x2 * d2 / v2;
    const double inner =
        integrate(
            [&](double x1) { return detail::univariate_info_integrand(x1, d1, sigma1, p, shift); },
            -edge1, edge1, inner_tolerance)
            .value;
    return kernel * inner;
  };
  return integrate(outer, -edge2, edge2, 0.5 * tolerance).value;
}

/// II divided by its x2-kernel mass sqrt(2 pi) s2, i.e. with a normalized
/// density for the auxiliary variable.
inline double info_integral_bivariate_normalized(double d1, double d2, double sigma1, double sigma2,
                                                 double p,
                                                 double tolerance = kInfoBivariateTolerance) {
  const double kernel_mass = std::sqrt(2.0 * std::numbers::pi) * sigma2;
  return info_integral_bivariate(d1, d2, sigma1, sigma2, p, tolerance * kernel_mass) / kernel_mass;
}

struct DominanceRow {
  TheoryScenario scenario;
  double univariate = 0.0;          // I
  double bivariate = 0.0;           // II (un-normalized kernels)
  double bound = 0.0;               // sqrt(2 pi) s2 / 2 * I
  double margin = 0.0;              // II - bound
  bool exceeds_bound = false;       // II > bound
  bool literal_exceeds = false;     // II > I, un-normalized convention
  double bivariate_normalized = 0.0;  // II / (sqrt(2 pi) s2)
  bool normalized_dominates = false;  // II / (sqrt(2 pi) s2) >= I
};

/// Compares the bivariate and univariate information integrals for rho = 0
/// homoscedastic scenarios, under both normalization conventions.
inline std::vector<DominanceRow> result4_dominance(const std::vector<TheoryScenario>& scenarios) {
  std::vector<DominanceRow> rows;
  for (const TheoryScenario& s : scenarios) {
    s.validate();
    if (!s.homoscedastic() || s.rho != 0.0)
      throw ArgumentError("dominance check requires homoscedastic scenarios with rho = 0");
    DominanceRow row;
    row.scenario = s;
    row.univariate = info_integral_univariate(s.d1, s.sigma1, s.p);
    row.bivariate = info_integral_bivariate(s.d1, s.d2, s.sigma1, s.sigma2, s.p);
    const double kernel_mass = std::sqrt(2.0 * std::numbers::pi) * s.sigma2;
    row.bound = 0.5 * kernel_mass * row.univariate;
    row.margin = row.bivariate - row.bound;
    row.exceeds_bound = row.margin > 0.0;
    row.literal_exceeds = row.bivariate > row.univariate;
    row.bivariate_normalized = row.bivariate / kernel_mass;
    row.normalized_dominates =
        row.bivariate_normalized >= row.univariate - 2.0 * kInfoBivariateTolerance / kernel_mass;
    rows.push_back(row);
  }
  return rows;
}


struct TheoryCheck {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct TheoryCheckOptions {
  int scenarios = 1000;
  double tolerance = 1e-8;     // closed form vs numeric minimization
  int mc_draws = 200000;
  std::uint64_t seed = 1;
  std::vector<double> d1_grid{0.0, 1.0, 3.0, 5.0};
  std::vector<double> d2_grid{0.0, 1.0, 3.0, 5.0};
  std::vector<double> sigma2_grid{0.8, 1.0, 2.0};
  std::vector<double> p_grid{0.3, 0.4, 0.5};
  unsigned threads = 0;
};

struct TheoryReport {
  std::vector<TheoryCheck> checks;
  std::vector<DominanceRow> dominance;
  AllocationLimitTable s1_limit;

  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const TheoryCheck& c) { return c.passed; });
  }
};

inline double relative_gap(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

inline TheoryCheck check_argmin_d2(int scenarios, double tolerance, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x4432ULL});
  std::uniform_real_distribution<double> gap(-5.0, 5.0), sd(0.5, 3.0), corr(-0.95, 0.95);
  TheoryCheck check{"argmin_d2 closed form vs numeric", true, 0.0, tolerance, ""};
  for (int s = 0; s < scenarios; ++s) {
    const double d1 = gap(rng), s1 = sd(rng), s2 = sd(rng), rho = corr(rng);
    const Minimum closed = argmin_d2(d1, s1, s2, rho);
    const Minimum numeric = numeric_minimize(
        [&](double d2) { return bivariate_standardized_distance(d1, d2, s1, s2, rho); }, -50.0,
        50.0);
    check.max_error = std::max({check.max_error, relative_gap(closed.argmin, numeric.argmin),
                                relative_gap(closed.value, numeric.value)});
  }
  check.passed = check.max_error < tolerance;
  check.detail = std::to_string(scenarios) + " random scenarios";
  return check;
}

inline TheoryCheck check_argmin_rho(int scenarios, double tolerance, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x52484fULL});
  std::uniform_real_distribution<double> gap(-5.0, 5.0), sd(0.5, 3.0);
  TheoryCheck check{"argmin_rho feasible candidate vs numeric", true, 0.0, tolerance, ""};
  int used = 0, drawn = 0;
  while (used < scenarios) {
    ++drawn;
    const double d1 = gap(rng), d2 = gap(rng), s1 = sd(rng), s2 = sd(rng);
    if (std::abs(d1) < 0.05 || std::abs(d2) < 0.05) continue;
    const auto candidates = argmin_rho(d1, d2, s1, s2);
    const RhoCandidate* feasible = nullptr;
    for (const auto& c : candidates)
      if (c.feasible) feasible = &c;
    if (feasible == nullptr || std::abs(feasible->rho) > 0.99) continue;
    ++used;
    const Minimum numeric = numeric_minimize(
        [&](double rho) { return bivariate_standardized_distance(d1, d2, s1, s2, rho); }, -0.999,
        0.999);
    check.max_error = std::max({check.max_error, relative_gap(feasible->rho, numeric.argmin),
                                relative_gap(feasible->value, numeric.value)});
  }
  check.passed = check.max_error < tolerance;
  check.detail = std::to_string(used) + " scenarios (" + std::to_string(drawn - used) +
                 " rejected: tiny gap or |rho*| > 0.99)";
  return check;
}

inline TheoryCheck check_allocation_probability() {
  TheoryCheck check{"correct allocation probability in [p, 1), increasing", true, 0.0, 0.0, ""};
  for (double p : {0.2, 0.4, 0.5, 0.7}) {
    check.max_error = std::max(check.max_error, std::abs(correct_allocation_probability(p, 0.0) - p));
    double previous = p;
    for (double dist = 0.25; dist <= 40.0; dist *= 1.5) {
      const double value = correct_allocation_probability(p, dist);
      if (!(value > previous && value < 1.0)) check.passed = false;
      previous = value;
    }
  }
  if (check.max_error > 0.0) check.passed = false;
  return check;
}

inline TheoryCheck check_allocation_quadratic(int scenarios, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x51554144ULL});
  std::uniform_real_distribution<double> sd(0.3, 3.0), gap(-6.0, 6.0), unit(0.0, 1.0);
  TheoryCheck check{"auxiliary density-ratio quadratic: root intervals and sign conditions", true,
                    0.0, 0.0, ""};
  int mismatches = 0;
  for (int s = 0; s < scenarios; ++s) {
    const double sk = sd(rng), skb = sd(rng), d2 = gap(rng);
    const AllocationQuadratic q = allocation_quadratic(sk, skb, d2);
    // Both orderings of the SDs have real roots: the ratio crosses one.
    if (!q.x_inf) ++mismatches;
    const double span = 10.0 * std::max(sk, skb) + std::abs(d2);
    for (int j = 0; j < 20; ++j) {
      const double x = -span + 2.0 * span * unit(rng);
      const double log_ratio = (std::log(sk) - std::log(skb)) - (x - d2) * (x - d2) / (2 * skb * skb) +
                               x * x / (2 * sk * sk);
      if (std::abs(log_ratio) < 1e-9) continue;
      if ((q(x) < 0.0) != (log_ratio < 0.0)) ++mismatches;
      if (q.x_inf && std::abs(x - *q.x_inf) > 1e-9 && std::abs(x - *q.x_sup) > 1e-9) {
        const bool inside = x > *q.x_inf && x < *q.x_sup;
        if ((q(x) < 0.0) != (inside == (q.a > 0.0))) ++mismatches;
      }
    }
  }
  check.max_error = mismatches;
  check.passed = mismatches == 0;
  check.detail = std::to_string(scenarios) + " random (sigma_k, sigma_kbar, d2)";
  return check;
}

inline TheoryCheck check_allocation_limits(const TheoryCheckOptions& options,
                                           AllocationLimitTable* s1_table) {
  TheoryCheck check{"allocation limits along d2 (homoscedastic and both SD orderings)", true, 0.0,
                    0.0, ""};
  const std::vector<double> levels{0.0, 1.0, 3.0, 5.0, 50.0};
  TheoryScenario s1;
  s1.p = 0.4;
  s1.d1 = 1.0;
  AllocationLimitTable table =
      allocation_limit_check(s1, LimitPath::kD2, levels, options.mc_draws, options.seed);
  double worst_z = 0.0;
  for (const auto& row : table.levels)
    worst_z = std::max(worst_z, std::abs(row.monte_carlo - *row.quadrature) /
                                    std::max(row.mc_standard_error, 1e-12));
  check.passed = table.nondecreasing && table.levels.back().monte_carlo > 0.999 && worst_z < 4.0;
  check.max_error = worst_z;
  check.tolerance = 4.0;
  for (const auto& sds : {std::array<double, 4>{1.0, 0.7, 1.0, 1.4},
                          std::array<double, 4>{1.0, 1.4, 1.0, 0.7}}) {
    TheoryScenario het = s1;
    het.heteroscedastic = sds;
    const auto t = allocation_limit_check(het, LimitPath::kD2, levels, options.mc_draws,
                                          options.seed + 1);
    if (!t.nondecreasing || !(t.levels.back().monte_carlo > 0.999)) check.passed = false;
  }
  check.detail = "max |MC - quadrature| in MC standard errors";
  if (s1_table) *s1_table = std::move(table);
  return check;
}

/// Runs every closed-form, Monte Carlo and quadrature check.
inline TheoryReport run_theory_checks(const TheoryCheckOptions& options = {}) {
  TheoryReport report;
  report.checks.push_back(check_argmin_d2(options.scenarios, options.tolerance, options.seed));
  report.checks.push_back(check_argmin_rho(options.scenarios, options.tolerance, options.seed));
  report.checks.push_back(check_allocation_probability());
  report.checks.push_back(check_allocation_quadratic(200, options.seed));
  report.checks.push_back(check_allocation_limits(options, &report.s1_limit));

  TheoryCheck closed{"I closed form at p = 1 and d1 = 0", true, 0.0, 1e-9, ""};
  for (double s1 : {0.5, 1.0, 2.0}) {
    const double exact = std::sqrt(2.0 * std::numbers::pi) / s1;
    closed.max_error = std::max({closed.max_error,
                                 std::abs(info_integral_univariate(2.0, s1, 1.0) - exact),
                                 std::abs(info_integral_univariate(0.0, s1, 0.4) - exact)});
  }
  closed.passed = closed.max_error < closed.tolerance;
  report.checks.push_back(closed);

  std::vector<TheoryScenario> grid;
  for (double d1 : options.d1_grid)
    for (double d2 : options.d2_grid)
      for (double s2 : options.sigma2_grid)
        for (double p : options.p_grid) {
          TheoryScenario s;
          s.p = p;
          s.d1 = d1;
          s.d2 = d2;
          s.sigma2 = s2;
          grid.push_back(s);
        }
  std::vector<DominanceRow> rows(grid.size());
  std::vector<double> halved(grid.size());
  parallel_for(
      grid.size(),
      [&](std::size_t i) {
        rows[i] = result4_dominance({grid[i]}).front();
        const auto& s = grid[i];
        halved[i] = info_integral_bivariate(s.d1, s.d2, s.sigma1, s.sigma2, s.p,
                                            0.5 * kInfoBivariateTolerance);
      },
      options.threads);

  TheoryCheck bound{"II > sqrt(2 pi) sigma2 / 2 * I on the grid", true, 0.0, 0.0, ""};
  TheoryCheck separation{"II = sqrt(2 pi) sigma2 * I at d2 = 0", true, 0.0, 1e-7, ""};
  TheoryCheck stability{"II stable under tolerance halving", true, 0.0, kInfoBivariateTolerance, ""};
  double min_margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (!r.exceeds_bound) bound.passed = false;
    min_margin = std::min(min_margin, r.margin);
    if (r.scenario.d2 == 0.0)
      separation.max_error = std::max(
          separation.max_error,
          std::abs(r.bivariate - std::sqrt(2.0 * std::numbers::pi) * r.scenario.sigma2 * r.univariate));
    stability.max_error = std::max(stability.max_error, std::abs(r.bivariate - halved[i]));
  }
  bound.max_error = min_margin;
  bound.detail = "smallest margin II - bound";
  separation.passed = separation.max_error < separation.tolerance;
  stability.passed = stability.max_error < stability.tolerance;

  // Monotonicity in sigma2: the literal II grows with the kernel mass
  // sqrt(2 pi) sigma2, so the decreasing claim is checked on II normalized by
  // that mass. Non-increasing at d2 = 0 (constant), strictly decreasing otherwise.
  TheoryCheck monotone{"II / (sqrt(2 pi) sigma2) decreasing in sigma2", true, 0.0, 0.0, ""};
  int literal_increasing = 0, groups = 0;
  const std::size_t ns = options.sigma2_grid.size(), np = options.p_grid.size();
  for (std::size_t base = 0; base < rows.size(); base += ns * np)
    for (std::size_t ip = 0; ip < np; ++ip) {
      ++groups;
      bool literal_up = true;
      for (std::size_t is = 1; is < ns; ++is) {
        const auto& prev = rows[base + (is - 1) * np + ip];
        const auto& cur = rows[base + is * np + ip];
        const double slack = 2.0 * kInfoBivariateTolerance;
        const bool strict = cur.scenario.d2 != 0.0 && cur.scenario.d1 != 0.0;
        const double change = cur.bivariate_normalized - prev.bivariate_normalized;
        if (strict ? !(change < 0.0) : !(change <= slack)) monotone.passed = false;
        monotone.max_error = std::max(monotone.max_error, change);
        if (!(cur.bivariate > prev.bivariate)) literal_up = false;
      }
      if (literal_up) ++literal_increasing;
    }
  monotone.detail = "largest step change; literal II increases in sigma2 in " +
                    std::to_string(literal_increasing) + " of " + std::to_string(groups) +
                    " sweeps";
  report.checks.push_back(bound);
  report.checks.push_back(separation);
  report.checks.push_back(stability);
  report.checks.push_back(monotone);
  report.dominance = std::move(rows);
  return report;
}

}  // namespace mixturelab
