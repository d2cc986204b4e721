#pragma once

// EM maximum-likelihood fitting of Gaussian mixtures with optionally fixed
// weights / covariances, multi-start root search, spurious-root screening and
// label alignment.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mixturelab/errors.hpp"
#include "mixturelab/model.hpp"
#include "mixturelab/parallel.hpp"
#include "mixturelab/rng.hpp"

namespace mixturelab {

struct ExplicitStart {
  MixtureModel model;
};
// Sort by one coordinate, cut into K contiguous blocks, use block moments.
struct QuantileSplitStart {
  int coordinate = 0;
};
// Soft assignment to K random rows, then one M-step; the stream comes from
// (seed, start index).
struct RandomResponsibilityStart {};

using StartSpec = std::variant<ExplicitStart, QuantileSplitStart, RandomResponsibilityStart>;

struct SpuriousThresholds {
  double det_ratio = 1e-3;       // |V_k| below this fraction of the geometric mean
  double mass_fraction = 0.02;   // responsibility mass below max(min_mass, fraction * n)
  double min_mass = 2.0;
};

struct FitConfig {
  int k = 2;
  std::optional<std::vector<double>> fix_weights;
  std::optional<std::vector<Matrix>> fix_covariances;
  int max_iterations = 1000;
  double rel_tolerance = 1e-8;
  std::vector<StartSpec> starts;
  std::uint64_t seed = 0;
  SpuriousThresholds spurious;
  double dedup_tolerance = 1e-4;
  double ridge = 1e-10;  // times trace(V)/m, added after an M-step only if V is numerically singular
  unsigned threads = 1;  // starts run concurrently when > 1 (0: environment default)

  void validate() const {
    if (k < 1) throw ArgumentError("number of components must be positive");
    if (!(rel_tolerance > 0.0)) throw ArgumentError("rel_tolerance must be positive");
    if (max_iterations < 1) throw ArgumentError("max_iterations must be at least 1");
    if (fix_weights) {
      if (static_cast<int>(fix_weights->size()) != k)
        throw ArgumentError("fixed weights must have K entries");
      double total = 0.0;
      for (double w : *fix_weights) {
        if (!(w > 0.0)) throw ArgumentError("fixed weights must be strictly positive");
        total += w;
      }
      if (std::abs(total - 1.0) > 1e-12)
        throw ArgumentError("fixed weights must sum to 1");
    }
    if (fix_covariances && static_cast<int>(fix_covariances->size()) != k)
      throw ArgumentError("fixed covariances must have K entries");
  }
};

struct SpuriousVerdict {
  bool spurious = false;
  std::string reason;
};

struct FitResult {
  MixtureModel model;
  double loglik = 0.0;
  std::vector<double> loglik_trace;
  Matrix responsibilities;  // n x K at the returned model
  int iterations = 0;
  bool converged = false;
  SpuriousVerdict spurious;
  bool weights_free = true;
  bool covariances_free = true;
  int start_index = 0;
};

namespace detail {

inline Matrix symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

// Closed-form M-step from an n x K responsibility matrix.
/// Components whose covariance needed the ridge are appended to `ridged`.
inline MixtureModel maximize(const Matrix& data, const Matrix& resp, const FitConfig& config,
                             std::vector<int>* ridged = nullptr) {
  const Eigen::Index n = data.rows();
  const int m = static_cast<int>(data.cols());
  const int k_count = static_cast<int>(resp.cols());
  const Eigen::RowVectorXd mass = resp.colwise().sum();
  for (int k = 0; k < k_count; ++k)
    if (!(mass[k] >= 1e-10 * static_cast<double>(n)))
      throw DegenerateComponentError(k, mass[k]);

  std::vector<double> weights(k_count);
  if (config.fix_weights) {
    weights = *config.fix_weights;
  } else {
    const double total = mass.sum();
    for (int k = 0; k < k_count; ++k) weights[k] = mass[k] / total;
  }

  std::vector<Vector> means(k_count);
  std::vector<Matrix> covs(k_count);
  for (int k = 0; k < k_count; ++k) {
    means[k] = data.transpose() * resp.col(k) / mass[k];
    if (config.fix_covariances) {
      covs[k] = (*config.fix_covariances)[k];
      continue;
    }
    const Matrix centered = data.rowwise() - means[k].transpose();
    Matrix scatter =
        centered.transpose() * (centered.array().colwise() * resp.col(k).array()).matrix();
    scatter = symmetrized(scatter / mass[k]);
    if (ridge_if_singular(scatter, config.ridge) && ridged) ridged->push_back(k);
    covs[k] = std::move(scatter);
  }
  return MixtureModel(std::move(weights), std::move(means), std::move(covs));
}

inline Matrix hard_assignment(const std::vector<int>& component, int k_count) {
  Matrix resp = Matrix::Zero(static_cast<Eigen::Index>(component.size()), k_count);
  for (std::size_t i = 0; i < component.size(); ++i)
    resp(static_cast<Eigen::Index>(i), component[i]) = 1.0;
  return resp;
}

inline MixtureModel initial_model(const Sample& sample, const FitConfig& config,
                                  const StartSpec& start, int start_index) {
  const Matrix& x = sample.data();
  const int n = sample.n();
  if (const auto* explicit_start = std::get_if<ExplicitStart>(&start)) {
    const MixtureModel& given = explicit_start->model;
    if (given.components() != config.k || given.dim() != sample.dim())
      throw ArgumentError("explicit start does not match K or sample dimension");
    if (!config.fix_weights && !config.fix_covariances) return given;
    return MixtureModel(config.fix_weights ? *config.fix_weights : given.weights(),
                        given.means(),
                        config.fix_covariances ? *config.fix_covariances
                                               : given.covariances());
  }
  if (const auto* split = std::get_if<QuantileSplitStart>(&start)) {
    if (n < config.k) throw ArgumentError("quantile split needs at least K rows");
    const int coord = split->coordinate;
    if (coord < 0 || coord >= sample.dim())
      throw ArgumentError("quantile split coordinate out of range");
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return x(a, coord) < x(b, coord); });
    std::vector<int> component(n);
    for (int r = 0; r < n; ++r)
      component[order[r]] = std::min(config.k - 1, static_cast<int>(
                                                       static_cast<long long>(r) * config.k / n));
    return maximize(x, hard_assignment(component, config.k), config);
  }
  Rng rng = make_rng(config.seed, {0x5354415254ULL, static_cast<std::uint64_t>(start_index)});
  // Soft assignment to K distinct random rows on the standardized scale.
  // Uniform noise alone lands next to the symmetric saddle.
  if (n < config.k) throw ArgumentError("random start needs at least K rows");
  std::vector<int> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  for (int k = 0; k < config.k; ++k) {
    std::uniform_int_distribution<int> pick(k, n - 1);
    std::swap(rows[k], rows[pick(rng)]);
  }
  const Eigen::RowVectorXd centre = x.colwise().mean();
  Eigen::RowVectorXd scale =
      ((x.rowwise() - centre).array().square().colwise().sum() / n).sqrt();
  for (Eigen::Index j = 0; j < scale.size(); ++j)
    if (!(scale[j] > 0.0)) scale[j] = 1.0;
  Matrix resp(n, config.k);
  for (int i = 0; i < n; ++i) {
    Vector logits(config.k);
    for (int k = 0; k < config.k; ++k)
      logits[k] = -0.5 * ((x.row(i) - x.row(rows[k])).array() / scale.array()).square().sum();
    const double norm = log_sum_exp(logits);
    for (int k = 0; k < config.k; ++k) resp(i, k) = std::exp(logits[k] - norm);
  }
  return maximize(x, resp, config);
}

}  // namespace detail

/// One EM iteration: responsibilities at `model`, then closed-form updates of
/// the free blocks.
inline MixtureModel em_step(const MixtureModel& model, const Sample& sample,
                            const FitConfig& config) {
  if (model.dim() != sample.dim())
    throw ArgumentError("model dimension differs from sample dimension");
  if (model.components() != config.k)
    throw ArgumentError("model K differs from configured K");
  const Posterior post = posterior(model, sample.data());
  return detail::maximize(sample.data(), post.responsibilities, config);
}

/// Spurious-root screen: a collapsed generalized variance or a component
/// with too little responsibility mass.
inline SpuriousVerdict detect_spurious(const FitResult& fit, const Sample& sample,
                                       const SpuriousThresholds& thresholds = {}) {
  const MixtureModel& model = fit.model;
  const int k_count = model.components();
  double mean_log_det = 0.0;
  for (int k = 0; k < k_count; ++k) mean_log_det += model.factor(k).log_det();
  mean_log_det /= k_count;
  const double log_threshold = std::log(thresholds.det_ratio) + mean_log_det;
  const double min_mass =
      std::max(thresholds.min_mass, thresholds.mass_fraction * sample.n());
  for (int k = 0; k < k_count; ++k) {
    if (model.factor(k).log_det() < log_threshold)
      return {true, "component " + std::to_string(k + 1) +
                        ": generalized variance below " +
                        std::to_string(thresholds.det_ratio) +
                        " x geometric mean of |V_k|"};
  }
  const Eigen::RowVectorXd mass = fit.responsibilities.colwise().sum();
  for (int k = 0; k < k_count; ++k) {
    if (mass[k] < min_mass)
      return {true, "component " + std::to_string(k + 1) + ": responsibility mass " +
                        std::to_string(mass[k]) + " below " + std::to_string(min_mass)};
  }
  return {};
}

/// Iterates em_step until the relative log-likelihood change drops below
/// rel_tolerance or max_iterations is reached.
inline FitResult em_fit(const Sample& sample, const FitConfig& config, const StartSpec& start,
                        int start_index = 0) {
  config.validate();
  MixtureModel model = detail::initial_model(sample, config, start, start_index);
  Posterior post = posterior(model, sample.data());
  std::vector<double> trace{post.loglik};
  bool converged = false;
  int iteration = 0;
  std::vector<int> ridged;
  while (iteration < config.max_iterations) {
    ++iteration;
    ridged.clear();
    try {
      model = detail::maximize(sample.data(), post.responsibilities, config, &ridged);
    } catch (const DegenerateComponentError& e) {
      throw e.at_iteration(iteration);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at iteration " + std::to_string(iteration));
    }
    const Eigen::RowVectorXd mass = post.responsibilities.colwise().sum();
    post = posterior(model, sample.data());
    const double previous = trace.back();
    // A ridged step that loses likelihood: the component is collapsing.
    if (!ridged.empty() && post.loglik < previous - 1e-9)
      throw DegenerateComponentError(ridged.front(), mass[ridged.front()], iteration, true);
    trace.push_back(post.loglik);
    if (std::abs(post.loglik - previous) <= config.rel_tolerance * std::abs(previous)) {
      converged = true;
      break;
    }
  }
  FitResult fit{std::move(model),
                post.loglik,
                std::move(trace),
                std::move(post.responsibilities),
                iteration,
                converged,
                {},
                !config.fix_weights.has_value(),
                !config.fix_covariances.has_value(),
                start_index};
  fit.spurious = detect_spurious(fit, sample, config.spurious);
  return fit;
}

/// Weights, means and covariance lower triangles as one flat vector.
inline Vector flatten_parameters(const MixtureModel& model) {
  const int k_count = model.components();
  const int m = model.dim();
  Vector out(k_count * (1 + m + m * (m + 1) / 2));
  int at = 0;
  for (int k = 0; k < k_count; ++k) out[at++] = model.weight(k);
  for (int k = 0; k < k_count; ++k)
    for (int j = 0; j < m; ++j) out[at++] = model.mean(k)[j];
  for (int k = 0; k < k_count; ++k)
    for (int a = 0; a < m; ++a)
      for (int b = 0; b <= a; ++b) out[at++] = model.covariance(k)(a, b);
  return out;
}

/// Reorders components: component k of the result is component order[k] of
/// the input.
inline FitResult permute_components(const FitResult& fit, const std::vector<int>& order) {
  const int k_count = fit.model.components();
  std::vector<double> weights(k_count);
  std::vector<Vector> means(k_count);
  std::vector<Matrix> covs(k_count);
  Matrix resp(fit.responsibilities.rows(), k_count);
  for (int k = 0; k < k_count; ++k) {
    weights[k] = fit.model.weight(order[k]);
    means[k] = fit.model.mean(order[k]);
    covs[k] = fit.model.covariance(order[k]);
    resp.col(k) = fit.responsibilities.col(order[k]);
  }
  FitResult out{MixtureModel(std::move(weights), std::move(means), std::move(covs)),
                fit.loglik,
                fit.loglik_trace,
                std::move(resp),
                fit.iterations,
                fit.converged,
                fit.spurious,
                fit.weights_free,
                fit.covariances_free,
                fit.start_index};
  return out;
}

/// Permutation minimizing the summed squared mean distance to `reference`;
/// ties go to the ordering with ascending first-coordinate means.
inline std::vector<int> best_alignment(const MixtureModel& model, const MixtureModel& reference) {
  const int k_count = model.components();
  if (reference.components() != k_count || reference.dim() != model.dim())
    throw ArgumentError("align_labels: reference disagrees on K or dimension");
  std::vector<int> order(k_count), best;
  std::iota(order.begin(), order.end(), 0);
  double best_cost = std::numeric_limits<double>::infinity();
  auto first_coords = [&](const std::vector<int>& perm) {
    std::vector<double> v(k_count);
    for (int k = 0; k < k_count; ++k) v[k] = model.mean(perm[k])[0];
    return v;
  };
  do {
    double cost = 0.0;
    for (int k = 0; k < k_count; ++k)
      cost += (model.mean(order[k]) - reference.mean(k)).squaredNorm();
    const double slack = 1e-12 * (1.0 + std::abs(best_cost));
    if (best.empty() || cost < best_cost - slack) {
      best_cost = cost;
      best = order;
    } else if (std::abs(cost - best_cost) <= slack && first_coords(order) < first_coords(best)) {
      best = order;
    }
  } while (std::next_permutation(order.begin(), order.end()));
  return best;
}

inline FitResult align_labels(const FitResult& fit, const MixtureModel& reference) {
  return permute_components(fit, best_alignment(fit.model, reference));
}

struct StartFailure {
  int start_index = 0;
  std::string reason;
};

struct MultiStartReport {
  std::vector<FitResult> roots;  // distinct, sorted by decreasing loglik
  std::vector<StartFailure> failures;
};

inline bool same_root(const MixtureModel& a, const MixtureModel& b, double tolerance) {
  const Vector va = flatten_parameters(a);
  const Vector vb = flatten_parameters(b);
  const double scale = std::max({va.norm(), vb.norm(), std::numeric_limits<double>::min()});
  return (va - vb).norm() / scale < tolerance;
}

/// Runs em_fit from every configured start and returns the distinct local
/// maxima (label-aligned to the best one) plus per-start failures.
inline MultiStartReport multi_start_search(const Sample& sample, const FitConfig& config) {
  config.validate();
  if (config.starts.empty()) throw ArgumentError("multi-start fit needs at least one start");
  const std::size_t count = config.starts.size();
  std::vector<std::optional<FitResult>> fits(count);
  std::vector<std::string> errors(count);
  parallel_for(
      count,
      [&](std::size_t s) {
        try {
          fits[s] = em_fit(sample, config, config.starts[s], static_cast<int>(s));
        } catch (const Error& e) {
          errors[s] = e.what();
        }
      },
      config.threads);

  MultiStartReport report;
  std::vector<FitResult> successes;
  for (std::size_t s = 0; s < count; ++s) {
    if (fits[s])
      successes.push_back(std::move(*fits[s]));
    else
      report.failures.push_back({static_cast<int>(s), errors[s]});
  }
  if (successes.empty()) throw FittingFailedError(errors);

  std::stable_sort(successes.begin(), successes.end(),
                   [](const FitResult& a, const FitResult& b) { return a.loglik > b.loglik; });
  const MixtureModel reference = successes.front().model;
  for (FitResult& fit : successes) {
    FitResult aligned = align_labels(fit, reference);
    bool duplicate = false;
    for (const FitResult& kept : report.roots)
      if (same_root(kept.model, aligned.model, config.dedup_tolerance)) {
        duplicate = true;
        break;
      }
    if (!duplicate) report.roots.push_back(std::move(aligned));
  }
  return report;
}

inline std::vector<FitResult> multi_start_fit(const Sample& sample, const FitConfig& config) {
  return multi_start_search(sample, config).roots;
}

/// Explicit start from the per-label sample moments (labels 1..K).
inline ExplicitStart start_from_labels(const Sample& sample, int k_count) {
  if (!sample.labels()) throw ArgumentError("sample has no labels");
  std::vector<int> component;
  component.reserve(sample.n());
  for (int l : *sample.labels()) {
    if (l > k_count) throw ArgumentError("label exceeds K");
    component.push_back(l - 1);
  }
  FitConfig plain;
  plain.k = k_count;
  return {detail::maximize(sample.data(), detail::hard_assignment(component, k_count), plain)};
}

}  // namespace mixturelab
