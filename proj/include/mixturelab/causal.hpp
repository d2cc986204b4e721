#pragma once

// Instrumental-variable compliance mixture: units are always-takers (a),
// never-takers (n) or compliers (c); (d, z) cells (1,0) and (0,1) are pure,
// (1,1) mixes a/c and (0,0) mixes n/c. Outcomes are Gaussian per
// (group, arm), univariate or bivariate (primary outcome plus one auxiliary).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
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

enum IvGroup { kAlways = 0, kNever = 1, kComplier = 2 };

// Outcome cells, indexed 2 * group + arm.
inline constexpr int kIvCells = 6;
inline constexpr std::array<const char*, kIvCells> kIvCellNames = {"a0", "a1", "n0",
                                                                   "n1", "c0", "c1"};
inline constexpr int iv_cell(int group, int arm) { return 2 * group + arm; }

class IvSample {
 public:
  IvSample(Matrix x, std::vector<int> d, std::vector<int> z)
      : x_(std::move(x)), d_(std::move(d)), z_(std::move(z)) {
    const auto n = static_cast<std::size_t>(x_.rows());
    if (n == 0) throw ArgumentError("IV sample is empty");
    if (x_.cols() != 1 && x_.cols() != 2)
      throw ArgumentError("IV outcomes must have one or two columns");
    if (d_.size() != n || z_.size() != n)
      throw ArgumentError("IV sample: x, d and z lengths differ");
    if (!x_.allFinite()) throw ArgumentError("IV outcomes must be finite");
    for (std::size_t i = 0; i < n; ++i) {
      if ((d_[i] != 0 && d_[i] != 1) || (z_[i] != 0 && z_[i] != 1))
        throw ArgumentError("IV treatment and instrument must be 0/1 (row " +
                            std::to_string(i + 1) + ")");
      ++counts_[d_[i]][z_[i]];
    }
  }

  int n() const { return static_cast<int>(x_.rows()); }
  int dim() const { return static_cast<int>(x_.cols()); }
  const Matrix& x() const { return x_; }
  const std::vector<int>& d() const { return d_; }
  const std::vector<int>& z() const { return z_; }
  int count(int d, int z) const { return counts_[d][z]; }

  /// Identification warnings: one per empty (d, z) cell.
  std::vector<std::string> warnings() const {
    std::vector<std::string> out;
    for (int d = 0; d < 2; ++d)
      for (int z = 0; z < 2; ++z)
        if (counts_[d][z] == 0)
          out.push_back("cell (d=" + std::to_string(d) + ", z=" + std::to_string(z) +
                        ") is empty; the model is not identified");
    return out;
  }

  IvSample primary_only() const { return IvSample(x_.leftCols(1), d_, z_); }

 private:
  Matrix x_;
  std::vector<int> d_, z_;
  std::array<std::array<int, 2>, 2> counts_{};
};

class IvMixtureModel {
 public:
  IvMixtureModel(double pi, std::array<double, 3> omega, std::array<Vector, kIvCells> means,
                 std::array<Matrix, kIvCells> covariances)
      : pi_(pi), omega_(omega), means_(std::move(means)), covs_(std::move(covariances)) {
    if (!(pi_ > 0.0 && pi_ < 1.0)) throw ArgumentError("pi must lie in (0, 1)");
    double total = 0.0;
    for (double w : omega_) {
      if (!(w >= 0.0)) throw ArgumentError("group probabilities must be nonnegative");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ArgumentError("group probabilities must sum to 1");
    const auto q = means_[0].size();
    if (q != 1 && q != 2) throw ArgumentError("IV outcomes must be one- or two-dimensional");
    for (int c = 0; c < kIvCells; ++c) {
      if (means_[c].size() != q || covs_[c].rows() != q || covs_[c].cols() != q)
        throw ArgumentError(std::string("cell ") + kIvCellNames[c] + " has mismatched dimensions");
      if (!means_[c].allFinite() || !covs_[c].allFinite())
        throw ArgumentError(std::string("cell ") + kIvCellNames[c] + " has non-finite parameters");
      factors_.emplace_back(covs_[c], std::string("covariance of cell ") + kIvCellNames[c]);
    }
  }

  int dim() const { return static_cast<int>(means_[0].size()); }
  double pi() const { return pi_; }
  double omega(int group) const { return omega_[group]; }
  const std::array<double, 3>& omegas() const { return omega_; }
  const Vector& mean(int cell) const { return means_[cell]; }
  const Matrix& covariance(int cell) const { return covs_[cell]; }
  const SpdFactor& factor(int cell) const { return factors_[cell]; }
  const std::array<Vector, kIvCells>& means() const { return means_; }
  const std::array<Matrix, kIvCells>& covariances() const { return covs_; }

  /// log phi_cell(x) for every row of x.
  Vector cell_log_densities(int cell, const Matrix& x) const {
    const Matrix centered = (x.rowwise() - means_[cell].transpose()).transpose();
    const Eigen::RowVectorXd quad = factors_[cell].quad_forms(centered);
    const double constant = -0.5 * (dim() * kLogTwoPi + factors_[cell].log_det());
    return (constant - 0.5 * quad.array()).transpose();
  }

 private:
  double pi_;
  std::array<double, 3> omega_;
  std::array<Vector, kIvCells> means_;
  std::array<Matrix, kIvCells> covs_;
  std::vector<SpdFactor> factors_;
};

struct IvPosterior {
  Matrix group;  // n x 3 posterior over (a, n, c)
  Vector unit_loglik;
  double loglik = 0.0;
};

namespace detail {

inline double safe_log(double v) {
  return v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity();
}

// Groups compatible with observed (d, z).
inline std::array<bool, 3> iv_groups(int d, int z) {
  if (d == 1 && z == 0) return {true, false, false};
  if (d == 0 && z == 1) return {false, true, false};
  if (d == 1) return {true, false, true};
  return {false, true, true};
}

}  // namespace detail

inline IvPosterior iv_posterior(const IvMixtureModel& model, const IvSample& sample) {
  if (sample.dim() != model.dim()) throw ArgumentError("IV model and sample dimensions differ");
  const int n = sample.n();
  std::array<Vector, kIvCells> logphi;
  for (int c = 0; c < kIvCells; ++c) logphi[c] = model.cell_log_densities(c, sample.x());
  std::array<double, 3> log_omega;
  for (int g = 0; g < 3; ++g) log_omega[g] = detail::safe_log(model.omega(g));
  const double log_pi = std::log(model.pi()), log_1mpi = std::log1p(-model.pi());
  IvPosterior out;
  out.group = Matrix::Zero(n, 3);
  out.unit_loglik.resize(n);
  for (int i = 0; i < n; ++i) {
    const int d = sample.d()[i], z = sample.z()[i];
    const auto allowed = detail::iv_groups(d, z);
    std::array<double, 3> terms;
    double hi = -std::numeric_limits<double>::infinity();
    for (int g = 0; g < 3; ++g) {
      terms[g] = allowed[g] ? log_omega[g] + logphi[iv_cell(g, z)][i]
                            : -std::numeric_limits<double>::infinity();
      hi = std::max(hi, terms[g]);
    }
    double total = 0.0;
    if (std::isfinite(hi)) {
      for (int g = 0; g < 3; ++g)
        if (allowed[g]) total += std::exp(terms[g] - hi);
      for (int g = 0; g < 3; ++g)
        if (allowed[g]) out.group(i, g) = std::exp(terms[g] - hi) / total;
    }
    const double lse = std::isfinite(hi) ? hi + std::log(total) : hi;
    out.unit_loglik[i] = (z == 1 ? log_pi : log_1mpi) + lse;
  }
  std::vector<double> parts(out.unit_loglik.data(), out.unit_loglik.data() + n);
  out.loglik = compensated_sum(parts);
  return out;
}

inline double iv_loglik(const IvMixtureModel& model, const IvSample& sample) {
  return iv_posterior(model, sample).loglik;
}

/// Density of one unit's (x, d, z) under the four-branch model.
inline double iv_density(const IvMixtureModel& model, const Vector& x, int d, int z) {
  const Matrix row = x.transpose();
  const auto allowed = detail::iv_groups(d, z);
  double total = 0.0;
  for (int g = 0; g < 3; ++g)
    if (allowed[g])
      total += model.omega(g) * std::exp(model.cell_log_densities(iv_cell(g, z), row)[0]);
  return (z == 1 ? model.pi() : 1.0 - model.pi()) * total;
}

struct MomEstimate {
  double pi = 0.0;
  double omega_a = 0.0;
  double omega_n = 0.0;
  double omega_c = 0.0;

  std::array<double, 3> omegas() const { return {omega_a, omega_n, omega_c}; }
};

inline MomEstimate mom_mixing_probs(const IvSample& sample) {
  const auto warnings = sample.warnings();
  if (!warnings.empty()) throw ArgumentError(warnings.front());
  const double z1 = sample.count(0, 1) + sample.count(1, 1);
  const double z0 = sample.count(0, 0) + sample.count(1, 0);
  MomEstimate m;
  m.pi = z1 / sample.n();
  m.omega_a = sample.count(1, 0) / z0;
  m.omega_n = sample.count(0, 1) / z1;
  m.omega_c = 1.0 - m.omega_a - m.omega_n;
  if (!(m.omega_c > 0.0))
    throw MonotonicityViolation("method-of-moments complier share is " +
                                std::to_string(m.omega_c) + " (no compliers)");
  return m;
}

struct IvFitConfig {
  int starts = 10;
  std::uint64_t seed = 0;
  int max_iterations = 5000;
  double rel_tolerance = 1e-12;
  double dedup_tolerance = 1e-4;
  double ridge = 1e-10;
  unsigned threads = 1;

  void validate() const {
    if (starts < 1) throw ArgumentError("IV fit needs at least one start");
    if (max_iterations < 1) throw ArgumentError("max_iterations must be at least 1");
    if (!(rel_tolerance > 0.0)) throw ArgumentError("rel_tolerance must be positive");
  }
};

struct IvFitResult {
  IvMixtureModel model;
  double loglik = 0.0;
  std::vector<double> loglik_trace;
  Matrix group_posterior;
  int iterations = 0;
  bool converged = false;
  int start_index = 0;
};

namespace detail {

/// Closed-form M-step given group posteriors.
inline IvMixtureModel iv_maximize(const IvSample& sample, const Matrix& group, double ridge,
                                  std::vector<std::pair<int, double>>* ridged = nullptr) {
  const int n = sample.n(), q = sample.dim();
  const Matrix& x = sample.x();
  double z1 = 0.0;
  for (int z : sample.z()) z1 += z;
  std::array<double, 3> omega;
  for (int g = 0; g < 3; ++g) omega[g] = group.col(g).sum() / n;
  const double total = omega[0] + omega[1] + omega[2];
  for (double& w : omega) w /= total;
  std::array<Vector, kIvCells> means;
  std::array<Matrix, kIvCells> covs;
  for (int g = 0; g < 3; ++g)
    for (int arm = 0; arm < 2; ++arm) {
      const int c = iv_cell(g, arm);
      Vector w(n);
      for (int i = 0; i < n; ++i) w[i] = sample.z()[i] == arm ? group(i, g) : 0.0;
      const double mass = w.sum();
      if (!(mass > 1e-10 * n)) throw DegenerateComponentError(c, mass);
      means[c] = (x.transpose() * w) / mass;
      const Matrix centered = x.rowwise() - means[c].transpose();
      Matrix v = centered.transpose() * w.asDiagonal() * centered / mass;
      v = 0.5 * (v + v.transpose());
      if (ridge_if_singular(v, ridge) && ridged) ridged->emplace_back(c, mass);
      covs[c] = std::move(v);
    }
  return IvMixtureModel(z1 / n, omega, std::move(means), std::move(covs));
}

inline IvMixtureModel iv_initial_model(const IvSample& sample, const IvFitConfig& config,
                                       int start_index) {
  const int n = sample.n();
  Matrix group = Matrix::Zero(n, 3);
  double share_ac = 0.5, share_nc = 0.5;  // complier share inside the mixed cells
  try {
    const MomEstimate mom = mom_mixing_probs(sample);
    share_ac = std::clamp(mom.omega_c / (mom.omega_a + mom.omega_c), 0.05, 0.95);
    share_nc = std::clamp(mom.omega_c / (mom.omega_n + mom.omega_c), 0.05, 0.95);
  } catch (const MonotonicityViolation&) {
  }
  // Starts 0-3: quantile splits of the mixed cells on the primary outcome,
  // compliers on top or bottom of each. Later starts: random posteriors.
  if (start_index < 4) {
    for (int cell_d = 0; cell_d < 2; ++cell_d) {
      const int other = cell_d == 1 ? kAlways : kNever;
      const double share = cell_d == 1 ? share_ac : share_nc;
      const bool top = cell_d == 1 ? (start_index & 1) == 0 : (start_index & 2) == 0;
      std::vector<int> rows;
      for (int i = 0; i < n; ++i)
        if (sample.d()[i] == cell_d && sample.z()[i] == cell_d) rows.push_back(i);
      std::stable_sort(rows.begin(), rows.end(),
                       [&](int a, int b) { return sample.x()(a, 0) < sample.x()(b, 0); });
      const int m = static_cast<int>(rows.size());
      const int compliers = std::clamp(static_cast<int>(std::lround(share * m)), 1, std::max(1, m - 1));
      for (int r = 0; r < m; ++r) {
        const bool complier = top ? r >= m - compliers : r < compliers;
        group(rows[r], complier ? kComplier : other) = 1.0;
      }
    }
  } else {
    Rng rng = make_rng(config.seed, {0x49565354ULL, static_cast<std::uint64_t>(start_index)});
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
      const int d = sample.d()[i], z = sample.z()[i];
      if (d != z) continue;
      const double u = unif(rng);
      group(i, d == 1 ? kAlways : kNever) = 1.0 - u;
      group(i, kComplier) = u;
    }
  }
  for (int i = 0; i < n; ++i) {
    const int d = sample.d()[i], z = sample.z()[i];
    if (d == 1 && z == 0) group(i, kAlways) = 1.0;
    if (d == 0 && z == 1) group(i, kNever) = 1.0;
  }
  return iv_maximize(sample, group, config.ridge);
}

inline Vector iv_flatten(const IvMixtureModel& model) {
  const int q = model.dim();
  Vector out(4 + kIvCells * (q + q * q));
  int at = 0;
  out[at++] = model.pi();
  for (double w : model.omegas()) out[at++] = w;
  for (int c = 0; c < kIvCells; ++c)
    for (int j = 0; j < q; ++j) out[at++] = model.mean(c)[j];
  for (int c = 0; c < kIvCells; ++c)
    for (int j = 0; j < q * q; ++j) out[at++] = model.covariance(c).data()[j];
  return out;
}

}  // namespace detail

inline IvFitResult iv_em_fit(const IvSample& sample, const IvFitConfig& config, int start_index) {
  config.validate();
  IvMixtureModel model = detail::iv_initial_model(sample, config, start_index);
  IvPosterior post = iv_posterior(model, sample);
  std::vector<double> trace{post.loglik};
  bool converged = false;
  int iteration = 0;
  std::vector<std::pair<int, double>> ridged;
  while (iteration < config.max_iterations) {
    ++iteration;
    ridged.clear();
    try {
      model = detail::iv_maximize(sample, post.group, config.ridge, &ridged);
    } catch (const DegenerateComponentError& e) {
      throw e.at_iteration(iteration);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at iteration " + std::to_string(iteration));
    }
    post = iv_posterior(model, sample);
    const double previous = trace.back();
    if (!ridged.empty() && post.loglik < previous - 1e-9)
      throw DegenerateComponentError(ridged.front().first, ridged.front().second, iteration, true);
    trace.push_back(post.loglik);
    if (std::abs(post.loglik - previous) <= config.rel_tolerance * std::abs(previous)) {
      converged = true;
      break;
    }
  }
  return {std::move(model), post.loglik,      std::move(trace), std::move(post.group),
          iteration,        converged,        start_index};
}

struct IvMultiStartReport {
  std::vector<IvFitResult> roots;  // distinct, decreasing loglik
  std::vector<StartFailure> failures;
};

inline IvMultiStartReport iv_fit_multistart(const IvSample& sample, const IvFitConfig& config) {
  config.validate();
  const auto warnings = sample.warnings();
  if (!warnings.empty()) throw ArgumentError(warnings.front());
  const auto count = static_cast<std::size_t>(config.starts);
  std::vector<std::optional<IvFitResult>> fits(count);
  std::vector<std::string> errors(count);
  parallel_for(
      count,
      [&](std::size_t s) {
        try {
          fits[s] = iv_em_fit(sample, config, static_cast<int>(s));
        } catch (const Error& e) {
          errors[s] = e.what();
        }
      },
      config.threads);
  IvMultiStartReport report;
  std::vector<IvFitResult> ok;
  for (std::size_t s = 0; s < count; ++s) {
    if (fits[s])
      ok.push_back(std::move(*fits[s]));
    else
      report.failures.push_back({static_cast<int>(s), errors[s]});
  }
  if (ok.empty()) throw FittingFailedError(errors);
  std::stable_sort(ok.begin(), ok.end(),
                   [](const IvFitResult& a, const IvFitResult& b) { return a.loglik > b.loglik; });
  for (IvFitResult& fit : ok) {
    const Vector v = detail::iv_flatten(fit.model);
    bool duplicate = false;
    for (const IvFitResult& kept : report.roots) {
      const Vector w = detail::iv_flatten(kept.model);
      if ((v - w).norm() / std::max({v.norm(), w.norm(), 1e-300}) < config.dedup_tolerance) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) report.roots.push_back(std::move(fit));
  }
  return report;
}

inline double omega_distance(const IvMixtureModel& model, const std::array<double, 3>& target) {
  double s = 0.0;
  for (int g = 0; g < 3; ++g) s += (model.omega(g) - target[g]) * (model.omega(g) - target[g]);
  return std::sqrt(s);
}

/// Root whose (omega_a, omega_n, omega_c) is closest to the moment estimate;
/// ties go to the higher log-likelihood, then the lower start index.
inline std::size_t select_ele_index(const std::vector<IvFitResult>& roots, const MomEstimate& mom) {
  if (roots.empty()) throw ArgumentError("select_ele needs at least one root");
  std::size_t best = 0;
  for (std::size_t r = 1; r < roots.size(); ++r) {
    const double dr = omega_distance(roots[r].model, mom.omegas());
    const double db = omega_distance(roots[best].model, mom.omegas());
    const double slack = 1e-12;
    if (dr < db - slack) {
      best = r;
    } else if (std::abs(dr - db) <= slack) {
      if (roots[r].loglik > roots[best].loglik ||
          (roots[r].loglik == roots[best].loglik &&
           roots[r].start_index < roots[best].start_index))
        best = r;
    }
  }
  return best;
}

inline const IvFitResult& select_ele(const std::vector<IvFitResult>& roots, const MomEstimate& mom) {
  return roots[select_ele_index(roots, mom)];
}

struct EleChoice {
  std::size_t index = 0;
  std::optional<MomEstimate> mom;  // absent when the moment estimate violates monotonicity
  std::string note;
};

/// select_ele anchored at the sample's moment estimate; when that estimate has
/// no compliers the highest-likelihood root is returned with a note.
inline EleChoice choose_ele(const std::vector<IvFitResult>& roots, const IvSample& sample) {
  EleChoice choice;
  try {
    choice.mom = mom_mixing_probs(sample);
  } catch (const MonotonicityViolation& e) {
    choice.note = std::string(e.what()) + "; highest-likelihood root used";
    return choice;
  }
  choice.index = select_ele_index(roots, *choice.mom);
  return choice;
}

// ---- information for the IV likelihood ---------------------------------

/// theta = [pi, omega_a, omega_n | means of a0..c1 | covariance parameters of
/// a0..c1], covariance parameters sigma (q = 1) or (sigma1, sigma2, rho).
struct IvLayout {
  int q = 1;

  int cov_params() const { return q == 1 ? 1 : 3; }
  int mean_offset() const { return 3; }
  int cov_offset() const { return 3 + kIvCells * q; }
  int size() const { return cov_offset() + kIvCells * cov_params(); }
  int mean_index(int cell, int coord) const { return mean_offset() + cell * q + coord; }
  int cov_index(int cell, int which) const { return cov_offset() + cell * cov_params() + which; }

  std::vector<std::string> names() const {
    std::vector<std::string> out{"pi", "omega_a", "omega_n"};
    for (int c = 0; c < kIvCells; ++c)
      for (int j = 0; j < q; ++j)
        out.push_back(std::string("mu_") + kIvCellNames[c] +
                      (q == 1 ? "" : "[" + std::to_string(j + 1) + "]"));
    for (int c = 0; c < kIvCells; ++c) {
      if (q == 1) {
        out.push_back(std::string("sigma_") + kIvCellNames[c]);
      } else {
        out.push_back(std::string("sigma_") + kIvCellNames[c] + "[1]");
        out.push_back(std::string("sigma_") + kIvCellNames[c] + "[2]");
        out.push_back(std::string("rho_") + kIvCellNames[c]);
      }
    }
    return out;
  }
};

inline Vector iv_pack(const IvMixtureModel& model) {
  const IvLayout layout{model.dim()};
  Vector theta(layout.size());
  theta[0] = model.pi();
  theta[1] = model.omega(kAlways);
  theta[2] = model.omega(kNever);
  for (int c = 0; c < kIvCells; ++c) {
    for (int j = 0; j < layout.q; ++j) theta[layout.mean_index(c, j)] = model.mean(c)[j];
    const Matrix& v = model.covariance(c);
    if (layout.q == 1) {
      theta[layout.cov_index(c, 0)] = std::sqrt(v(0, 0));
    } else {
      const double s1 = std::sqrt(v(0, 0)), s2 = std::sqrt(v(1, 1));
      theta[layout.cov_index(c, 0)] = s1;
      theta[layout.cov_index(c, 1)] = s2;
      theta[layout.cov_index(c, 2)] = v(0, 1) / (s1 * s2);
    }
  }
  return theta;
}

inline IvMixtureModel iv_unpack(const Vector& theta, int q) {
  const IvLayout layout{q};
  if (theta.size() != layout.size()) throw ArgumentError("IV parameter vector has wrong length");
  std::array<Vector, kIvCells> means;
  std::array<Matrix, kIvCells> covs;
  for (int c = 0; c < kIvCells; ++c) {
    means[c] = theta.segment(layout.mean_index(c, 0), q);
    covs[c].resize(q, q);
    if (q == 1) {
      const double s = theta[layout.cov_index(c, 0)];
      covs[c](0, 0) = s * s;
    } else {
      const double s1 = theta[layout.cov_index(c, 0)], s2 = theta[layout.cov_index(c, 1)];
      const double r = theta[layout.cov_index(c, 2)];
      covs[c] << s1 * s1, r * s1 * s2, r * s1 * s2, s2 * s2;
    }
  }
  return IvMixtureModel(theta[0], {theta[1], theta[2], 1.0 - theta[1] - theta[2]},
                        std::move(means), std::move(covs));
}

/// n x P per-unit scores of the IV log-likelihood.
inline Matrix iv_score_contributions(const IvMixtureModel& model, const IvSample& sample) {
  const IvLayout layout{model.dim()};
  const int q = layout.q, n = sample.n();
  const IvPosterior post = iv_posterior(model, sample);
  Matrix scores = Matrix::Zero(n, layout.size());
  std::array<Matrix, kIvCells> inv;
  std::array<std::array<Matrix, 3>, kIvCells> dv;  // dV / d(cov params)
  for (int c = 0; c < kIvCells; ++c) {
    inv[c] = model.factor(c).inverse();
    const Matrix& v = model.covariance(c);
    if (q == 1) {
      dv[c][0] = Matrix::Constant(1, 1, 2.0 * std::sqrt(v(0, 0)));
    } else {
      const double s1 = std::sqrt(v(0, 0)), s2 = std::sqrt(v(1, 1)), r = v(0, 1) / (s1 * s2);
      dv[c][0].resize(2, 2);
      dv[c][0] << 2.0 * s1, r * s2, r * s2, 0.0;
      dv[c][1].resize(2, 2);
      dv[c][1] << 0.0, r * s1, r * s1, 2.0 * s2;
      dv[c][2].resize(2, 2);
      dv[c][2] << 0.0, s1 * s2, s1 * s2, 0.0;
    }
  }
  const double pi = model.pi();
  const double wa = model.omega(kAlways), wn = model.omega(kNever), wc = model.omega(kComplier);
  for (int i = 0; i < n; ++i) {
    const int z = sample.z()[i];
    scores(i, 0) = z == 1 ? 1.0 / pi : -1.0 / (1.0 - pi);
    const double ta = post.group(i, kAlways), tn = post.group(i, kNever),
                 tc = post.group(i, kComplier);
    // omega_c = 1 - omega_a - omega_n
    scores(i, 1) = (ta > 0.0 ? ta / wa : 0.0) - (tc > 0.0 ? tc / wc : 0.0);
    scores(i, 2) = (tn > 0.0 ? tn / wn : 0.0) - (tc > 0.0 ? tc / wc : 0.0);
    for (int g = 0; g < 3; ++g) {
      const double tau = post.group(i, g);
      if (tau == 0.0) continue;
      const int c = iv_cell(g, z);
      const Vector r = sample.x().row(i).transpose() - model.mean(c);
      const Vector gvec = inv[c] * r;
      for (int j = 0; j < q; ++j) scores(i, layout.mean_index(c, j)) = tau * gvec[j];
      const Matrix gmat = 0.5 * (gvec * gvec.transpose() - inv[c]);
      for (int k = 0; k < layout.cov_params(); ++k)
        scores(i, layout.cov_index(c, k)) = tau * (gmat.array() * dv[c][k].array()).sum();
    }
  }
  return scores;
}

/// Central finite differences of the summed analytic score, symmetrized.
inline Matrix iv_hessian(const IvMixtureModel& model, const IvSample& sample) {
  const Vector theta = iv_pack(model);
  const int p = static_cast<int>(theta.size()), q = model.dim();
  Matrix h(p, p);
  for (int j = 0; j < p; ++j) {
    const double step = 1e-5 * (1.0 + std::abs(theta[j]));
    Vector up = theta, down = theta;
    up[j] += step;
    down[j] -= step;
    const Vector s_up = iv_score_contributions(iv_unpack(up, q), sample).colwise().sum();
    const Vector s_down = iv_score_contributions(iv_unpack(down, q), sample).colwise().sum();
    h.col(j) = (s_up - s_down) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

struct IvInfo {
  IvLayout layout;
  std::vector<std::string> names;
  Matrix i1, i2;
  bool i2_positive_definite = false;
  EstimatorVariance outer, hessian, sandwich;

  const EstimatorVariance& estimator(int which) const {
    return which == 1 ? outer : which == 2 ? hessian : sandwich;
  }
};

inline IvInfo iv_information(const IvMixtureModel& model, const IvSample& sample) {
  IvInfo info;
  info.layout = IvLayout{model.dim()};
  info.names = info.layout.names();
  info.i1 = info_outer(iv_score_contributions(model, sample));
  info.i2 = -iv_hessian(model, sample);
  if (auto v1 = spd_inverse(info.i1))
    info.outer = with_se(std::move(*v1));
  else
    info.outer.note = "I1 is singular";
  if (auto v2 = spd_inverse(info.i2)) {
    info.i2_positive_definite = true;
    info.hessian = with_se(std::move(*v2));
    info.sandwich = with_se(sandwich_variance(info.i1, info.i2));
  } else {
    info.hessian.note = "I2 is not positive definite; standard errors withheld";
    info.sandwich.note = info.hessian.note;
  }
  return info;
}

inline double two_sided_p_value(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

struct CaceRow {
  std::string name;
  double estimate = 0.0;
  std::array<std::optional<double>, 3> se;
  std::array<std::optional<double>, 3> p_value;  // contrasts only
  bool contrast = false;
};

struct CaceReport {
  std::vector<CaceRow> rows;  // omegas, means and contrasts, SDs; primary outcome first
  IvInfo info;
};

/// Estimates and SEs (I1, I2, I3) for the mixing probabilities, cell means,
/// the three arm contrasts and the cell SDs; contrasts by the delta method on
/// the full variance matrix.
inline CaceReport cace_report(const IvMixtureModel& model, const IvSample& sample) {
  CaceReport report;
  report.info = iv_information(model, sample);
  const IvLayout& layout = report.info.layout;
  const int p = layout.size();
  auto linear = [&](const std::string& name, const Vector& g, double estimate, bool contrast) {
    CaceRow row{name, estimate, {}, {}, contrast};
    for (int e = 1; e <= 3; ++e)
      if (const auto& v = report.info.estimator(e).variance) {
        const double se = std::sqrt(std::max(0.0, g.dot(*v * g)));
        row.se[e - 1] = se;
        if (contrast && se > 0.0) row.p_value[e - 1] = two_sided_p_value(estimate / se);
      }
    report.rows.push_back(std::move(row));
  };
  auto unit = [&](int idx) {
    Vector g = Vector::Zero(p);
    g[idx] = 1.0;
    return g;
  };
  const Vector theta = iv_pack(model);
  linear("omega_a", unit(1), theta[1], false);
  linear("omega_n", unit(2), theta[2], false);
  {
    Vector g = Vector::Zero(p);
    g[1] = g[2] = -1.0;
    linear("omega_c", g, model.omega(kComplier), false);
  }
  const std::string suffix1 = layout.q == 1 ? "" : "[1]";
  for (const char* grp : {"a", "n", "c"}) {
    const int g = grp[0] == 'a' ? kAlways : grp[0] == 'n' ? kNever : kComplier;
    const int i0 = layout.mean_index(iv_cell(g, 0), 0), i1 = layout.mean_index(iv_cell(g, 1), 0);
    linear(std::string("mu_") + grp + "0" + suffix1, unit(i0), theta[i0], false);
    linear(std::string("mu_") + grp + "1" + suffix1, unit(i1), theta[i1], false);
    Vector diff = unit(i1) - unit(i0);
    linear(std::string("mu_") + grp + "1-mu_" + grp + "0" + suffix1, diff, theta[i1] - theta[i0],
           true);
  }
  for (int c = 0; c < kIvCells; ++c) {
    const int idx = layout.cov_index(c, 0);
    linear(std::string("sigma_") + kIvCellNames[c] + suffix1, unit(idx), theta[idx], false);
  }
  if (layout.q == 2) {
    for (int c = 0; c < kIvCells; ++c) {
      const int idx = layout.mean_index(c, 1);
      linear(std::string("mu_") + kIvCellNames[c] + "[2]", unit(idx), theta[idx], false);
    }
    for (int c = 0; c < kIvCells; ++c) {
      for (int k = 1; k <= 2; ++k) {
        const int idx = layout.cov_index(c, k);
        linear(report.info.names[idx], unit(idx), theta[idx], false);
      }
    }
  }
  {
    CaceRow row{"pi", theta[0], {}, {}, false};
    for (int e = 1; e <= 3; ++e)
      if (const auto& se = report.info.estimator(e).se) row.se[e - 1] = (*se)[0];
    report.rows.push_back(std::move(row));
  }
  return report;
}

// ---- synthetic data ------------------------------------------------------

/// Draws n units: z ~ Bernoulli(pi), group ~ (omega_a, omega_n, omega_c),
/// d from (group, z) under monotonicity, x from the (group, z) cell.
inline IvSample simulate_iv(const IvMixtureModel& model, int n, std::uint64_t seed) {
  if (n < 1) throw ArgumentError("simulate_iv needs n >= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal;
  const int q = model.dim();
  std::array<Matrix, kIvCells> chol;
  for (int c = 0; c < kIvCells; ++c) chol[c] = model.factor(c).lower();
  Matrix x(n, q);
  std::vector<int> d(n), z(n);
  for (int i = 0; i < n; ++i) {
    z[i] = unif(rng) < model.pi() ? 1 : 0;
    const double u = unif(rng);
    const int g = u < model.omega(kAlways)                           ? kAlways
                  : u < model.omega(kAlways) + model.omega(kNever) ? kNever
                                                                     : kComplier;
    d[i] = g == kAlways ? 1 : g == kNever ? 0 : z[i];
    Vector e(q);
    for (int j = 0; j < q; ++j) e[j] = normal(rng);
    const int c = iv_cell(g, z[i]);
    x.row(i) = (model.mean(c) + chol[c] * e).transpose();
  }
  return IvSample(std::move(x), std::move(d), std::move(z));
}

}  // namespace mixturelab
