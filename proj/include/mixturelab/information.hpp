#pragma once

// Observed-information estimators for Gaussian mixture MLEs:
//   I1 = sum_i q_i q_i'        (outer product of per-observation scores)
//   I2 = -sum_i Q_i            (negative Hessian)
//   V3 = I2^{-1} I1 I2^{-1}    (sandwich variance)
// All three are reported in variance form: V1 = I1^{-1}, V2 = I2^{-1}, V3.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mixturelab/estimation.hpp"
#include "mixturelab/model.hpp"

namespace mixturelab {

/// Free-parameter layout: [K-1 weight log-ratios | K*m means | K*m(m+1)/2
/// covariance lower triangles]. Fixed blocks are absent.
struct ParamLayout {
  int k = 1;
  int m = 1;
  bool weights_free = true;
  bool covariances_free = true;

  int weight_count() const { return weights_free ? k - 1 : 0; }
  int triangle() const { return m * (m + 1) / 2; }
  int mean_offset() const { return weight_count(); }
  int cov_offset() const { return mean_offset() + k * m; }
  int size() const { return cov_offset() + (covariances_free ? k * triangle() : 0); }

  int mean_index(int component, int coord) const { return mean_offset() + component * m + coord; }
  int cov_index(int component, int row, int col) const {
    if (col > row) std::swap(row, col);
    return cov_offset() + component * triangle() + row * (row + 1) / 2 + col;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (int j = 0; j + 1 < k && weights_free; ++j)
      out.push_back("eta" + std::to_string(j + 1));
    for (int c = 0; c < k; ++c)
      for (int j = 0; j < m; ++j)
        out.push_back("mu" + std::to_string(c + 1) + "[" + std::to_string(j + 1) + "]");
    if (covariances_free)
      for (int c = 0; c < k; ++c)
        for (int a = 0; a < m; ++a)
          for (int b = 0; b <= a; ++b)
            out.push_back("V" + std::to_string(c + 1) + "[" + std::to_string(a + 1) + "," +
                          std::to_string(b + 1) + "]");
    return out;
  }
};

inline ParamLayout layout_for(const FitResult& fit) {
  return {fit.model.components(), fit.model.dim(), fit.weights_free, fit.covariances_free};
}

inline Vector pack(const MixtureModel& model, const ParamLayout& layout) {
  Vector theta(layout.size());
  const double log_last = std::log(model.weight(layout.k - 1));
  for (int j = 0; j < layout.weight_count(); ++j)
    theta[j] = std::log(model.weight(j)) - log_last;
  for (int c = 0; c < layout.k; ++c)
    for (int j = 0; j < layout.m; ++j) theta[layout.mean_index(c, j)] = model.mean(c)[j];
  if (layout.covariances_free)
    for (int c = 0; c < layout.k; ++c)
      for (int a = 0; a < layout.m; ++a)
        for (int b = 0; b <= a; ++b) theta[layout.cov_index(c, a, b)] = model.covariance(c)(a, b);
  return theta;
}

/// Inverse of pack; fixed blocks are copied from `fixed_source`.
inline MixtureModel unpack(const Vector& theta, const ParamLayout& layout,
                           const MixtureModel& fixed_source) {
  if (theta.size() != layout.size()) throw ArgumentError("parameter vector has wrong length");
  std::vector<double> weights = fixed_source.weights();
  if (layout.weights_free) {
    double peak = 0.0;
    for (int j = 0; j < layout.weight_count(); ++j) peak = std::max(peak, theta[j]);
    double total = std::exp(-peak);
    for (int j = 0; j < layout.weight_count(); ++j) total += std::exp(theta[j] - peak);
    for (int j = 0; j < layout.weight_count(); ++j) weights[j] = std::exp(theta[j] - peak) / total;
    weights[layout.k - 1] = std::exp(-peak) / total;
  }
  std::vector<Vector> means(layout.k, Vector(layout.m));
  for (int c = 0; c < layout.k; ++c)
    for (int j = 0; j < layout.m; ++j) means[c][j] = theta[layout.mean_index(c, j)];
  std::vector<Matrix> covs = fixed_source.covariances();
  if (layout.covariances_free)
    for (int c = 0; c < layout.k; ++c)
      for (int a = 0; a < layout.m; ++a)
        for (int b = 0; b <= a; ++b) {
          covs[c](a, b) = theta[layout.cov_index(c, a, b)];
          covs[c](b, a) = covs[c](a, b);
        }
  return MixtureModel(std::move(weights), std::move(means), std::move(covs));
}

/// Row i is d log f(x_i) / d theta. Mean blocks are tau_k V_k^{-1}(x - mu_k);
/// weight and covariance blocks are the responsibility-weighted component
/// scores.
inline Matrix score_contributions(const MixtureModel& model, const ParamLayout& layout,
                                  const Matrix& data) {
  const Posterior post = posterior(model, data);
  const Matrix& tau = post.responsibilities;
  const Eigen::Index n = data.rows();
  Matrix scores = Matrix::Zero(n, layout.size());
  for (int j = 0; j < layout.weight_count(); ++j)
    scores.col(j) = tau.col(j).array() - model.weight(j);
  for (int c = 0; c < layout.k; ++c) {
    const Matrix v_inv = model.factor(c).inverse();
    const Matrix g = (data.rowwise() - model.mean(c).transpose()) * v_inv;  // n x m
    for (int j = 0; j < layout.m; ++j)
      scores.col(layout.mean_index(c, j)) = tau.col(c).cwiseProduct(g.col(j));
    if (!layout.covariances_free) continue;
    for (int a = 0; a < layout.m; ++a)
      for (int b = 0; b <= a; ++b) {
        // G = (g g' - V^{-1}) / 2; off-diagonal parameters enter twice.
        const double factor = a == b ? 0.5 : 1.0;
        scores.col(layout.cov_index(c, a, b)) =
            factor * tau.col(c).array() * (g.col(a).array() * g.col(b).array() - v_inv(a, b));
      }
  }
  return scores;
}

inline Matrix score_contributions(const FitResult& fit, const Sample& sample) {
  return score_contributions(fit.model, layout_for(fit), sample.data());
}

/// Analytic Hessian of the log-likelihood in the component means only
/// (K*m x K*m, component-major):
///   H_kl = sum_i tau_k (delta_kl - tau_l) g_k g_l' - delta_kl tau_k V_k^{-1}.
inline Matrix analytic_mean_hessian(const MixtureModel& model, const Matrix& data) {
  const Posterior post = posterior(model, data);
  const Matrix& tau = post.responsibilities;
  const int k_count = model.components();
  const int m = model.dim();
  std::vector<Matrix> g(k_count), v_inv(k_count);
  for (int c = 0; c < k_count; ++c) {
    v_inv[c] = model.factor(c).inverse();
    g[c] = (data.rowwise() - model.mean(c).transpose()) * v_inv[c];
  }
  Matrix h = Matrix::Zero(k_count * m, k_count * m);
  for (int k = 0; k < k_count; ++k) {
    for (int l = 0; l < k_count; ++l) {
      Vector w = -tau.col(k).cwiseProduct(tau.col(l));
      if (k == l) w += tau.col(k);
      h.block(k * m, l * m, m, m) = g[k].transpose() * (g[l].array().colwise() * w.array()).matrix();
    }
    h.block(k * m, k * m, m, m) -= tau.col(k).sum() * v_inv[k];
  }
  return h;
}

struct HessianResult {
  Matrix hessian;            // symmetric
  double asymmetry = 0.0;    // relative, before symmetrization (0 for analytic)
  bool analytic = false;
};

/// Central finite differences of the summed analytic score, step
/// 1e-5 * (1 + |theta_j|), then symmetrized.
inline HessianResult finite_difference_hessian(const MixtureModel& model, const ParamLayout& layout,
                                               const Matrix& data) {
  const Vector theta = pack(model, layout);
  const int p = layout.size();
  Matrix h(p, p);
  for (int j = 0; j < p; ++j) {
    const double step = 1e-5 * (1.0 + std::abs(theta[j]));
    Vector up = theta, down = theta;
    up[j] += step;
    down[j] -= step;
    const Vector s_up = score_contributions(unpack(up, layout, model), layout, data).colwise().sum();
    const Vector s_down =
        score_contributions(unpack(down, layout, model), layout, data).colwise().sum();
    h.col(j) = (s_up - s_down) / (2.0 * step);
  }
  HessianResult out;
  const double scale = std::max(h.norm(), std::numeric_limits<double>::min());
  out.asymmetry = (h - h.transpose()).norm() / scale;
  out.hessian = 0.5 * (h + h.transpose());
  return out;
}

inline HessianResult hessian(const MixtureModel& model, const ParamLayout& layout,
                             const Matrix& data) {
  if (layout.weight_count() == 0 && !layout.covariances_free)
    return {analytic_mean_hessian(model, data), 0.0, true};
  return finite_difference_hessian(model, layout, data);
}

inline HessianResult hessian(const FitResult& fit, const Sample& sample) {
  return hessian(fit.model, layout_for(fit), sample.data());
}

/// I1 = sum_i q_i q_i'.
inline Matrix info_outer(const Matrix& scores) { return scores.transpose() * scores; }

inline Matrix info_outer(const FitResult& fit, const Sample& sample) {
  return info_outer(score_contributions(fit, sample));
}

/// Inverse of a symmetric positive definite matrix, or nullopt when the
/// Cholesky factorization fails or is numerically singular.
inline std::optional<Matrix> spd_inverse(const Matrix& a) {
  try {
    const SpdFactor factor(0.5 * (a + a.transpose()), "information matrix");
    Matrix inv = factor.inverse();
    return Matrix(0.5 * (inv + inv.transpose()));
  } catch (const NumericError&) {
    return std::nullopt;
  }
}

struct HessianInfo {
  Matrix i2;
  bool positive_definite = false;
  double asymmetry = 0.0;
};

/// I2 = -Hessian, flagged when not positive definite.
inline HessianInfo info_hessian(const FitResult& fit, const Sample& sample) {
  const HessianResult h = hessian(fit, sample);
  HessianInfo out;
  out.i2 = -h.hessian;
  out.asymmetry = h.asymmetry;
  out.positive_definite = spd_inverse(out.i2).has_value();
  return out;
}

/// V3 = I2^{-1} I1 I2^{-1}.
inline Matrix sandwich_variance(const Matrix& i1, const Matrix& i2) {
  const Eigen::FullPivLU<Matrix> lu(i2);
  if (!lu.isInvertible()) throw NumericError("I2 (negative Hessian) is singular");
  const Matrix inv = lu.inverse();
  const Matrix v = inv * i1 * inv.transpose();
  return 0.5 * (v + v.transpose());
}

inline Matrix info_sandwich(const FitResult& fit, const Sample& sample) {
  return sandwich_variance(info_outer(fit, sample), info_hessian(fit, sample).i2);
}

struct AllocationRate {
  double overall = 0.0;  // mean of max_k Pr(i in k | x_i)
  // With labels: fraction of units whose argmax component equals the label.
  std::optional<std::vector<double>> per_component_correct;
  std::optional<double> overall_correct;
};

inline AllocationRate allocation_rate(const Matrix& responsibilities,
                                      const std::optional<std::vector<int>>& labels = std::nullopt) {
  AllocationRate out;
  const Eigen::Index n = responsibilities.rows();
  const int k_count = static_cast<int>(responsibilities.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) total += responsibilities.row(i).maxCoeff();
  out.overall = total / static_cast<double>(n);
  if (labels) {
    std::vector<double> hits(k_count, 0.0), counts(k_count, 0.0);
    double correct = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int label = (*labels)[i] - 1;
      if (label < 0 || label >= k_count) throw ArgumentError("label outside 1..K");
      Eigen::Index arg = 0;
      responsibilities.row(i).maxCoeff(&arg);
      counts[label] += 1.0;
      if (arg == label) {
        hits[label] += 1.0;
        correct += 1.0;
      }
    }
    std::vector<double> rates(k_count);
    for (int k = 0; k < k_count; ++k) rates[k] = counts[k] > 0 ? hits[k] / counts[k] : 0.0;
    out.per_component_correct = std::move(rates);
    out.overall_correct = correct / static_cast<double>(n);
  }
  return out;
}

inline AllocationRate allocation_rate(const FitResult& fit, const Sample& sample) {
  return allocation_rate(fit.responsibilities, sample.labels());
}

struct EstimatorVariance {
  std::optional<Matrix> variance;  // theta-space variance
  std::optional<Vector> se;
  std::string note;
};

struct InfoReport {
  ParamLayout layout;
  std::vector<std::string> names;
  Matrix i1;
  Matrix i2;
  bool i2_positive_definite = false;
  double hessian_asymmetry = 0.0;
  EstimatorVariance outer;     // V1 = I1^{-1}
  EstimatorVariance hessian;   // V2 = I2^{-1}
  EstimatorVariance sandwich;  // V3 = I2^{-1} I1 I2^{-1}
  double allocation_rate = 0.0;

  const EstimatorVariance& estimator(int which) const {
    return which == 1 ? outer : which == 2 ? hessian : sandwich;
  }
};

inline EstimatorVariance with_se(Matrix variance) {
  EstimatorVariance out;
  out.se = variance.diagonal().cwiseMax(0.0).cwiseSqrt();
  out.variance = std::move(variance);
  return out;
}

inline InfoReport information_report(const FitResult& fit, const Sample& sample) {
  InfoReport report;
  report.layout = layout_for(fit);
  report.names = report.layout.names();
  report.i1 = info_outer(fit, sample);
  const HessianInfo h = info_hessian(fit, sample);
  report.i2 = h.i2;
  report.i2_positive_definite = h.positive_definite;
  report.hessian_asymmetry = h.asymmetry;
  if (auto v1 = spd_inverse(report.i1))
    report.outer = with_se(std::move(*v1));
  else
    report.outer.note = "I1 is singular";
  if (h.positive_definite) {
    report.hessian = with_se(*spd_inverse(report.i2));
    report.sandwich = with_se(sandwich_variance(report.i1, report.i2));
  } else {
    report.hessian.note = "I2 is not positive definite; standard errors withheld";
    report.sandwich.note = report.hessian.note;
  }
  report.allocation_rate = allocation_rate(fit.responsibilities).overall;
  return report;
}

struct NaturalParameter {
  std::string name;
  double value = 0.0;
  std::optional<double> se;
};

/// Estimates and SEs on the natural scale: weights p_1..p_K via the delta
/// method from the log-ratio block, then means and covariance entries.
inline std::vector<NaturalParameter> natural_parameters(const MixtureModel& model,
                                                        const ParamLayout& layout,
                                                        const std::optional<Matrix>& variance) {
  std::vector<NaturalParameter> out;
  const int k = layout.k;
  if (layout.weights_free) {
    const int w = layout.weight_count();
    Matrix jac = Matrix::Zero(k, w);
    for (int j = 0; j < k; ++j)
      for (int l = 0; l < w; ++l)
        jac(j, l) = model.weight(j) * ((j == l ? 1.0 : 0.0) - model.weight(l));
    std::optional<Matrix> var_p;
    if (variance) var_p = jac * variance->topLeftCorner(w, w) * jac.transpose();
    for (int j = 0; j < k; ++j) {
      NaturalParameter p{"p" + std::to_string(j + 1), model.weight(j), std::nullopt};
      if (var_p) p.se = std::sqrt(std::max(0.0, (*var_p)(j, j)));
      out.push_back(std::move(p));
    }
  }
  const std::vector<std::string> names = layout.names();
  for (int idx = layout.mean_offset(); idx < layout.size(); ++idx) {
    double value;
    if (idx < layout.cov_offset()) {
      const int rel = idx - layout.mean_offset();
      value = model.mean(rel / layout.m)[rel % layout.m];
    } else {
      int rel = idx - layout.cov_offset();
      const int c = rel / layout.triangle();
      rel %= layout.triangle();
      int a = 0;
      while ((a + 1) * (a + 2) / 2 <= rel) ++a;
      const int b = rel - a * (a + 1) / 2;
      value = model.covariance(c)(a, b);
    }
    NaturalParameter p{names[idx], value, std::nullopt};
    if (variance) p.se = std::sqrt(std::max(0.0, (*variance)(idx, idx)));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace mixturelab
