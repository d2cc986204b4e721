#pragma once

// Finite Gaussian mixture densities, allocation probabilities and the
// homoscedastic two-component geometry (standardized distance and linear
// discriminant).

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mixturelab/errors.hpp"

namespace mixturelab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

/// Numerically stable log(sum(exp(values))).
inline double log_sum_exp(const Eigen::Ref<const Vector>& values) {
  const double peak = values.maxCoeff();
  if (!std::isfinite(peak)) return peak;
  return peak + std::log((values.array() - peak).exp().sum());
}

/// Cholesky factor of a symmetric positive definite matrix. Fails when the
/// smallest pivot drops below 1e-12 times the largest; never regularizes.
class SpdFactor {
 public:
  static constexpr double kPivotRatio = 1e-12;

  SpdFactor(const Matrix& a, std::string_view what) : llt_(a) {
    if (a.rows() != a.cols() || a.rows() == 0)
      throw ArgumentError(std::string(what) + " is not a nonempty square matrix");
    if (llt_.info() != Eigen::Success)
      throw NumericError(std::string(what) + " is not positive definite");
    const Vector pivots = llt_.matrixLLT().diagonal().array().square();
    const double largest = pivots.maxCoeff();
    const double smallest = pivots.minCoeff();
    if (!(smallest > kPivotRatio * largest))
      throw NumericError(std::string(what) + " is numerically singular (pivot ratio " +
                         std::to_string(smallest / largest) + ")");
    log_det_ = pivots.array().log().sum();
  }

  int size() const { return static_cast<int>(llt_.rows()); }
  double log_det() const { return log_det_; }

  Vector solve(const Vector& b) const { return llt_.solve(b); }
  Matrix solve(const Matrix& b) const { return llt_.solve(b); }
  Matrix inverse() const {
    return llt_.solve(Matrix::Identity(size(), size()));
  }
  Matrix lower() const { return llt_.matrixL(); }

  /// v' A^{-1} v
  double quad_form(const Vector& v) const {
    return llt_.matrixL().solve(v).squaredNorm();
  }

  /// Column-wise v_j' A^{-1} v_j for the columns of `columns` (size x n).
  Eigen::RowVectorXd quad_forms(const Matrix& columns) const {
    return llt_.matrixL().solve(columns).colwise().squaredNorm();
  }

 private:
  Eigen::LLT<Matrix> llt_;
  double log_det_ = 0.0;
};

/// Adds ridge * trace(v)/m to the diagonal when v would fail SpdFactor.
/// Returns whether it did.
inline bool ridge_if_singular(Matrix& v, double ridge) {
  const Eigen::LLT<Matrix> llt(v);
  if (llt.info() == Eigen::Success) {
    const Vector pivots = llt.matrixLLT().diagonal().array().square();
    if (pivots.minCoeff() > SpdFactor::kPivotRatio * pivots.maxCoeff()) return false;
  }
  v.diagonal().array() += ridge * v.trace() / static_cast<double>(v.rows());
  return true;
}

/// K-component Gaussian mixture over R^m. Immutable; validated on
/// construction.
class MixtureModel {
 public:
  MixtureModel(std::vector<double> weights, std::vector<Vector> means,
               std::vector<Matrix> covariances)
      : weights_(std::move(weights)),
        means_(std::move(means)),
        covariances_(std::move(covariances)) {
    const std::size_t k = weights_.size();
    if (k == 0) throw ArgumentError("mixture needs at least one component");
    if (means_.size() != k || covariances_.size() != k)
      throw ArgumentError("weights, means and covariances disagree on K");
    dim_ = static_cast<int>(means_[0].size());
    if (dim_ < 1) throw ArgumentError("mixture dimension must be positive");
    double total = 0.0;
    for (double w : weights_) {
      if (!(w > 0.0) || !std::isfinite(w))
        throw ArgumentError("mixture weights must be strictly positive");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw ArgumentError("mixture weights must sum to 1 (got " +
                          std::to_string(total) + ")");
    factors_.reserve(k);
    for (std::size_t c = 0; c < k; ++c) {
      const std::string name = "covariance of component " + std::to_string(c + 1);
      if (means_[c].size() != dim_ || covariances_[c].rows() != dim_ ||
          covariances_[c].cols() != dim_)
        throw ArgumentError("component " + std::to_string(c + 1) +
                            " has inconsistent dimension");
      if (!means_[c].allFinite())
        throw ArgumentError("mean of component " + std::to_string(c + 1) +
                            " is not finite");
      if (!covariances_[c].allFinite())
        throw ArgumentError(name + " is not finite");
      const double asym =
          (covariances_[c] - covariances_[c].transpose()).cwiseAbs().maxCoeff();
      if (asym >= 1e-12) throw ArgumentError(name + " is not symmetric");
      factors_.emplace_back(covariances_[c], name);
      log_weights_.push_back(std::log(weights_[c]));
    }
  }

  int dim() const { return dim_; }
  int components() const { return static_cast<int>(weights_.size()); }
  const std::vector<double>& weights() const { return weights_; }
  double weight(int k) const { return weights_[k]; }
  const std::vector<Vector>& means() const { return means_; }
  const Vector& mean(int k) const { return means_[k]; }
  const std::vector<Matrix>& covariances() const { return covariances_; }
  const Matrix& covariance(int k) const { return covariances_[k]; }
  const SpdFactor& factor(int k) const { return factors_[k]; }

  /// log f_k(x), the normalized component density.
  double component_log_density(int k, const Vector& x) const {
    check_point(x);
    return -0.5 * (dim_ * kLogTwoPi + factors_[k].log_det() +
                   factors_[k].quad_form(x - means_[k]));
  }

  /// n x K matrix of log(p_k f_k(x_i)) for the rows of `data`.
  Matrix weighted_log_densities(const Matrix& data) const {
    if (data.cols() != dim_)
      throw ArgumentError("data has " + std::to_string(data.cols()) +
                          " columns, model dimension is " + std::to_string(dim_));
    const Eigen::Index n = data.rows();
    Matrix out(n, components());
    for (int k = 0; k < components(); ++k) {
      const Matrix centered = (data.rowwise() - means_[k].transpose()).transpose();
      const Eigen::RowVectorXd q = factors_[k].quad_forms(centered);
      const double offset =
          log_weights_[k] - 0.5 * (dim_ * kLogTwoPi + factors_[k].log_det());
      out.col(k) = (offset - 0.5 * q.array()).transpose();
    }
    return out;
  }

  void check_point(const Vector& x) const {
    if (x.size() != dim_)
      throw ArgumentError("point has dimension " + std::to_string(x.size()) +
                          ", model dimension is " + std::to_string(dim_));
  }

 private:
  int dim_ = 0;
  std::vector<double> weights_;
  std::vector<Vector> means_;
  std::vector<Matrix> covariances_;
  std::vector<SpdFactor> factors_;
  std::vector<double> log_weights_;
};

/// n x m observations with optional component labels in 1..K.
class Sample {
 public:
  explicit Sample(Matrix data, std::optional<std::vector<int>> labels = std::nullopt)
      : data_(std::move(data)), labels_(std::move(labels)) {
    if (data_.rows() < 2) throw ArgumentError("sample needs at least two rows");
    if (data_.cols() < 1) throw ArgumentError("sample needs at least one column");
    if (!data_.allFinite()) throw ArgumentError("sample contains non-finite values");
    if (labels_) {
      if (static_cast<Eigen::Index>(labels_->size()) != data_.rows())
        throw ArgumentError("label vector length differs from sample size");
      for (int l : *labels_)
        if (l < 1) throw ArgumentError("labels must be component indices 1..K");
    }
  }

  int n() const { return static_cast<int>(data_.rows()); }
  int dim() const { return static_cast<int>(data_.cols()); }
  const Matrix& data() const { return data_; }
  Vector row(int i) const { return data_.row(i).transpose(); }
  const std::optional<std::vector<int>>& labels() const { return labels_; }
  int max_label() const {
    return labels_ ? *std::max_element(labels_->begin(), labels_->end()) : 0;
  }

 private:
  Matrix data_;
  std::optional<std::vector<int>> labels_;
};

/// Mean gap d = mu_2 - mu_1 and shared covariance V of a homoscedastic
/// two-component mixture.
class HomoscedasticGap {
 public:
  HomoscedasticGap(Vector d, Matrix v)
      : d_(std::move(d)), v_(std::move(v)), factor_(v_, "shared covariance V") {
    if (d_.size() != v_.rows())
      throw ArgumentError("gap vector and covariance disagree on dimension");
  }

  /// Bivariate gap (d1, d2) with V = [[s1^2, rho s1 s2], [rho s1 s2, s2^2]].
  static HomoscedasticGap bivariate(double d1, double d2, double sigma1,
                                    double sigma2, double rho) {
    Matrix v(2, 2);
    v << sigma1 * sigma1, rho * sigma1 * sigma2, rho * sigma1 * sigma2,
        sigma2 * sigma2;
    return HomoscedasticGap(Vector{{d1, d2}}, v);
  }

  const Vector& d() const { return d_; }
  const Matrix& v() const { return v_; }
  const SpdFactor& factor() const { return factor_; }

 private:
  Vector d_;
  Matrix v_;
  SpdFactor factor_;
};

/// log f(x) = log sum_k p_k f_k(x).
inline double log_density(const MixtureModel& model, const Vector& x) {
  model.check_point(x);
  return log_sum_exp(model.weighted_log_densities(x.transpose()).row(0).transpose());
}

/// Allocation probabilities p_k f_k(x) / f(x).
inline Vector responsibilities(const MixtureModel& model, const Vector& x) {
  model.check_point(x);
  const Vector terms = model.weighted_log_densities(x.transpose()).row(0).transpose();
  const double total = log_sum_exp(terms);
  return (terms.array() - total).exp();
}

struct Posterior {
  Matrix responsibilities;  // n x K, rows sum to one
  Vector log_densities;     // log f(x_i)
  double loglik = 0.0;
};

/// Responsibilities and log-likelihood for every row of `data`.
inline Posterior posterior(const MixtureModel& model, const Matrix& data) {
  Posterior out;
  out.responsibilities = model.weighted_log_densities(data);
  out.log_densities.resize(data.rows());
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    auto row = out.responsibilities.row(i);
    const double peak = row.maxCoeff();
    row.array() = (row.array() - peak).exp();
    const double total = row.sum();
    row /= total;
    out.log_densities[i] = peak + std::log(total);
  }
  double sum = 0.0, c = 0.0;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const double v = out.log_densities[i];
    const double t = sum + v;
    c += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  out.loglik = sum + c;
  return out;
}

inline double log_likelihood(const MixtureModel& model, const Sample& sample) {
  return posterior(model, sample.data()).loglik;
}

/// d' V^{-1} d
inline double standardized_distance(const HomoscedasticGap& gap) {
  return gap.factor().quad_form(gap.d());
}

/// h(x) = d' V^{-1} (x - d/2): log f_2(x)/f_1(x) with mu_1 = 0, mu_2 = d.
inline double discriminant_h(const HomoscedasticGap& gap, const Vector& x) {
  if (x.size() != gap.d().size())
    throw ArgumentError("point dimension differs from gap dimension");
  return gap.factor().solve(gap.d()).dot(x - 0.5 * gap.d());
}

/// Marginal mixture over the coordinates in `keep` (0-based, in the given
/// order). Weights are unchanged.
inline MixtureModel marginalize(const MixtureModel& model, const std::vector<int>& keep) {
  if (keep.empty()) throw ArgumentError("marginalize: empty coordinate set");
  for (int j : keep)
    if (j < 0 || j >= model.dim())
      throw ArgumentError("marginalize: coordinate " + std::to_string(j) +
                          " out of range");
  {
    std::vector<int> sorted = keep;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ArgumentError("marginalize: repeated coordinate");
  }
  const int r = static_cast<int>(keep.size());
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  for (int k = 0; k < model.components(); ++k) {
    Vector mu(r);
    Matrix v(r, r);
    for (int a = 0; a < r; ++a) {
      mu[a] = model.mean(k)[keep[a]];
      for (int b = 0; b < r; ++b) v(a, b) = model.covariance(k)(keep[a], keep[b]);
    }
    means.push_back(std::move(mu));
    covs.push_back(std::move(v));
  }
  return MixtureModel(model.weights(), std::move(means), std::move(covs));
}

/// Sample restricted to the given columns (labels carried over).
inline Sample select_columns(const Sample& sample, const std::vector<int>& keep) {
  Matrix out(sample.n(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t a = 0; a < keep.size(); ++a) {
    if (keep[a] < 0 || keep[a] >= sample.dim())
      throw ArgumentError("column index out of range");
    out.col(static_cast<Eigen::Index>(a)) = sample.data().col(keep[a]);
  }
  return Sample(std::move(out), sample.labels());
}

}  // namespace mixturelab
