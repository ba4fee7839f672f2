#pragma once

// Performance functions U(theta) in the maximization convention, with
// analytic gradients and Hessians, plus the bundled test surfaces.

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <numeric>
#include <memory>
#include <optional>
#include <vector>

#include "fmb/linalg.hpp"
#include "fmb/rng.hpp"

namespace fmb {

class ObjectiveFunction {
 public:
  virtual ~ObjectiveFunction() = default;

  virtual Eigen::Index dim() const = 0;
  virtual double value(const Vec& theta) const = 0;
  virtual Vec gradient(const Vec& theta) const = 0;
  virtual std::optional<Mat> hessian(const Vec&) const { return std::nullopt; }

  /// Data-backed objectives: number of observations, and the gradient of the
  /// mean performance over a seeded mini-batch drawn without replacement.
  virtual std::size_t data_size() const { return 0; }
  virtual Vec batch_gradient(const Vec& theta, std::uint64_t, std::size_t) const { return gradient(theta); }
  bool has_batches() const { return data_size() > 0; }
};

/// U = -1/2 theta^T A theta + c^T theta, A symmetric positive definite.
class QuadraticObjective final : public ObjectiveFunction {
 public:
  QuadraticObjective(Mat a, Vec c) : a_(std::move(a)), c_(std::move(c)) {
    if (a_.rows() != a_.cols() || a_.rows() != c_.size())
      throw NumericalError("quadratic: A must be square and match c");
    if ((a_ - a_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + a_.cwiseAbs().maxCoeff()))
      throw NumericalError("quadratic: A must be symmetric");
    if (!(min_eigenvalue(a_) > 0.0)) throw NumericalError("quadratic: A must be positive definite");
  }

  Eigen::Index dim() const override { return c_.size(); }
  double value(const Vec& t) const override { return -0.5 * t.dot(a_ * t) + c_.dot(t); }
  Vec gradient(const Vec& t) const override { return c_ - a_ * t; }
  std::optional<Mat> hessian(const Vec&) const override { return Mat(-a_); }

  const Mat& A() const { return a_; }
  const Vec& c() const { return c_; }
  Vec argmax() const { return a_.llt().solve(c_); }

 private:
  Mat a_;
  Vec c_;
};

/// Negated Rosenbrock function; maximum 0 at the all-ones vector.
class RosenbrockNegObjective final : public ObjectiveFunction {
 public:
  explicit RosenbrockNegObjective(Eigen::Index n) : n_(n) {
    if (n < 2) throw NumericalError("rosenbrock_neg needs n >= 2");
  }
  Eigen::Index dim() const override { return n_; }

  double value(const Vec& t) const override {
    double s = 0.0;
    for (Eigen::Index i = 0; i + 1 < n_; ++i) {
      const double a = t(i + 1) - t(i) * t(i), b = 1.0 - t(i);
      s += 100.0 * a * a + b * b;
    }
    return -s;
  }

  Vec gradient(const Vec& t) const override {
    Vec g = Vec::Zero(n_);
    for (Eigen::Index i = 0; i + 1 < n_; ++i) {
      const double a = t(i + 1) - t(i) * t(i);
      g(i) += -400.0 * a * t(i) - 2.0 * (1.0 - t(i));
      g(i + 1) += 200.0 * a;
    }
    return -g;
  }

  std::optional<Mat> hessian(const Vec& t) const override {
    Mat h = Mat::Zero(n_, n_);
    for (Eigen::Index i = 0; i + 1 < n_; ++i) {
      h(i, i) += 1200.0 * t(i) * t(i) - 400.0 * t(i + 1) + 2.0;
      h(i, i + 1) += -400.0 * t(i);
      h(i + 1, i) += -400.0 * t(i);
      h(i + 1, i + 1) += 200.0;
    }
    return Mat(-h);
  }

 private:
  Eigen::Index n_;
};

/// Log of a sum of Gaussian bumps: U = log sum_k h_k exp(-|theta - c_k|^2 / (2 w_k^2)).
/// Each bump is a concave basin with curvature -1/w_k^2 at its peak, and
/// exp(b U) stays normalizable for b > 0.
class TwoBumpsObjective final : public ObjectiveFunction {
 public:
  TwoBumpsObjective(Mat centers, Vec widths, Vec heights = Vec())
      : centers_(std::move(centers)), widths_(std::move(widths)), heights_(std::move(heights)) {
    if (heights_.size() == 0) heights_ = Vec::Ones(centers_.rows());
    if (centers_.rows() < 1 || widths_.size() != centers_.rows() || heights_.size() != centers_.rows())
      throw NumericalError("two_bumps: centers, widths and heights must agree");
    if ((widths_.array() <= 0.0).any() || (heights_.array() <= 0.0).any())
      throw NumericalError("two_bumps: widths and heights must be positive");
  }

  Eigen::Index dim() const override { return centers_.cols(); }
  double value(const Vec& t) const override {
    const Vec lr = log_terms(t);
    const double mx = lr.maxCoeff();
    return mx + std::log((lr.array() - mx).exp().sum());
  }
  Vec gradient(const Vec& t) const override {
    const Vec p = responsibilities(t);
    Vec g = Vec::Zero(dim());
    for (Eigen::Index k = 0; k < p.size(); ++k) g += p(k) * slope(t, k);
    return g;
  }
  std::optional<Mat> hessian(const Vec& t) const override {
    const Vec p = responsibilities(t);
    const Eigen::Index n = dim();
    Mat h = Mat::Zero(n, n);
    Vec mean = Vec::Zero(n);
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      const Vec a = slope(t, k);
      const double w2 = widths_(k) * widths_(k);
      h += p(k) * (a * a.transpose() - Mat::Identity(n, n) / w2);
      mean += p(k) * a;
    }
    return Mat(h - mean * mean.transpose());
  }

  const Mat& centers() const { return centers_; }
  const Vec& widths() const { return widths_; }
  const Vec& heights() const { return heights_; }

 private:
  Vec log_terms(const Vec& t) const {
    Vec lr(centers_.rows());
    for (Eigen::Index k = 0; k < lr.size(); ++k) {
      const double d2 = (t - centers_.row(k).transpose()).squaredNorm();
      lr(k) = std::log(heights_(k)) - d2 / (2.0 * widths_(k) * widths_(k));
    }
    return lr;
  }
  Vec responsibilities(const Vec& t) const {
    const Vec lr = log_terms(t);
    const Vec e = (lr.array() - lr.maxCoeff()).exp().matrix();
    return e / e.sum();
  }
  Vec slope(const Vec& t, Eigen::Index k) const {
    return -(t - centers_.row(k).transpose()) / (widths_(k) * widths_(k));
  }

  Mat centers_;
  Vec widths_;
  Vec heights_;
};

/// Synthetic linear regression: U = -(1/2N) sum_i (y_i - x_i^T theta)^2.
/// Inputs and true weights are standard normal; y carries Gaussian noise.
class LinregObjective final : public ObjectiveFunction {
 public:
  LinregObjective(std::size_t n_data, Eigen::Index dim, double noise, std::uint64_t seed) {
    if (n_data < 1 || dim < 1 || noise < 0.0) throw NumericalError("linreg_synthetic: bad sizes or noise");
    Rng rng(seed);
    x_.resize(static_cast<Eigen::Index>(n_data), dim);
    for (Eigen::Index i = 0; i < x_.rows(); ++i)
      for (Eigen::Index j = 0; j < dim; ++j) x_(i, j) = rng.normal();
    truth_ = rng.normal_vec(dim);
    y_ = x_ * truth_;
    for (Eigen::Index i = 0; i < y_.size(); ++i) y_(i) += noise * rng.normal();
  }

  Eigen::Index dim() const override { return x_.cols(); }
  double value(const Vec& t) const override { return -0.5 * (y_ - x_ * t).squaredNorm() / x_.rows(); }
  Vec gradient(const Vec& t) const override { return x_.transpose() * (y_ - x_ * t) / double(x_.rows()); }
  std::optional<Mat> hessian(const Vec&) const override {
    return Mat(-(x_.transpose() * x_) / double(x_.rows()));
  }

  std::size_t data_size() const override { return static_cast<std::size_t>(x_.rows()); }

  /// Indices of a seeded batch, drawn without replacement (partial shuffle).
  std::vector<std::size_t> batch_indices(std::uint64_t batch_seed, std::size_t batch_size) const {
    const std::size_t n = data_size();
    batch_size = std::min(batch_size, n);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(batch_seed);
    for (std::size_t i = 0; i < batch_size; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(batch_size);
    return idx;
  }

  Vec batch_gradient(const Vec& t, std::uint64_t batch_seed, std::size_t batch_size) const override {
    const auto idx = batch_indices(batch_seed, batch_size);
    Vec g = Vec::Zero(dim());
    for (std::size_t i : idx) {
      const auto row = x_.row(static_cast<Eigen::Index>(i));
      g += row.transpose() * (y_(static_cast<Eigen::Index>(i)) - row.dot(t));
    }
    return g / double(idx.size());
  }

  const Mat& inputs() const { return x_; }
  const Vec& targets() const { return y_; }
  const Vec& true_weights() const { return truth_; }
  Vec argmax() const { return (x_.transpose() * x_).ldlt().solve(x_.transpose() * y_); }

 private:
  Mat x_;
  Vec y_;
  Vec truth_;
};

/// Monotone transform exp(U) of another objective; used to check rank invariance.
class ExpTransformedObjective final : public ObjectiveFunction {
 public:
  explicit ExpTransformedObjective(std::shared_ptr<const ObjectiveFunction> inner) : inner_(std::move(inner)) {}
  Eigen::Index dim() const override { return inner_->dim(); }
  double value(const Vec& t) const override { return std::exp(inner_->value(t)); }
  Vec gradient(const Vec& t) const override { return value(t) * inner_->gradient(t); }

 private:
  std::shared_ptr<const ObjectiveFunction> inner_;
};

/// Central-difference check of gradient (and Hessian, when provided).
struct DerivativeCheck {
  double gradient_rel_err = 0.0;
  double hessian_rel_err = 0.0;
};

inline DerivativeCheck check_derivatives(const ObjectiveFunction& obj, const Vec& theta, double h = 1e-6) {
  const Eigen::Index n = obj.dim();
  Vec fd(n);
  Mat fdh(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec tp = theta, tm = theta;
    tp(i) += h;
    tm(i) -= h;
    fd(i) = (obj.value(tp) - obj.value(tm)) / (2.0 * h);
    fdh.col(i) = (obj.gradient(tp) - obj.gradient(tm)) / (2.0 * h);
  }
  DerivativeCheck out;
  const Vec g = obj.gradient(theta);
  out.gradient_rel_err = (g - fd).norm() / std::max(1.0, g.norm());
  if (auto hs = obj.hessian(theta)) {
    out.hessian_rel_err = (*hs - symmetrize(fdh)).norm() / std::max(1.0, hs->norm());
  }
  return out;
}

}  // namespace fmb
