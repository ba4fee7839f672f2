#pragma once

// Price equation over finite weighted populations, and the force-metric-bias
// decomposition of a population update into its sufficient statistics.

#include <cmath>
#include <optional>
#include <string>

#include "fmb/error.hpp"
#include "fmb/linalg.hpp"

namespace fmb {

inline constexpr double kProbabilityTol = 1e-12;

/// Throws unless q is a probability vector (entries >= 0, sum 1 within tol).
inline void require_probability(const Vec& q, const std::string& name, double tol = kProbabilityTol) {
  if (q.size() == 0) throw NumericalError(name + ": empty probability vector");
  if (!q.allFinite()) throw NumericalError(name + ": non-finite entry");
  if ((q.array() < 0.0).any()) throw NumericalError(name + ": negative probability");
  if (std::abs(q.sum() - 1.0) > tol) throw NumericalError(name + ": probabilities do not sum to 1");
}

/// Rescales nonnegative raw performance so that q . w = 1.
inline Vec normalize_fitness(const Vec& raw, const Vec& q) {
  require_probability(q, "q");
  if (raw.size() != q.size()) throw NumericalError("fitness and weights differ in length");
  if (!raw.allFinite() || (raw.array() < 0.0).any()) throw NumericalError("fitness must be finite and nonnegative");
  const double mean = q.dot(raw);
  if (!(mean > 0.0)) throw NumericalError("degenerate fitness");
  return raw / mean;
}

/// Weighted population: q over m variants, parameters theta (m x n),
/// relative fitness w with q . w = 1, and per-variant parameter changes.
class Population {
 public:
  /// Normalizes raw_fitness at construction; w is stored relative.
  Population(Vec q, Mat theta, const Vec& raw_fitness, std::optional<Mat> dtheta = std::nullopt)
      : q_(std::move(q)), theta_(std::move(theta)) {
    require_probability(q_, "q");
    if (theta_.rows() != q_.size()) throw NumericalError("theta rows must match length of q");
    if (!theta_.allFinite()) throw NumericalError("theta has non-finite entries");
    w_ = normalize_fitness(raw_fitness, q_);
    dtheta_ = dtheta ? std::move(*dtheta) : Mat::Zero(theta_.rows(), theta_.cols());
    if (dtheta_.rows() != theta_.rows() || dtheta_.cols() != theta_.cols())
      throw NumericalError("dtheta must have the shape of theta");
    if (!dtheta_.allFinite()) throw NumericalError("dtheta has non-finite entries");
  }

  Eigen::Index size() const { return q_.size(); }
  Eigen::Index dim() const { return theta_.cols(); }
  const Vec& q() const { return q_; }
  const Mat& theta() const { return theta_; }
  const Vec& w() const { return w_; }
  const Mat& dtheta() const { return dtheta_; }

  /// Updated weights q'_i = q_i w_i.
  Vec q_next() const { return q_.cwiseProduct(w_); }
  Vec mean() const { return weighted_mean(q_, theta_); }
  /// q'-weighted mean of theta + dtheta.
  Vec mean_next() const { return weighted_mean(q_next(), theta_ + dtheta_); }

 private:
  Vec q_;
  Mat theta_;
  Vec w_;
  Mat dtheta_;
};

struct PriceDecomposition {
  Vec delta_mean;         // change in the weighted mean, computed directly
  Vec selection_term;     // Cov(w, theta) = dq . theta
  Vec transmission_term;  // E(w dtheta) = q' . dtheta
};

/// Sufficient statistics of an update: delta = M f + C beta + gamma + xi.
struct FmbDecomposition {
  Mat M;
  Vec f;
  Mat C;
  Vec beta;
  Vec gamma;
  Vec xi;

  Vec bias() const { return C * beta + gamma; }
  Vec reconstruct() const { return M * f + bias() + xi; }
};

inline PriceDecomposition price_update(const Population& pop) {
  PriceDecomposition out;
  const Vec dq = pop.q_next() - pop.q();
  out.selection_term = pop.theta().transpose() * dq;
  out.transmission_term = pop.dtheta().transpose() * pop.q_next();
  out.delta_mean = pop.mean_next() - pop.mean();
  return out;
}

inline FmbDecomposition fmb_decompose(const Population& pop) {
  const Vec& q = pop.q();
  FmbDecomposition d;
  d.M = weighted_cov(q, pop.theta());
  d.f = pinv_solve(d.M, weighted_cov(q, pop.w(), pop.theta()));
  d.C = weighted_cov(q, pop.dtheta());
  d.beta = pinv_solve(d.C, weighted_cov(q, pop.w(), pop.dtheta()));
  d.gamma = weighted_mean(q, pop.dtheta());
  const PriceDecomposition p = price_update(pop);
  d.xi = p.delta_mean - (d.M * d.f + d.C * d.beta + d.gamma);
  return d;
}

/// Selection response Cov(w, theta); only defined when nothing is transmitted.
inline Vec lande_step(const Population& pop) {
  if ((pop.dtheta().array() != 0.0).any())
    throw NumericalError("lande_step requires dtheta = 0 (selection term only)");
  return weighted_cov(pop.q(), pop.w(), pop.theta());
}

/// f^T M f, the first-order gain in mean fitness.
inline double expected_gain(const FmbDecomposition& d) { return d.f.dot(d.M * d.f); }

}  // namespace fmb
