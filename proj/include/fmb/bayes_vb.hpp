#pragma once

// Discrete Bayesian updating, the evidence lower bound and its Price-equation
// split into direct and inertial parts, and a mean-field variational fitter.

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "fmb/infogeo.hpp"

namespace fmb {

/// Prior q over m support points, log-likelihood of the data at each point,
/// and the parameter value of each point (m x n; may have zero columns).
struct DiscreteModel {
  Vec prior;
  Vec loglik;
  Mat grid;

  DiscreteModel(Vec prior_, Vec loglik_, Mat grid_ = Mat())
      : prior(std::move(prior_)), loglik(std::move(loglik_)), grid(std::move(grid_)) {
    require_probability(prior, "prior");
    if (loglik.size() != prior.size()) throw NumericalError("loglik and prior differ in length");
    if (!loglik.allFinite()) throw NumericalError("loglik must be finite");
    if (grid.size() == 0) grid = Mat(prior.size(), 0);
    if (grid.rows() != prior.size()) throw NumericalError("grid rows must match the support size");
  }

  Eigen::Index size() const { return prior.size(); }
};

struct BayesResult {
  Vec posterior;
  Vec normalized_L;  // posterior / prior, with prior . L = 1
  double log_evidence = 0.0;
};

/// log sum_i q_i exp(loglik_i) with max subtraction; -inf if q has no mass.
inline double log_evidence(const DiscreteModel& m) {
  double amax = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (m.prior(i) > 0.0) amax = std::max(amax, std::log(m.prior(i)) + m.loglik(i));
  if (!std::isfinite(amax)) return amax;
  double s = 0.0;
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (m.prior(i) > 0.0) s += std::exp(std::log(m.prior(i)) + m.loglik(i) - amax);
  return amax + std::log(s);
}

inline BayesResult bayes_update(const DiscreteModel& m) {
  BayesResult r;
  r.log_evidence = log_evidence(m);
  if (!std::isfinite(r.log_evidence)) throw NumericalError("evidence underflow");
  r.normalized_L = (m.loglik.array() - r.log_evidence).exp().matrix();
  r.posterior = m.prior.cwiseProduct(r.normalized_L);
  return r;
}

/// dq . L for the Bayes update; equals the squared Fisher-Rao step.
inline double partial_likelihood_gain(const DiscreteModel& m) {
  const BayesResult r = bayes_update(m);
  return (r.posterior - m.prior).dot(r.normalized_L);
}

struct ElboReport {
  double elbo = 0.0;
  double direct_term = 0.0;    // (qhat - q) . loglik
  double inertial_term = 0.0;  // -KL(qhat || q)
  double log_evidence = 0.0;
  double kl_to_true = 0.0;     // KL(qhat || posterior)
};

namespace detail {
inline void require_support(const DiscreteModel& m, const Vec& qhat) {
  require_probability(qhat, "qhat");
  if (qhat.size() != m.size()) throw NumericalError("qhat and model differ in length");
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (qhat(i) > 0.0 && m.prior(i) == 0.0) throw NumericalError("qhat support exceeds prior support");
}
}  // namespace detail

inline ElboReport elbo(const DiscreteModel& m, const Vec& qhat) {
  detail::require_support(m, qhat);
  const BayesResult b = bayes_update(m);
  ElboReport r;
  const double complexity = kl(qhat, m.prior);
  r.elbo = qhat.dot(m.loglik) - complexity;
  r.direct_term = (qhat - m.prior).dot(m.loglik);
  r.inertial_term = -complexity;
  r.log_evidence = b.log_evidence;
  r.kl_to_true = kl(qhat, b.posterior);
  return r;
}

struct ElboDelta {
  double direct = 0.0;
  double inertial = 0.0;
  double total() const { return direct + inertial; }
};

/// Price split of elbo(qhat) - elbo(prior): direct force of the data plus the
/// inertial cost of leaving the prior.
inline ElboDelta elbo_delta_price(const DiscreteModel& m, const Vec& qhat) {
  detail::require_support(m, qhat);
  return {(qhat - m.prior).dot(m.loglik), -kl(qhat, m.prior)};
}

/// Free-energy change: complexity minus accuracy, the negated ELBO change.
inline double free_energy_delta(const DiscreteModel& m, const Vec& qhat) {
  detail::require_support(m, qhat);
  return kl(qhat, m.prior) - (qhat - m.prior).dot(m.loglik);
}

/// First variation of the ELBO along a zero-sum displacement:
/// (loglik - log(qhat/q)) . dq.
inline double elbo_variation(const DiscreteModel& m, const Vec& qhat, const Vec& dq) {
  detail::require_support(m, qhat);
  double s = 0.0;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (qhat(i) == 0.0) continue;
    s += (m.loglik(i) - std::log(qhat(i) / m.prior(i))) * dq(i);
  }
  return s;
}

/// Mean-field product of softmax categoricals. The support is indexed in
/// row-major mixed radix over the factor sizes (last factor fastest).
class VariationalFamily {
 public:
  explicit VariationalFamily(std::vector<int> factor_sizes) : sizes_(std::move(factor_sizes)) {
    if (sizes_.empty()) throw NumericalError("variational family needs at least one factor");
    for (int k : sizes_)
      if (k < 1) throw NumericalError("factor sizes must be positive");
  }

  static VariationalFamily saturated(Eigen::Index m) { return VariationalFamily({static_cast<int>(m)}); }

  const std::vector<int>& factor_sizes() const { return sizes_; }
  Eigen::Index support_size() const {
    return std::accumulate(sizes_.begin(), sizes_.end(), Eigen::Index{1}, std::multiplies<>());
  }
  Eigen::Index num_params() const { return std::accumulate(sizes_.begin(), sizes_.end(), Eigen::Index{0}); }

  /// Per-factor softmax distributions.
  std::vector<Vec> factors(const Vec& phi) const {
    std::vector<Vec> out;
    Eigen::Index off = 0;
    for (int k : sizes_) {
      const Vec logits = phi.segment(off, k);
      const Vec e = (logits.array() - logits.maxCoeff()).exp().matrix();
      out.push_back(e / e.sum());
      off += k;
    }
    return out;
  }

  /// Digit of support index i in factor j.
  int digit(Eigen::Index i, std::size_t j) const {
    for (std::size_t k = sizes_.size(); k-- > j + 1;) i /= sizes_[k];
    return static_cast<int>(i % sizes_[j]);
  }

  Vec distribution(const Vec& phi) const {
    check(phi);
    const auto fs = factors(phi);
    Vec q(support_size());
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      double p = 1.0;
      for (std::size_t j = 0; j < sizes_.size(); ++j) p *= fs[j](digit(i, j));
      q(i) = p;
    }
    return q;
  }

  /// Tangent vectors dqhat/dphi_k as columns (support_size x num_params).
  Mat jacobian(const Vec& phi) const {
    const auto fs = factors(phi);
    const Vec q = distribution(phi);
    Mat jac = Mat::Zero(q.size(), num_params());
    Eigen::Index off = 0;
    for (std::size_t j = 0; j < sizes_.size(); ++j) {
      for (Eigen::Index i = 0; i < q.size(); ++i) {
        const int d = digit(i, j);
        for (int a = 0; a < sizes_[j]; ++a) jac(i, off + a) = q(i) * ((d == a ? 1.0 : 0.0) - fs[j](a));
      }
      off += sizes_[j];
    }
    return jac;
  }

  void check(const Vec& phi) const {
    if (phi.size() != num_params()) throw NumericalError("phi has the wrong length for this family");
    if (!phi.allFinite()) throw NumericalError("phi must be finite");
  }

 private:
  std::vector<int> sizes_;
};

/// Analytic ELBO gradient with respect to phi through the softmax Jacobian.
inline Vec elbo_gradient(const DiscreteModel& m, const VariationalFamily& fam, const Vec& phi) {
  const Vec q = fam.distribution(phi);
  const Mat jac = fam.jacobian(phi);
  Vec force(m.size());
  for (Eigen::Index i = 0; i < m.size(); ++i) force(i) = m.loglik(i) - std::log(q(i) / m.prior(i));
  return jac.transpose() * force;
}

struct VariationalFit {
  Vec phi;
  std::vector<ElboReport> trace;  // initial point plus one entry per accepted step
  double statics_residual = 0.0;  // max |dELBO/dphi_k| at the returned phi
};

/// Gradient ascent on phi with backtracking: each step starts at `rate` and
/// halves until the ELBO does not decrease. Stops early once no step helps.
inline VariationalFit variational_fit(const DiscreteModel& m, const VariationalFamily& fam, int steps,
                                      double rate, Vec phi0 = Vec()) {
  if (fam.support_size() != m.size()) throw NumericalError("support does not factorize over the family");
  if ((m.prior.array() <= 0.0).any()) throw NumericalError("variational fit needs a strictly positive prior");
  if (m.grid.cols() == static_cast<Eigen::Index>(fam.factor_sizes().size()) && fam.factor_sizes().size() > 1) {
    // Each grid coordinate must depend on its own factor digit only.
    for (std::size_t j = 0; j < fam.factor_sizes().size(); ++j) {
      std::vector<double> value(fam.factor_sizes()[j], std::numeric_limits<double>::quiet_NaN());
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        double& v = value[fam.digit(i, j)];
        if (std::isnan(v)) v = m.grid(i, j);
        else if (v != m.grid(i, j)) throw NumericalError("support does not factorize over the family");
      }
    }
  }
  if (steps < 0 || !(rate > 0.0)) throw NumericalError("variational_fit needs steps >= 0 and rate > 0");

  VariationalFit fit;
  fit.phi = phi0.size() ? phi0 : Vec::Zero(fam.num_params());
  fam.check(fit.phi);
  ElboReport current = elbo(m, fam.distribution(fit.phi));
  fit.trace.push_back(current);
  for (int s = 0; s < steps; ++s) {
    const Vec g = elbo_gradient(m, fam, fit.phi);
    if (g.lpNorm<Eigen::Infinity>() < 1e-14) break;
    double r = rate;
    bool accepted = false;
    for (int halvings = 0; halvings < 60; ++halvings, r *= 0.5) {
      const Vec trial = fit.phi + r * g;
      const ElboReport rep = elbo(m, fam.distribution(trial));
      if (rep.elbo >= current.elbo) {
        fit.phi = trial;
        current = rep;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    fit.trace.push_back(current);
  }
  fit.statics_residual = elbo_gradient(m, fam, fit.phi).lpNorm<Eigen::Infinity>();
  return fit;
}

}  // namespace fmb
