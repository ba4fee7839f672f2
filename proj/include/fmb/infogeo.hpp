#pragma once

// Separation measures between two probability vectors q -> q' and the
// conserved-likelihood (d'Alembert) balance. Natural logs throughout.

#include <cmath>

#include "fmb/price.hpp"

namespace fmb {

/// A probability vector and its update; both validated on construction.
struct DistributionPair {
  Vec q;
  Vec q_prime;

  DistributionPair(Vec q_, Vec q_prime_) : q(std::move(q_)), q_prime(std::move(q_prime_)) {
    require_probability(q, "q");
    require_probability(q_prime, "q_prime");
    if (q.size() != q_prime.size()) throw NumericalError("q and q_prime differ in length");
  }

  Vec delta() const { return q_prime - q; }
};

namespace detail {
inline void require_no_mass_creation(const DistributionPair& p) {
  for (Eigen::Index i = 0; i < p.q.size(); ++i)
    if (p.q(i) == 0.0 && p.q_prime(i) != 0.0) throw NumericalError("unsupported mass creation");
}
}  // namespace detail

/// Squared discrete Fisher-Rao step: sum (dq_i)^2 / q_i.
inline double fisher_rao_sq(const DistributionPair& p) {
  detail::require_no_mass_creation(p);
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.q.size(); ++i) {
    if (p.q(i) == 0.0) continue;
    const double d = p.q_prime(i) - p.q(i);
    s += d * d / p.q(i);
  }
  return s;
}

/// KL(p || r) in nats; 0 log 0 = 0.
inline double kl(const Vec& p, const Vec& r) {
  require_probability(p, "p");
  require_probability(r, "r");
  if (p.size() != r.size()) throw NumericalError("kl: length mismatch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) == 0.0) continue;
    if (r(i) == 0.0) throw NumericalError("infinite divergence");
    s += p(i) * std::log(p(i) / r(i));
  }
  return s;
}

/// Jeffreys divergence KL(q'||q) + KL(q||q').
inline double jeffreys(const DistributionPair& p) { return kl(p.q_prime, p.q) + kl(p.q, p.q_prime); }

/// Same quantity through the Malthusian parameter: dq . log(q'/q).
inline double jeffreys_malthusian(const DistributionPair& p) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.q.size(); ++i) {
    const double a = p.q(i), b = p.q_prime(i);
    if (a == 0.0 && b == 0.0) continue;
    if (a == 0.0 || b == 0.0) throw NumericalError("infinite divergence");
    s += (b - a) * std::log(b / a);
  }
  return s;
}

/// Square-root coordinates r = sqrt(q); r lies on the unit sphere.
inline Vec sqrt_embed(const Vec& q) {
  require_probability(q, "q");
  return q.cwiseSqrt();
}

/// 4 ||sqrt(q') - sqrt(q)||^2, the sphere form of the Fisher-Rao step.
inline double fisher_rao_sphere_sq(const DistributionPair& p) {
  return 4.0 * (p.q_prime.cwiseSqrt() - p.q.cwiseSqrt()).squaredNorm();
}

struct DalembertTerms {
  double direct = 0.0;    // dq . L, L = q'/q
  double inertial = 0.0;  // q' . dL with post-update L' = 1
  double residual() const { return direct + inertial; }
};

inline DalembertTerms dalembert_terms(const DistributionPair& p) {
  detail::require_no_mass_creation(p);
  DalembertTerms t;
  for (Eigen::Index i = 0; i < p.q.size(); ++i) {
    if (p.q(i) == 0.0) continue;
    const double L = p.q_prime(i) / p.q(i);
    t.direct += (p.q_prime(i) - p.q(i)) * L;
    t.inertial += p.q_prime(i) * (1.0 - L);
  }
  return t;
}

inline double dalembert_residual(const DistributionPair& p) { return dalembert_terms(p).residual(); }

}  // namespace fmb
