#pragma once

// Single-vector optimizers. Each step returns the update together with its
// metric/force/bias/noise decomposition, so delta = M f + C beta + gamma + xi.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "fmb/objective.hpp"
#include "fmb/price.hpp"
#include "fmb/rng.hpp"

namespace fmb {

struct OptimizerState {
  Vec theta;
  Vec momentum;
  Vec second_moment;
  Mat inv_hessian;  // quasi-Newton estimate B
  long step = 0;
  std::uint64_t rng_seed = 0;

  // Curvature pair from the previous quasi-Newton step.
  Vec prev_grad;
  Vec prev_delta;
  bool has_pair = false;

  static OptimizerState init(Vec theta0, std::uint64_t seed = 0) {
    OptimizerState s;
    const Eigen::Index n = theta0.size();
    s.theta = std::move(theta0);
    s.momentum = Vec::Zero(n);
    s.second_moment = Vec::Zero(n);
    s.inv_hessian = Mat::Identity(n, n);
    s.rng_seed = seed;
    return s;
  }

  /// Generator for the current step; a pure function of (seed, step).
  Rng step_rng() const { return Rng(rng_seed).split(static_cast<std::uint64_t>(step)); }
};

struct StepReport {
  long step = 0;
  std::uint64_t seed = 0;
  Vec delta_theta;
  FmbDecomposition fmb;
  std::map<std::string, double> diagnostics;

  const Mat& M() const { return fmb.M; }
  const Vec& f() const { return fmb.f; }
  Vec b() const { return fmb.bias(); }
  const Vec& xi() const { return fmb.xi; }
  double predicted_gain() const { return fmb.f.dot(fmb.M * fmb.f); }
  double reconstruction_error() const {
    return delta_theta.size() ? (delta_theta - fmb.reconstruct()).lpNorm<Eigen::Infinity>() : 0.0;
  }
};

struct StepResult {
  OptimizerState state;
  StepReport report;
};

namespace detail {

inline Vec checked_gradient(const ObjectiveFunction& obj, const Vec& theta) {
  if (theta.size() != obj.dim()) throw NumericalError("theta has the wrong dimension for the objective");
  Vec g = obj.gradient(theta);
  if (!g.allFinite()) throw NumericalError("non-finite gradient");
  return g;
}

inline Mat checked_hessian(const ObjectiveFunction& obj, const Vec& theta) {
  auto h = obj.hessian(theta);
  if (!h) throw NumericalError("objective provides no Hessian");
  if (!h->allFinite()) throw NumericalError("non-finite Hessian");
  return *h;
}

/// Fills the bookkeeping, checks finiteness and advances the state.
inline StepResult finish(const OptimizerState& st, Vec delta, Mat M, Vec f, Mat C, Vec beta, Vec gamma, Vec xi,
                         std::map<std::string, double> diag = {}) {
  if (!delta.allFinite()) throw NumericalError("non-finite update");
  StepResult r{st, {}};
  r.report.step = st.step;
  r.report.seed = st.rng_seed;
  r.report.fmb = FmbDecomposition{std::move(M), std::move(f), std::move(C), std::move(beta), std::move(gamma),
                                  std::move(xi)};
  r.report.delta_theta = std::move(delta);
  r.report.diagnostics = std::move(diag);
  r.report.diagnostics["predicted_gain"] = r.report.predicted_gain();
  r.state.theta = st.theta + r.report.delta_theta;
  r.state.step = st.step + 1;
  return r;
}

inline Mat zeros(Eigen::Index n) { return Mat::Zero(n, n); }
inline Vec zvec(Eigen::Index n) { return Vec::Zero(n); }

inline void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw NumericalError(std::string(what) + " must be positive");
}

}  // namespace detail

/// Plain gradient ascent: M = eta I, f = grad U.
inline StepResult step_gd(const ObjectiveFunction& obj, const OptimizerState& st, double eta) {
  detail::require_positive(eta, "eta");
  const Vec g = detail::checked_gradient(obj, st.theta);
  const Eigen::Index n = g.size();
  return detail::finish(st, eta * g, eta * Mat::Identity(n, n), g, detail::zeros(n), detail::zvec(n),
                        detail::zvec(n), detail::zvec(n));
}

/// L2 pull toward the origin, reported as a constant bias gamma = -eta lambda theta.
inline StepResult step_regularized(const ObjectiveFunction& obj, const OptimizerState& st, double eta,
                                   double lambda) {
  detail::require_positive(eta, "eta");
  if (!(lambda >= 0.0)) throw NumericalError("lambda must be nonnegative");
  const Vec g = detail::checked_gradient(obj, st.theta);
  const Eigen::Index n = g.size();
  const Vec pull = -eta * lambda * st.theta;
  return detail::finish(st, eta * g + pull, eta * Mat::Identity(n, n), g, detail::zeros(n), detail::zvec(n), pull,
                        detail::zvec(n));
}

/// Newton step for maximization, metric (-H)^-1 after eigenvalue repair.
inline StepResult step_newton(const ObjectiveFunction& obj, const OptimizerState& st) {
  const Vec g = detail::checked_gradient(obj, st.theta);
  const Mat h = detail::checked_hessian(obj, st.theta);
  const RepairedMetric rep = repair_pd(-h, 1e-8, "non-concave locus");
  const Eigen::Index n = g.size();
  Mat M = symmetrize(rep.inverse);
  const Vec delta = M * g;
  return detail::finish(st, delta, std::move(M), g, detail::zeros(n), detail::zvec(n), detail::zvec(n),
                        detail::zvec(n), {{"flipped", rep.flipped}, {"clamped", rep.clamped}});
}

/// Fisher-type metric: G = -E[H] under Boltzmann weights exp(b U), estimated by
/// self-normalized importance sampling from N(theta, scale^2 I).
struct FisherEstimate {
  Mat G;
  double ess = 0.0;
};

inline FisherEstimate boltzmann_fisher(const ObjectiveFunction& obj, const Vec& theta, double boltzmann_b,
                                       int n_samples, double proposal_scale, Rng& rng) {
  detail::require_positive(boltzmann_b, "boltzmann_b");
  if (n_samples < 1) throw NumericalError("n_samples must be at least 1");
  if (!(proposal_scale >= 0.0)) throw NumericalError("proposal_scale must be nonnegative");
  const Eigen::Index n = theta.size();
  std::vector<Vec> xs;
  Vec logw(n_samples);
  for (int k = 0; k < n_samples; ++k) {
    const Vec z = rng.normal_vec(n);
    Vec x = theta + proposal_scale * z;
    const double u = obj.value(x);
    if (!std::isfinite(u)) throw NumericalError("non-finite objective value in importance sample");
    // log N(x; theta, s^2 I) up to a constant is -|z|^2/2.
    logw(k) = boltzmann_b * u + (proposal_scale > 0.0 ? 0.5 * z.squaredNorm() : 0.0);
    xs.push_back(std::move(x));
  }
  const Vec wts = (logw.array() - logw.maxCoeff()).exp().matrix();
  const Vec p = wts / wts.sum();
  FisherEstimate out;
  out.ess = 1.0 / p.squaredNorm();
  if (out.ess < std::min(5.0, double(n_samples)) - 1e-9) throw NumericalError("degenerate importance weights");
  out.G = Mat::Zero(n, n);
  for (int k = 0; k < n_samples; ++k) out.G -= p(k) * detail::checked_hessian(obj, xs[k]);
  out.G = symmetrize(out.G);
  return out;
}

inline StepResult step_natural_gradient(const ObjectiveFunction& obj, const OptimizerState& st, double eta,
                                        double boltzmann_b, int n_samples, double proposal_scale) {
  detail::require_positive(eta, "eta");
  const Vec g = detail::checked_gradient(obj, st.theta);
  Rng rng = st.step_rng();
  const FisherEstimate fe = boltzmann_fisher(obj, st.theta, boltzmann_b, n_samples, proposal_scale, rng);
  const RepairedMetric rep = repair_pd(fe.G, 1e-8, "non-concave locus");
  const Eigen::Index n = g.size();
  Mat M = symmetrize(eta * rep.inverse);
  const Vec delta = M * g;
  return detail::finish(st, delta, std::move(M), g, detail::zeros(n), detail::zvec(n), detail::zvec(n),
                        detail::zvec(n), {{"ess", fe.ess}, {"flipped", rep.flipped}, {"clamped", rep.clamped}});
}

/// Applies the pending BFGS inverse update from the stored curvature pair.
/// Idempotent: the pair is consumed.
inline OptimizerState bfgs_refresh(const ObjectiveFunction& obj, const OptimizerState& st, bool* skipped = nullptr) {
  OptimizerState out = st;
  if (skipped) *skipped = false;
  if (!st.has_pair) return out;
  out.has_pair = false;
  const Vec g = detail::checked_gradient(obj, st.theta);
  const Vec& s = st.prev_delta;
  const Vec y = st.prev_grad - g;  // curvature of -U along s
  const double sy = s.dot(y);
  if (!(sy > 1e-12 * s.norm() * y.norm())) {
    if (skipped) *skipped = true;
    return out;
  }
  const double rho = 1.0 / sy;
  const Eigen::Index n = s.size();
  const Mat left = Mat::Identity(n, n) - rho * s * y.transpose();
  out.inv_hessian = symmetrize(left * st.inv_hessian * left.transpose() + rho * s * s.transpose());
  return out;
}

/// Quasi-Newton ascent: M = eta B with B the running inverse-curvature estimate.
inline StepResult step_bfgs(const ObjectiveFunction& obj, const OptimizerState& st, double eta) {
  detail::require_positive(eta, "eta");
  bool skipped = false;
  OptimizerState cur = bfgs_refresh(obj, st, &skipped);
  if (cur.inv_hessian.rows() != cur.theta.size()) cur.inv_hessian = Mat::Identity(cur.theta.size(), cur.theta.size());
  const Vec g = detail::checked_gradient(obj, cur.theta);
  const Eigen::Index n = g.size();
  Mat M = eta * cur.inv_hessian;
  const Vec delta = M * g;
  StepResult r = detail::finish(cur, delta, std::move(M), g, detail::zeros(n), detail::zvec(n), detail::zvec(n),
                                detail::zvec(n), {{"update_skipped", skipped ? 1.0 : 0.0}});
  r.state.prev_grad = g;
  r.state.prev_delta = r.report.delta_theta;
  r.state.has_pair = true;
  return r;
}

enum class Potential { euclidean, entropy };
enum class MirrorMode { first_order, exact };

/// Mirror ascent. Euclidean potential gives gradient ascent. The entropy
/// potential lives on the open simplex: the first-order metric is
/// eta (Diag(theta) - theta theta^T); the exact dual-map update is normalized
/// multiplicative weights, with its difference from first order reported as gamma.
inline StepResult step_mirror(const ObjectiveFunction& obj, const OptimizerState& st, double eta, Potential pot,
                              MirrorMode mode = MirrorMode::first_order) {
  detail::require_positive(eta, "eta");
  const Vec g = detail::checked_gradient(obj, st.theta);
  const Eigen::Index n = g.size();
  if (pot == Potential::euclidean)
    return detail::finish(st, eta * g, eta * Mat::Identity(n, n), g, detail::zeros(n), detail::zvec(n),
                          detail::zvec(n), detail::zvec(n), {{"mirror_gap", 0.0}});

  const Vec& t = st.theta;
  if ((t.array() <= 0.0).any() || std::abs(t.sum() - 1.0) > 1e-9)
    throw NumericalError("theta outside the open simplex (entropy potential domain)");
  Mat M = eta * (Mat(t.asDiagonal()) - t * t.transpose());
  const Vec first = M * g;
  Vec logits = t.array().log().matrix() + eta * g;
  const Vec e = (logits.array() - logits.maxCoeff()).exp().matrix();
  const Vec exact = e / e.sum() - t;
  const Vec gap = exact - first;
  if (mode == MirrorMode::first_order)
    return detail::finish(st, first, std::move(M), g, detail::zeros(n), detail::zvec(n), detail::zvec(n),
                          detail::zvec(n), {{"mirror_gap", gap.norm()}});
  return detail::finish(st, exact, std::move(M), g, detail::zeros(n), detail::zvec(n), gap, detail::zvec(n),
                        {{"mirror_gap", gap.norm()}});
}

/// Heavy-ball momentum with m_t = (1-u) g + u m_{t-1}, delta = eta m_t.
inline StepResult step_polyak(const ObjectiveFunction& obj, const OptimizerState& st, double eta, double u) {
  detail::require_positive(eta, "eta");
  if (!(u >= 0.0 && u < 1.0)) throw NumericalError("momentum u must lie in [0, 1)");
  const Vec g = detail::checked_gradient(obj, st.theta);
  const Eigen::Index n = g.size();
  const Vec m = (1.0 - u) * g + u * st.momentum;
  const Vec carry = eta * u * st.momentum;
  StepResult r = detail::finish(st, eta * m, eta * (1.0 - u) * Mat::Identity(n, n), g, detail::zeros(n),
                                detail::zvec(n), carry, detail::zvec(n));
  r.state.momentum = m;
  return r;
}

/// Adam. The metric is diagonal, eta (1-u) / (sqrt(v) + c); the momentum
/// carried from the previous step enters as C beta with C = M and
/// beta = u m_{t-1} / (1-u). With bias correction the metric gains the
/// factor 1/(1-u^t) and v is replaced by v / (1-s^t).
inline StepResult step_adam(const ObjectiveFunction& obj, const OptimizerState& st, double eta, double u, double s,
                            double c, bool bias_corrected = false) {
  detail::require_positive(eta, "eta");
  detail::require_positive(c, "c");
  if (!(u >= 0.0 && u < 1.0) || !(s >= 0.0 && s < 1.0)) throw NumericalError("u and s must lie in [0, 1)");
  const Vec g = detail::checked_gradient(obj, st.theta);
  const Eigen::Index n = g.size();
  const Vec v = (1.0 - s) * g.cwiseProduct(g) + s * st.second_moment;
  const Vec m = (1.0 - u) * g + u * st.momentum;

  Vec scale;
  double mcorr = 1.0;
  if (bias_corrected) {
    const double t = double(st.step + 1);
    mcorr = 1.0 / (1.0 - std::pow(u, t));
    const Vec vhat = v / (1.0 - std::pow(s, t));
    scale = eta * (1.0 - u) * mcorr * (vhat.cwiseSqrt().array() + c).inverse().matrix();
  } else {
    scale = eta * (1.0 - u) * (v.cwiseSqrt().array() + c).inverse().matrix();
  }
  Mat M = scale.asDiagonal();
  const Vec beta = u * st.momentum / (1.0 - u);
  const Vec delta = M * g + M * beta;

  std::map<std::string, double> diag;
  if (!bias_corrected) {
    const Vec closed_form = eta * m.cwiseQuotient((v.cwiseSqrt().array() + c).matrix());
    diag["adam_identity_err"] = (delta - closed_form).lpNorm<Eigen::Infinity>();
  }
  Mat C = M;
  StepResult r = detail::finish(st, delta, std::move(M), g, std::move(C), beta, detail::zvec(n), detail::zvec(n),
                                std::move(diag));
  r.state.momentum = m;
  r.state.second_moment = v;
  return r;
}

enum class SgldMetric { identity, inverse_hessian };

/// Euler-Maruyama Langevin step with an explicit standard-normal draw eps:
/// delta = eta M0 grad U + sqrt(2 eta M0) eps. eps = 0 recovers the drift alone.
inline StepResult step_sgld(const ObjectiveFunction& obj, const OptimizerState& st, double eta, SgldMetric mode,
                            const Vec& eps) {
  detail::require_positive(eta, "eta");
  const Vec g = detail::checked_gradient(obj, st.theta);
  const Eigen::Index n = g.size();
  if (eps.size() != n) throw NumericalError("noise draw has the wrong dimension");
  Vec noise;
  Mat base;
  if (mode == SgldMetric::identity) {
    base = Mat::Identity(n, n);
    noise = std::sqrt(2.0 * eta) * eps;
  } else {
    base = symmetrize(repair_pd(-detail::checked_hessian(obj, st.theta), 1e-8, "non-concave locus").inverse);
    noise = sqrt_psd(2.0 * eta * base) * eps;
  }
  Mat M = eta * base;
  const Vec drift = M * g;
  const double noise_trace = 2.0 * M.trace();
  return detail::finish(st, drift + noise, std::move(M), g, detail::zeros(n), detail::zvec(n), detail::zvec(n),
                        noise, {{"noise_trace", noise_trace}});
}

inline StepResult step_sgld(const ObjectiveFunction& obj, const OptimizerState& st, double eta, SgldMetric mode) {
  Rng rng = st.step_rng();
  return step_sgld(obj, st, eta, mode, rng.normal_vec(st.theta.size()));
}

/// Mini-batch gradient ascent: f is the full gradient, xi = eta (g_batch - grad U).
inline StepResult step_sgd(const ObjectiveFunction& obj, const OptimizerState& st, double eta,
                           std::size_t batch_size) {
  detail::require_positive(eta, "eta");
  if (!obj.has_batches()) throw NumericalError("objective does not support mini-batches");
  if (batch_size < 1) throw NumericalError("batch_size must be at least 1");
  std::map<std::string, double> diag;
  if (batch_size > obj.data_size()) {
    diag["batch_clamped"] = double(batch_size);
    batch_size = obj.data_size();
  }
  diag["batch_size"] = double(batch_size);
  const Vec g = detail::checked_gradient(obj, st.theta);
  Rng rng = st.step_rng();
  const Vec gb = obj.batch_gradient(st.theta, rng.next_u64(), batch_size);
  if (!gb.allFinite()) throw NumericalError("non-finite gradient");
  const Eigen::Index n = g.size();
  return detail::finish(st, eta * gb, eta * Mat::Identity(n, n), g, detail::zeros(n), detail::zvec(n),
                        detail::zvec(n), eta * (gb - g), std::move(diag));
}

// ---------------------------------------------------------------------------
// Dispatch by name, used by configuration-driven runners.

enum class OptimizerKind { gd, regularized, newton, natural_gradient, bfgs, mirror, polyak, adam, sgld, sgd };

inline constexpr std::array<std::pair<std::string_view, OptimizerKind>, 10> kOptimizerIds{{
    {"gd", OptimizerKind::gd},
    {"regularized", OptimizerKind::regularized},
    {"newton", OptimizerKind::newton},
    {"natural_gradient", OptimizerKind::natural_gradient},
    {"bfgs", OptimizerKind::bfgs},
    {"mirror", OptimizerKind::mirror},
    {"polyak", OptimizerKind::polyak},
    {"adam", OptimizerKind::adam},
    {"sgld", OptimizerKind::sgld},
    {"sgd", OptimizerKind::sgd},
}};

inline bool is_stochastic(OptimizerKind k) {
  return k == OptimizerKind::natural_gradient || k == OptimizerKind::sgld || k == OptimizerKind::sgd;
}

struct OptimizerParams {
  double eta = 0.1;
  double lambda = 0.0;
  double u = 0.9;
  double s = 0.999;
  double c = 1e-8;
  bool bias_corrected = false;
  double boltzmann_b = 1.0;
  int n_samples = 64;
  double proposal_scale = 0.5;
  SgldMetric metric_mode = SgldMetric::identity;
  Potential potential = Potential::euclidean;
  MirrorMode mirror_mode = MirrorMode::first_order;
  std::size_t batch_size = 1;
};

inline StepResult step(const ObjectiveFunction& obj, const OptimizerState& st, OptimizerKind kind,
                       const OptimizerParams& p) {
  switch (kind) {
    case OptimizerKind::gd: return step_gd(obj, st, p.eta);
    case OptimizerKind::regularized: return step_regularized(obj, st, p.eta, p.lambda);
    case OptimizerKind::newton: return step_newton(obj, st);
    case OptimizerKind::natural_gradient:
      return step_natural_gradient(obj, st, p.eta, p.boltzmann_b, p.n_samples, p.proposal_scale);
    case OptimizerKind::bfgs: return step_bfgs(obj, st, p.eta);
    case OptimizerKind::mirror: return step_mirror(obj, st, p.eta, p.potential, p.mirror_mode);
    case OptimizerKind::polyak: return step_polyak(obj, st, p.eta, p.u);
    case OptimizerKind::adam: return step_adam(obj, st, p.eta, p.u, p.s, p.c, p.bias_corrected);
    case OptimizerKind::sgld: return step_sgld(obj, st, p.eta, p.metric_mode);
    case OptimizerKind::sgd: return step_sgd(obj, st, p.eta, p.batch_size);
  }
  throw NumericalError("unknown optimizer");
}

}  // namespace fmb
