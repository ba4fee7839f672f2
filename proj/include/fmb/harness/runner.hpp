#pragma once

// Deterministic runners: each turns a validated config into a trace table.

#include <cmath>
#include <limits>
#include <string>

#include "fmb/harness/config.hpp"
#include "fmb/harness/table.hpp"

namespace fmb::harness {

/// Tolerance for the per-row reconstruction check on optimizer traces.
inline constexpr double kReconstructionTol = 1e-10;

namespace detail {

inline std::vector<double> run_row(long t, const Vec& theta, double u, const StepReport* rep) {
  std::vector<double> row{double(t)};
  for (Eigen::Index i = 0; i < theta.size(); ++i) row.push_back(theta(i));
  row.push_back(u);
  if (rep) {
    const double scale = std::max(1.0, rep->delta_theta.lpNorm<Eigen::Infinity>());
    const double err = rep->reconstruction_error();
    if (!(err <= kReconstructionTol * scale))
      throw VerificationError("step " + std::to_string(rep->step) + " violates delta = M f + b + xi (error " +
                           format_double(err) + ")");
    row.insert(row.end(), {rep->f().norm(), rep->predicted_gain(), rep->b().norm(), rep->xi().norm(), err});
  } else {
    row.insert(row.end(), {0.0, 0.0, 0.0, 0.0, 0.0});
  }
  return row;
}

inline std::optional<Vec> known_argmax(const ObjectiveSpec& spec, const ObjectiveFunction& obj) {
  if (auto q = dynamic_cast<const QuadraticObjective*>(&obj)) return q->argmax();
  if (auto l = dynamic_cast<const LinregObjective*>(&obj)) return l->argmax();
  if (spec.id == "rosenbrock_neg") return Vec::Ones(obj.dim());
  return std::nullopt;
}

}  // namespace detail

/// Optimizer trace: t, theta_i, U, f_norm, predicted_gain, b_norm, xi_norm,
/// recon_err. Row 0 is the starting point. With a lookahead section each
/// outer update adds a row with loop = 1.
inline Table run_optimizer(const ExperimentConfig& cfg) {
  const auto obj = cfg.objective.build();
  const Eigen::Index n = obj->dim();
  Table t;
  t.columns.push_back("t");
  for (Eigen::Index i = 0; i < n; ++i) t.columns.push_back("theta_" + std::to_string(i));
  for (const char* c : {"U", "f_norm", "predicted_gain", "b_norm", "xi_norm", "recon_err"}) t.columns.push_back(c);
  const std::uint64_t seed = cfg.seed.value_or(0);

  if (!cfg.lookahead) {
    OptimizerState st = OptimizerState::init(cfg.theta0, seed);
    t.add(detail::run_row(0, st.theta, obj->value(st.theta), nullptr));
    for (long long s = 0; s < cfg.steps; ++s) {
      StepResult r = step(*obj, st, cfg.optimizer.kind, cfg.optimizer.params);
      st = std::move(r.state);
      t.add(detail::run_row(st.step, st.theta, obj->value(st.theta), &r.report));
    }
    return t;
  }

  t.columns.push_back("loop");
  const auto& la = *cfg.lookahead;
  const LookaheadTrace tr = lookahead_meta(*obj, cfg.optimizer.kind, cfg.optimizer.params, la.inner_steps, la.alpha,
                                           static_cast<int>(cfg.steps), cfg.theta0, seed);
  auto row = detail::run_row(0, tr.outer[0], obj->value(tr.outer[0]), nullptr);
  row.push_back(1.0);
  t.add(std::move(row));
  std::size_t k = 0;
  for (std::size_t r = 1; r < tr.outer.size(); ++r) {
    for (int j = 0; j < la.inner_steps; ++j, ++k) {
      auto inner = detail::run_row(long(k + 1), tr.inner[k], obj->value(tr.inner[k]), &tr.reports[k]);
      inner.push_back(0.0);
      t.add(std::move(inner));
    }
    auto outer = detail::run_row(long(k), tr.outer[r], obj->value(tr.outer[r]), nullptr);
    outer.push_back(1.0);
    t.add(std::move(outer));
  }
  return t;
}

/// Evolution-strategy trace: generation, bestU, meanU, trace_cov, eigmin_cov,
/// dist_to_argmax (nan when unknown), lande_gap.
inline Table run_es(const ExperimentConfig& cfg) {
  const auto obj = cfg.objective.build();
  const auto& e = cfg.es;
  const EsState init = EsState::init(e.mean0, e.sigma, cfg.seed.value_or(0), e.cov0);
  EsRates rates;
  rates.c_mu = e.c_mu;
  const EsRun run = es_optimize(*obj, init, e.generations, e.pop_size, rates, detail::known_argmax(cfg.objective, *obj));
  Table t{{"generation", "bestU", "meanU", "trace_cov", "eigmin_cov", "dist_to_argmax", "lande_gap"}, {}};
  for (const auto& r : run.trace)
    t.add({double(r.generation), r.best_u, r.mean_u, r.cov_trace, r.cov_eigmin, r.dist_to_argmax, r.lande_gap});
  return t;
}

/// Variational fit trace: step, elbo, direct, inertial, kl_to_true.
inline Table run_vb(const ExperimentConfig& cfg) {
  const auto& v = cfg.vb;
  const DiscreteModel model(v.prior, v.loglik, v.grid);
  const VariationalFamily fam(v.factor_sizes);
  const VariationalFit fit = variational_fit(model, fam, static_cast<int>(cfg.steps), v.rate);
  Table t{{"step", "elbo", "direct", "inertial", "kl_to_true"}, {}};
  for (std::size_t s = 0; s < fit.trace.size(); ++s) {
    const auto& r = fit.trace[s];
    t.add({double(s), r.elbo, r.direct_term, r.inertial_term, r.kl_to_true});
  }
  return t;
}

/// GP update at the training inputs: i, prior_mean, y, f, M_diag, delta_mean, posterior_mean.
inline Table run_gp(const ExperimentConfig& cfg) {
  const GpUpdate g = gp_update(cfg.gp.model, cfg.gp.y);
  Table t{{"i", "prior_mean", "y", "f", "M_diag", "delta_mean", "posterior_mean"}, {}};
  for (Eigen::Index i = 0; i < g.f.size(); ++i)
    t.add({double(i), cfg.gp.model.prior_mean(i), cfg.gp.y(i), g.f(i), g.M(i, i), g.delta_mean(i),
           g.posterior_mean(i)});
  return t;
}

/// Filter trace: t, x_i, trace_P, innovation_norm.
inline Table run_kalman(const ExperimentConfig& cfg) {
  const auto& k = cfg.kalman;
  std::vector<Vec> obs;
  if (k.simulate_steps > 0) {
    Rng rng(cfg.seed.value_or(0));
    obs = simulate_linear_system(k.sys, k.truth0, k.simulate_steps, rng).observations;
  } else {
    for (Eigen::Index i = 0; i < k.observations.rows(); ++i) obs.push_back(k.observations.row(i).transpose());
  }
  const auto trace = kalman_run(k.sys, k.init, obs);
  Table t;
  t.columns.push_back("t");
  for (Eigen::Index i = 0; i < k.init.x.size(); ++i) t.columns.push_back("x_" + std::to_string(i));
  t.columns.push_back("trace_P");
  t.columns.push_back("innovation_norm");
  for (const auto& r : trace) {
    std::vector<double> row{double(r.t)};
    for (Eigen::Index i = 0; i < r.state.x.size(); ++i) row.push_back(r.state.x(i));
    row.push_back(r.state.P.trace());
    row.push_back(r.innovation_norm);
    t.add(std::move(row));
  }
  return t;
}

/// Baldwin trace: generation, meanHamming, bestHamming, meanFitness, success.
inline Table run_baldwin(const ExperimentConfig& cfg) {
  const BaldwinResult r = baldwin_experiment(cfg.baldwin);
  Table t{{"generation", "meanHamming", "bestHamming", "meanFitness", "success"}, {}};
  for (std::size_t g = 0; g < r.mean_hamming.size(); ++g)
    t.add({double(g), r.mean_hamming[g], r.best_hamming[g], r.mean_fitness[g], double(r.target_is_modal[g])});
  return t;
}

inline Table run_table(const ExperimentConfig& cfg) {
  if (cfg.command == "run") return run_optimizer(cfg);
  if (cfg.command == "es") return run_es(cfg);
  if (cfg.command == "vb") return run_vb(cfg);
  if (cfg.command == "gp") return run_gp(cfg);
  if (cfg.command == "kalman") return run_kalman(cfg);
  if (cfg.command == "baldwin") return run_baldwin(cfg);
  throw ConfigError("command \"" + cfg.command + "\" does not produce a trace");
}

// ---------------------------------------------------------------------------
// Record-style commands on JSON inputs.

/// {"q", "theta", "w", "dtheta"}; w is raw fitness and is normalized here.
inline Population read_population(const json& doc) {
  std::vector<std::string> errors;
  Reader r(doc, "", errors);
  for (const char* key : {"q", "theta", "w"}) r.require(key);
  const Vec q = r.vector("q").value_or(Vec());
  const Mat theta = r.matrix("theta").value_or(Mat());
  const Vec w = r.vector("w").value_or(Vec());
  const std::optional<Mat> dtheta = r.matrix("dtheta");
  r.finish();
  if (!errors.empty()) throw ConfigError(join(errors, "; "));
  return Population(q, theta, w, dtheta);
}

inline json decompose_json(const Population& pop) {
  const FmbDecomposition d = fmb_decompose(pop);
  const PriceDecomposition p = price_update(pop);
  return {{"M", to_json(d.M)},
          {"f", to_json(d.f)},
          {"C", to_json(d.C)},
          {"beta", to_json(d.beta)},
          {"gamma", to_json(d.gamma)},
          {"xi", to_json(d.xi)},
          {"b", to_json(d.bias())},
          {"delta_mean", to_json(p.delta_mean)},
          {"selection_term", to_json(p.selection_term)},
          {"transmission_term", to_json(p.transmission_term)},
          {"expected_gain", expected_gain(d)}};
}

/// {"q", "q_prime"}.
inline DistributionPair read_pair(const json& doc) {
  std::vector<std::string> errors;
  Reader r(doc, "", errors);
  r.require("q");
  r.require("q_prime");
  const Vec q = r.vector("q").value_or(Vec());
  const Vec qp = r.vector("q_prime").value_or(Vec());
  r.finish();
  if (!errors.empty()) throw ConfigError(join(errors, "; "));
  return DistributionPair(q, qp);
}

/// All separation measures; a measure that is undefined for this pair (for
/// example KL across a support mismatch) is null, with the reason under "errors".
inline json diverge_json(const DistributionPair& p) {
  json out = json::object();
  json errors = json::object();
  auto put = [&](const char* key, auto&& fn) {
    try {
      out[key] = fn();
    } catch (const NumericalError& e) {
      out[key] = nullptr;
      errors[key] = e.what();
    }
  };
  put("fisher_rao_sq", [&] { return fisher_rao_sq(p); });
  put("kl_qprime_q", [&] { return kl(p.q_prime, p.q); });
  put("kl_q_qprime", [&] { return kl(p.q, p.q_prime); });
  put("jeffreys", [&] { return jeffreys(p); });
  put("fisher_rao_sphere_sq", [&] { return fisher_rao_sphere_sq(p); });
  put("dalembert_residual", [&] { return dalembert_residual(p); });
  if (!errors.empty()) out["errors"] = errors;
  return out;
}

}  // namespace fmb::harness
