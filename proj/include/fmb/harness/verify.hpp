#pragma once

// Invariant suite behind the `verify` command: seeded random instances for
// every identity the library promises, with a measured worst-case error.

#include <functional>
#include <string>
#include <vector>

#include "fmb/fmb.hpp"

namespace fmb::harness {

struct CheckResult {
  std::string name;
  double worst = 0.0;
  double tolerance = 0.0;
  bool passed() const { return worst <= tolerance; }
};

namespace gen {

inline Vec simplex(Rng& rng, Eigen::Index m, double floor = 0.0) {
  Vec q(m);
  for (Eigen::Index i = 0; i < m; ++i) q(i) = floor - std::log(1.0 - rng.uniform());
  return q / q.sum();
}

inline Mat normal_mat(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Mat a(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) a(i, j) = rng.normal();
  return a;
}

inline Mat spd(Rng& rng, Eigen::Index n, double ridge = 0.5) {
  const Mat b = normal_mat(rng, n, n);
  return symmetrize(b * b.transpose() + ridge * Mat::Identity(n, n));
}

/// Random population; with `with_dtheta` the members also carry changes.
inline Population population(Rng& rng, Eigen::Index m, Eigen::Index n, bool with_dtheta = true) {
  const Vec q = simplex(rng, m);
  const Mat theta = normal_mat(rng, m, n);
  Vec raw(m);
  for (Eigen::Index i = 0; i < m; ++i) raw(i) = rng.uniform() + 0.01;
  if (!with_dtheta) return Population(q, theta, raw);
  return Population(q, theta, raw, Mat(0.3 * normal_mat(rng, m, n)));
}

inline int between(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(std::size_t(hi - lo + 1))); }

}  // namespace gen

inline std::vector<CheckResult> run_verify_suite(std::uint64_t seed = 20240601) {
  std::vector<CheckResult> out;
  const Rng root(seed);
  auto check = [&](const std::string& name, double tol, int stream, const std::function<double(Rng&)>& fn) {
    Rng rng = root.split(static_cast<std::uint64_t>(stream));
    double worst = 0.0;
    try {
      worst = fn(rng);
    } catch (const std::exception&) {
      worst = std::numeric_limits<double>::infinity();
    }
    out.push_back({name, worst, tol});
  };

  check("objective_derivatives", 1e-4, 1, [](Rng& rng) {
    std::vector<std::unique_ptr<ObjectiveFunction>> objs;
    objs.push_back(std::make_unique<QuadraticObjective>(gen::spd(rng, 3), rng.normal_vec(3)));
    objs.push_back(std::make_unique<RosenbrockNegObjective>(3));
    Mat centers(2, 2);
    centers << -1.0, 0.0, 1.5, 0.5;
    objs.push_back(std::make_unique<TwoBumpsObjective>(centers, Vec::Constant(2, 0.8), Vec()));
    objs.push_back(std::make_unique<LinregObjective>(50, 3, 0.1, 7));
    double worst = 0.0;
    for (const auto& o : objs) {
      for (int probe = 0; probe < 20; ++probe) {
        const Vec theta = rng.normal_vec(o->dim());
        const DerivativeCheck d = check_derivatives(*o, theta);
        worst = std::max({worst, d.gradient_rel_err, d.hessian_rel_err});
      }
    }
    return worst;
  });

  check("price_identity", 1e-12, 2, [](Rng& rng) {
    double worst = 0.0;
    for (int k = 0; k < 200; ++k) {
      const Population pop = gen::population(rng, gen::between(rng, 1, 50), gen::between(rng, 1, 5));
      const PriceDecomposition p = price_update(pop);
      worst = std::max(worst, (p.delta_mean - p.selection_term - p.transmission_term).lpNorm<Eigen::Infinity>());
    }
    return worst;
  });

  check("fmb_reconstruction", 1e-8, 3, [](Rng& rng) {
    double worst = 0.0;
    for (int k = 0; k < 200; ++k) {
      const Population pop = gen::population(rng, gen::between(rng, 2, 50), gen::between(rng, 1, 5));
      const FmbDecomposition d = fmb_decompose(pop);
      const Vec recon = d.M * d.f + d.C * d.beta + d.gamma;
      worst = std::max(worst, (recon - price_update(pop).delta_mean).lpNorm<Eigen::Infinity>());
    }
    return worst;
  });

  check("fisher_rao_and_dalembert", 1e-12, 4, [](Rng& rng) {
    double worst = 0.0;
    for (int k = 0; k < 200; ++k) {
      const Eigen::Index m = gen::between(rng, 2, 20);
      const DistributionPair p(gen::simplex(rng, m, 0.05), gen::simplex(rng, m, 0.05));
      const Vec w = p.q_prime.cwiseQuotient(p.q);
      const double var = p.q.dot((w.array() - 1.0).square().matrix());
      worst = std::max({worst, std::abs(fisher_rao_sq(p) - var), std::abs(dalembert_residual(p))});
    }
    return worst;
  });

  check("newton_exactness", 1e-8, 5, [](Rng& rng) {
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
      const Eigen::Index n = gen::between(rng, 1, 8);
      const QuadraticObjective obj(gen::spd(rng, n), rng.normal_vec(n));
      const StepResult r = step_newton(obj, OptimizerState::init(rng.normal_vec(n)));
      worst = std::max(worst, (r.state.theta - obj.argmax()).lpNorm<Eigen::Infinity>());
    }
    return worst;
  });

  check("adam_identity", 1e-12, 6, [](Rng& rng) {
    double worst = 0.0;
    const QuadraticObjective obj(gen::spd(rng, 3), rng.normal_vec(3));
    OptimizerState st = OptimizerState::init(rng.normal_vec(3));
    for (int k = 0; k < 200; ++k) {
      StepResult r = step_adam(obj, st, 0.01, 0.9, 0.999, 1e-8);
      worst = std::max(worst, r.report.diagnostics.at("adam_identity_err"));
      st = std::move(r.state);
    }
    return worst;
  });

  check("step_reconstruction", 1e-10, 7, [](Rng& rng) {
    double worst = 0.0;
    const QuadraticObjective obj(gen::spd(rng, 3), rng.normal_vec(3));
    const LinregObjective data(64, 3, 0.2, 11);
    for (const auto& [name, kind] : kOptimizerIds) {
      const ObjectiveFunction& o = kind == OptimizerKind::sgd ? static_cast<const ObjectiveFunction&>(data) : obj;
      OptimizerParams p;
      p.eta = 0.01;
      p.batch_size = 8;
      p.proposal_scale = 0.0;
      OptimizerState st = OptimizerState::init(rng.normal_vec(3), 3);
      for (int k = 0; k < 20; ++k) {
        StepResult r = step(o, st, kind, p);
        worst = std::max(worst, r.report.reconstruction_error());
        st = std::move(r.state);
      }
    }
    return worst;
  });

  check("mirror_euclidean_is_gd", 0.0, 8, [](Rng& rng) {
    double worst = 0.0;
    const QuadraticObjective obj(gen::spd(rng, 4), rng.normal_vec(4));
    for (int k = 0; k < 50; ++k) {
      const OptimizerState st = OptimizerState::init(rng.normal_vec(4));
      const Vec a = step_mirror(obj, st, 0.05, Potential::euclidean).report.delta_theta;
      const Vec b = step_gd(obj, st, 0.05).report.delta_theta;
      worst = std::max(worst, (a - b).lpNorm<Eigen::Infinity>());
    }
    return worst;
  });

  check("gp_metric_form", 1e-8, 9, [](Rng& rng) {
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
      const Eigen::Index N = gen::between(rng, 1, 20), d = gen::between(rng, 1, 3);
      GpModel m{gen::normal_mat(rng, N, d), 0.5 + rng.uniform(), 0.5 + rng.uniform(), 0.05 + rng.uniform(),
                rng.normal_vec(N)};
      const Vec y = rng.normal_vec(N);
      const GpUpdate g = gp_update(m, y);
      const Mat K = rbf_gram(m.inputs, m.sigma_g, m.ell);
      const Vec direct = K * (K + m.noise_var * Mat::Identity(N, N)).ldlt().solve(y - m.prior_mean);
      worst = std::max(worst, (g.delta_mean - direct).norm());
    }
    return worst;
  });

  check("kalman_gain_form", 1e-10, 10, [](Rng& rng) {
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
      const Eigen::Index n = gen::between(rng, 1, 4), obs = gen::between(rng, 1, 3);
      LinearSystem sys{gen::normal_mat(rng, n, n) * 0.5, gen::spd(rng, n, 0.1) * 0.1, gen::normal_mat(rng, obs, n),
                       gen::spd(rng, obs)};
      const FilterState prior{rng.normal_vec(n), gen::spd(rng, n)};
      const KalmanUpdate up = kalman_update(kalman_predict(prior, sys), sys, rng.normal_vec(obs));
      worst = std::max(worst, up.report.diagnostics.at("gain_form_err"));
    }
    return worst;
  });

  check("elbo_bound_and_split", 1e-10, 11, [](Rng& rng) {
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      const Eigen::Index m = gen::between(rng, 2, 12);
      const DiscreteModel model(gen::simplex(rng, m, 0.01), 2.0 * rng.normal_vec(m));
      const Vec qhat = gen::simplex(rng, m);
      const ElboReport e = elbo(model, qhat);
      const ElboDelta d = elbo_delta_price(model, qhat);
      const double prior_elbo = elbo(model, model.prior).elbo;
      worst = std::max({worst, std::max(0.0, e.elbo - e.log_evidence),
                        std::abs(e.elbo + e.kl_to_true - e.log_evidence),
                        std::abs(d.total() - (e.elbo - prior_elbo))});
    }
    return worst;
  });

  check("hierarchical_consistency", 1e-10, 12, [](Rng& rng) {
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      const int G = gen::between(rng, 1, 5);
      const Eigen::Index n = gen::between(rng, 1, 3);
      std::vector<Group> groups;
      for (int g = 0; g < G; ++g) {
        const Eigen::Index m = gen::between(rng, 1, 8);
        Vec raw(m);
        for (Eigen::Index i = 0; i < m; ++i) raw(i) = rng.uniform() + 0.01;
        groups.push_back({gen::simplex(rng, m), gen::normal_mat(rng, m, n), raw, 0.3 * gen::normal_mat(rng, m, n)});
      }
      const GroupedPopulation gp(gen::simplex(rng, G), groups);
      const Population flat = gp.flatten();
      const HierarchicalPrice hp = hierarchical_price(gp);
      const HierFmb hf = hierarchical_fmb(gp);
      const Vec flat_delta = price_update(flat).delta_mean;
      worst = std::max({worst, (hp.total - flat_delta).lpNorm<Eigen::Infinity>(),
                        (hf.M - weighted_cov(flat.q(), flat.theta())).lpNorm<Eigen::Infinity>(),
                        (hf.total(gp.group_weights()) - flat_delta).lpNorm<Eigen::Infinity>()});
    }
    return worst;
  });

  check("es_mean_is_lande_step", 0.0, 13, [](Rng& rng) {
    const QuadraticObjective obj(gen::spd(rng, 3), rng.normal_vec(3));
    const EsRun run = es_optimize(obj, EsState::init(rng.normal_vec(3), 0.5, 13), 30, 24);
    double worst = 0.0;
    for (const auto& r : run.trace) worst = std::max(worst, r.lande_gap);
    return worst;
  });

  return out;
}

}  // namespace fmb::harness
