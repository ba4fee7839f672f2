#pragma once

// Gaussian-sampling evolution strategy with rank-weighted recombination and
// rank-mu covariance blending. The mean update is the Price selection term.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "fmb/objective.hpp"
#include "fmb/price.hpp"
#include "fmb/rng.hpp"

namespace fmb {

struct EsState {
  Vec mean;
  Mat cov;
  double sigma = 1.0;
  long generation = 0;
  std::uint64_t rng_seed = 0;

  static EsState init(Vec mean0, double sigma0, std::uint64_t seed, Mat cov0 = Mat()) {
    EsState s;
    const Eigen::Index n = mean0.size();
    s.mean = std::move(mean0);
    s.cov = cov0.size() ? std::move(cov0) : Mat::Identity(n, n);
    s.sigma = sigma0;
    s.rng_seed = seed;
    if (!(sigma0 > 0.0)) throw NumericalError("sigma must be positive");
    if (s.cov.rows() != n || s.cov.cols() != n) throw NumericalError("covariance does not match the mean");
    if (!(min_eigenvalue(s.cov) > 0.0)) throw NumericalError("covariance must be positive definite");
    return s;
  }
};

struct EsRates {
  double c_mu = 0.3;
  double pd_floor = 1e-12;
};

struct EsSample {
  Population pop;
  Vec values;  // raw objective values U(theta_i)
};

/// Log-rank utilities: the top ceil(pop/2) samples get log(pop/2 + 1/2) - log(rank),
/// the rest 0. Ties are ranked by sample index.
inline Vec rank_utilities(const Vec& values) {
  const Eigen::Index m = values.size();
  std::vector<Eigen::Index> order(m);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return values(a) > values(b); });
  const Eigen::Index mu = (m + 1) / 2;
  Vec util = Vec::Zero(m);
  for (Eigen::Index r = 0; r < mu; ++r)
    util(order[r]) = std::log(double(m) / 2.0 + 0.5) - std::log(double(r + 1));
  return util;
}

inline EsSample es_sample(const EsState& st, int pop_size, const ObjectiveFunction& obj) {
  if (pop_size < 2) throw NumericalError("pop_size must be at least 2");
  const Eigen::Index n = st.mean.size();
  if (obj.dim() != n) throw NumericalError("objective dimension does not match the ES state");
  Rng rng = Rng(st.rng_seed).split(static_cast<std::uint64_t>(st.generation));
  Eigen::LLT<Mat> llt(st.cov);
  const Mat root = llt.info() == Eigen::Success ? Mat(llt.matrixL()) : sqrt_psd(st.cov);

  Mat theta(pop_size, n);
  Vec values(pop_size);
  for (int i = 0; i < pop_size; ++i) {
    theta.row(i) = (st.mean + st.sigma * (root * rng.normal_vec(n))).transpose();
    values(i) = obj.value(theta.row(i).transpose());
    if (!std::isfinite(values(i)))
      throw NumericalError("non-finite objective value at sample " + std::to_string(i));
  }
  if (values.maxCoeff() == values.minCoeff()) throw NumericalError("degenerate fitness");
  const Vec q = Vec::Constant(pop_size, 1.0 / pop_size);
  return {Population(q, theta, rank_utilities(values)), values};
}

struct EsUpdate {
  EsState state;
  Vec mean_step;  // the Lande selection term that moved the mean
};

inline EsUpdate es_update(const EsState& st, const Population& pop, const EsRates& rates = {}) {
  if (!(rates.c_mu >= 0.0 && rates.c_mu <= 1.0)) throw NumericalError("c_mu must lie in [0, 1]");
  EsUpdate out{st, lande_step(pop)};
  out.state.mean = st.mean + out.mean_step;

  const Mat dev = (pop.theta().rowwise() - st.mean.transpose()) / st.sigma;
  const Vec qw = pop.q().cwiseProduct(pop.w());
  const Mat selected = dev.transpose() * qw.asDiagonal() * dev;
  out.state.cov = floor_pd((1.0 - rates.c_mu) * st.cov + rates.c_mu * selected, rates.pd_floor);
  out.state.generation = st.generation + 1;
  return out;
}

struct EsGenerationRecord {
  long generation = 0;
  double best_u = 0.0;
  double mean_u = 0.0;
  double dist_to_argmax = std::numeric_limits<double>::quiet_NaN();
  double cov_trace = 0.0;
  double cov_eigmin = 0.0;
  double lande_gap = 0.0;  // max |mean step - lande_step(pop)|
};

struct EsRun {
  EsState state;
  std::vector<EsGenerationRecord> trace;
};

inline EsRun es_optimize(const ObjectiveFunction& obj, const EsState& init, int generations, int pop_size,
                         const EsRates& rates = {}, std::optional<Vec> argmax = std::nullopt) {
  if (generations < 0) throw NumericalError("generations must be nonnegative");
  EsRun run{init, {}};
  for (int g = 0; g < generations; ++g) {
    const EsSample s = es_sample(run.state, pop_size, obj);
    const EsUpdate up = es_update(run.state, s.pop, rates);
    EsGenerationRecord rec;
    rec.generation = run.state.generation;
    rec.best_u = s.values.maxCoeff();
    rec.mean_u = s.values.mean();
    rec.lande_gap = (up.mean_step - lande_step(s.pop)).lpNorm<Eigen::Infinity>();
    run.state = up.state;
    if (argmax) rec.dist_to_argmax = (run.state.mean - *argmax).norm();
    rec.cov_trace = run.state.cov.trace();
    rec.cov_eigmin = min_eigenvalue(run.state.cov);
    run.trace.push_back(rec);
  }
  return run;
}

}  // namespace fmb
