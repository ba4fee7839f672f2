#pragma once

// Multilevel Price equation and hierarchical force-metric-bias split, plus
// the two hierarchical-learning experiments: learning-guided selection on a
// bit-string landscape, and an inner/outer lookahead optimizer.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <vector>

#include "fmb/optim.hpp"
#include "fmb/price.hpp"

namespace fmb {

/// Members of one group: within-group weights q (summing to 1), parameters,
/// raw fitness and parameter changes.
struct Group {
  Vec q;
  Mat theta;
  Vec raw_fitness;
  Mat dtheta;  // empty means zero
};

class GroupedPopulation {
 public:
  GroupedPopulation(Vec group_weights, std::vector<Group> groups)
      : qg_(std::move(group_weights)), groups_(std::move(groups)) {
    require_probability(qg_, "group weights");
    if (static_cast<std::size_t>(qg_.size()) != groups_.size())
      throw NumericalError("one weight per group is required");
    Eigen::Index n = -1;
    for (auto& g : groups_) {
      if (g.q.size() == 0) throw NumericalError("empty group");
      require_probability(g.q, "within-group q");
      if (n < 0) n = g.theta.cols();
      if (g.theta.rows() != g.q.size() || g.theta.cols() != n || g.raw_fitness.size() != g.q.size())
        throw NumericalError("group shapes are inconsistent");
      if (g.dtheta.size() == 0) g.dtheta = Mat::Zero(g.theta.rows(), n);
      if (g.dtheta.rows() != g.theta.rows() || g.dtheta.cols() != n)
        throw NumericalError("group dtheta must match theta");
    }
    const Population flat = flatten();
    w_ = flat.w();
  }

  std::size_t num_groups() const { return groups_.size(); }
  const Vec& group_weights() const { return qg_; }
  const Group& group(std::size_t g) const { return groups_[g]; }
  Eigen::Index dim() const { return groups_.front().theta.cols(); }

  /// Flat population with q_i = q_g q_{i|g}; fitness normalized over everyone.
  Population flatten() const {
    Eigen::Index m = 0;
    for (const auto& g : groups_) m += g.q.size();
    Vec q(m), raw(m);
    Mat theta(m, dim()), dtheta(m, dim());
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < groups_.size(); ++k) {
      const auto& g = groups_[k];
      const Eigen::Index s = g.q.size();
      q.segment(off, s) = qg_(static_cast<Eigen::Index>(k)) * g.q;
      raw.segment(off, s) = g.raw_fitness;
      theta.middleRows(off, s) = g.theta;
      dtheta.middleRows(off, s) = g.dtheta;
      off += s;
    }
    q /= q.sum();
    return Population(q, theta, raw, dtheta);
  }

  /// Globally relative fitness of the members of group g.
  Vec member_fitness(std::size_t g) const {
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < g; ++k) off += groups_[k].q.size();
    return w_.segment(off, groups_[g].q.size());
  }
  double group_fitness(std::size_t g) const { return groups_[g].q.dot(member_fitness(g)); }
  Vec group_mean(std::size_t g) const { return weighted_mean(groups_[g].q, groups_[g].theta); }

 private:
  Vec qg_;
  std::vector<Group> groups_;
  Vec w_;
};

struct HierarchicalPrice {
  /// Group level: selection Cov_g(wbar_g, thetabar_g), transmission
  /// E_g(wbar_g dthetabar_g), delta_mean the total change.
  PriceDecomposition between;
  /// Per group: selection Cov_j(w, theta), transmission E_j(w dtheta), and
  /// delta_mean = wbar_g dthetabar_g, their sum.
  std::vector<PriceDecomposition> within;
  Vec total;
};

inline HierarchicalPrice hierarchical_price(const GroupedPopulation& gp) {
  const std::size_t G = gp.num_groups();
  const Eigen::Index n = gp.dim();
  Mat means(G, n);
  Vec wbar(G);
  HierarchicalPrice out;
  Vec transmitted = Vec::Zero(n);
  for (std::size_t g = 0; g < G; ++g) {
    const Group& grp = gp.group(g);
    const Vec w = gp.member_fitness(g);
    means.row(g) = gp.group_mean(g).transpose();
    wbar(g) = grp.q.dot(w);
    PriceDecomposition d;
    d.selection_term = weighted_cov(grp.q, w, grp.theta);
    d.transmission_term = grp.dtheta.transpose() * grp.q.cwiseProduct(w);
    d.delta_mean = d.selection_term + d.transmission_term;
    transmitted += gp.group_weights()(static_cast<Eigen::Index>(g)) * d.delta_mean;
    out.within.push_back(std::move(d));
  }
  out.between.selection_term = weighted_cov(gp.group_weights(), wbar, means);
  out.between.transmission_term = transmitted;
  out.total = out.between.selection_term + transmitted;
  out.between.delta_mean = out.total;
  return out;
}

struct HierFmb {
  Mat M_between;
  Vec f_between;
  Vec b_between;  // q_g-weighted mean of the group biases
  std::vector<Mat> M_within;
  std::vector<Vec> f_within;
  std::vector<Vec> b_within;  // group bias minus b_between
  Mat M;                      // M_between + E(M_within)
  Vec f;                      // least-norm solve of M f = M_B f_B + E(M_g f_g)
  Vec b;

  /// M_B f_B + b_B + E(M_g f_g + b~_g).
  Vec total(const Vec& qg) const {
    Vec t = M_between * f_between + b_between;
    for (std::size_t g = 0; g < M_within.size(); ++g)
      t += qg(static_cast<Eigen::Index>(g)) * (M_within[g] * f_within[g] + b_within[g]);
    return t;
  }
};

inline HierFmb hierarchical_fmb(const GroupedPopulation& gp) {
  const std::size_t G = gp.num_groups();
  const Eigen::Index n = gp.dim();
  const Vec& qg = gp.group_weights();
  Mat means(G, n);
  Vec wbar(G);
  HierFmb h;
  std::vector<Vec> bias(G);
  Mat expected_M = Mat::Zero(n, n);
  Vec expected_Mf = Vec::Zero(n);
  h.b_between = Vec::Zero(n);
  for (std::size_t g = 0; g < G; ++g) {
    const Group& grp = gp.group(g);
    const Vec w = gp.member_fitness(g);
    const double qk = qg(static_cast<Eigen::Index>(g));
    means.row(g) = gp.group_mean(g).transpose();
    wbar(g) = grp.q.dot(w);
    Mat Mg = weighted_cov(grp.q, grp.theta);
    Vec fg = pinv_solve(Mg, weighted_cov(grp.q, w, grp.theta));
    bias[g] = grp.dtheta.transpose() * grp.q.cwiseProduct(w);
    h.b_between += qk * bias[g];
    expected_M += qk * Mg;
    expected_Mf += qk * (Mg * fg);
    h.M_within.push_back(std::move(Mg));
    h.f_within.push_back(std::move(fg));
  }
  for (std::size_t g = 0; g < G; ++g) h.b_within.push_back(bias[g] - h.b_between);
  h.M_between = weighted_cov(qg, means);
  h.f_between = pinv_solve(h.M_between, weighted_cov(qg, wbar, means));
  h.M = symmetrize(h.M_between + expected_M);
  h.f = pinv_solve(h.M, h.M_between * h.f_between + expected_Mf);
  h.b = h.b_between;
  return h;
}

// ---------------------------------------------------------------------------
// Learning on a bit-string landscape with an all-ones target.

enum class FitnessMode { analytic, simulated };
enum class Landscape { needle, graded };

struct BaldwinConfig {
  int genome_len = 20;
  int pop_size = 500;
  int learn_trials = 1000;
  int generations = 100;
  double mutation_rate = 0.001;
  bool heritable = false;
  std::uint64_t seed = 0;
  double learn_flip_prob = 0.2;  // per-bit flip probability in one learning trial
  double baseline = 0.01;        // fitness floor for strings that miss the target
  FitnessMode fitness_mode = FitnessMode::analytic;
  Landscape landscape = Landscape::needle;

  void validate() const {
    if (genome_len < 1 || genome_len > 64) throw NumericalError("genome_len must lie in [1, 64]");
    if (pop_size < 1 || generations < 1 || learn_trials < 0) throw NumericalError("counts must be positive");
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(mutation_rate) || !prob(learn_flip_prob) || !prob(baseline))
      throw NumericalError("probabilities must lie in [0, 1]");
    if (heritable && fitness_mode == FitnessMode::analytic)
      throw NumericalError("heritable learning needs simulated fitness (learned strings must exist)");
  }
};

struct BaldwinResult {
  std::optional<int> generations_to_target;
  std::vector<double> mean_hamming;
  std::vector<double> best_hamming;
  std::vector<double> mean_fitness;  // raw, before normalization
  std::vector<int> target_is_modal;
  bool success = false;
};

/// Landscape value of a string at Hamming distance d from the target.
inline double landscape_value(const BaldwinConfig& c, int d) {
  if (c.landscape == Landscape::needle) return d == 0 ? 1.0 : c.baseline;
  return c.baseline + (1.0 - c.baseline) * std::ldexp(1.0, -d);
}

/// Probability that learning from a seed at distance d ever hits the target
/// (needle landscape): each trial flips every bit independently.
inline double reach_probability(const BaldwinConfig& c, int d) {
  if (d == 0) return 1.0;
  if (c.learn_trials == 0) return 0.0;
  const double rho = c.learn_flip_prob;
  const double p = std::pow(rho, d) * std::pow(1.0 - rho, c.genome_len - d);
  return -std::expm1(c.learn_trials * std::log1p(-p));
}

inline double analytic_fitness(const BaldwinConfig& c, int d) {
  if (c.landscape == Landscape::needle) return c.baseline + (1.0 - c.baseline) * reach_probability(c, d);
  throw NumericalError("analytic fitness is only defined for the needle landscape");
}

/// Deterministic proportional allocation of n offspring with largest-remainder
/// rounding; ties go to the lower index.
inline std::vector<int> largest_remainder(const Vec& fitness, int n) {
  const double total = fitness.sum();
  if (!(total > 0.0)) throw NumericalError("degenerate fitness");
  const Eigen::Index m = fitness.size();
  std::vector<int> counts(m);
  std::vector<double> rem(m);
  int assigned = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double e = n * fitness(i) / total;
    counts[i] = static_cast<int>(std::floor(e));
    rem[i] = e - counts[i];
    assigned += counts[i];
  }
  std::vector<Eigen::Index> order(m);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return rem[a] > rem[b]; });
  for (Eigen::Index k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % m]];
  return counts;
}

inline BaldwinResult baldwin_experiment(const BaldwinConfig& cfg) {
  cfg.validate();
  using Genome = std::uint64_t;
  const int L = cfg.genome_len;
  const Genome mask = L == 64 ? ~Genome{0} : ((Genome{1} << L) - 1);
  auto distance = [&](Genome g) { return std::popcount(~g & mask); };

  const Rng root(cfg.seed);
  Rng init_rng = root.split(0);
  std::vector<Genome> pop(cfg.pop_size);
  for (auto& g : pop) g = init_rng.next_u64() & mask;

  std::vector<double> table(L + 1);
  if (cfg.fitness_mode == FitnessMode::analytic)
    for (int d = 0; d <= L; ++d) table[d] = analytic_fitness(cfg, d);

  BaldwinResult res;
  for (int gen = 0; gen < cfg.generations; ++gen) {
    Rng gen_rng = root.split(1 + static_cast<std::uint64_t>(gen));
    Vec fit(cfg.pop_size);
    std::vector<Genome> learned(pop);
    double hsum = 0.0;
    int best = L;
    std::map<Genome, int> census;
    for (int i = 0; i < cfg.pop_size; ++i) {
      const int d = distance(pop[i]);
      hsum += d;
      best = std::min(best, d);
      ++census[pop[i]];
      if (cfg.fitness_mode == FitnessMode::analytic) {
        fit(i) = table[d];
        continue;
      }
      // Independent trials from the seed; keep the closest string found.
      Rng ind = gen_rng.split(static_cast<std::uint64_t>(i));
      Genome best_g = pop[i];
      int best_d = d;
      for (int t = 0; t < cfg.learn_trials && best_d > 0; ++t) {
        Genome flip = 0;
        for (int b = 0; b < L; ++b)
          if (ind.bernoulli(cfg.learn_flip_prob)) flip |= Genome{1} << b;
        const Genome trial = pop[i] ^ flip;
        const int td = distance(trial);
        if (td < best_d) {
          best_d = td;
          best_g = trial;
        }
      }
      learned[i] = best_g;
      fit(i) = landscape_value(cfg, best_d);
    }

    int top_other = 0;
    for (const auto& [g, c] : census)
      if (g != mask) top_other = std::max(top_other, c);
    const auto it = census.find(mask);
    const bool modal = it != census.end() && it->second > top_other;
    res.mean_hamming.push_back(hsum / cfg.pop_size);
    res.best_hamming.push_back(best);
    res.mean_fitness.push_back(fit.mean());
    res.target_is_modal.push_back(modal ? 1 : 0);
    if (modal && !res.generations_to_target) res.generations_to_target = gen;

    const std::vector<int> counts = largest_remainder(fit, cfg.pop_size);
    std::vector<Genome> next;
    next.reserve(cfg.pop_size);
    Rng mut = gen_rng.split(0xfeedULL);
    for (int i = 0; i < cfg.pop_size; ++i) {
      for (int c = 0; c < counts[i]; ++c) {
        Genome child = cfg.heritable ? learned[i] : pop[i];
        if (cfg.mutation_rate > 0.0)
          for (int b = 0; b < L; ++b)
            if (mut.bernoulli(cfg.mutation_rate)) child ^= Genome{1} << b;
        next.push_back(child);
      }
    }
    pop = std::move(next);
  }
  res.success = res.generations_to_target.has_value();
  return res;
}

// ---------------------------------------------------------------------------
// Lookahead: an inner optimizer runs k steps from the outer point, and the
// outer point moves a fraction alpha toward where the inner loop ended.

struct LookaheadTrace {
  std::vector<Vec> outer;  // initial point, then one entry per round
  std::vector<Vec> inner;  // every inner iterate, in order
  std::vector<StepReport> reports;
};

inline LookaheadTrace lookahead_meta(const ObjectiveFunction& obj, OptimizerKind inner, const OptimizerParams& params,
                                     int inner_steps, double alpha, int outer_steps, const Vec& theta0,
                                     std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw NumericalError("alpha must lie in (0, 1]");
  if (inner_steps < 1 || outer_steps < 0) throw NumericalError("inner_steps must be >= 1 and outer_steps >= 0");
  LookaheadTrace tr;
  Vec outer = theta0;
  tr.outer.push_back(outer);
  OptimizerState st = OptimizerState::init(theta0, seed);
  for (int r = 0; r < outer_steps; ++r) {
    if (st.theta != outer) st.has_pair = false;
    st.theta = outer;
    for (int k = 0; k < inner_steps; ++k) {
      StepResult res = step(obj, st, inner, params);
      st = std::move(res.state);
      tr.inner.push_back(st.theta);
      tr.reports.push_back(std::move(res.report));
    }
    if (alpha == 1.0) outer = st.theta;
    else outer += alpha * (st.theta - outer);
    tr.outer.push_back(outer);
  }
  return tr;
}

}  // namespace fmb
