#pragma once

// Experiment configuration: JSON or TOML text, validated into typed settings.
// Every violation is collected and reported together.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <toml.hpp>

#include "fmb/fmb.hpp"

namespace fmb::harness {

using json = nlohmann::json;

inline const std::vector<std::string>& known_commands() {
  static const std::vector<std::string> ids{"run", "es", "vb", "gp", "kalman", "baldwin", "decompose", "diverge",
                                            "verify"};
  return ids;
}

inline const std::vector<std::string>& known_objectives() {
  static const std::vector<std::string> ids{"quadratic", "rosenbrock_neg", "two_bumps", "linreg_synthetic"};
  return ids;
}

inline std::vector<std::string> known_optimizers() {
  std::vector<std::string> ids;
  for (const auto& [name, kind] : kOptimizerIds) ids.emplace_back(name);
  return ids;
}

inline std::string join(const std::vector<std::string>& xs, const char* sep = ", ") {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? sep : "") + xs[i];
  return out;
}

// ---------------------------------------------------------------------------
// TOML to JSON

namespace detail {

inline json toml_to_json(const toml::node& node, const std::string& path) {
  if (auto t = node.as_table()) {
    json obj = json::object();
    for (auto&& [k, v] : *t) obj[std::string(k.str())] = toml_to_json(v, path + "." + std::string(k.str()));
    return obj;
  }
  if (auto a = node.as_array()) {
    json arr = json::array();
    for (auto&& v : *a) arr.push_back(toml_to_json(v, path));
    return arr;
  }
  if (auto v = node.as_integer()) return json(v->get());
  if (auto v = node.as_floating_point()) return json(v->get());
  if (auto v = node.as_boolean()) return json(v->get());
  if (auto v = node.as_string()) return json(v->get());
  throw ConfigError(path + ": unsupported TOML value type (dates and times are not accepted)");
}

}  // namespace detail

/// Parses JSON or TOML text; `toml_syntax` selects the grammar.
inline json parse_document(const std::string& text, bool toml_syntax) {
  if (toml_syntax) {
    try {
      return detail::toml_to_json(toml::parse(text), "config");
    } catch (const toml::parse_error& e) {
      std::ostringstream msg;
      msg << "malformed TOML at line " << e.source().begin.line << ": " << e.description();
      throw ConfigError(msg.str());
    }
  }
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
}

inline bool has_toml_extension(const std::string& path) {
  return path.size() >= 5 && path.compare(path.size() - 5, 5, ".toml") == 0;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json load_document(const std::string& path) { return parse_document(read_file(path), has_toml_extension(path)); }

// ---------------------------------------------------------------------------
// Strict reader: typed getters that record errors and unknown keys.

class Reader {
 public:
  Reader(const json& j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (!j_.is_object()) errors_.push_back(where() + "expected a table/object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.is_object() && j_.contains(key);
  }

  std::optional<double> number(const std::string& key) {
    if (!has(key)) return std::nullopt;
    const json& v = j_.at(key);
    if (!v.is_number()) return fail<double>(key, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) return fail<double>(key, "expected a finite number");
    return d;
  }
  double number(const std::string& key, double def) { return number(key).value_or(def); }

  std::optional<long long> integer(const std::string& key) {
    if (!has(key)) return std::nullopt;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) return fail<long long>(key, "expected an integer");
    return v.get<long long>();
  }
  long long integer(const std::string& key, long long def) { return integer(key).value_or(def); }

  std::optional<std::uint64_t> seed(const std::string& key) {
    if (!has(key)) return std::nullopt;
    const json& v = j_.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::uint64_t>(v.get<long long>());
    return fail<std::uint64_t>(key, "expected a nonnegative integer");
  }

  std::optional<bool> boolean(const std::string& key) {
    if (!has(key)) return std::nullopt;
    const json& v = j_.at(key);
    if (!v.is_boolean()) return fail<bool>(key, "expected true or false");
    return v.get<bool>();
  }
  bool boolean(const std::string& key, bool def) { return boolean(key).value_or(def); }

  std::optional<std::string> string(const std::string& key) {
    if (!has(key)) return std::nullopt;
    const json& v = j_.at(key);
    if (!v.is_string()) return fail<std::string>(key, "expected a string");
    return v.get<std::string>();
  }

  /// String restricted to a set of ids; the error lists the valid ones.
  std::optional<std::string> choice(const std::string& key, const std::vector<std::string>& ids) {
    auto s = string(key);
    if (s && std::find(ids.begin(), ids.end(), *s) == ids.end())
      return fail<std::string>(key, "unknown id \"" + *s + "\"; valid ids: " + join(ids));
    return s;
  }

  std::optional<Vec> vector(const std::string& key) {
    if (!has(key)) return std::nullopt;
    const json& v = j_.at(key);
    if (!v.is_array()) return fail<Vec>(key, "expected an array of numbers");
    Vec out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number() || !std::isfinite(v[i].get<double>()))
        return fail<Vec>(key, "expected an array of finite numbers");
      out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
    }
    return out;
  }

  /// Row-major matrix from an array of equal-length arrays. A flat array of
  /// numbers is read as a single column.
  std::optional<Mat> matrix(const std::string& key) {
    if (!has(key)) return std::nullopt;
    const json& v = j_.at(key);
    if (!v.is_array()) return fail<Mat>(key, "expected an array of rows");
    if (v.empty()) return Mat(0, 0);
    if (!v[0].is_array()) {
      auto col = vector(key);
      if (!col) return std::nullopt;
      return Mat(*col);
    }
    const std::size_t cols = v[0].size();
    Mat out(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_array() || v[i].size() != cols) return fail<Mat>(key, "rows must be arrays of equal length");
      for (std::size_t j = 0; j < cols; ++j) {
        if (!v[i][j].is_number() || !std::isfinite(v[i][j].get<double>()))
          return fail<Mat>(key, "expected finite numbers");
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[i][j].get<double>();
      }
    }
    return out;
  }

  std::optional<std::vector<int>> int_list(const std::string& key) {
    if (!has(key)) return std::nullopt;
    const json& v = j_.at(key);
    if (!v.is_array()) return fail<std::vector<int>>(key, "expected an array of integers");
    std::vector<int> out;
    for (const auto& x : v) {
      if (!x.is_number_integer()) return fail<std::vector<int>>(key, "expected an array of integers");
      out.push_back(x.get<int>());
    }
    return out;
  }

  /// Nested section reader (empty object when absent).
  Reader section(const std::string& key) {
    static const json empty = json::object();
    if (!has(key)) return Reader(empty, path_ + key + ".", errors_);
    return Reader(j_.at(key), path_ + key + ".", errors_);
  }

  void require(const std::string& key) {
    if (!has(key)) errors_.push_back(where() + key + ": missing required key");
  }

  void error(const std::string& key, const std::string& msg) { errors_.push_back(where() + key + ": " + msg); }

  /// Reports any key that was never asked for.
  void finish() {
    if (!j_.is_object()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) errors_.push_back(where() + it.key() + ": unknown key");
  }

  const std::string& path() const { return path_; }

 private:
  std::string where() const { return path_.empty() ? std::string() : path_; }

  template <class T>
  std::optional<T> fail(const std::string& key, const std::string& msg) {
    errors_.push_back(where() + key + ": " + msg);
    return std::nullopt;
  }

  const json& j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

inline json to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json to_json(const Mat& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(row);
  }
  return a;
}

// ---------------------------------------------------------------------------
// Typed settings

struct ObjectiveSpec {
  std::string id = "quadratic";
  Mat A;
  Vec c;
  long long n = 2;
  Mat centers;
  Vec widths;
  Vec heights;
  long long n_data = 200;
  long long dim = 2;
  double noise = 0.1;
  std::uint64_t data_seed = 0;

  Eigen::Index dimension() const {
    if (id == "quadratic") return c.size();
    if (id == "rosenbrock_neg") return static_cast<Eigen::Index>(n);
    if (id == "two_bumps") return centers.cols();
    return static_cast<Eigen::Index>(dim);
  }

  std::unique_ptr<ObjectiveFunction> build() const {
    if (id == "quadratic") return std::make_unique<QuadraticObjective>(A, c);
    if (id == "rosenbrock_neg") return std::make_unique<RosenbrockNegObjective>(static_cast<Eigen::Index>(n));
    if (id == "two_bumps") return std::make_unique<TwoBumpsObjective>(centers, widths, heights);
    return std::make_unique<LinregObjective>(static_cast<std::size_t>(n_data), static_cast<Eigen::Index>(dim), noise,
                                             data_seed);
  }

  json to_json() const {
    json j{{"id", id}};
    if (id == "quadratic") {
      j["A"] = harness::to_json(A);
      j["c"] = harness::to_json(c);
    } else if (id == "rosenbrock_neg") {
      j["n"] = n;
    } else if (id == "two_bumps") {
      j["centers"] = harness::to_json(centers);
      j["widths"] = harness::to_json(widths);
      j["heights"] = harness::to_json(heights);
    } else {
      j["n_data"] = n_data;
      j["dim"] = dim;
      j["noise"] = noise;
      j["seed"] = data_seed;
    }
    return j;
  }
};

inline ObjectiveSpec read_objective(Reader r) {
  ObjectiveSpec s;
  r.require("id");
  s.id = r.choice("id", known_objectives()).value_or(s.id);
  if (s.id == "quadratic") {
    r.require("A");
    r.require("c");
    s.A = r.matrix("A").value_or(Mat());
    s.c = r.vector("c").value_or(Vec());
    if (s.A.rows() != s.A.cols() || s.A.rows() != s.c.size()) {
      r.error("A", "must be square with one row per entry of c");
    } else if (s.c.size() == 0) {
      r.error("c", "must be non-empty");
    } else if ((s.A - s.A.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + s.A.cwiseAbs().maxCoeff()) ||
               !(min_eigenvalue(s.A) > 0.0)) {
      r.error("A", "must be symmetric positive definite");
    }
  } else if (s.id == "rosenbrock_neg") {
    s.n = r.integer("n", s.n);
    if (s.n < 2) r.error("n", "must be at least 2");
  } else if (s.id == "two_bumps") {
    r.require("centers");
    r.require("widths");
    s.centers = r.matrix("centers").value_or(Mat());
    s.widths = r.vector("widths").value_or(Vec());
    s.heights = r.vector("heights").value_or(Vec::Ones(s.centers.rows()));
    if (s.centers.rows() < 1 || s.widths.size() != s.centers.rows() || s.heights.size() != s.centers.rows())
      r.error("centers", "centers, widths and heights must have one entry per bump");
    else if ((s.widths.array() <= 0.0).any() || (s.heights.array() <= 0.0).any())
      r.error("widths", "widths and heights must be positive");
  } else {
    s.n_data = r.integer("n_data", s.n_data);
    s.dim = r.integer("dim", s.dim);
    s.noise = r.number("noise", s.noise);
    r.require("seed");
    s.data_seed = r.seed("seed").value_or(0);
    if (s.n_data < 1 || s.dim < 1) r.error("n_data", "n_data and dim must be positive");
    if (s.noise < 0.0) r.error("noise", "must be nonnegative");
  }
  r.finish();
  return s;
}

struct OptimizerSpec {
  std::string id = "gd";
  OptimizerKind kind = OptimizerKind::gd;
  OptimizerParams params;

  json to_json() const {
    json j{{"id", id}};
    const auto& p = params;
    switch (kind) {
      case OptimizerKind::gd: j["eta"] = p.eta; break;
      case OptimizerKind::regularized: j["eta"] = p.eta; j["lambda"] = p.lambda; break;
      case OptimizerKind::newton: break;
      case OptimizerKind::natural_gradient:
        j["eta"] = p.eta;
        j["boltzmann_b"] = p.boltzmann_b;
        j["n_samples"] = p.n_samples;
        j["proposal_scale"] = p.proposal_scale;
        break;
      case OptimizerKind::bfgs: j["eta"] = p.eta; break;
      case OptimizerKind::mirror:
        j["eta"] = p.eta;
        j["potential"] = p.potential == Potential::entropy ? "entropy" : "euclidean";
        j["mirror_mode"] = p.mirror_mode == MirrorMode::exact ? "exact" : "first_order";
        break;
      case OptimizerKind::polyak: j["eta"] = p.eta; j["u"] = p.u; break;
      case OptimizerKind::adam:
        j["eta"] = p.eta;
        j["u"] = p.u;
        j["s"] = p.s;
        j["c"] = p.c;
        j["bias_corrected"] = p.bias_corrected;
        break;
      case OptimizerKind::sgld:
        j["eta"] = p.eta;
        j["metric_mode"] = p.metric_mode == SgldMetric::inverse_hessian ? "inverse_hessian" : "identity";
        break;
      case OptimizerKind::sgd: j["eta"] = p.eta; j["batch_size"] = p.batch_size; break;
    }
    return j;
  }
};

inline OptimizerSpec read_optimizer(Reader r) {
  OptimizerSpec s;
  r.require("id");
  s.id = r.choice("id", known_optimizers()).value_or(s.id);
  for (const auto& [name, kind] : kOptimizerIds)
    if (name == s.id) s.kind = kind;
  auto& p = s.params;
  auto positive = [&](const char* key, double& v) {
    v = r.number(key, v);
    if (!(v > 0.0)) r.error(key, "must be positive");
  };
  auto unit = [&](const char* key, double& v) {
    v = r.number(key, v);
    if (!(v >= 0.0 && v < 1.0)) r.error(key, "must lie in [0, 1)");
  };
  if (s.kind != OptimizerKind::newton) positive("eta", p.eta);
  switch (s.kind) {
    case OptimizerKind::regularized:
      p.lambda = r.number("lambda", p.lambda);
      if (p.lambda < 0.0) r.error("lambda", "must be nonnegative");
      break;
    case OptimizerKind::natural_gradient: {
      positive("boltzmann_b", p.boltzmann_b);
      p.n_samples = static_cast<int>(r.integer("n_samples", p.n_samples));
      if (p.n_samples < 1) r.error("n_samples", "must be at least 1");
      p.proposal_scale = r.number("proposal_scale", p.proposal_scale);
      if (p.proposal_scale < 0.0) r.error("proposal_scale", "must be nonnegative");
      break;
    }
    case OptimizerKind::mirror: {
      const auto pot = r.choice("potential", {"euclidean", "entropy"}).value_or("euclidean");
      p.potential = pot == "entropy" ? Potential::entropy : Potential::euclidean;
      const auto mode = r.choice("mirror_mode", {"first_order", "exact"}).value_or("first_order");
      p.mirror_mode = mode == "exact" ? MirrorMode::exact : MirrorMode::first_order;
      break;
    }
    case OptimizerKind::polyak: unit("u", p.u); break;
    case OptimizerKind::adam:
      unit("u", p.u);
      unit("s", p.s);
      positive("c", p.c);
      p.bias_corrected = r.boolean("bias_corrected", p.bias_corrected);
      break;
    case OptimizerKind::sgld: {
      const auto mode = r.choice("metric_mode", {"identity", "inverse_hessian"}).value_or("identity");
      p.metric_mode = mode == "inverse_hessian" ? SgldMetric::inverse_hessian : SgldMetric::identity;
      break;
    }
    case OptimizerKind::sgd: {
      const long long b = r.integer("batch_size", static_cast<long long>(p.batch_size));
      if (b < 1) r.error("batch_size", "must be at least 1");
      p.batch_size = static_cast<std::size_t>(std::max(1LL, b));
      break;
    }
    default: break;
  }
  r.finish();
  return s;
}

struct LookaheadSpec {
  int inner_steps = 5;
  double alpha = 0.5;
  json to_json() const { return {{"inner_steps", inner_steps}, {"alpha", alpha}}; }
};

struct EsSpec {
  int pop_size = 64;
  int generations = 200;
  double sigma = 0.5;
  double c_mu = 0.3;
  Vec mean0;
  Mat cov0;
  json to_json() const {
    json j{{"pop_size", pop_size}, {"generations", generations}, {"sigma", sigma}, {"c_mu", c_mu},
           {"mean0", harness::to_json(mean0)}};
    if (cov0.size()) j["cov0"] = harness::to_json(cov0);
    return j;
  }
};

struct VbSpec {
  Vec prior;
  Vec loglik;
  Mat grid;
  std::vector<int> factor_sizes;
  double rate = 1.0;
  json to_json() const {
    json j{{"prior", harness::to_json(prior)}, {"loglik", harness::to_json(loglik)}, {"rate", rate},
           {"factor_sizes", factor_sizes}};
    if (grid.size()) j["grid"] = harness::to_json(grid);
    return j;
  }
};

struct GpSpec {
  GpModel model;
  Vec y;
  json to_json() const {
    return {{"inputs", harness::to_json(model.inputs)}, {"sigma_g", model.sigma_g}, {"ell", model.ell},
            {"noise_var", model.noise_var}, {"prior_mean", harness::to_json(model.prior_mean)},
            {"y", harness::to_json(y)}};
  }
};

struct KalmanSpec {
  LinearSystem sys;
  FilterState init;
  Mat observations;  // rows are y_t; empty when simulating
  int simulate_steps = 0;
  Vec truth0;
  json to_json() const {
    json j{{"F", harness::to_json(sys.F)}, {"Q", harness::to_json(sys.Q)}, {"H", harness::to_json(sys.H)},
           {"R", harness::to_json(sys.R)}, {"x0", harness::to_json(init.x)}, {"P0", harness::to_json(init.P)}};
    if (simulate_steps > 0) j["simulate"] = {{"steps", simulate_steps}, {"truth0", harness::to_json(truth0)}};
    else j["observations"] = harness::to_json(observations);
    return j;
  }
};

struct ExperimentConfig {
  std::string command = "run";
  std::optional<std::uint64_t> seed;
  long long steps = 100;
  std::string out;
  std::string format = "csv";
  Vec theta0;
  ObjectiveSpec objective;
  OptimizerSpec optimizer;
  std::optional<LookaheadSpec> lookahead;
  EsSpec es;
  BaldwinConfig baldwin;
  VbSpec vb;
  GpSpec gp;
  KalmanSpec kalman;

  bool stochastic() const {
    if (command == "es" || command == "baldwin") return true;
    if (command == "run") return is_stochastic(optimizer.kind);
    if (command == "kalman") return kalman.simulate_steps > 0;
    return false;
  }

  /// Canonical echo with defaults filled in; parsing it gives an equal config.
  json to_json() const {
    json j{{"command", command}, {"format", format}};
    if (seed) j["seed"] = *seed;
    if (!out.empty()) j["out"] = out;
    if (command == "run" || command == "es") {
      j["objective"] = objective.to_json();
    }
    if (command == "run") {
      j["steps"] = steps;
      j["theta0"] = harness::to_json(theta0);
      j["optimizer"] = optimizer.to_json();
      if (lookahead) j["lookahead"] = lookahead->to_json();
    } else if (command == "es") {
      j["es"] = es.to_json();
    } else if (command == "baldwin") {
      const auto& b = baldwin;
      j["baldwin"] = {{"genome_len", b.genome_len},
                      {"pop_size", b.pop_size},
                      {"learn_trials", b.learn_trials},
                      {"generations", b.generations},
                      {"mutation_rate", b.mutation_rate},
                      {"heritable", b.heritable},
                      {"learn_flip_prob", b.learn_flip_prob},
                      {"baseline", b.baseline},
                      {"fitness_mode", b.fitness_mode == FitnessMode::simulated ? "simulated" : "analytic"},
                      {"landscape", b.landscape == Landscape::graded ? "graded" : "needle"}};
    } else if (command == "vb") {
      j["steps"] = steps;
      j["vb"] = vb.to_json();
    } else if (command == "gp") {
      j["gp"] = gp.to_json();
    } else if (command == "kalman") {
      j["kalman"] = kalman.to_json();
    }
    return j;
  }

  bool operator==(const ExperimentConfig& o) const { return to_json() == o.to_json(); }
};

namespace detail {

inline void read_es(Reader r, ExperimentConfig& c) {
  auto& e = c.es;
  e.pop_size = static_cast<int>(r.integer("pop_size", e.pop_size));
  e.generations = static_cast<int>(r.integer("generations", e.generations));
  e.sigma = r.number("sigma", e.sigma);
  e.c_mu = r.number("c_mu", e.c_mu);
  r.require("mean0");
  e.mean0 = r.vector("mean0").value_or(Vec());
  e.cov0 = r.matrix("cov0").value_or(Mat());
  if (e.pop_size < 2) r.error("pop_size", "must be at least 2");
  if (e.generations < 0) r.error("generations", "must be nonnegative");
  if (!(e.sigma > 0.0)) r.error("sigma", "must be positive");
  if (!(e.c_mu >= 0.0 && e.c_mu <= 1.0)) r.error("c_mu", "must lie in [0, 1]");
  if (e.cov0.size() && (e.cov0.rows() != e.mean0.size() || e.cov0.cols() != e.mean0.size()))
    r.error("cov0", "must be n x n for mean0 of length n");
  else if (e.cov0.size() && !(min_eigenvalue(e.cov0) > 0.0))
    r.error("cov0", "must be positive definite");
  if (e.mean0.size() && e.mean0.size() != c.objective.dimension())
    r.error("mean0", "length does not match the objective dimension");
  r.finish();
}

inline void read_baldwin(Reader r, ExperimentConfig& c) {
  auto& b = c.baldwin;
  b.genome_len = static_cast<int>(r.integer("genome_len", b.genome_len));
  b.pop_size = static_cast<int>(r.integer("pop_size", b.pop_size));
  b.learn_trials = static_cast<int>(r.integer("learn_trials", b.learn_trials));
  b.generations = static_cast<int>(r.integer("generations", b.generations));
  b.mutation_rate = r.number("mutation_rate", b.mutation_rate);
  b.heritable = r.boolean("heritable", b.heritable);
  b.learn_flip_prob = r.number("learn_flip_prob", b.learn_flip_prob);
  b.baseline = r.number("baseline", b.baseline);
  b.fitness_mode = r.choice("fitness_mode", {"analytic", "simulated"}).value_or(b.heritable ? "simulated" : "analytic") ==
                           "simulated"
                       ? FitnessMode::simulated
                       : FitnessMode::analytic;
  b.landscape = r.choice("landscape", {"needle", "graded"}).value_or("needle") == "graded" ? Landscape::graded
                                                                                           : Landscape::needle;
  try {
    b.validate();
  } catch (const Error& e) {
    r.error("baldwin", e.what());
  }
  if (b.landscape == Landscape::graded && b.fitness_mode == FitnessMode::analytic)
    r.error("landscape", "the graded landscape needs fitness_mode = \"simulated\"");
  r.finish();
}

inline void read_vb(Reader r, ExperimentConfig& c) {
  auto& v = c.vb;
  r.require("prior");
  r.require("loglik");
  v.prior = r.vector("prior").value_or(Vec());
  v.loglik = r.vector("loglik").value_or(Vec());
  v.grid = r.matrix("grid").value_or(Mat());
  v.factor_sizes = r.int_list("factor_sizes").value_or(std::vector<int>{static_cast<int>(v.prior.size())});
  v.rate = r.number("rate", v.rate);
  if (!(v.rate > 0.0)) r.error("rate", "must be positive");
  if (v.prior.size() != v.loglik.size()) r.error("loglik", "must have the same length as prior");
  r.finish();
}

inline void read_gp(Reader r, ExperimentConfig& c) {
  auto& g = c.gp;
  r.require("inputs");
  r.require("y");
  g.model.inputs = r.matrix("inputs").value_or(Mat());
  g.model.sigma_g = r.number("sigma_g", g.model.sigma_g);
  g.model.ell = r.number("ell", g.model.ell);
  g.model.noise_var = r.number("noise_var", g.model.noise_var);
  g.y = r.vector("y").value_or(Vec());
  g.model.prior_mean = r.vector("prior_mean").value_or(Vec::Zero(g.model.inputs.rows()));
  if (!(g.model.sigma_g > 0.0) || !(g.model.ell > 0.0)) r.error("sigma_g", "sigma_g and ell must be positive");
  if (!(g.model.noise_var > 0.0)) r.error("noise_var", "must be positive");
  if (g.y.size() != g.model.inputs.rows() || g.model.prior_mean.size() != g.model.inputs.rows())
    r.error("y", "y and prior_mean need one value per input row");
  r.finish();
}

inline void read_kalman(Reader r, ExperimentConfig& c) {
  auto& k = c.kalman;
  for (const char* key : {"F", "Q", "H", "R", "x0", "P0"}) r.require(key);
  k.sys.F = r.matrix("F").value_or(Mat());
  k.sys.Q = r.matrix("Q").value_or(Mat());
  k.sys.H = r.matrix("H").value_or(Mat());
  k.sys.R = r.matrix("R").value_or(Mat());
  k.init.x = r.vector("x0").value_or(Vec());
  k.init.P = r.matrix("P0").value_or(Mat());
  const bool has_obs = r.has("observations");
  k.observations = r.matrix("observations").value_or(Mat());
  if (r.has("simulate")) {
    Reader s = r.section("simulate");
    k.simulate_steps = static_cast<int>(s.integer("steps", 100));
    k.truth0 = s.vector("truth0").value_or(k.init.x);
    if (k.simulate_steps < 1) s.error("steps", "must be at least 1");
    s.finish();
    if (has_obs) r.error("observations", "give either observations or simulate, not both");
  } else if (!has_obs) {
    r.error("observations", "missing (or give a simulate section)");
  }
  try {
    k.sys.validate();
    check_state(k.init, k.sys.F.rows());
    if (k.observations.size() && k.observations.cols() != k.sys.H.rows())
      r.error("observations", "each row must have one entry per row of H");
    if (k.simulate_steps > 0 && k.truth0.size() != k.sys.F.rows()) r.error("simulate", "truth0 has the wrong size");
  } catch (const Error& e) {
    r.error("system", e.what());
  }
  r.finish();
}

}  // namespace detail

/// Validates a parsed document into a config. The command-line subcommand and
/// seed, when given, take precedence over the document.
inline ExperimentConfig parse_config(const json& doc, const std::optional<std::string>& command_override = {},
                                     const std::optional<std::uint64_t>& seed_override = {}) {
  std::vector<std::string> errors;
  Reader r(doc, "", errors);
  ExperimentConfig c;
  c.command = r.choice("command", known_commands()).value_or("run");
  if (command_override) {
    if (std::find(known_commands().begin(), known_commands().end(), *command_override) == known_commands().end())
      errors.push_back("command: unknown id \"" + *command_override + "\"; valid ids: " + join(known_commands()));
    else
      c.command = *command_override;
  }
  c.seed = r.seed("seed");
  if (seed_override) c.seed = seed_override;
  c.out = r.string("out").value_or("");
  c.format = r.choice("format", {"csv", "json"}).value_or("csv");
  c.steps = r.integer("steps", c.steps);
  if (c.steps < 0) r.error("steps", "must be nonnegative");

  if (c.command == "run" || c.command == "es") {
    r.require("objective");
    c.objective = read_objective(r.section("objective"));
  }
  if (c.command == "run") {
    r.require("optimizer");
    c.optimizer = read_optimizer(r.section("optimizer"));
    r.require("theta0");
    c.theta0 = r.vector("theta0").value_or(Vec());
    if (c.theta0.size() && c.theta0.size() != c.objective.dimension())
      r.error("theta0", "length does not match the objective dimension");
    if (r.has("lookahead")) {
      Reader l = r.section("lookahead");
      LookaheadSpec la;
      la.inner_steps = static_cast<int>(l.integer("inner_steps", la.inner_steps));
      la.alpha = l.number("alpha", la.alpha);
      if (la.inner_steps < 1) l.error("inner_steps", "must be at least 1");
      if (!(la.alpha > 0.0 && la.alpha <= 1.0)) l.error("alpha", "must lie in (0, 1]");
      l.finish();
      c.lookahead = la;
    }
    if (c.optimizer.kind == OptimizerKind::sgd && c.objective.id != "linreg_synthetic")
      r.error("optimizer", "sgd needs a data-backed objective (linreg_synthetic)");
  } else if (c.command == "es") {
    detail::read_es(r.section("es"), c);
  } else if (c.command == "baldwin") {
    detail::read_baldwin(r.section("baldwin"), c);
  } else if (c.command == "vb") {
    detail::read_vb(r.section("vb"), c);
  } else if (c.command == "gp") {
    detail::read_gp(r.section("gp"), c);
  } else if (c.command == "kalman") {
    detail::read_kalman(r.section("kalman"), c);
  }
  r.finish();
  if (c.stochastic() && !c.seed) errors.push_back("seed: required for stochastic runs");
  if (c.command == "baldwin" && c.seed) c.baldwin.seed = *c.seed;
  if (!errors.empty()) throw ConfigError(join(errors, "; "));
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text, bool toml_syntax,
                                          const std::optional<std::string>& command_override = {},
                                          const std::optional<std::uint64_t>& seed_override = {}) {
  return parse_config(parse_document(text, toml_syntax), command_override, seed_override);
}

inline ExperimentConfig load_config(const std::string& path, const std::optional<std::string>& command_override = {},
                                    const std::optional<std::uint64_t>& seed_override = {}) {
  return parse_config(load_document(path), command_override, seed_override);
}

}  // namespace fmb::harness
