#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fmb/harness/config.hpp"
#include "fmb/harness/runner.hpp"
#include "fmb/harness/table.hpp"

using namespace fmb;
using namespace fmb::harness;
namespace fs = std::filesystem;

namespace {

const std::string kCli = FMB_CLI_PATH;
const std::string kSamples = FMB_SAMPLES_DIR;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Scratch {
 public:
  Scratch() {
    dir_ = fs::temp_directory_path() / ("fmb_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::create_directories(dir_);
  }
  ~Scratch() { fs::remove_all(dir_); }
  fs::path operator/(const std::string& name) const { return dir_ / name; }
  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name) << text;
    return dir_ / name;
  }

 private:
  fs::path dir_;
  static inline int counter_ = 0;
};

struct CliResult {
  int code = -1;
  std::string err;
};

CliResult cli(const std::string& args, const Scratch& s) {
  const fs::path err = s / "stderr.txt";
  const std::string cmd = "\"" + kCli + "\" " + args + " > \"" + (s / "stdout.txt").string() + "\" 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

std::string sample(const std::string& name) { return "\"" + kSamples + "/" + name + "\""; }

const char* kMinimalGd = R"({
  "theta0": [0, 0],
  "objective": {"id": "quadratic", "A": [[2, 0], [0, 1]], "c": [1, 1]},
  "optimizer": {"id": "gd"}
})";

void expect_config_error(const std::string& text, bool toml, const std::string& fragment) {
  try {
    parse_config_text(text, toml);
    FAIL() << "expected a config error containing " << fragment;
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

}  // namespace

TEST(Config, MinimalConfigGetsDefaults) {
  const ExperimentConfig c = parse_config_text(kMinimalGd, false);
  EXPECT_EQ(c.command, "run");
  EXPECT_EQ(c.format, "csv");
  EXPECT_EQ(c.steps, 100);
  EXPECT_EQ(c.optimizer.kind, OptimizerKind::gd);
  EXPECT_GT(c.optimizer.params.eta, 0.0);
  EXPECT_FALSE(c.seed.has_value());
}

TEST(Config, UnknownOptimizerListsValidIds) {
  std::string text = kMinimalGd;
  text.replace(text.find("\"gd\""), 4, "\"adamx\"");
  try {
    parse_config_text(text, false);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("adamx"), std::string::npos);
    for (const std::string& id : known_optimizers()) EXPECT_NE(msg.find(id), std::string::npos) << id;
  }
}

TEST(Config, RejectsUnknownKeysMissingSeedAndBadNumbers) {
  expect_config_error(R"({"theta0": [0], "bogus": 1, "objective": {"id": "rosenbrock_neg", "n": 1},
                          "optimizer": {"id": "gd"}})",
                      false, "bogus: unknown key");
  expect_config_error(R"({"theta0": [0, 0, 0], "objective": {"id": "linreg_synthetic", "n_data": 10, "dim": 3,
                          "noise": 0.1, "seed": 1}, "optimizer": {"id": "sgd"}})",
                      false, "seed");
  expect_config_error(R"({"theta0": [0, 0], "objective": {"id": "rosenbrock_neg", "n": 2},
                          "optimizer": {"id": "gd", "eta": "fast"}})",
                      false, "eta");
  expect_config_error("theta0 = [0, 0\n", true, "");
}

TEST(Config, ReportsEveryViolation) {
  try {
    parse_config_text(R"({"theta0": [0, 0], "zzz": 1, "objective": {"id": "nope"}, "optimizer": {"id": "gd", "eta": -1}})",
                      false);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("zzz"), std::string::npos);
    EXPECT_NE(msg.find("nope"), std::string::npos);
  }
}

TEST(Config, SeedOverrideTakesPrecedence) {
  const ExperimentConfig c = load_config(kSamples + "/sgd_linreg.toml", std::nullopt, 99);
  EXPECT_EQ(*c.seed, 99u);
}

TEST(Config, RoundTripOnEverySample) {
  for (const auto& entry : fs::directory_iterator(kSamples)) {
    const std::string name = entry.path().filename().string();
    if (name == "population.json" || name == "pair.json") continue;
    SCOPED_TRACE(name);
    const ExperimentConfig c = load_config(entry.path().string());
    const ExperimentConfig again = parse_config(c.to_json());
    EXPECT_TRUE(again == c);
    EXPECT_EQ(again.to_json().dump(), c.to_json().dump());
  }
}

TEST(Config, TomlAndJsonAgree) {
  const ExperimentConfig a = parse_config_text(kMinimalGd, false);
  const ExperimentConfig b = parse_config_text(R"(
theta0 = [0, 0]
[objective]
id = "quadratic"
A = [[2, 0], [0, 1]]
c = [1, 1]
[optimizer]
id = "gd"
)",
                                               true);
  EXPECT_TRUE(a == b);
}

TEST(Table, ShortestRoundTripNumbers) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_EQ(format_double(0.0), "0");
  EXPECT_EQ(format_double(std::nan("")), "nan");
  for (double x : {1.0 / 3.0, 1e-300, -2.5e17, 6.02214076e23}) EXPECT_EQ(std::stod(format_double(x)), x);
  Table t{{"a", "b"}, {}};
  t.add({1.5, -2.0});
  EXPECT_EQ(to_csv(t), "a,b\n1.5,-2\n");
  EXPECT_THROW(t.add({1.0}), NumericalError);
}

TEST(Runner, OptimizerTraceSatisfiesReconstruction) {
  for (const char* name : {"gd_quadratic.toml", "adam_rosenbrock.json", "sgd_linreg.toml", "mirror_simplex.toml",
                           "natural_gradient_bumps.toml", "lookahead_sgd.toml", "newton_quadratic.json"}) {
    SCOPED_TRACE(name);
    const Table t = run_table(load_config(kSamples + "/" + name));
    const auto col = std::find(t.columns.begin(), t.columns.end(), "recon_err") - t.columns.begin();
    ASSERT_LT(static_cast<std::size_t>(col), t.columns.size());
    for (const auto& row : t.rows) EXPECT_LE(row[col], kReconstructionTol * 10);
  }
}

TEST(Runner, DecomposeMatchesLibrary) {
  const Population p = read_population(load_document(kSamples + "/population.json"));
  const json j = decompose_json(p);
  const FmbDecomposition d = fmb_decompose(p);
  EXPECT_EQ(j.at("f").get<std::vector<double>>()[0], d.f(0));
  EXPECT_EQ(j.at("expected_gain").get<double>(), expected_gain(d));
}

TEST(Cli, EverySampleRunsAndWritesManifest) {
  for (const auto& entry : fs::directory_iterator(kSamples)) {
    const std::string name = entry.path().filename().string();
    if (name == "population.json" || name == "pair.json") continue;
    SCOPED_TRACE(name);
    Scratch s;
    ExperimentConfig cfg = load_config(entry.path().string());
    const fs::path out = s / "trace.csv";
    cfg.out = out.string();
    const CliResult r = cli(cfg.command + " --config " + sample(name) + " --out \"" + out.string() + "\"", s);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(r.err.empty());
    const json m = json::parse(slurp(out.string() + ".manifest.json"));
    EXPECT_EQ(m.at("command"), cfg.command);
    EXPECT_EQ(m.at("trace_sha256").get<std::string>().size(), 64u);
    EXPECT_TRUE(m.contains("library_version"));
    EXPECT_TRUE(m.contains("wall_time_seconds"));
    EXPECT_TRUE(parse_config(m.at("config")) == cfg);
    EXPECT_EQ(m.at("trace_file"), out.string());
    EXPECT_GT(m.at("rows").get<int>(), 0);
  }
}

TEST(Cli, RepeatedRunsAreByteIdentical) {
  Scratch s;
  for (const char* name : {"sgd_linreg.toml", "es_sphere.toml", "baldwin.toml", "kalman_track.toml"}) {
    SCOPED_TRACE(name);
    const std::string cmd = load_config(kSamples + "/" + name).command;
    const fs::path a = s / "a.csv", b = s / "b.csv";
    ASSERT_EQ(cli(cmd + " --config " + sample(name) + " --out \"" + a.string() + "\"", s).code, 0);
    ASSERT_EQ(cli(cmd + " --config " + sample(name) + " --out \"" + b.string() + "\"", s).code, 0);
    EXPECT_EQ(slurp(a), slurp(b));
    const json ma = json::parse(slurp(a.string() + ".manifest.json"));
    const json mb = json::parse(slurp(b.string() + ".manifest.json"));
    EXPECT_EQ(ma.at("trace_sha256"), mb.at("trace_sha256"));
  }
}

TEST(Cli, SeedFlagChangesStochasticTrace) {
  Scratch s;
  const fs::path a = s / "a.csv", b = s / "b.csv";
  ASSERT_EQ(cli("run --config " + sample("sgd_linreg.toml") + " --out \"" + a.string() + "\"", s).code, 0);
  ASSERT_EQ(cli("run --config " + sample("sgd_linreg.toml") + " --seed 8 --out \"" + b.string() + "\"", s).code, 0);
  EXPECT_NE(slurp(a), slurp(b));
  EXPECT_EQ(json::parse(slurp(b.string() + ".manifest.json")).at("seed"), 8);
}

TEST(Cli, JsonFormat) {
  Scratch s;
  const fs::path out = s / "t.json";
  ASSERT_EQ(cli("run --config " + sample("gd_quadratic.toml") + " --format json --out \"" + out.string() + "\"", s).code, 0);
  const json rows = json::parse(slurp(out));
  ASSERT_TRUE(rows.is_array());
  EXPECT_EQ(rows.size(), 51u);
  EXPECT_TRUE(rows[0].contains("theta_0"));
}

TEST(Cli, ReplicatesWriteOneTracePerSeed) {
  Scratch s;
  const fs::path out = s / "rep.csv";
  ASSERT_EQ(cli("run --config " + sample("sgd_linreg.toml") + " --replicates 1,2,3 --out \"" + out.string() + "\"", s).code,
            0);
  for (int seed : {1, 2, 3}) {
    const fs::path p = s / ("rep.seed" + std::to_string(seed) + ".csv");
    EXPECT_TRUE(fs::exists(p)) << p;
    EXPECT_EQ(json::parse(slurp(p.string() + ".manifest.json")).at("seed"), seed);
  }
  EXPECT_NE(slurp(s / "rep.seed1.csv"), slurp(s / "rep.seed2.csv"));
  EXPECT_EQ(cli("run --config " + sample("sgd_linreg.toml") + " --replicates 1,x --out \"" + out.string() + "\"", s).code, 1);
}

TEST(Cli, ConfigErrorsExitOneWithJsonLine) {
  Scratch s;
  const fs::path bad = s.write("bad.json", R"({"theta0": [0, 0], "objective": {"id": "quadratic", "A": [[1, 0], [0, 1]],
    "c": [0, 0]}, "optimizer": {"id": "adamx"}})");
  const CliResult r = cli("run --config \"" + bad.string() + "\"", s);
  EXPECT_EQ(r.code, 1);
  ASSERT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
  const json e = json::parse(r.err);
  EXPECT_EQ(e.at("error"), "config");
  EXPECT_EQ(e.at("exit_code"), 1);
  EXPECT_NE(e.at("message").get<std::string>().find("adamx"), std::string::npos);

  EXPECT_EQ(cli("run", s).code, 1);
  EXPECT_EQ(cli("frobnicate", s).code, 1);
  EXPECT_EQ(cli("run --config /nonexistent/x.toml", s).code, 1);
  EXPECT_EQ(cli("run --config " + sample("gd_quadratic.toml") + " --format xml", s).code, 1);
}

TEST(Cli, NumericalErrorsExitTwo) {
  Scratch s;
  const fs::path cfg = s.write("es.toml", R"(
command = "es"
seed = 1
[objective]
id = "quadratic"
A = [[1.0]]
c = [0.0]
[es]
mean0 = [1.0]
sigma = 1e-300
pop_size = 8
generations = 3
)");
  const CliResult r = cli("es --config \"" + cfg.string() + "\" --out \"" + (s / "o.csv").string() + "\"", s);
  EXPECT_EQ(r.code, 2);
  const json e = json::parse(r.err);
  EXPECT_EQ(e.at("error"), "numerical");
  EXPECT_EQ(e.at("message"), "degenerate fitness");
}

TEST(Cli, DecomposeAndDiverge) {
  Scratch s;
  const fs::path out = s / "d.json";
  ASSERT_EQ(cli("decompose --config " + sample("population.json") + " --out \"" + out.string() + "\"", s).code, 0);
  const json d = json::parse(slurp(out));
  const Population p = read_population(load_document(kSamples + "/population.json"));
  const FmbDecomposition oracle = fmb_decompose(p);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(d.at("f")[i].get<double>(), oracle.f(i));
    EXPECT_EQ(d.at("delta_mean")[i].get<double>(), price_update(p).delta_mean(i));
  }

  ASSERT_EQ(cli("diverge --config " + sample("pair.json") + " --out \"" + out.string() + "\"", s).code, 0);
  const json v = json::parse(slurp(out));
  EXPECT_NEAR(v.at("fisher_rao_sq").get<double>(), 0.25, 1e-15);
  EXPECT_NEAR(v.at("jeffreys").get<double>(), 0.274653, 1e-6);
  EXPECT_FALSE(v.contains("errors"));

  const fs::path onto = s.write("onto.json", R"({"q": [1.0, 0.0], "q_prime": [0.5, 0.5]})");
  ASSERT_EQ(cli("diverge --config \"" + onto.string() + "\" --out \"" + out.string() + "\"", s).code, 0);
  const json u = json::parse(slurp(out));
  EXPECT_TRUE(u.at("fisher_rao_sq").is_null());
  EXPECT_EQ(u.at("errors").at("fisher_rao_sq"), "unsupported mass creation");
  EXPECT_NEAR(u.at("kl_q_qprime").get<double>(), std::log(2.0), 1e-15);
}

TEST(Cli, VerifyPasses) {
  Scratch s;
  const fs::path out = s / "v.json";
  ASSERT_EQ(cli("verify --out \"" + out.string() + "\"", s).code, 0);
  const json v = json::parse(slurp(out));
  EXPECT_TRUE(v.at("passed").get<bool>());
  EXPECT_GE(v.at("checks").size(), 13u);
}
