// fmb: command-line front end for the force-metric-bias laboratory.

#include <chrono>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "fmb/harness/config.hpp"
#include "fmb/harness/runner.hpp"
#include "fmb/harness/table.hpp"
#include "fmb/harness/verify.hpp"

namespace {

using fmb::harness::json;

enum ExitCode { kOk = 0, kConfig = 1, kNumerical = 2, kVerification = 3 };

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

int report_error(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';
  return code;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || item[0] == '-') throw fmb::ConfigError("--replicates: not a seed list: \"" + text + "\"");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw fmb::ConfigError("--replicates: empty seed list");
  return seeds;
}

/// trace.csv -> trace.seed7.csv
std::string replicate_path(const std::string& out, std::uint64_t seed) {
  const auto slash = out.find_last_of('/');
  const auto dot = out.find_last_of('.');
  const std::string tag = ".seed" + std::to_string(seed);
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return out + tag;
  return out.substr(0, dot) + tag + out.substr(dot);
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format;
  std::string replicates;
};

void emit_record(const json& record, const std::string& out) {
  const std::string text = record.dump(1) + "\n";
  if (out.empty()) std::cout << text;
  else fmb::harness::write_text(out, text);
}

int run_trace_command(const std::string& command, const Options& opt) {
  if (opt.config.empty()) throw fmb::ConfigError("--config is required for " + command);
  fmb::harness::ExperimentConfig base = fmb::harness::load_config(opt.config, command, opt.seed);
  if (!opt.format.empty()) base.format = opt.format;
  if (!opt.out.empty()) base.out = opt.out;
  if (base.out.empty()) base.out = "fmb_" + command + "." + base.format;

  std::vector<fmb::harness::ExperimentConfig> runs;
  if (opt.replicates.empty()) {
    runs.push_back(base);
  } else {
    for (std::uint64_t s : parse_seed_list(opt.replicates)) {
      fmb::harness::ExperimentConfig c = base;
      c.seed = s;
      if (c.command == "baldwin") c.baldwin.seed = s;
      c.out = replicate_path(base.out, s);
      runs.push_back(std::move(c));
    }
  }

  for (const auto& cfg : runs) {
    const auto t0 = std::chrono::steady_clock::now();
    const fmb::harness::Table table = fmb::harness::run_table(cfg);
    const std::string text = fmb::harness::render(table, cfg.format);
    fmb::harness::write_text(cfg.out, text);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json manifest{{"command", cfg.command},
                  {"config", cfg.to_json()},
                  {"library_version", FMB_VERSION},
                  {"seed", cfg.seed ? json(*cfg.seed) : json(nullptr)},
                  {"wall_time_seconds", wall},
                  {"trace_file", cfg.out},
                  {"trace_sha256", sha256_hex(text)},
                  {"rows", table.rows.size()}};
    fmb::harness::write_text(cfg.out + ".manifest.json", manifest.dump(1) + "\n");
  }
  return kOk;
}

int run_verify(const Options& opt) {
  const auto results = fmb::harness::run_verify_suite(opt.seed.value_or(20240601));
  json report = json::array();
  bool ok = true;
  for (const auto& r : results) {
    ok = ok && r.passed();
    report.push_back({{"check", r.name},
                      {"worst", std::isfinite(r.worst) ? json(r.worst) : json("inf")},
                      {"tolerance", r.tolerance},
                      {"status", r.passed() ? "PASS" : "FAIL"}});
  }
  emit_record(json{{"passed", ok}, {"checks", report}}, opt.out);
  return ok ? kOk : kVerification;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Force-metric-bias laboratory: Price-equation identities and optimizer decompositions"};
  app.require_subcommand(1);
  app.fallthrough();

  Options opt;
  std::uint64_t seed_value = 0;
  app.add_option("--config", opt.config, "Config (TOML or JSON by extension), or input JSON for decompose/diverge");
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed; overrides the config");
  app.add_option("--out", opt.out, "Output path");
  app.add_option("--format", opt.format, "Trace format")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--replicates", opt.replicates, "Comma-separated seed list; one output per seed");
  app.add_flag_callback("--version", [] {
    std::cout << "fmb " << FMB_VERSION << '\n';
    throw CLI::Success();
  }, "Print the version and exit");

  const std::vector<std::pair<std::string, std::string>> commands{
      {"run", "Single-vector optimizer on an objective; per-step decomposition trace"},
      {"es", "Evolution strategy; per-generation trace"},
      {"vb", "Variational fit of a discrete model; ELBO trace"},
      {"gp", "Gaussian-process update at the training inputs"},
      {"kalman", "Kalman filter run in metric-force form"},
      {"baldwin", "Learning-guided selection on a bit-string landscape"},
      {"decompose", "Price and force-metric-bias decomposition of a population JSON"},
      {"diverge", "Separation measures between two distributions (JSON record)"},
      {"verify", "Run the invariant suite; exit 3 on any failure"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report_error("config", e.what(), kConfig);
  }
  if (seed_opt->count()) opt.seed = seed_value;
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    if (command == "verify") return run_verify(opt);
    if (command == "decompose" || command == "diverge") {
      if (opt.config.empty()) throw fmb::ConfigError("--config is required for " + command);
      const json doc = fmb::harness::load_document(opt.config);
      if (command == "decompose") emit_record(fmb::harness::decompose_json(fmb::harness::read_population(doc)), opt.out);
      else emit_record(fmb::harness::diverge_json(fmb::harness::read_pair(doc)), opt.out);
      return kOk;
    }
    return run_trace_command(command, opt);
  } catch (const fmb::Error& e) {
    switch (e.kind()) {
      case fmb::ErrorKind::config: return report_error("config", e.what(), kConfig);
      case fmb::ErrorKind::verification: return report_error("verification", e.what(), kVerification);
      case fmb::ErrorKind::numerical: break;
    }
    return report_error("numerical", e.what(), kNumerical);
  } catch (const std::exception& e) {
    return report_error("numerical", e.what(), kNumerical);
  }
}
