#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <omp.h>

#include "hermite_flow/errors.hpp"
#include "hermite_flow/harness.hpp"

namespace {

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

std::optional<int> threads_from_env() {
  const char* env = std::getenv("HERMITE_FLOW_THREADS");
  if (env == nullptr || *env == '\0') return std::nullopt;
  try {
    std::size_t pos = 0;
    const int n = std::stoi(env, &pos);
    if (pos != std::string(env).size() || n < 1) throw std::invalid_argument(env);
    return n;
  } catch (const std::exception&) {
    throw hermite_flow::ConfigError("HERMITE_FLOW_THREADS must be a positive integer, got \"" +
                                    std::string(env) + "\"");
  }
}

}  // namespace

int main(int argc, char** argv) {
  using namespace hermite_flow;

  CLI::App app{"Simulate and check emergence dynamics of two-layer students on additive teachers."};
  std::string kind;
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  app.add_option("kind", kind,
                 "validate | single_index | emergence | scaling | compute_optimal | init_gaps")
      ->required();
  app.add_option("--config", config_path, "experiment JSON")->required();
  app.add_option("--out", out_dir, "output directory (overrides output_dir)");
  app.add_option("--seed", seed, "master seed (overrides seed)");
  app.add_option("--threads", threads, "worker threads (fallback: HERMITE_FLOW_THREADS)")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitPass : kExitUsage;
  }

  ExperimentSpec spec;
  try {
    if (!threads) threads = threads_from_env();
    const ExperimentKind cli_kind = kind_from_string(kind);
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config file " + config_path);
    nlohmann::json raw;
    try {
      raw = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("malformed config " + config_path + ": " + e.what());
    }
    if (raw.is_object() && raw.contains("kind") && raw["kind"] != to_string(cli_kind))
      throw ConfigError("config kind " + raw["kind"].dump() + " does not match command \"" +
                        kind + "\"");
    if (raw.is_object()) raw["kind"] = to_string(cli_kind);
    spec = parse_config_json(raw);
    if (seed) spec.base.seed = *seed;
    if (!out_dir.empty()) spec.output_dir = out_dir;
  } catch (const ConfigError& e) {
    std::cerr << "hermite-flow: config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "hermite-flow: config error: " << e.what() << "\n";
    return kExitUsage;
  }
  if (threads) omp_set_num_threads(*threads);

  try {
    const Report report = run_experiment(spec, [](long t, double loss) {
      std::fprintf(stderr, "t=%ld loss=%.9g\n", t, loss);
    });
    write_outputs(report, spec.output_dir);
    for (const auto& c : report.criteria)
      std::printf("%s %s value=%s tolerance=%s%s%s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(),
                  c.value.dump().c_str(), c.tolerance.dump().c_str(),
                  c.detail.empty() ? "" : " ", c.detail.c_str());
    std::printf("report: %s\n", (spec.output_dir / "report.json").string().c_str());
    return report.passed() ? kExitPass : kExitFail;
  } catch (const ConfigError& e) {
    std::cerr << "hermite-flow: config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "hermite-flow: " << e.what() << "\n";
    return kExitFail;
  }
}
