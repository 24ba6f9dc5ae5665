#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "driftlab/experiment.hpp"

#ifndef DRIFTLAB_GIT_DESCRIBE
#define DRIFTLAB_GIT_DESCRIBE "unknown"
#endif

using namespace driftlab;

namespace {

enum Exit { kOk = 0, kConfig = 2, kRuntime = 3, kGate = 4 };

std::string utc_now() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

json sidecar(const ExperimentConfig& c, const std::vector<Record>& rows, const std::string& status,
             const std::string& error) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["config"] = to_json(c);
  j["config_hash"] = config_hash(c);
  j["seed"] = c.seed;
  j["git_describe"] = DRIFTLAB_GIT_DESCRIBE;
  j["created_utc"] = utc_now();
  j["status"] = status;
  j["partial"] = status != "ok";
  j["error"] = error.empty() ? json(nullptr) : json(error);
  j["csv_columns"] = csv_columns();
  j["records"] = json::array();
  for (auto& r : rows) j["records"].push_back(record_json(c, r));
  return j;
}

bool write_file(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  f << body;
  return bool(f);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"driftlab: random walks in dynamic exclusion and random-walk environments"};
  std::string sub, config_path, out, format = "csv";
  std::optional<uint64_t> seed;
  int threads = 0;
  app.add_option("subcommand", sub, "speed | theta | backtrack | vl | rho-c | coupling-test | env-check | scan")
      ->check(CLI::IsMember(subcommands()));
  app.add_option("--config", config_path, "JSON config (a provenance sidecar is accepted)");
  app.add_option("--seed", seed, "master seed, overrides the config");
  app.add_option("--threads", threads, "worker threads (default: DRIFTLAB_THREADS or all cores)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--out", out, "output path (default: stdout)");
  app.add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  std::string text = "{}", source = "<defaults>";
  if (!config_path.empty()) {
    std::ifstream f(config_path, std::ios::binary);
    if (!f) {
      std::cerr << config_path << ": cannot read config\n";
      return kConfig;
    }
    std::stringstream ss;
    ss << f.rdbuf();
    text = ss.str();
    source = config_path;
  }

  ExperimentConfig cfg;
  try {
    cfg = parse_config(text);
    if (!sub.empty()) cfg.subcommand = sub;
    if (seed) cfg.seed = *seed;
    if (!out.empty()) cfg.out = out;
    if (cfg.subcommand.empty()) throw ConfigError("subcommand: missing (positional or in the config)", 0);
    validate(cfg, text);
  } catch (const ConfigError& e) {
    std::cerr << source << ":" << e.line << ": " << e.what() << "\n";
    return kConfig;
  }

  std::vector<Record> rows;
  std::string status = "ok", error;
  int rc = kOk;
  try {
    run_experiment(cfg, threads, rows);
  } catch (const GateFailure& e) {
    status = "gate_failed";
    error = e.what();
    rc = kGate;
  } catch (const json::exception& e) {
    std::cerr << source << ":" << line_of_key(text, "params") << ": params: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    status = "aborted";
    error = e.what();
    rc = kRuntime;
  }
  if (rc != kOk) std::cerr << "driftlab: " << status << ": " << error << "\n";

  auto meta = sidecar(cfg, rows, status, error);
  std::string body;
  if (format == "json") {
    body = meta.dump(2) + "\n";
  } else {
    body = csv_header();
    for (auto& r : rows) body += csv_row(cfg, r);
  }
  if (cfg.out.empty()) {
    std::cout << body;
  } else {
    if (!write_file(cfg.out, body)) {
      std::cerr << cfg.out << ": cannot write\n";
      return kRuntime;
    }
    if (format == "csv" && !write_file(cfg.out + ".json", meta.dump(2) + "\n")) {
      std::cerr << cfg.out << ".json: cannot write\n";
      return kRuntime;
    }
  }
  return rc;
}
