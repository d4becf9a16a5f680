#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sagent/backends.hpp"
#include "sagent/types.hpp"

namespace sagent {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One model or search backend. Credentials are named by `api_key_env`, never stored.
struct BackendSpec {
  std::string backend = "simulated";  // models: simulated|http; search: simulated|fixture|http
  std::string base_url;
  std::string path;
  std::string model;
  std::string api_key_env;
  double requests_per_second = 0.0;
  double burst = 1.0;
  int max_retries = 3;
  int timeout_s = 120;
  SimulatedModelOptions sim;
  std::string fixture;  // search fixture JSONL
  bool normalized_fallback = true;
};

struct LoopSpec {
  std::map<int, BackendSpec> endpoints;  // model per generation >= 1
  int repeats = 4;
  int eval_runs = 10;
  bool rerank = false;
  int repeats_cap = 0;
  std::vector<std::string> filters;
};

struct RunConfig {
  AgentConfig agent;
  BackendSpec llm;
  BackendSpec search;
  std::optional<BackendSpec> judge;   // defaults to llm
  std::optional<BackendSpec> ranker;  // defaults to llm
  std::string templates;              // manifest path; empty = shipped set
  std::uint64_t run_seed = 0;
  int parallelism = 1;
  int generation = 0;
  std::string record;  // archive directory to record into
  std::string replay;  // archive directory to replay from
  LoopSpec loop;
};

void to_json(json& j, const BackendSpec& b);
void from_json(const json& j, BackendSpec& b);
void to_json(json& j, const RunConfig& c);
void from_json(const json& j, RunConfig& c);

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
std::optional<std::string> process_env(const std::string& name);

// Defaults < config file < environment (SAGENT_*) < `flags` (a JSON merge patch).
RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const json& flags,
                          const EnvLookup& env = process_env);

// Environment variables consulted by load_run_config.
std::vector<std::string> config_env_vars();

struct Backends {
  std::shared_ptr<LanguageModel> llm;
  std::shared_ptr<LanguageModel> judge;
  std::shared_ptr<LanguageModel> ranker;
  std::shared_ptr<SearchBackend> search;
  std::shared_ptr<FixtureArchive> archive;  // set when recording or replaying
  std::filesystem::path record_dir;

  // Writes the recorded archive, if any.
  void finish() const;
};

std::shared_ptr<LanguageModel> make_model(const BackendSpec& spec);
std::shared_ptr<SearchBackend> make_search(const BackendSpec& spec);
// `llm_override` replaces the policy model (the loop's per-generation endpoint).
Backends make_backends(const RunConfig& cfg, const std::optional<BackendSpec>& llm_override = std::nullopt);

}  // namespace sagent
