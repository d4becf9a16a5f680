#include "sagent/config.hpp"

#include <cstdlib>
#include <set>

#include "sagent/util.hpp"

namespace sagent {

namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (k == "api_key" || k == "token" || k == "password" || k == "secret") {
      throw ConfigError(where + "." + k + ": credentials are only accepted as environment references (api_key_env)");
    }
    if (!allowed.count(k)) throw ConfigError("unknown config key " + where + "." + k);
  }
}

}  // namespace

void to_json(json& j, const BackendSpec& b) {
  j = json{{"backend", b.backend},
           {"base_url", b.base_url},
           {"path", b.path},
           {"model", b.model},
           {"api_key_env", b.api_key_env},
           {"requests_per_second", b.requests_per_second},
           {"burst", b.burst},
           {"max_retries", b.max_retries},
           {"timeout_s", b.timeout_s},
           {"sim",
            {{"min_searches", b.sim.min_searches},
             {"max_searches", b.sim.max_searches},
             {"malformed_rate", b.sim.malformed_rate},
             {"revise_rate", b.sim.revise_rate},
             {"judge_accuracy", b.sim.judge_accuracy},
             {"empty_thoughts_rate", b.sim.empty_thoughts_rate}}},
           {"fixture", b.fixture},
           {"normalized_fallback", b.normalized_fallback}};
}

void from_json(const json& j, BackendSpec& b) {
  check_keys(j,
             {"backend", "base_url", "path", "model", "api_key_env", "requests_per_second", "burst", "max_retries",
              "timeout_s", "sim", "fixture", "normalized_fallback"},
             "backend");
  BackendSpec d;
  b.backend = j.value("backend", d.backend);
  b.base_url = j.value("base_url", d.base_url);
  b.path = j.value("path", d.path);
  b.model = j.value("model", d.model);
  b.api_key_env = j.value("api_key_env", d.api_key_env);
  b.requests_per_second = j.value("requests_per_second", d.requests_per_second);
  b.burst = j.value("burst", d.burst);
  b.max_retries = j.value("max_retries", d.max_retries);
  b.timeout_s = j.value("timeout_s", d.timeout_s);
  b.fixture = j.value("fixture", d.fixture);
  b.normalized_fallback = j.value("normalized_fallback", d.normalized_fallback);
  b.sim = d.sim;
  if (j.contains("sim")) {
    const json& s = j.at("sim");
    check_keys(s, {"min_searches", "max_searches", "malformed_rate", "revise_rate", "judge_accuracy", "empty_thoughts_rate"},
               "sim");
    b.sim.min_searches = s.value("min_searches", d.sim.min_searches);
    b.sim.max_searches = s.value("max_searches", d.sim.max_searches);
    b.sim.malformed_rate = s.value("malformed_rate", d.sim.malformed_rate);
    b.sim.revise_rate = s.value("revise_rate", d.sim.revise_rate);
    b.sim.judge_accuracy = s.value("judge_accuracy", d.sim.judge_accuracy);
    b.sim.empty_thoughts_rate = s.value("empty_thoughts_rate", d.sim.empty_thoughts_rate);
  }
}

void to_json(json& j, const RunConfig& c) {
  json endpoints = json::object();
  for (const auto& [g, spec] : c.loop.endpoints) endpoints[std::to_string(g)] = spec;
  j = json{{"agent", c.agent},
           {"llm", c.llm},
           {"search", c.search},
           {"templates", c.templates},
           {"run_seed", c.run_seed},
           {"parallelism", c.parallelism},
           {"generation", c.generation},
           {"record", c.record},
           {"replay", c.replay},
           {"loop",
            {{"endpoints", endpoints},
             {"repeats", c.loop.repeats},
             {"eval_runs", c.loop.eval_runs},
             {"rerank", c.loop.rerank},
             {"repeats_cap", c.loop.repeats_cap},
             {"filters", c.loop.filters}}}};
  j["judge"] = c.judge ? json(*c.judge) : json(nullptr);
  j["ranker"] = c.ranker ? json(*c.ranker) : json(nullptr);
}

void from_json(const json& j, RunConfig& c) {
  check_keys(j,
             {"agent", "llm", "search", "judge", "ranker", "templates", "run_seed", "parallelism", "generation",
              "record", "replay", "loop"},
             "config");
  try {
    RunConfig d;
    c.agent = j.contains("agent") ? j.at("agent").get<AgentConfig>() : d.agent;
    c.llm = j.contains("llm") ? j.at("llm").get<BackendSpec>() : d.llm;
    c.search = j.contains("search") ? j.at("search").get<BackendSpec>() : d.search;
    c.judge.reset();
    c.ranker.reset();
    if (j.contains("judge") && !j.at("judge").is_null()) c.judge = j.at("judge").get<BackendSpec>();
    if (j.contains("ranker") && !j.at("ranker").is_null()) c.ranker = j.at("ranker").get<BackendSpec>();
    c.templates = j.value("templates", d.templates);
    c.run_seed = j.value("run_seed", d.run_seed);
    c.parallelism = j.value("parallelism", d.parallelism);
    c.generation = j.value("generation", d.generation);
    c.record = j.value("record", d.record);
    c.replay = j.value("replay", d.replay);
    c.loop = d.loop;
    if (j.contains("loop")) {
      const json& l = j.at("loop");
      check_keys(l, {"endpoints", "repeats", "eval_runs", "rerank", "repeats_cap", "filters"}, "loop");
      if (l.contains("endpoints")) {
        for (const auto& [k, v] : l.at("endpoints").items()) c.loop.endpoints[std::stoi(k)] = v.get<BackendSpec>();
      }
      c.loop.repeats = l.value("repeats", d.loop.repeats);
      c.loop.eval_runs = l.value("eval_runs", d.loop.eval_runs);
      c.loop.rerank = l.value("rerank", d.loop.rerank);
      c.loop.repeats_cap = l.value("repeats_cap", d.loop.repeats_cap);
      c.loop.filters = l.value("filters", d.loop.filters);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  if (c.parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (!c.record.empty() && !c.replay.empty()) throw ConfigError("record and replay are mutually exclusive");
  try {
    c.agent.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (!v) return std::nullopt;
  return std::string(v);
}

namespace {

struct EnvVar {
  const char* name;
  const char* pointer;  // JSON pointer into the config
  bool numeric;
};

const EnvVar kEnvVars[] = {
    {"SAGENT_RUN_SEED", "/run_seed", true},
    {"SAGENT_PARALLELISM", "/parallelism", true},
    {"SAGENT_GENERATION", "/generation", true},
    {"SAGENT_TEMPLATES", "/templates", false},
    {"SAGENT_RECORD", "/record", false},
    {"SAGENT_REPLAY", "/replay", false},
    {"SAGENT_LLM_BACKEND", "/llm/backend", false},
    {"SAGENT_LLM_URL", "/llm/base_url", false},
    {"SAGENT_LLM_MODEL", "/llm/model", false},
    {"SAGENT_LLM_API_KEY_ENV", "/llm/api_key_env", false},
    {"SAGENT_SEARCH_BACKEND", "/search/backend", false},
    {"SAGENT_SEARCH_URL", "/search/base_url", false},
    {"SAGENT_SEARCH_FIXTURE", "/search/fixture", false},
    {"SAGENT_SEARCH_API_KEY_ENV", "/search/api_key_env", false},
};

void deep_merge(json& base, const json& patch) {
  for (const auto& [k, v] : patch.items()) {
    if (v.is_object() && base.contains(k) && base[k].is_object()) {
      deep_merge(base[k], v);
    } else {
      base[k] = v;
    }
  }
}

}  // namespace

std::vector<std::string> config_env_vars() {
  std::vector<std::string> out;
  for (const auto& e : kEnvVars) out.emplace_back(e.name);
  return out;
}

RunConfig load_run_config(const std::optional<fs::path>& file, const json& flags, const EnvLookup& env) {
  json merged = json::object();
  if (file) {
    try {
      merged = json::parse(read_text_file(*file));
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    } catch (const json::exception& e) {
      throw ConfigError("config " + file->string() + " is not valid JSON: " + e.what());
    }
    if (!merged.is_object()) throw ConfigError("config " + file->string() + " must hold a JSON object");
    // Paths in the file are relative to the file.
    const fs::path base = file->parent_path();
    auto rebase = [&](const char* pointer) {
      const json::json_pointer ptr(pointer);
      if (!merged.contains(ptr) || !merged[ptr].is_string()) return;
      const fs::path p = merged[ptr].get<std::string>();
      if (!p.empty() && p.is_relative()) merged[ptr] = (base / p).lexically_normal().string();
    };
    for (const char* ptr : {"/templates", "/search/fixture", "/record", "/replay"}) rebase(ptr);
  }
  json env_patch = json::object();
  for (const auto& e : kEnvVars) {
    const auto v = env(e.name);
    if (!v) continue;
    json value;
    if (e.numeric) {
      try {
        value = std::stoull(*v);
      } catch (const std::exception&) {
        throw ConfigError(std::string(e.name) + " must be a non-negative integer, got '" + *v + "'");
      }
    } else {
      value = *v;
    }
    env_patch[json::json_pointer(e.pointer)] = value;
  }
  deep_merge(merged, env_patch);
  if (!flags.is_null()) deep_merge(merged, flags);
  return merged.get<RunConfig>();
}

std::shared_ptr<LanguageModel> make_model(const BackendSpec& spec) {
  if (spec.backend == "simulated") return std::make_shared<SimulatedModel>(spec.sim);
  if (spec.backend == "http") {
    if (spec.base_url.empty()) throw ConfigError("http model backend needs base_url");
    HttpModelOptions o;
    o.base_url = spec.base_url;
    if (!spec.path.empty()) o.path = spec.path;
    o.model = spec.model;
    o.api_key_env = spec.api_key_env;
    o.requests_per_second = spec.requests_per_second;
    o.burst = spec.burst;
    o.retry.max_retries = spec.max_retries;
    o.timeout = std::chrono::seconds(spec.timeout_s);
    return std::make_shared<HttpModel>(o);
  }
  throw ConfigError("unknown model backend '" + spec.backend + "'");
}

std::shared_ptr<SearchBackend> make_search(const BackendSpec& spec) {
  if (spec.backend == "simulated") return std::make_shared<SimulatedSearch>();
  if (spec.backend == "fixture") {
    if (spec.fixture.empty()) throw ConfigError("fixture search backend needs a fixture path");
    try {
      return std::make_shared<FixtureSearch>(FixtureSearch::load(spec.fixture, spec.normalized_fallback));
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
  }
  if (spec.backend == "http") {
    if (spec.base_url.empty()) throw ConfigError("http search backend needs base_url");
    HttpSearchOptions o;
    o.base_url = spec.base_url;
    if (!spec.path.empty()) o.path = spec.path;
    o.api_key_env = spec.api_key_env;
    o.requests_per_second = spec.requests_per_second;
    o.burst = spec.burst;
    o.retry.max_retries = spec.max_retries;
    o.timeout = std::chrono::seconds(spec.timeout_s);
    return std::make_shared<HttpSearch>(o);
  }
  throw ConfigError("unknown search backend '" + spec.backend + "'");
}

Backends make_backends(const RunConfig& cfg, const std::optional<BackendSpec>& llm_override) {
  Backends b;
  if (!cfg.replay.empty()) {
    if (!fs::is_directory(cfg.replay)) throw ConfigError("replay archive " + cfg.replay + " does not exist");
    b.archive = FixtureArchive::load(cfg.replay);
    b.llm = b.judge = b.ranker = std::make_shared<ReplayModel>(b.archive);
    b.search = std::make_shared<ReplaySearch>(b.archive);
    return b;
  }
  b.llm = make_model(llm_override.value_or(cfg.llm));
  b.judge = make_model(cfg.judge.value_or(cfg.llm));
  b.ranker = make_model(cfg.ranker.value_or(cfg.llm));
  b.search = make_search(cfg.search);
  if (!cfg.record.empty()) {
    b.record_dir = cfg.record;
    b.archive = fs::is_directory(cfg.record) ? FixtureArchive::load(cfg.record) : std::make_shared<FixtureArchive>();
    b.llm = std::make_shared<RecordingModel>(b.llm, b.archive);
    b.judge = std::make_shared<RecordingModel>(b.judge, b.archive);
    b.ranker = std::make_shared<RecordingModel>(b.ranker, b.archive);
    b.search = std::make_shared<RecordingSearch>(b.search, b.archive);
  }
  return b;
}

void Backends::finish() const {
  if (archive && !record_dir.empty()) archive->save(record_dir);
}

}  // namespace sagent
