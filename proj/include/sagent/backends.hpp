#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sagent/types.hpp"

namespace sagent {

enum class BackendErrorKind {
  unreachable,
  rate_limited,
  script_exhausted,
  provider_error,
  fixture_miss,
  invalid_request,
};

std::string_view to_string(BackendErrorKind k);

struct BackendError : std::runtime_error {
  BackendErrorKind kind;
  std::string backend;
  BackendError(BackendErrorKind k, std::string backend_name, const std::string& msg);
};

std::vector<std::string> default_stop_sequences();

struct SampleRequest {
  std::string prompt;
  int n = 1;
  double temperature = 0.0;
  std::vector<std::string> stop = default_stop_sequences();
  std::uint64_t seed = 0;

  // Throws BackendError(invalid_request) when n < 1 or temperature < 0.
  void validate(std::string_view backend) const;
};

// Samples completions. Implementations must be safe to call from several threads.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  // Returns exactly req.n samples.
  virtual std::vector<SampleResult> sample(const SampleRequest& req) = 0;
  virtual std::string name() const = 0;
};

// Hands out canned completions in order. Running out is an error, never a wrap-around.
class ScriptedModel : public LanguageModel {
 public:
  ScriptedModel() = default;
  explicit ScriptedModel(std::vector<SampleResult> script);

  void push(SampleResult s);
  void push(std::string text, int token_count, double sum_log_prob);
  std::size_t remaining() const;
  std::size_t calls() const;
  const std::vector<SampleRequest>& requests() const { return requests_; }

  std::vector<SampleResult> sample(const SampleRequest& req) override;
  std::string name() const override { return "scripted"; }

 private:
  mutable std::mutex mu_;
  std::deque<SampleResult> script_;
  std::vector<SampleRequest> requests_;
};

// Answers each request with a user callback.
class CallbackModel : public LanguageModel {
 public:
  using Fn = std::function<std::vector<SampleResult>(const SampleRequest&)>;
  explicit CallbackModel(Fn fn, std::string name = "callback") : fn_(std::move(fn)), name_(std::move(name)) {}
  std::vector<SampleResult> sample(const SampleRequest& req) override;
  std::string name() const override { return name_; }

 private:
  Fn fn_;
  std::string name_;
};

// Deterministic stand-in policy. It reads the live block of any prompt the
// library renders and answers in that step's grammar, so every stage runs offline.
struct SimulatedModelOptions {
  int min_searches = 1;
  int max_searches = 3;          // voluntary searches before terminating
  double malformed_rate = 0.05;  // per sample
  double revise_rate = 0.1;      // per self-check
  double judge_accuracy = 0.7;   // auto-eval: chance an answer is judged correct
  double empty_thoughts_rate = 0.0;
};

class SimulatedModel : public LanguageModel {
 public:
  explicit SimulatedModel(SimulatedModelOptions opts = {}) : opts_(opts) {}
  std::vector<SampleResult> sample(const SampleRequest& req) override;
  std::string name() const override { return "simulated"; }

 private:
  SimulatedModelOptions opts_;
};

// Token bucket: `rate` tokens per second, holding at most `burst`.
class TokenBucket {
 public:
  TokenBucket(double rate, double burst);
  // Blocks until a token is available. rate <= 0 disables limiting.
  void acquire();

 private:
  std::mutex mu_;
  double rate_;
  double burst_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{8000};

  std::chrono::milliseconds delay(int attempt) const;  // attempt is 0-based
};

struct HttpModelOptions {
  std::string base_url;          // e.g. http://localhost:8000
  std::string path = "/v1/completions";
  std::string model;
  std::string api_key_env;       // name of the environment variable holding the key
  RetryPolicy retry;
  double requests_per_second = 0.0;
  double burst = 1.0;
  std::chrono::seconds timeout{120};
  int max_tokens = 1024;
};

// OpenAI-compatible `/v1/completions` client with log-probabilities.
class HttpModel : public LanguageModel {
 public:
  explicit HttpModel(HttpModelOptions opts);
  std::vector<SampleResult> sample(const SampleRequest& req) override;
  std::string name() const override { return "http:" + opts_.base_url; }

  // Parses a completions response body; exposed for tests.
  static std::vector<SampleResult> parse_response(const std::string& body, int n);

 private:
  HttpModelOptions opts_;
  TokenBucket bucket_;
};

// Trajectory-local monotone link id counter.
class LinkIdAllocator {
 public:
  explicit LinkIdAllocator(int next = 1) : next_(next) {}
  int next() { return next_++; }
  int peek() const { return next_; }

 private:
  int next_;
};

struct RawResult {
  std::string link_text;
  std::string snippet;
  bool operator==(const RawResult&) const = default;
};

// Search tool. Implementations return raw results; ids are attached here so
// every backend honours the same allocation rule.
class SearchBackend {
 public:
  virtual ~SearchBackend() = default;
  // Throws BackendError(invalid_request) on an empty query.
  SearchQueryRecord search(const std::string& query, int top_k, LinkIdAllocator& ids);
  virtual std::string name() const = 0;

  struct Raw {
    std::vector<RawResult> results;
    std::string provider;
    std::string retrieved_at;
  };
  virtual Raw fetch(const std::string& query, int top_k) = 0;
};

// Lowercased, punctuation stripped, whitespace collapsed.
std::string normalize_query(std::string_view q);

// Canned results keyed by exact query, with an optional normalized-match fallback.
class FixtureSearch : public SearchBackend {
 public:
  explicit FixtureSearch(bool normalized_fallback = true) : fallback_(normalized_fallback) {}
  // JSONL of {"query": ..., "results": [{"link_text": ..., "snippet": ...}]}.
  static FixtureSearch load(const std::filesystem::path& path, bool normalized_fallback = true);

  void add(const std::string& query, std::vector<RawResult> results);
  std::string name() const override { return "fixture"; }
  Raw fetch(const std::string& query, int top_k) override;

 private:
  bool fallback_;
  std::map<std::string, std::vector<RawResult>> exact_;
  std::map<std::string, std::vector<RawResult>> normalized_;
};

// Synthesizes `top_k` deterministic results for any query.
class SimulatedSearch : public SearchBackend {
 public:
  std::string name() const override { return "simulated"; }
  Raw fetch(const std::string& query, int top_k) override;
};

struct HttpSearchOptions {
  std::string base_url;
  std::string path = "/search";
  std::string api_key_env;
  RetryPolicy retry;
  double requests_per_second = 0.0;
  double burst = 1.0;
  std::chrono::seconds timeout{30};
};

// POST {"query", "top_k"} -> {"results": [{"title", "snippet"}]}.
class HttpSearch : public SearchBackend {
 public:
  explicit HttpSearch(HttpSearchOptions opts);
  std::string name() const override { return "http:" + opts_.base_url; }
  Raw fetch(const std::string& query, int top_k) override;

 private:
  HttpSearchOptions opts_;
  TokenBucket bucket_;
};

// Caps each snippet at `cap` bytes on a UTF-8 boundary and flags the truncated ids.
void apply_snippet_cap(SearchQueryRecord& rec, std::size_t cap);

// Record/replay store. Layout: `<dir>/llm/<hh>.jsonl` and `<dir>/search/<hh>.jsonl`
// where `hh` is the first byte of the entry's SHA-256 key. Credentials are never stored.
class FixtureArchive {
 public:
  FixtureArchive() = default;
  static std::shared_ptr<FixtureArchive> load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;

  static std::string llm_key(const SampleRequest& req);
  static std::string search_key(const std::string& query, int top_k);

  void put_llm(const SampleRequest& req, const std::vector<SampleResult>& samples);
  // Identical requests are served in recorded order; the last recording repeats.
  std::optional<std::vector<SampleResult>> next_llm(const SampleRequest& req);
  void put_search(const std::string& query, int top_k, const SearchBackend::Raw& raw);
  std::optional<SearchBackend::Raw> get_search(const std::string& query, int top_k) const;

  std::size_t llm_entries() const;
  std::size_t search_entries() const;

 private:
  struct LlmEntry {
    SampleRequest request;
    std::vector<std::vector<SampleResult>> responses;
    std::size_t served = 0;
  };
  struct SearchEntry {
    std::string query;
    int top_k = 0;
    SearchBackend::Raw raw;
  };
  mutable std::mutex mu_;
  std::map<std::string, LlmEntry> llm_;
  std::map<std::string, SearchEntry> search_;
};

class RecordingModel : public LanguageModel {
 public:
  RecordingModel(std::shared_ptr<LanguageModel> inner, std::shared_ptr<FixtureArchive> archive)
      : inner_(std::move(inner)), archive_(std::move(archive)) {}
  std::vector<SampleResult> sample(const SampleRequest& req) override;
  std::string name() const override { return "recording:" + inner_->name(); }

 private:
  std::shared_ptr<LanguageModel> inner_;
  std::shared_ptr<FixtureArchive> archive_;
};

class ReplayModel : public LanguageModel {
 public:
  explicit ReplayModel(std::shared_ptr<FixtureArchive> archive) : archive_(std::move(archive)) {}
  std::vector<SampleResult> sample(const SampleRequest& req) override;
  std::string name() const override { return "replay"; }

 private:
  std::shared_ptr<FixtureArchive> archive_;
};

class RecordingSearch : public SearchBackend {
 public:
  RecordingSearch(std::shared_ptr<SearchBackend> inner, std::shared_ptr<FixtureArchive> archive)
      : inner_(std::move(inner)), archive_(std::move(archive)) {}
  std::string name() const override { return "recording:" + inner_->name(); }
  Raw fetch(const std::string& query, int top_k) override;

 private:
  std::shared_ptr<SearchBackend> inner_;
  std::shared_ptr<FixtureArchive> archive_;
};

class ReplaySearch : public SearchBackend {
 public:
  explicit ReplaySearch(std::shared_ptr<FixtureArchive> archive) : archive_(std::move(archive)) {}
  std::string name() const override { return "replay"; }
  Raw fetch(const std::string& query, int top_k) override;

 private:
  std::shared_ptr<FixtureArchive> archive_;
};

}  // namespace sagent
