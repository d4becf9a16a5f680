#include "sagent/backends.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <thread>

#include "sagent/util.hpp"

namespace sagent {

std::string_view to_string(BackendErrorKind k) {
  switch (k) {
    case BackendErrorKind::unreachable: return "backend_unreachable";
    case BackendErrorKind::rate_limited: return "rate_limited";
    case BackendErrorKind::script_exhausted: return "script_exhausted";
    case BackendErrorKind::provider_error: return "provider_error";
    case BackendErrorKind::fixture_miss: return "fixture_miss";
    case BackendErrorKind::invalid_request: return "invalid_request";
  }
  return "unknown";
}

BackendError::BackendError(BackendErrorKind k, std::string backend_name, const std::string& msg)
    : std::runtime_error(std::string(to_string(k)) + " [" + backend_name + "]: " + msg),
      kind(k),
      backend(std::move(backend_name)) {}

std::vector<std::string> default_stop_sequences() { return {"# [END]", "\n\n#####"}; }

void SampleRequest::validate(std::string_view backend) const {
  if (n < 1) throw BackendError(BackendErrorKind::invalid_request, std::string(backend), "n must be >= 1");
  if (temperature < 0) {
    throw BackendError(BackendErrorKind::invalid_request, std::string(backend), "temperature must be >= 0");
  }
}

ScriptedModel::ScriptedModel(std::vector<SampleResult> script) : script_(script.begin(), script.end()) {}

void ScriptedModel::push(SampleResult s) {
  std::lock_guard lock(mu_);
  script_.push_back(std::move(s));
}

void ScriptedModel::push(std::string text, int token_count, double sum_log_prob) {
  push(SampleResult{std::move(text), token_count, sum_log_prob});
}

std::size_t ScriptedModel::remaining() const {
  std::lock_guard lock(mu_);
  return script_.size();
}

std::size_t ScriptedModel::calls() const {
  std::lock_guard lock(mu_);
  return requests_.size();
}

std::vector<SampleResult> ScriptedModel::sample(const SampleRequest& req) {
  req.validate(name());
  std::lock_guard lock(mu_);
  requests_.push_back(req);
  if (script_.size() < static_cast<std::size_t>(req.n)) {
    throw BackendError(BackendErrorKind::script_exhausted, name(),
                       "asked for " + std::to_string(req.n) + " samples, " + std::to_string(script_.size()) +
                           " left");
  }
  std::vector<SampleResult> out(script_.begin(), script_.begin() + req.n);
  script_.erase(script_.begin(), script_.begin() + req.n);
  return out;
}

std::vector<SampleResult> CallbackModel::sample(const SampleRequest& req) {
  req.validate(name());
  auto out = fn_(req);
  if (out.size() != static_cast<std::size_t>(req.n)) {
    throw BackendError(BackendErrorKind::provider_error, name(),
                       "returned " + std::to_string(out.size()) + " samples for n=" + std::to_string(req.n));
  }
  return out;
}

TokenBucket::TokenBucket(double rate, double burst)
    : rate_(rate), burst_(std::max(1.0, burst)), tokens_(std::max(1.0, burst)), last_(std::chrono::steady_clock::now()) {}

void TokenBucket::acquire() {
  if (rate_ <= 0) return;
  std::unique_lock lock(mu_);
  while (true) {
    const auto now = std::chrono::steady_clock::now();
    tokens_ = std::min(burst_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
    last_ = now;
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    const auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
    lock.unlock();
    std::this_thread::sleep_for(wait);
    lock.lock();
  }
}

std::chrono::milliseconds RetryPolicy::delay(int attempt) const {
  double ms = static_cast<double>(initial_backoff.count());
  for (int i = 0; i < attempt; ++i) ms *= multiplier;
  return std::chrono::milliseconds(static_cast<long long>(std::min(ms, static_cast<double>(max_backoff.count()))));
}

SearchQueryRecord SearchBackend::search(const std::string& query, int top_k, LinkIdAllocator& ids) {
  if (query.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw BackendError(BackendErrorKind::invalid_request, name(), "empty search query");
  }
  if (top_k < 1) throw BackendError(BackendErrorKind::invalid_request, name(), "top_k must be >= 1");
  Raw raw = fetch(query, top_k);
  SearchQueryRecord rec;
  rec.query = query;
  rec.provider = raw.provider.empty() ? name() : raw.provider;
  rec.retrieved_at = raw.retrieved_at;
  const std::size_t n = std::min(raw.results.size(), static_cast<std::size_t>(top_k));
  for (std::size_t i = 0; i < n; ++i) {
    rec.results.push_back(ResultItem{ids.next(), raw.results[i].link_text, raw.results[i].snippet});
  }
  return rec;
}

std::string normalize_query(std::string_view q) {
  std::string out;
  bool space = false;
  for (unsigned char c : q) {
    if (std::isalnum(c) || c >= 0x80) {
      if (space && !out.empty()) out.push_back(' ');
      space = false;
      out.push_back(static_cast<char>(std::tolower(c)));
    } else {
      space = true;
    }
  }
  return out;
}

FixtureSearch FixtureSearch::load(const std::filesystem::path& path, bool normalized_fallback) {
  FixtureSearch f(normalized_fallback);
  int line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      std::vector<RawResult> results;
      for (const auto& r : j.at("results")) {
        results.push_back(RawResult{r.at("link_text").get<std::string>(), r.at("snippet").get<std::string>()});
      }
      f.add(j.at("query").get<std::string>(), std::move(results));
    } catch (const json::exception& e) {
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return f;
}

void FixtureSearch::add(const std::string& query, std::vector<RawResult> results) {
  normalized_.emplace(normalize_query(query), results);
  exact_[query] = std::move(results);
}

SearchBackend::Raw FixtureSearch::fetch(const std::string& query, int top_k) {
  const std::vector<RawResult>* hit = nullptr;
  if (auto it = exact_.find(query); it != exact_.end()) {
    hit = &it->second;
  } else if (fallback_) {
    if (auto nit = normalized_.find(normalize_query(query)); nit != normalized_.end()) hit = &nit->second;
  }
  if (!hit) throw BackendError(BackendErrorKind::fixture_miss, name(), "no fixture for query '" + query + "'");
  Raw raw;
  raw.provider = name();
  raw.results.assign(hit->begin(), hit->begin() + std::min<std::size_t>(hit->size(), top_k));
  return raw;
}

SearchBackend::Raw SimulatedSearch::fetch(const std::string& query, int top_k) {
  Raw raw;
  raw.provider = name();
  const std::uint64_t h = fnv1a64(normalize_query(query));
  for (int i = 0; i < top_k; ++i) {
    const std::uint64_t r = mix64(h + static_cast<std::uint64_t>(i));
    raw.results.push_back(RawResult{
        "Result " + std::to_string(i + 1) + " for " + query,
        "Page " + std::to_string(r % 1000) + " discusses " + query + ". Fact " + std::to_string((r >> 16) % 97) +
            " is stated here."});
  }
  return raw;
}

void apply_snippet_cap(SearchQueryRecord& rec, std::size_t cap) {
  for (auto& r : rec.results) {
    if (r.snippet.size() > cap) {
      r.snippet = std::string(utf8_prefix(r.snippet, cap));
      rec.truncated_link_ids.push_back(r.link_id);
    }
  }
}

// ---- archive ---------------------------------------------------------------

namespace {

json request_json(const SampleRequest& req) {
  return json{{"prompt", req.prompt}, {"n", req.n}, {"temperature", req.temperature}, {"stop", req.stop},
              {"seed", req.seed}};
}

json raw_json(const SearchBackend::Raw& raw) {
  json results = json::array();
  for (const auto& r : raw.results) results.push_back({{"link_text", r.link_text}, {"snippet", r.snippet}});
  return json{{"results", results}, {"provider", raw.provider}, {"retrieved_at", raw.retrieved_at}};
}

SearchBackend::Raw raw_from_json(const json& j) {
  SearchBackend::Raw raw;
  for (const auto& r : j.at("results")) {
    raw.results.push_back(RawResult{r.at("link_text").get<std::string>(), r.at("snippet").get<std::string>()});
  }
  raw.provider = j.at("provider").get<std::string>();
  raw.retrieved_at = j.at("retrieved_at").get<std::string>();
  return raw;
}

void write_shards(const std::filesystem::path& dir, const std::map<std::string, std::string>& lines_by_key) {
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  std::map<std::string, std::string> shards;
  for (const auto& [key, line] : lines_by_key) {
    auto& s = shards[key.substr(0, 2)];
    s += line;
    s += '\n';
  }
  for (const auto& [shard, content] : shards) write_text_file_atomic(dir / (shard + ".jsonl"), content);
}

std::vector<std::filesystem::path> shard_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".jsonl") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::string FixtureArchive::llm_key(const SampleRequest& req) { return sha256_hex(request_json(req).dump()); }

std::string FixtureArchive::search_key(const std::string& query, int top_k) {
  return sha256_hex(json{{"query", query}, {"top_k", top_k}}.dump());
}

void FixtureArchive::put_llm(const SampleRequest& req, const std::vector<SampleResult>& samples) {
  const std::string key = llm_key(req);
  std::lock_guard lock(mu_);
  auto& e = llm_[key];
  e.request = req;
  e.responses.push_back(samples);
}

std::optional<std::vector<SampleResult>> FixtureArchive::next_llm(const SampleRequest& req) {
  const std::string key = llm_key(req);
  std::lock_guard lock(mu_);
  auto it = llm_.find(key);
  if (it == llm_.end() || it->second.responses.empty()) return std::nullopt;
  auto& e = it->second;
  const std::size_t i = std::min(e.served, e.responses.size() - 1);
  ++e.served;
  return e.responses[i];
}

void FixtureArchive::put_search(const std::string& query, int top_k, const SearchBackend::Raw& raw) {
  std::lock_guard lock(mu_);
  search_[search_key(query, top_k)] = SearchEntry{query, top_k, raw};
}

std::optional<SearchBackend::Raw> FixtureArchive::get_search(const std::string& query, int top_k) const {
  std::lock_guard lock(mu_);
  auto it = search_.find(search_key(query, top_k));
  if (it == search_.end()) return std::nullopt;
  return it->second.raw;
}

std::size_t FixtureArchive::llm_entries() const {
  std::lock_guard lock(mu_);
  return llm_.size();
}

std::size_t FixtureArchive::search_entries() const {
  std::lock_guard lock(mu_);
  return search_.size();
}

void FixtureArchive::save(const std::filesystem::path& dir) const {
  std::lock_guard lock(mu_);
  std::map<std::string, std::string> llm_lines;
  for (const auto& [key, e] : llm_) {
    json j = request_json(e.request);
    j["key"] = key;
    j["responses"] = e.responses;
    llm_lines[key] = j.dump(-1, ' ', false, json::error_handler_t::replace);
  }
  std::map<std::string, std::string> search_lines;
  for (const auto& [key, e] : search_) {
    json j = raw_json(e.raw);
    j["key"] = key;
    j["query"] = e.query;
    j["top_k"] = e.top_k;
    search_lines[key] = j.dump(-1, ' ', false, json::error_handler_t::replace);
  }
  write_shards(dir / "llm", llm_lines);
  write_shards(dir / "search", search_lines);
}

std::shared_ptr<FixtureArchive> FixtureArchive::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("fixture archive not found: " + dir.string());
  auto out = std::make_shared<FixtureArchive>();
  FixtureArchive& a = *out;
  for (const auto& file : shard_files(dir / "llm")) {
    for (const auto& line : read_lines(file)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      LlmEntry e;
      e.request.prompt = j.at("prompt").get<std::string>();
      e.request.n = j.at("n").get<int>();
      e.request.temperature = j.at("temperature").get<double>();
      e.request.stop = j.at("stop").get<std::vector<std::string>>();
      e.request.seed = j.at("seed").get<std::uint64_t>();
      e.responses = j.at("responses").get<std::vector<std::vector<SampleResult>>>();
      const std::string key = llm_key(e.request);
      if (key != j.at("key").get<std::string>()) throw SchemaError("archive key mismatch in " + file.string());
      a.llm_[key] = std::move(e);
    }
  }
  for (const auto& file : shard_files(dir / "search")) {
    for (const auto& line : read_lines(file)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      SearchEntry e{j.at("query").get<std::string>(), j.at("top_k").get<int>(), raw_from_json(j)};
      a.search_[search_key(e.query, e.top_k)] = std::move(e);
    }
  }
  return out;
}

std::vector<SampleResult> RecordingModel::sample(const SampleRequest& req) {
  auto out = inner_->sample(req);
  archive_->put_llm(req, out);
  return out;
}

std::vector<SampleResult> ReplayModel::sample(const SampleRequest& req) {
  req.validate(name());
  auto hit = archive_->next_llm(req);
  if (!hit) {
    throw BackendError(BackendErrorKind::fixture_miss, name(),
                       "no recorded samples for prompt " + FixtureArchive::llm_key(req).substr(0, 12));
  }
  return *hit;
}

SearchBackend::Raw RecordingSearch::fetch(const std::string& query, int top_k) {
  Raw raw = inner_->fetch(query, top_k);
  if (raw.provider.empty()) raw.provider = inner_->name();
  archive_->put_search(query, top_k, raw);
  return raw;
}

SearchBackend::Raw ReplaySearch::fetch(const std::string& query, int top_k) {
  auto hit = archive_->get_search(query, top_k);
  if (!hit) throw BackendError(BackendErrorKind::fixture_miss, name(), "no recorded results for query '" + query + "'");
  return *hit;
}

}  // namespace sagent
