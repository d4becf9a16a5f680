#include <httplib.h>

#include <cstdlib>
#include <thread>

#include "sagent/backends.hpp"
#include "sagent/util.hpp"

namespace sagent {

namespace {

std::string env_or_empty(const std::string& var) {
  if (var.empty()) return {};
  const char* v = std::getenv(var.c_str());
  return v ? std::string(v) : std::string();
}

bool transient_status(int status) { return status == 429 || status == 408 || status >= 500; }

// POSTs with retry/backoff. Returns the body of the first 2xx response.
std::string post_with_retry(const std::string& backend, const std::string& base_url, const std::string& path,
                            const std::string& body, const std::string& api_key, const RetryPolicy& retry,
                            TokenBucket& bucket, std::chrono::seconds timeout) {
  httplib::Client client(base_url);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);

  BackendErrorKind last_kind = BackendErrorKind::unreachable;
  std::string last_msg;
  for (int attempt = 0; attempt <= retry.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(retry.delay(attempt - 1));
    bucket.acquire();
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      last_kind = BackendErrorKind::unreachable;
      last_msg = "request to " + base_url + path + " failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 200 && res->status < 300) return res->body;
    last_kind = res->status == 429 ? BackendErrorKind::rate_limited : BackendErrorKind::provider_error;
    last_msg = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
    if (!transient_status(res->status)) break;
  }
  throw BackendError(last_kind, backend, last_msg);
}

}  // namespace

HttpModel::HttpModel(HttpModelOptions opts) : opts_(std::move(opts)), bucket_(opts_.requests_per_second, opts_.burst) {
  if (opts_.base_url.empty()) throw BackendError(BackendErrorKind::invalid_request, "http", "base_url is empty");
}

std::vector<SampleResult> HttpModel::parse_response(const std::string& body, int n) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw BackendError(BackendErrorKind::provider_error, "http", std::string("malformed response: ") + e.what());
  }
  if (!j.contains("choices") || !j["choices"].is_array()) {
    throw BackendError(BackendErrorKind::provider_error, "http", "response has no choices");
  }
  std::vector<std::pair<int, SampleResult>> indexed;
  for (const auto& c : j["choices"]) {
    SampleResult s;
    s.text = c.value("text", "");
    const auto lp = c.find("logprobs");
    if (lp == c.end() || !lp->is_object() || !lp->contains("token_logprobs")) {
      throw BackendError(BackendErrorKind::provider_error, "http", "choice without token_logprobs");
    }
    int count = 0;
    double sum = 0.0;
    for (const auto& v : (*lp)["token_logprobs"]) {
      if (v.is_null()) continue;
      sum += v.get<double>();
      ++count;
    }
    s.token_count = std::max(count, 1);
    s.sum_log_prob = sum;
    indexed.emplace_back(c.value("index", static_cast<int>(indexed.size())), std::move(s));
  }
  std::stable_sort(indexed.begin(), indexed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  if (indexed.size() != static_cast<std::size_t>(n)) {
    throw BackendError(BackendErrorKind::provider_error, "http",
                       "expected " + std::to_string(n) + " choices, got " + std::to_string(indexed.size()));
  }
  std::vector<SampleResult> out;
  for (auto& [i, s] : indexed) out.push_back(std::move(s));
  return out;
}

std::vector<SampleResult> HttpModel::sample(const SampleRequest& req) {
  req.validate(name());
  json body = {{"model", opts_.model}, {"prompt", req.prompt}, {"n", req.n}, {"temperature", req.temperature},
               {"stop", req.stop}, {"logprobs", 1}, {"max_tokens", opts_.max_tokens},
               {"seed", req.seed & 0x7fffffffffffffffULL}};
  const std::string resp = post_with_retry(name(), opts_.base_url, opts_.path, body.dump(), env_or_empty(opts_.api_key_env),
                                           opts_.retry, bucket_, opts_.timeout);
  try {
    return parse_response(resp, req.n);
  } catch (const BackendError& e) {
    throw BackendError(e.kind, name(), e.what());
  }
}

HttpSearch::HttpSearch(HttpSearchOptions opts) : opts_(std::move(opts)), bucket_(opts_.requests_per_second, opts_.burst) {
  if (opts_.base_url.empty()) throw BackendError(BackendErrorKind::invalid_request, "http-search", "base_url is empty");
}

SearchBackend::Raw HttpSearch::fetch(const std::string& query, int top_k) {
  const json body = {{"query", query}, {"top_k", top_k}};
  const std::string resp = post_with_retry(name(), opts_.base_url, opts_.path, body.dump(),
                                           env_or_empty(opts_.api_key_env), opts_.retry, bucket_, opts_.timeout);
  Raw raw;
  raw.provider = name();
  raw.retrieved_at = utc_timestamp();
  try {
    const json j = json::parse(resp);
    for (const auto& r : j.at("results")) {
      raw.results.push_back(RawResult{r.at("title").get<std::string>(), r.value("snippet", "")});
    }
  } catch (const json::exception& e) {
    throw BackendError(BackendErrorKind::provider_error, name(), std::string("malformed response: ") + e.what());
  }
  return raw;
}

}  // namespace sagent
