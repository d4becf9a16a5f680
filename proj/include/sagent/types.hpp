#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace sagent {

using json = nlohmann::json;

inline constexpr int kTrajectorySchemaVersion = 1;

enum class QuestionSource { hotpotqa, eli5, eli5_askh, eli5_asks, bamboogle, bamtwoogle, custom };

std::string_view to_string(QuestionSource s);
QuestionSource question_source_from_string(std::string_view s);

// Eval-only sources must never feed a fine-tuning mixture.
bool is_eval_only(QuestionSource s);

struct Question {
  std::string id;
  std::string text;
  QuestionSource source = QuestionSource::custom;
  std::optional<std::string> ref_answer;

  bool operator==(const Question&) const = default;
};

struct ResultItem {
  int link_id = 0;
  std::string link_text;
  std::string snippet;

  bool operator==(const ResultItem&) const = default;
};

struct SearchAction {
  std::string thoughts;
  std::string query;
  bool operator==(const SearchAction&) const = default;
};

struct SelectLinkAction {
  std::string thoughts;
  std::vector<int> selected_link_ids;
  std::vector<ResultItem> selected_links;
  std::string grounded_summarization;
  bool operator==(const SelectLinkAction&) const = default;
};

struct TerminateAction {
  std::string thoughts;
  bool operator==(const TerminateAction&) const = default;
};

struct AnswerAction {
  std::string thoughts;
  std::string answer_text;
  bool operator==(const AnswerAction&) const = default;
};

struct CheckAnswerAction {
  bool passed = false;
  std::string rationale;  // comment lines, newline-joined
  bool operator==(const CheckAnswerAction&) const = default;
};

struct ReviseAnswerAction {
  std::string revised_answer;
  std::string rationale;
  bool operator==(const ReviseAnswerAction&) const = default;
};

using Action = std::variant<SearchAction, SelectLinkAction, TerminateAction, AnswerAction,
                            CheckAnswerAction, ReviseAnswerAction>;

std::string_view action_name(const Action& a);

// True when the action carries a thoughts/rationale element and it is blank.
bool has_empty_thoughts(const Action& a);

// Prompt/step kinds. The first five are agent reasoning steps; `done` is a terminal state only.
enum class StepKind {
  decision,
  summarize,
  answer_gen,
  relevance_check,
  grounding_check,
  reward_ranker,
  auto_eval,
  done,
};

std::string_view to_string(StepKind k);
StepKind step_kind_from_string(std::string_view s);
bool is_agent_step(StepKind k);

enum class SelectionMethod { min_perplexity, rm_ranked };
std::string_view to_string(SelectionMethod m);
SelectionMethod selection_method_from_string(std::string_view s);

struct SampleResult {
  std::string text;
  int token_count = 1;
  double sum_log_prob = 0.0;  // natural log

  double perplexity() const;
  bool operator==(const SampleResult&) const = default;
};

struct SearchQueryRecord {
  std::string query;
  std::vector<ResultItem> results;
  std::string provider;
  std::string retrieved_at;
  std::vector<int> truncated_link_ids;

  bool operator==(const SearchQueryRecord&) const = default;
};

struct SampleRecord {
  SampleResult sample;
  int attempt = 0;
  bool valid = false;
  std::string error;  // empty when valid
  bool empty_thoughts = false;

  bool operator==(const SampleRecord&) const = default;
};

struct StepRecord {
  StepKind kind = StepKind::decision;
  std::string prompt;
  std::vector<SampleRecord> samples;
  int selected_index = -1;           // 0-based into samples
  int min_perplexity_index = -1;     // on-policy choice, kept for audit
  SelectionMethod selection_method = SelectionMethod::min_perplexity;
  bool rank_fallback = false;        // RM was consulted but its verdict was unusable
  std::optional<std::string> rank_raw;      // RM completion, kept for audit
  int attempts = 1;
  std::optional<SearchQueryRecord> search;  // summarize: CURRENT_SEARCH_RESULTS
  std::optional<std::string> answer_in;     // checks: ANSWER shown to the model
  std::optional<Action> action;             // parsed selected action

  bool operator==(const StepRecord&) const = default;
};

struct AgentConfig {
  double temperature = 0.5;
  int samples_per_step = 4;
  int top_k_snippets = 3;
  int max_searches = 10;
  int max_parse_retries = 2;
  SelectionMethod selection = SelectionMethod::min_perplexity;
  std::size_t snippet_byte_cap = 1024;

  void validate() const;
  bool operator==(const AgentConfig&) const = default;
};

enum class TrajectoryStatus { in_progress, completed, failed };
std::string_view to_string(TrajectoryStatus s);

struct Trajectory {
  Question question;
  int repeat = 0;
  int generation = 0;
  std::uint64_t rng_seed = 0;
  AgentConfig config;
  std::vector<StepRecord> steps;
  std::vector<Action> past_actions;
  int remaining_searches = 0;
  int next_link_id = 1;
  std::optional<std::string> draft_answer;
  std::optional<std::string> final_answer;
  TrajectoryStatus status = TrajectoryStatus::in_progress;
  std::optional<std::string> failure_reason;

  std::string id() const;
  int search_count() const;
  bool operator==(const Trajectory&) const = default;
};

// Parses "[link_id=N]" and "[link_id=N, M, ...]" markers.
std::vector<int> cited_link_ids(std::string_view text);

// Every link_id shown to the model in this trajectory's search results.
std::vector<int> observed_link_ids(const Trajectory& t);

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void to_json(json& j, const Question& q);
void from_json(const json& j, Question& q);
void to_json(json& j, const ResultItem& r);
void from_json(const json& j, ResultItem& r);
void to_json(json& j, const Action& a);
void from_json(const json& j, Action& a);
void to_json(json& j, const SampleResult& s);
void from_json(const json& j, SampleResult& s);
void to_json(json& j, const SearchQueryRecord& r);
void from_json(const json& j, SearchQueryRecord& r);
void to_json(json& j, const SampleRecord& s);
void from_json(const json& j, SampleRecord& s);
void to_json(json& j, const StepRecord& s);
void from_json(const json& j, StepRecord& s);
void to_json(json& j, const AgentConfig& c);
void from_json(const json& j, AgentConfig& c);
void to_json(json& j, const Trajectory& t);
void from_json(const json& j, Trajectory& t);

// One JSONL line, no trailing newline.
std::string serialize_trajectory(const Trajectory& t);
Trajectory parse_trajectory(std::string_view line);

}  // namespace sagent
