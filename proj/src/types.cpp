#include "sagent/types.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

namespace sagent {

namespace {

template <typename Enum, std::size_t N>
Enum enum_from(std::string_view s, const std::pair<Enum, std::string_view> (&table)[N], const char* what) {
  for (const auto& [value, name] : table) {
    if (name == s) return value;
  }
  throw SchemaError(std::string("unknown ") + what + ": '" + std::string(s) + "'");
}

template <typename Enum, std::size_t N>
std::string_view enum_name(Enum e, const std::pair<Enum, std::string_view> (&table)[N]) {
  for (const auto& [value, name] : table) {
    if (value == e) return name;
  }
  return "?";
}

constexpr std::pair<QuestionSource, std::string_view> kSources[] = {
    {QuestionSource::hotpotqa, "hotpotqa"},     {QuestionSource::eli5, "eli5"},
    {QuestionSource::eli5_askh, "eli5_askh"},   {QuestionSource::eli5_asks, "eli5_asks"},
    {QuestionSource::bamboogle, "bamboogle"},   {QuestionSource::bamtwoogle, "bamtwoogle"},
    {QuestionSource::custom, "custom"},
};

constexpr std::pair<StepKind, std::string_view> kStepKinds[] = {
    {StepKind::decision, "decision"},
    {StepKind::summarize, "summarize"},
    {StepKind::answer_gen, "answer_gen"},
    {StepKind::relevance_check, "relevance_check"},
    {StepKind::grounding_check, "grounding_check"},
    {StepKind::reward_ranker, "reward_ranker"},
    {StepKind::auto_eval, "auto_eval"},
    {StepKind::done, "done"},
};

constexpr std::pair<SelectionMethod, std::string_view> kMethods[] = {
    {SelectionMethod::min_perplexity, "min_perplexity"},
    {SelectionMethod::rm_ranked, "rm_ranked"},
};

constexpr std::pair<TrajectoryStatus, std::string_view> kStatuses[] = {
    {TrajectoryStatus::in_progress, "in_progress"},
    {TrajectoryStatus::completed, "completed"},
    {TrajectoryStatus::failed, "failed"},
};

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

std::string_view to_string(QuestionSource s) { return enum_name(s, kSources); }
QuestionSource question_source_from_string(std::string_view s) {
  return enum_from(s, kSources, "question source");
}
bool is_eval_only(QuestionSource s) {
  return s == QuestionSource::bamboogle || s == QuestionSource::bamtwoogle;
}

std::string_view to_string(StepKind k) { return enum_name(k, kStepKinds); }
StepKind step_kind_from_string(std::string_view s) { return enum_from(s, kStepKinds, "step kind"); }
bool is_agent_step(StepKind k) {
  switch (k) {
    case StepKind::decision:
    case StepKind::summarize:
    case StepKind::answer_gen:
    case StepKind::relevance_check:
    case StepKind::grounding_check:
      return true;
    default:
      return false;
  }
}

std::string_view to_string(SelectionMethod m) { return enum_name(m, kMethods); }
SelectionMethod selection_method_from_string(std::string_view s) {
  return enum_from(s, kMethods, "selection method");
}

std::string_view to_string(TrajectoryStatus s) { return enum_name(s, kStatuses); }

std::string_view action_name(const Action& a) {
  struct {
    std::string_view operator()(const SearchAction&) const { return "Search"; }
    std::string_view operator()(const SelectLinkAction&) const { return "SelectLink"; }
    std::string_view operator()(const TerminateAction&) const { return "Terminate"; }
    std::string_view operator()(const AnswerAction&) const { return "Answer"; }
    std::string_view operator()(const CheckAnswerAction&) const { return "CheckAnswer"; }
    std::string_view operator()(const ReviseAnswerAction&) const { return "ReviseAnswer"; }
  } v;
  return std::visit(v, a);
}

bool has_empty_thoughts(const Action& a) {
  struct {
    bool operator()(const SearchAction& x) const { return blank(x.thoughts); }
    bool operator()(const SelectLinkAction& x) const { return blank(x.thoughts); }
    bool operator()(const TerminateAction& x) const { return blank(x.thoughts); }
    bool operator()(const AnswerAction& x) const { return blank(x.thoughts); }
    bool operator()(const CheckAnswerAction& x) const { return blank(x.rationale); }
    bool operator()(const ReviseAnswerAction& x) const { return blank(x.revised_answer) || blank(x.rationale); }
  } v;
  return std::visit(v, a);
}

double SampleResult::perplexity() const {
  return std::exp(-sum_log_prob / static_cast<double>(token_count));
}

void AgentConfig::validate() const {
  if (!(temperature >= 0.0)) throw std::invalid_argument("temperature must be >= 0");
  if (samples_per_step < 1) throw std::invalid_argument("samples_per_step must be >= 1");
  if (top_k_snippets < 1) throw std::invalid_argument("top_k_snippets must be >= 1");
  if (max_searches < 1) throw std::invalid_argument("max_searches must be >= 1");
  if (max_parse_retries < 0) throw std::invalid_argument("max_parse_retries must be >= 0");
}

std::string Trajectory::id() const { return question.id + "#" + std::to_string(repeat); }

int Trajectory::search_count() const {
  return static_cast<int>(std::count_if(past_actions.begin(), past_actions.end(), [](const Action& a) {
    return std::holds_alternative<SearchAction>(a);
  }));
}

std::vector<int> cited_link_ids(std::string_view text) {
  static constexpr std::string_view kOpen = "[link_id=";
  std::vector<int> out;
  std::size_t pos = 0;
  while ((pos = text.find(kOpen, pos)) != std::string_view::npos) {
    std::size_t i = pos + kOpen.size();
    std::vector<int> ids;
    bool ok = false;
    while (i < text.size()) {
      while (i < text.size() && text[i] == ' ') ++i;
      std::size_t start = i;
      long value = 0;
      while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i])) && i - start < 9) {
        value = value * 10 + (text[i] - '0');
        ++i;
      }
      if (i == start) break;
      ids.push_back(static_cast<int>(value));
      while (i < text.size() && text[i] == ' ') ++i;
      if (i < text.size() && text[i] == ',') {
        ++i;
        continue;
      }
      ok = i < text.size() && text[i] == ']';
      break;
    }
    if (ok) out.insert(out.end(), ids.begin(), ids.end());
    pos += kOpen.size();
  }
  return out;
}

std::vector<int> observed_link_ids(const Trajectory& t) {
  std::set<int> ids;
  for (const auto& step : t.steps) {
    if (!step.search) continue;
    for (const auto& r : step.search->results) ids.insert(r.link_id);
  }
  return {ids.begin(), ids.end()};
}

// ---------------------------------------------------------------------------
// JSON

void to_json(json& j, const Question& q) {
  j = json{{"id", q.id}, {"text", q.text}, {"source", std::string(to_string(q.source))}};
  if (q.ref_answer) j["ref_answer"] = *q.ref_answer;
}

void from_json(const json& j, Question& q) {
  q.id = j.at("id").get<std::string>();
  q.text = j.at("text").get<std::string>();
  q.source = j.contains("source") ? question_source_from_string(j.at("source").get<std::string>())
                                  : QuestionSource::custom;
  q.ref_answer.reset();
  if (j.contains("ref_answer") && !j.at("ref_answer").is_null()) q.ref_answer = j.at("ref_answer").get<std::string>();
}

void to_json(json& j, const ResultItem& r) {
  j = json{{"link_id", r.link_id}, {"link_text", r.link_text}, {"snippet", r.snippet}};
}

void from_json(const json& j, ResultItem& r) {
  r.link_id = j.at("link_id").get<int>();
  r.link_text = j.at("link_text").get<std::string>();
  r.snippet = j.at("snippet").get<std::string>();
}

void to_json(json& j, const Action& a) {
  struct {
    json operator()(const SearchAction& x) const {
      return {{"type", "search"}, {"thoughts", x.thoughts}, {"query", x.query}};
    }
    json operator()(const SelectLinkAction& x) const {
      return {{"type", "select_link"},
              {"thoughts", x.thoughts},
              {"selected_link_ids", x.selected_link_ids},
              {"selected_links", x.selected_links},
              {"grounded_summarization", x.grounded_summarization}};
    }
    json operator()(const TerminateAction& x) const { return {{"type", "terminate"}, {"thoughts", x.thoughts}}; }
    json operator()(const AnswerAction& x) const {
      return {{"type", "answer"}, {"thoughts", x.thoughts}, {"answer_text", x.answer_text}};
    }
    json operator()(const CheckAnswerAction& x) const {
      return {{"type", "check_answer"}, {"passed", x.passed}, {"rationale", x.rationale}};
    }
    json operator()(const ReviseAnswerAction& x) const {
      return {{"type", "revise_answer"}, {"revised_answer", x.revised_answer}, {"rationale", x.rationale}};
    }
  } v;
  j = std::visit(v, a);
}

void from_json(const json& j, Action& a) {
  const auto type = j.at("type").get<std::string>();
  if (type == "search") {
    a = SearchAction{j.at("thoughts").get<std::string>(), j.at("query").get<std::string>()};
  } else if (type == "select_link") {
    a = SelectLinkAction{j.at("thoughts").get<std::string>(), j.at("selected_link_ids").get<std::vector<int>>(),
                         j.at("selected_links").get<std::vector<ResultItem>>(),
                         j.at("grounded_summarization").get<std::string>()};
  } else if (type == "terminate") {
    a = TerminateAction{j.at("thoughts").get<std::string>()};
  } else if (type == "answer") {
    a = AnswerAction{j.at("thoughts").get<std::string>(), j.at("answer_text").get<std::string>()};
  } else if (type == "check_answer") {
    a = CheckAnswerAction{j.at("passed").get<bool>(), j.at("rationale").get<std::string>()};
  } else if (type == "revise_answer") {
    a = ReviseAnswerAction{j.at("revised_answer").get<std::string>(), j.at("rationale").get<std::string>()};
  } else {
    throw SchemaError("unknown action type '" + type + "'");
  }
}

void to_json(json& j, const SampleResult& s) {
  j = json{{"text", s.text},
           {"token_count", s.token_count},
           {"sum_log_prob", s.sum_log_prob},
           {"perplexity", s.perplexity()}};
}

void from_json(const json& j, SampleResult& s) {
  s.text = j.at("text").get<std::string>();
  s.token_count = j.at("token_count").get<int>();
  s.sum_log_prob = j.at("sum_log_prob").get<double>();
  if (s.token_count < 1) throw SchemaError("sample token_count must be positive");
  if (j.contains("perplexity")) {
    const double stored = j.at("perplexity").get<double>();
    const double expected = s.perplexity();
    if (std::abs(stored - expected) > 1e-9 * std::max(1.0, std::abs(expected))) {
      throw SchemaError("sample perplexity inconsistent with sum_log_prob/token_count");
    }
  }
}

void to_json(json& j, const SearchQueryRecord& r) {
  j = json{{"query", r.query},
           {"results", r.results},
           {"provider", r.provider},
           {"retrieved_at", r.retrieved_at},
           {"truncated_link_ids", r.truncated_link_ids}};
}

void from_json(const json& j, SearchQueryRecord& r) {
  r.query = j.at("query").get<std::string>();
  r.results = j.at("results").get<std::vector<ResultItem>>();
  r.provider = j.value("provider", "");
  r.retrieved_at = j.value("retrieved_at", "");
  r.truncated_link_ids = j.value("truncated_link_ids", std::vector<int>{});
}

void to_json(json& j, const SampleRecord& s) {
  j = s.sample;
  j["attempt"] = s.attempt;
  j["valid"] = s.valid;
  j["error"] = s.error;
  j["empty_thoughts"] = s.empty_thoughts;
}

void from_json(const json& j, SampleRecord& s) {
  s.sample = j.get<SampleResult>();
  s.attempt = j.value("attempt", 0);
  s.valid = j.at("valid").get<bool>();
  s.error = j.value("error", "");
  s.empty_thoughts = j.value("empty_thoughts", false);
}

void to_json(json& j, const StepRecord& s) {
  j = json{{"kind", std::string(to_string(s.kind))},
           {"prompt", s.prompt},
           {"samples", s.samples},
           {"selected_index", s.selected_index},
           {"min_perplexity_index", s.min_perplexity_index},
           {"selection_method", std::string(to_string(s.selection_method))},
           {"rank_fallback", s.rank_fallback},
           {"attempts", s.attempts}};
  if (s.search) j["search"] = *s.search;
  if (s.answer_in) j["answer_in"] = *s.answer_in;
  if (s.action) j["action"] = *s.action;
  if (s.rank_raw) j["rank_raw"] = *s.rank_raw;
}

void from_json(const json& j, StepRecord& s) {
  s.kind = step_kind_from_string(j.at("kind").get<std::string>());
  s.prompt = j.at("prompt").get<std::string>();
  s.samples = j.at("samples").get<std::vector<SampleRecord>>();
  s.selected_index = j.at("selected_index").get<int>();
  s.min_perplexity_index = j.value("min_perplexity_index", s.selected_index);
  s.selection_method = selection_method_from_string(j.value("selection_method", "min_perplexity"));
  s.rank_fallback = j.value("rank_fallback", false);
  s.attempts = j.value("attempts", 1);
  s.search.reset();
  s.answer_in.reset();
  s.action.reset();
  s.rank_raw.reset();
  if (j.contains("rank_raw")) s.rank_raw = j.at("rank_raw").get<std::string>();
  if (j.contains("search")) s.search = j.at("search").get<SearchQueryRecord>();
  if (j.contains("answer_in")) s.answer_in = j.at("answer_in").get<std::string>();
  if (j.contains("action")) s.action = j.at("action").get<Action>();
}

void to_json(json& j, const AgentConfig& c) {
  j = json{{"temperature", c.temperature},
           {"samples_per_step", c.samples_per_step},
           {"top_k_snippets", c.top_k_snippets},
           {"max_searches", c.max_searches},
           {"max_parse_retries", c.max_parse_retries},
           {"selection", std::string(to_string(c.selection))},
           {"snippet_byte_cap", c.snippet_byte_cap}};
}

void from_json(const json& j, AgentConfig& c) {
  AgentConfig d;
  c.temperature = j.value("temperature", d.temperature);
  c.samples_per_step = j.value("samples_per_step", d.samples_per_step);
  c.top_k_snippets = j.value("top_k_snippets", d.top_k_snippets);
  c.max_searches = j.value("max_searches", d.max_searches);
  c.max_parse_retries = j.value("max_parse_retries", d.max_parse_retries);
  c.selection = selection_method_from_string(j.value("selection", std::string(to_string(d.selection))));
  c.snippet_byte_cap = j.value("snippet_byte_cap", d.snippet_byte_cap);
}

void to_json(json& j, const Trajectory& t) {
  j = json{{"schema_version", kTrajectorySchemaVersion},
           {"trajectory_id", t.id()},
           {"question", t.question},
           {"repeat", t.repeat},
           {"generation", t.generation},
           {"rng_seed", t.rng_seed},
           {"config", t.config},
           {"steps", t.steps},
           {"past_actions", t.past_actions},
           {"remaining_searches", t.remaining_searches},
           {"next_link_id", t.next_link_id},
           {"status", std::string(to_string(t.status))}};
  if (t.draft_answer) j["draft_answer"] = *t.draft_answer;
  if (t.final_answer) j["final_answer"] = *t.final_answer;
  if (t.failure_reason) j["failure_reason"] = *t.failure_reason;
}

void from_json(const json& j, Trajectory& t) {
  const int version = j.at("schema_version").get<int>();
  if (version != kTrajectorySchemaVersion) {
    throw SchemaError("unsupported trajectory schema_version " + std::to_string(version));
  }
  t.question = j.at("question").get<Question>();
  t.repeat = j.at("repeat").get<int>();
  t.generation = j.value("generation", 0);
  t.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  t.config = j.at("config").get<AgentConfig>();
  t.steps = j.at("steps").get<std::vector<StepRecord>>();
  t.past_actions = j.at("past_actions").get<std::vector<Action>>();
  t.remaining_searches = j.at("remaining_searches").get<int>();
  t.next_link_id = j.value("next_link_id", 1);
  const auto status = j.at("status").get<std::string>();
  t.status = enum_from(std::string_view(status), kStatuses, "trajectory status");
  t.draft_answer.reset();
  t.final_answer.reset();
  t.failure_reason.reset();
  if (j.contains("draft_answer")) t.draft_answer = j.at("draft_answer").get<std::string>();
  if (j.contains("final_answer")) t.final_answer = j.at("final_answer").get<std::string>();
  if (j.contains("failure_reason")) t.failure_reason = j.at("failure_reason").get<std::string>();
}

std::string serialize_trajectory(const Trajectory& t) {
  return json(t).dump(-1, ' ', false, json::error_handler_t::replace);
}

Trajectory parse_trajectory(std::string_view line) {
  try {
    return json::parse(line).get<Trajectory>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed trajectory record: ") + e.what());
  }
}

}  // namespace sagent
