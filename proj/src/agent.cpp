#include "sagent/agent.hpp"

#include <algorithm>
#include <set>

#include "sagent/codec.hpp"
#include "sagent/selection.hpp"
#include "sagent/util.hpp"

namespace sagent {

TransitionError::TransitionError(StepKind s, std::string action_name)
    : std::logic_error("illegal transition: state " + std::string(to_string(s)) + " cannot take action " + action_name),
      state(s),
      action(std::move(action_name)) {}

StepKind transition(StepKind state, const Action& action, int remaining_searches) {
  const bool is_search = std::holds_alternative<SearchAction>(action);
  const bool is_terminate = std::holds_alternative<TerminateAction>(action);
  const bool is_check = std::holds_alternative<CheckAnswerAction>(action) ||
                        std::holds_alternative<ReviseAnswerAction>(action);
  switch (state) {
    case StepKind::decision:
      if (is_search) return StepKind::summarize;
      if (is_terminate) return StepKind::answer_gen;
      break;
    case StepKind::summarize:
      if (std::holds_alternative<SelectLinkAction>(action)) {
        return remaining_searches > 0 ? StepKind::decision : StepKind::answer_gen;
      }
      break;
    case StepKind::answer_gen:
      if (std::holds_alternative<AnswerAction>(action)) return StepKind::relevance_check;
      break;
    case StepKind::relevance_check:
      if (is_check) return StepKind::grounding_check;
      break;
    case StepKind::grounding_check:
      if (is_check) return StepKind::done;
      break;
    default:
      break;
  }
  throw TransitionError(state, std::string(action_name(action)));
}

StepKind current_state(const Trajectory& t) {
  if (t.steps.empty()) return t.remaining_searches > 0 ? StepKind::decision : StepKind::answer_gen;
  const StepRecord& last = t.steps.back();
  if (!last.action) throw std::logic_error("last step of " + t.id() + " has no selected action");
  return transition(last.kind, *last.action, t.remaining_searches);
}

StepKind next_state(const Trajectory& t, const Action& action) {
  const StepKind state = current_state(t);
  const int remaining = t.remaining_searches - (std::holds_alternative<SearchAction>(action) ? 1 : 0);
  return transition(state, action, remaining);
}

std::string current_answer(const Trajectory& t) {
  if (t.final_answer) return *t.final_answer;
  if (t.draft_answer) return *t.draft_answer;
  throw std::logic_error("trajectory " + t.id() + " has no answer yet");
}

std::string apply_self_check(const Trajectory& t, CheckKind kind, const Action& action) {
  const StepKind state = kind == CheckKind::relevance ? StepKind::relevance_check : StepKind::grounding_check;
  if (const auto* c = std::get_if<CheckAnswerAction>(&action)) {
    if (!c->passed) throw TransitionError(state, "Check_Answer(passed=False) without Revise_Answer");
    return current_answer(t);
  }
  if (const auto* r = std::get_if<ReviseAnswerAction>(&action)) return r->revised_answer;
  throw TransitionError(state, std::string(action_name(action)));
}

std::string validate_sample(const Trajectory& t, StepKind kind, const std::optional<SearchQueryRecord>& results,
                            const std::string& text, Action* parsed_out) {
  std::string error;
  auto parsed = try_parse_completion(kind, text, &error);
  if (!parsed) return error;
  Action& action = parsed->action;

  std::set<int> observed;
  for (int id : observed_link_ids(t)) observed.insert(id);
  if (results) {
    for (const auto& r : results->results) observed.insert(r.link_id);
  }
  auto unresolved = [&](std::string_view s) -> std::string {
    for (int id : cited_link_ids(s)) {
      if (!observed.count(id)) return "cites link_id=" + std::to_string(id) + " which was never retrieved";
    }
    return {};
  };

  if (auto* s = std::get_if<SearchAction>(&action)) {
    if (s->query.find_first_not_of(" \t\r\n") == std::string::npos) return "empty search query";
  } else if (auto* sel = std::get_if<SelectLinkAction>(&action)) {
    if (!results) return "no search results to select from";
    const auto missing = attach_selected_links(*sel, results->results);
    if (!missing.empty()) return "selected link_id=" + std::to_string(missing.front()) + " is not in the current results";
    if (auto e = unresolved(sel->grounded_summarization); !e.empty()) return e;
  } else if (auto* a = std::get_if<AnswerAction>(&action)) {
    if (auto e = unresolved(a->answer_text); !e.empty()) return e;
  } else if (auto* r = std::get_if<ReviseAnswerAction>(&action)) {
    if (auto e = unresolved(r->revised_answer); !e.empty()) return e;
  }
  if (parsed_out) *parsed_out = std::move(action);
  return {};
}

namespace {

void fail(Trajectory& t, const std::string& reason, const std::string& detail) {
  t.status = TrajectoryStatus::failed;
  t.failure_reason = detail.empty() ? reason : reason + ": " + detail;
}

}  // namespace

Trajectory run_trajectory(const Question& question, const AgentConfig& config, LanguageModel& llm,
                          SearchBackend& search, const TemplateSet& templates, const RunOptions& opts) {
  if (question.id.empty()) throw std::invalid_argument("question id is empty");
  if (question.text.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw std::invalid_argument("question " + question.id + " has empty text");
  }
  config.validate();

  Trajectory t;
  t.question = question;
  t.repeat = opts.repeat;
  t.generation = opts.generation;
  t.rng_seed = opts.seed;
  t.config = config;
  t.remaining_searches = config.max_searches;
  t.next_link_id = 1;

  StepKind state = current_state(t);
  std::optional<SearchQueryRecord> pending;

  while (state != StepKind::done) {
    StepRecord rec;
    rec.kind = state;
    RenderInputs extra;
    if (state == StepKind::summarize) {
      extra.current_results = pending;
      rec.search = pending;
    }
    if (state == StepKind::relevance_check || state == StepKind::grounding_check) {
      extra.answer = current_answer(t);
      rec.answer_in = extra.answer;
    }
    rec.prompt = render_prompt(templates, state, t, extra);

    std::optional<std::size_t> chosen;
    std::vector<std::optional<Action>> actions;
    for (int attempt = 0; attempt <= config.max_parse_retries && !chosen; ++attempt) {
      SampleRequest req;
      req.prompt = rec.prompt;
      req.n = config.samples_per_step;
      req.temperature = config.temperature;
      req.seed = derive_seed(t.rng_seed, "step", static_cast<std::uint64_t>(t.steps.size()) * 64 + attempt);
      std::vector<SampleResult> samples;
      try {
        samples = llm.sample(req);
      } catch (const BackendError& e) {
        rec.attempts = attempt + 1;
        t.steps.push_back(std::move(rec));
        fail(t, "backend_error", e.what());
        return t;
      }
      rec.attempts = attempt + 1;
      for (auto& s : samples) {
        SampleRecord sr;
        sr.sample = std::move(s);
        sr.attempt = attempt;
        Action a;
        sr.error = validate_sample(t, state, rec.search, sr.sample.text, &a);
        sr.valid = sr.error.empty();
        if (sr.valid) {
          sr.empty_thoughts = has_empty_thoughts(a);
          actions.emplace_back(std::move(a));
        } else {
          actions.emplace_back(std::nullopt);
        }
        rec.samples.push_back(std::move(sr));
      }
      try {
        chosen = select_min_perplexity(rec.samples);
      } catch (const AllUnparseable&) {
      }
    }
    if (!chosen) {
      t.steps.push_back(std::move(rec));
      fail(t, "parse_exhausted",
           std::to_string(config.max_parse_retries + 1) + " attempts at step " + std::string(to_string(state)));
      return t;
    }

    rec.selected_index = static_cast<int>(*chosen);
    rec.min_perplexity_index = rec.selected_index;
    rec.selection_method = SelectionMethod::min_perplexity;
    Action action = *actions[*chosen];
    rec.action = action;

    try {
      const StepKind next = next_state(t, action);
      switch (state) {
        case StepKind::decision:
          if (const auto* s = std::get_if<SearchAction>(&action)) {
            if (t.remaining_searches <= 0) throw std::logic_error("search issued with no budget left");
            LinkIdAllocator ids(t.next_link_id);
            try {
              pending = search.search(s->query, config.top_k_snippets, ids);
            } catch (const BackendError& e) {
              t.steps.push_back(std::move(rec));
              fail(t, "backend_error", e.what());
              return t;
            }
            apply_snippet_cap(*pending, config.snippet_byte_cap);
            if (ids.peek() < t.next_link_id) throw std::logic_error("link id allocator moved backwards");
            t.next_link_id = ids.peek();
            --t.remaining_searches;
          }
          t.past_actions.push_back(action);
          break;
        case StepKind::summarize:
          t.past_actions.push_back(action);
          pending.reset();
          break;
        case StepKind::answer_gen:
          t.draft_answer = std::get<AnswerAction>(action).answer_text;
          t.past_actions.push_back(action);
          break;
        case StepKind::relevance_check:
        case StepKind::grounding_check:
          t.final_answer = apply_self_check(
              t, state == StepKind::relevance_check ? CheckKind::relevance : CheckKind::grounding, action);
          break;
        default:
          throw std::logic_error("unexpected state");
      }
      if (t.search_count() > config.max_searches) throw std::logic_error("search budget exceeded");
      if (t.remaining_searches != config.max_searches - t.search_count()) {
        throw std::logic_error("remaining_searches out of sync");
      }
      t.steps.push_back(std::move(rec));
      state = next;
    } catch (const std::logic_error& e) {
      t.steps.push_back(std::move(rec));
      fail(t, "budget_misuse", e.what());
      return t;
    }
    if (opts.on_step) opts.on_step(t, t.steps.back());
  }

  if (!t.final_answer) t.final_answer = t.draft_answer;
  t.status = TrajectoryStatus::completed;
  return t;
}

bool matches_step_grammar(const Trajectory& t) {
  // (Decision[Search] Summarize)* Decision[Terminate]? AnswerGen RelevanceCheck GroundingCheck
  std::size_t i = 0;
  const auto& s = t.steps;
  auto is = [&](std::size_t k, StepKind kind) { return k < s.size() && s[k].kind == kind && s[k].action; };
  int searches = 0;
  while (is(i, StepKind::decision) && std::holds_alternative<SearchAction>(*s[i].action)) {
    if (!is(i + 1, StepKind::summarize)) return false;
    i += 2;
    ++searches;
  }
  bool terminated = false;
  if (is(i, StepKind::decision)) {
    if (!std::holds_alternative<TerminateAction>(*s[i].action)) return false;
    terminated = true;
    ++i;
  }
  // Terminate is omitted only when the budget ran out.
  if (!terminated && searches < t.config.max_searches) return false;
  if (!is(i, StepKind::answer_gen) || !is(i + 1, StepKind::relevance_check) || !is(i + 2, StepKind::grounding_check)) {
    return false;
  }
  return i + 3 == s.size();
}

int expected_example_count(const Trajectory& t) {
  const int s = t.search_count();
  const bool terminated = std::any_of(t.past_actions.begin(), t.past_actions.end(),
                                      [](const Action& a) { return std::holds_alternative<TerminateAction>(a); });
  return terminated ? 2 * s + 4 : 2 * s + 3;
}

}  // namespace sagent
