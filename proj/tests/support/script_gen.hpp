#pragma once

// Builds a random but fully predicted script for ScriptedModel. The generator
// mirrors the agent's consumption (n samples per attempt, retries on all-invalid
// attempts, budget exhaustion) and records the oracle outcome it expects.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "gen.hpp"
#include "sagent/backends.hpp"
#include "sagent/codec.hpp"

namespace sagent::testgen {

struct ScriptOracle {
  std::vector<StepKind> kinds;
  int searches = 0;
  bool voluntary_terminate = false;
  std::string draft;
  std::string final_answer;
  int examples = 0;
};

class ScriptBuilder {
 public:
  ScriptBuilder(std::mt19937_64& rng, const AgentConfig& cfg) : rng_(rng), cfg_(cfg) {}

  // `wanted_searches` above the budget exercises exhaustion.
  ScriptOracle build(ScriptedModel& model, int wanted_searches) {
    ScriptOracle o;
    std::vector<int> observed;
    int next_id = 1;
    int remaining = cfg_.max_searches;
    while (true) {
      if (remaining == 0) break;
      o.kinds.push_back(StepKind::decision);
      if (o.searches >= wanted_searches) {
        emit(model, StepKind::decision, TerminateAction{text()});
        o.voluntary_terminate = true;
        break;
      }
      emit(model, StepKind::decision, SearchAction{text(), "q " + text()});
      ++o.searches;
      --remaining;
      std::vector<int> current;
      for (int k = 0; k < cfg_.top_k_snippets; ++k) current.push_back(next_id++);
      observed.insert(observed.end(), current.begin(), current.end());
      o.kinds.push_back(StepKind::summarize);
      SelectLinkAction sel;
      sel.thoughts = text();
      for (int id : current) {
        if (rng_() % 2) sel.selected_link_ids.push_back(id);
      }
      sel.grounded_summarization = "summary " + cite(sel.selected_link_ids);
      emit(model, StepKind::summarize, sel, &current);
    }
    o.kinds.push_back(StepKind::answer_gen);
    std::vector<int> cited;
    for (int id : observed) {
      if (rng_() % 3 == 0) cited.push_back(id);
    }
    o.draft = "answer " + std::to_string(rng_() % 1000) + " " + cite(cited);
    std::string answer = std::get<AnswerAction>(emit(model, StepKind::answer_gen, AnswerAction{text(), o.draft})).answer_text;
    o.draft = answer;
    for (StepKind k : {StepKind::relevance_check, StepKind::grounding_check}) {
      o.kinds.push_back(k);
      Action chosen;
      if (rng_() % 4 == 0) {
        chosen = emit(model, k, ReviseAnswerAction{answer + " revised", "rationale"});
      } else {
        chosen = emit(model, k, CheckAnswerAction{true, "fine"});
      }
      if (const auto* r = std::get_if<ReviseAnswerAction>(&chosen)) answer = r->revised_answer;
    }
    o.final_answer = answer;
    o.examples = static_cast<int>(o.kinds.size());
    return o;
  }

 private:
  std::string text() { return "t" + random_text(rng_); }

  static std::string cite(const std::vector<int>& ids) {
    std::string out;
    for (int id : ids) out += "[link_id=" + std::to_string(id) + "]";
    return out;
  }

  // A variant of `base` that is still valid: different thoughts/answer text.
  Action variant(const Action& base) {
    Action a = base;
    const std::string tag = " v" + std::to_string(rng_() % 100);
    if (auto* s = std::get_if<SearchAction>(&a)) s->thoughts += tag;
    if (auto* t = std::get_if<TerminateAction>(&a)) t->thoughts += tag;
    if (auto* l = std::get_if<SelectLinkAction>(&a)) l->thoughts += tag;
    if (auto* an = std::get_if<AnswerAction>(&a)) an->answer_text += tag;
    if (auto* r = std::get_if<ReviseAnswerAction>(&a)) r->revised_answer += tag;
    return a;
  }

  std::string invalid(StepKind kind, const std::vector<int>* current) {
    switch (rng_() % 4) {
      case 0: return " = ActionWrapper(thoughts='unterminated";
      case 1: return ": Answer = Answer(thoughts='x')  # [END]";  // missing keyword / wrong step
      case 2:
        if (kind == StepKind::summarize && current) {
          return ": LinkSelection = LinkSelection(grounded_summarization='s', thoughts='t', selected_link_ids=[" +
                 std::to_string(current->back() + 1000) + "])  # [END]";
        }
        return "ACTION_SELECTED = Unknown(x=1)  # [END]";
      default: return "no cue at all";
    }
  }

  // Emits one step's attempts; returns the action the agent is expected to select.
  Action emit(ScriptedModel& model, StepKind kind, const Action& base, const std::vector<int>* current = nullptr) {
    const int n = cfg_.samples_per_step;
    std::uniform_real_distribution<double> nll(0.05, 2.0);
    std::uniform_int_distribution<int> tokens(1, 60);
    const int failed_attempts =
        cfg_.max_parse_retries > 0 && rng_() % 8 == 0 ? 1 + static_cast<int>(rng_() % cfg_.max_parse_retries) : 0;
    for (int a = 0; a < failed_attempts; ++a) {
      for (int i = 0; i < n; ++i) {
        const int tc = tokens(rng_);
        model.push(invalid(kind, current), tc, -nll(rng_) * tc);
      }
    }
    // Final attempt: at least one valid sample; the oracle tracks the argmin.
    std::vector<bool> valid(static_cast<std::size_t>(n));
    valid[rng_() % static_cast<std::size_t>(n)] = true;
    for (int i = 0; i < n; ++i) {
      if (rng_() % 3 != 0) valid[static_cast<std::size_t>(i)] = true;
    }
    Action best;
    double best_ppl = 0;
    bool have = false;
    for (int i = 0; i < n; ++i) {
      const int tc = tokens(rng_);
      const double sum = -nll(rng_) * tc;
      if (!valid[static_cast<std::size_t>(i)]) {
        model.push(invalid(kind, current), tc, sum);
        continue;
      }
      Action a = i == 0 ? base : variant(base);
      const SampleResult s{render_completion(kind, a), tc, sum};
      if (!have || s.perplexity() < best_ppl) {
        best = a;
        best_ppl = s.perplexity();
        have = true;
      }
      model.push(s);
    }
    return best;
  }

  std::mt19937_64& rng_;
  AgentConfig cfg_;
};

}  // namespace sagent::testgen
