#include <algorithm>
#include <random>

#include "sagent/backends.hpp"
#include "sagent/codec.hpp"
#include "sagent/literal.hpp"
#include "sagent/templates.hpp"
#include "sagent/util.hpp"

namespace sagent {

namespace {

enum class SimStep { decision, summarize, answer_gen, check, auto_eval, ranker };

SimStep classify(std::string_view prompt, std::string_view live) {
  if (prompt.find("*** Model Output #") != std::string_view::npos) return SimStep::ranker;
  if (live.ends_with(kAutoEvalCue)) return SimStep::auto_eval;
  if (live.find("REMAINING_SEARCHES: int =") != std::string_view::npos) return SimStep::decision;
  if (live.find("CURRENT_SEARCH_RESULTS =") != std::string_view::npos) return SimStep::summarize;
  if (live.find("\nANSWER: str =") != std::string_view::npos) return SimStep::check;
  return SimStep::answer_gen;
}

// Value of a `NAME: type = literal` or `NAME = literal` field of the live block.
std::optional<literal::Value> field(std::string_view live, std::string_view prefix) {
  std::size_t pos = live.starts_with(prefix) ? 0 : live.find("\n" + std::string(prefix));
  if (pos == std::string_view::npos) return std::nullopt;
  if (live[pos] == '\n') ++pos;
  literal::Reader r(live.substr(pos + prefix.size()));
  try {
    return r.parse_value();
  } catch (const ParseError&) {
    return std::nullopt;
  }
}

std::string string_field(std::string_view live, std::string_view prefix) {
  auto v = field(live, prefix);
  if (v && v->is_string()) return std::get<std::string>(v->data);
  return {};
}

struct Item {
  int id = 0;
  std::string snippet;
};

std::vector<Item> current_items(std::string_view live) {
  std::vector<Item> items;
  auto v = field(live, "CURRENT_SEARCH_RESULTS = ");
  if (!v || !v->is_call()) return items;
  const auto* links = std::get<literal::Call>(v->data).keyword("links");
  if (!links) return items;
  for (const auto& item : std::get<literal::List>(links->data)) {
    if (!item.is_call()) continue;
    const auto& call = std::get<literal::Call>(item.data);
    const auto* id = call.keyword("link_id");
    if (!id) continue;
    Item it;
    it.id = static_cast<int>(std::get<std::int64_t>(id->data));
    if (const auto* sn = call.keyword("snippet"); sn && sn->is_string()) it.snippet = std::get<std::string>(sn->data);
    items.push_back(std::move(it));
  }
  return items;
}

// First sentence of a snippet, without its final period.
std::string first_sentence(const std::string& s) {
  std::string out = s.substr(0, s.find(". "));
  while (!out.empty() && (out.back() == '.' || out.back() == ' ')) out.pop_back();
  return out;
}

std::string cite(const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) out += "[link_id=" + std::to_string(id) + "]";
  return out;
}

// Truncates inside the constructor so the result cannot parse.
std::string malform(const std::string& text, std::mt19937_64& rng) {
  const std::size_t open = text.find('(');
  const std::size_t close = text.rfind(')');
  if (open == std::string::npos || close == std::string::npos || close <= open) return "ACTION_SELECTED = (";
  std::uniform_int_distribution<std::size_t> cut(open + 1, close - 1);
  return text.substr(0, cut(rng));
}

std::string honour_stops(std::string text, const std::vector<std::string>& stops) {
  std::size_t cut = text.size();
  for (const auto& s : stops) {
    if (s.empty()) continue;
    cut = std::min(cut, text.find(s));
  }
  text.resize(std::min(cut, text.size()));
  return text;
}

}  // namespace

std::vector<SampleResult> SimulatedModel::sample(const SampleRequest& req) {
  req.validate(name());
  const std::string_view live = live_block(req.prompt);
  const SimStep step = classify(req.prompt, live);
  const std::string question = string_field(live, "ORIGINAL_QUESTION: str = ");
  const std::uint64_t qhash = fnv1a64(question);
  std::vector<Action> past;
  try {
    past = extract_past_actions(live).value_or(std::vector<Action>{});
  } catch (const ParseError&) {
  }

  std::vector<SampleResult> out;
  for (int i = 0; i < req.n; ++i) {
    // Greedy decoding ignores the sample index, so n identical requests agree.
    const std::uint64_t stream = req.temperature > 0 ? static_cast<std::uint64_t>(i) : 0;
    std::mt19937_64 rng(derive_seed(req.seed ^ fnv1a64(live), "sim", stream));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::string thoughts;
    if (u(rng) >= opts_.empty_thoughts_rate) thoughts = "Step " + std::to_string(past.size() + 1) + " reasoning, variant " + std::to_string(rng() % 5) + ".";
    std::string text;

    switch (step) {
      case SimStep::decision: {
        const int searches = static_cast<int>(std::count_if(past.begin(), past.end(), [](const Action& a) {
          return std::holds_alternative<SearchAction>(a);
        }));
        const int span = std::max(0, opts_.max_searches - opts_.min_searches);
        const int target = opts_.min_searches + static_cast<int>(qhash % static_cast<std::uint64_t>(span + 1));
        bool search = searches < target;
        if (u(rng) < 0.1) search = !search;
        if (search) {
          const std::string query = searches == 0 ? question : question + " detail " + std::to_string(searches + rng() % 3);
          text = render_completion(StepKind::decision, SearchAction{thoughts, query});
        } else {
          text = render_completion(StepKind::decision, TerminateAction{thoughts});
        }
        break;
      }
      case SimStep::summarize: {
        SelectLinkAction s;
        s.thoughts = thoughts;
        std::string summary;
        for (const auto& it : current_items(live)) {
          if (u(rng) >= 0.6) continue;
          s.selected_link_ids.push_back(it.id);
          if (!summary.empty()) summary += " ";
          summary += first_sentence(it.snippet) + " " + cite({it.id}) + ".";
        }
        s.grounded_summarization = summary.empty() ? "Nothing is selected." : summary;
        text = render_completion(StepKind::summarize, s);
        break;
      }
      case SimStep::answer_gen: {
        std::string facts;
        for (const auto& a : past) {
          if (const auto* s = std::get_if<SelectLinkAction>(&a); s && !s->selected_link_ids.empty()) {
            facts += (facts.empty() ? "" : " ") + s->grounded_summarization;
          }
        }
        std::string answer = facts.empty() ? "We could not find enough information to answer: " + question
                                           : "From the search results: " + facts;
        text = render_completion(StepKind::answer_gen, AnswerAction{thoughts, answer});
        break;
      }
      case SimStep::check: {
        const std::string answer = string_field(live, "ANSWER: str = ");
        if (u(rng) < opts_.revise_rate) {
          text = render_completion(StepKind::grounding_check,
                                   ReviseAnswerAction{answer + " (revised)", "The ANSWER can be stated more directly."});
        } else {
          text = render_completion(StepKind::grounding_check,
                                   CheckAnswerAction{true, "The ANSWER is on topic and backed by its citations."});
        }
        break;
      }
      case SimStep::auto_eval: {
        const std::string answer = string_field(live, "ANSWER: str = ");
        const double p = static_cast<double>(mix64(fnv1a64(answer) ^ req.seed) % 10000) / 10000.0;
        const bool ok = p < opts_.judge_accuracy;
        text = std::string(" ") + (ok ? "True" : "False") + "  # [END]";
        break;
      }
      case SimStep::ranker: {
        int slots = 0;
        while (req.prompt.find("*** Model Output #" + std::to_string(slots + 1)) != std::string::npos) ++slots;
        std::vector<int> order(static_cast<std::size_t>(slots));
        for (int k = 0; k < slots; ++k) order[static_cast<std::size_t>(k)] = k + 1;
        std::shuffle(order.begin(), order.end(), rng);
        text = "Explanation: model output #" + std::to_string(order[0]) + " is the most grounded.\nAnswer: #" +
               std::to_string(order[0]) + "\nRanking: ";
        for (std::size_t k = 0; k < order.size(); ++k) text += (k ? " > #" : "#") + std::to_string(order[k]);
        break;
      }
    }

    const bool agent_step = step != SimStep::auto_eval && step != SimStep::ranker;
    if (agent_step && u(rng) < opts_.malformed_rate) text = malform(text, rng);
    text = honour_stops(text, req.stop);
    const int tokens = std::max(1, static_cast<int>(text.size() / 4));
    const double nll_per_token = 0.05 + 0.55 * u(rng);
    out.push_back(SampleResult{std::move(text), tokens, -nll_per_token * tokens});
  }
  return out;
}

}  // namespace sagent
