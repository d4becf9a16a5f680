#include "sagent/selection.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>

#include "sagent/codec.hpp"

namespace sagent {

std::size_t select_min_perplexity(const std::vector<SampleResult>& samples,
                                  const std::function<bool(std::size_t)>& parse_ok) {
  std::optional<std::size_t> best;
  double best_ppl = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!parse_ok(i)) continue;
    const double ppl = samples[i].perplexity();
    if (!best || ppl < best_ppl) {
      best = i;
      best_ppl = ppl;
    }
  }
  if (!best) throw AllUnparseable();
  return *best;
}

std::size_t select_min_perplexity(const std::vector<SampleRecord>& samples) {
  std::vector<SampleResult> raw;
  raw.reserve(samples.size());
  for (const auto& s : samples) raw.push_back(s.sample);
  return select_min_perplexity(raw, [&](std::size_t i) { return samples[i].valid; });
}

std::string render_rank_prompt(const TemplateSet& templates, const std::string& step_input,
                               const std::vector<std::string>& sample_texts) {
  const PromptTemplate& t = templates.get(StepKind::reward_ranker);
  if (sample_texts.size() < 2) throw RankSlotError("ranking needs at least 2 samples");
  if (sample_texts.size() > static_cast<std::size_t>(t.slots)) {
    throw RankSlotError(std::to_string(sample_texts.size()) + " samples exceed the ranker's " +
                        std::to_string(t.slots) + " slots");
  }
  std::string out = fill_slots(t.header, {{"inputs", step_input}});
  out += "\n\n";
  for (std::size_t i = 0; i < sample_texts.size(); ++i) {
    out += fill_slots(t.output_section, {{"index", std::to_string(i + 1)}, {"action", sample_texts[i]}});
    out += "\n\n";
  }
  out += t.footer;
  out += "\n";
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (std::isspace(static_cast<unsigned char>(s.front())) || s.front() == '*')) s.remove_prefix(1);
  while (!s.empty() && (std::isspace(static_cast<unsigned char>(s.back())) || s.back() == '*')) s.remove_suffix(1);
  return s;
}

// Case-insensitive `Label:` prefix; returns the text after it.
std::optional<std::string_view> labelled(std::string_view line, std::string_view label) {
  line = trim(line);
  if (line.size() < label.size() + 1) return std::nullopt;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(line[i])) != std::tolower(static_cast<unsigned char>(label[i]))) {
      return std::nullopt;
    }
  }
  std::string_view rest = line.substr(label.size());
  rest = trim(rest);
  if (rest.empty() || rest.front() != ':') return std::nullopt;
  rest.remove_prefix(1);
  return trim(rest);
}

std::vector<int> integers(std::string_view s) {
  std::vector<int> out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (std::isdigit(static_cast<unsigned char>(s[i]))) {
      long v = 0;
      while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
        v = std::min(v * 10 + (s[i] - '0'), 1'000'000L);
        ++i;
      }
      out.push_back(static_cast<int>(v));
    } else {
      ++i;
    }
  }
  return out;
}

}  // namespace

RankVerdict parse_rank_verdict(std::string_view completion, int n) {
  RankVerdict v;
  std::optional<int> best;
  std::vector<int> ranking;
  std::size_t start = 0;
  while (start <= completion.size()) {
    std::size_t end = completion.find('\n', start);
    if (end == std::string_view::npos) end = completion.size();
    const std::string_view line = completion.substr(start, end - start);
    if (auto e = labelled(line, "Explanation"); e && v.explanation.empty()) {
      v.explanation = std::string(*e);
    } else if (auto a = labelled(line, "Answer"); a && !best) {
      const auto nums = integers(*a);
      if (nums.empty()) throw RankParseError("Answer line has no output number");
      best = nums.front();
    } else if (auto r = labelled(line, "Ranking"); r && ranking.empty()) {
      ranking = integers(*r);
    }
    start = end + 1;
  }
  if (!best) throw RankParseError("no Answer line");
  if (*best < 1 || *best > n) {
    throw RankParseError("Answer #" + std::to_string(*best) + " is outside 1.." + std::to_string(n));
  }
  v.best_index = *best;
  v.ranking.push_back(*best);
  for (int r : ranking) {
    if (r < 1 || r > n) continue;
    if (std::find(v.ranking.begin(), v.ranking.end(), r) == v.ranking.end()) v.ranking.push_back(r);
  }
  return v;
}

StepRecord rerank_step(const StepRecord& step, LanguageModel& rm, const TemplateSet& templates, std::uint64_t seed) {
  if (step.selection_method == SelectionMethod::rm_ranked || step.rank_fallback) return step;
  const auto valid = std::count_if(step.samples.begin(), step.samples.end(), [](const SampleRecord& s) { return s.valid; });
  if (valid < 2) return step;

  // Candidates shown to the ranker, in sample order. With more samples than
  // slots, keep the parseable, lowest-perplexity ones.
  std::vector<std::size_t> cand(step.samples.size());
  std::iota(cand.begin(), cand.end(), 0);
  const auto slots = static_cast<std::size_t>(templates.get(StepKind::reward_ranker).slots);
  if (cand.size() > slots) {
    std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
      const auto& sa = step.samples[a];
      const auto& sb = step.samples[b];
      if (sa.valid != sb.valid) return sa.valid;
      return sa.sample.perplexity() < sb.sample.perplexity();
    });
    cand.resize(slots);
    std::sort(cand.begin(), cand.end());
  }
  std::vector<std::string> texts;
  for (std::size_t i : cand) texts.push_back(step.samples[i].sample.text);

  StepRecord out = step;
  try {
    SampleRequest req;
    req.prompt = render_rank_prompt(templates, step.prompt, texts);
    req.n = 1;
    req.temperature = 0.0;
    req.stop = {};
    req.seed = seed;
    const auto completion = rm.sample(req);
    out.rank_raw = completion.at(0).text;
    const RankVerdict verdict = parse_rank_verdict(*out.rank_raw, static_cast<int>(cand.size()));
    for (int slot : verdict.ranking) {
      const std::size_t idx = cand[static_cast<std::size_t>(slot - 1)];
      if (!step.samples[idx].valid) continue;
      auto parsed = try_parse_completion(step.kind, step.samples[idx].sample.text);
      if (!parsed) continue;
      if (auto* s = std::get_if<SelectLinkAction>(&parsed->action); s && step.search) {
        attach_selected_links(*s, step.search->results);
      }
      out.selected_index = static_cast<int>(idx);
      out.selection_method = SelectionMethod::rm_ranked;
      out.action = parsed->action;
      return out;
    }
  } catch (const RankParseError&) {
  } catch (const BackendError&) {
  }
  out.rank_fallback = true;
  return out;
}

}  // namespace sagent
