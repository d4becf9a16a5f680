#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sagent/backends.hpp"
#include "sagent/templates.hpp"
#include "sagent/types.hpp"

namespace sagent {

struct AllUnparseable : std::runtime_error {
  AllUnparseable() : std::runtime_error("all_unparseable: no sample parsed") {}
};

// Lowest perplexity among samples for which parse_ok(i) holds; ties go to the
// lowest index. Returns a 0-based index.
std::size_t select_min_perplexity(const std::vector<SampleResult>& samples,
                                  const std::function<bool(std::size_t)>& parse_ok);
std::size_t select_min_perplexity(const std::vector<SampleRecord>& samples);

struct RankVerdict {
  int best_index = 0;        // 1-based, as written in the prompt
  std::vector<int> ranking;  // 1-based, best first
  std::string explanation;
};

struct RankParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RankSlotError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Fills the ranker template with the step input and 2..slots sample texts.
std::string render_rank_prompt(const TemplateSet& templates, const std::string& step_input,
                               const std::vector<std::string>& sample_texts);

// Reads the `Explanation:`, `Answer: #X` and `Ranking: #X > #Y > ...` lines.
RankVerdict parse_rank_verdict(std::string_view completion, int n);

// Off-policy re-selection of one step's sample by the ranking model.
// Already-ranked steps and steps with fewer than two parseable samples are
// returned unchanged. The trajectory's past actions are never touched.
StepRecord rerank_step(const StepRecord& step, LanguageModel& rm, const TemplateSet& templates,
                       std::uint64_t seed = 0);

}  // namespace sagent
