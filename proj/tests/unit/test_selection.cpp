#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sagent/backends.hpp"
#include "sagent/codec.hpp"
#include "sagent/selection.hpp"
#include "sagent/templates.hpp"

using namespace sagent;

namespace {

// token_count=1 makes perplexity exp(-sum_log_prob), so ppl p needs sum -log(p).
SampleResult with_ppl(std::string text, double ppl) { return SampleResult{std::move(text), 1, -std::log(ppl)}; }

SampleRecord valid_record(StepKind kind, const Action& a, double ppl) {
  SampleRecord r;
  r.sample = with_ppl(render_completion(kind, a), ppl);
  r.valid = true;
  return r;
}

SampleRecord invalid_record(double ppl) {
  SampleRecord r;
  r.sample = with_ppl("garbage", ppl);
  r.error = "parse";
  return r;
}

StepRecord answer_step(int n) {
  StepRecord s;
  s.kind = StepKind::answer_gen;
  s.prompt = "live prompt";
  for (int i = 0; i < n; ++i) {
    s.samples.push_back(valid_record(StepKind::answer_gen, AnswerAction{"t", "answer " + std::to_string(i)}, 1.0 + i));
  }
  s.selected_index = 0;
  s.min_perplexity_index = 0;
  s.action = AnswerAction{"t", "answer 0"};
  return s;
}

}  // namespace

TEST(MinPerplexity, PicksLowest) {
  const std::vector<SampleResult> s{with_ppl("a", 1.31), with_ppl("b", 0.97), with_ppl("c", 1.05), with_ppl("d", 2.40)};
  EXPECT_EQ(select_min_perplexity(s, [](std::size_t) { return true; }), 1u);
}

TEST(MinPerplexity, SkipsUnparseable) {
  const std::vector<SampleResult> s{with_ppl("a", 1.31), with_ppl("b", 0.97), with_ppl("c", 1.05), with_ppl("d", 2.40)};
  EXPECT_EQ(select_min_perplexity(s, [](std::size_t i) { return i != 1; }), 2u);
  EXPECT_THROW(select_min_perplexity(s, [](std::size_t) { return false; }), AllUnparseable);
}

TEST(MinPerplexity, TiesGoToLowestIndex) {
  const std::vector<SampleResult> s{{"a", 4, -2.0}, {"b", 2, -1.0}, {"c", 8, -4.0}};
  EXPECT_EQ(select_min_perplexity(s, [](std::size_t) { return true; }), 0u);
}

TEST(MinPerplexity, PerplexityDefinition) {
  const SampleResult s{"x", 4, -2.0};
  EXPECT_DOUBLE_EQ(s.perplexity(), std::exp(0.5));
}

TEST(RankVerdict, ParsesAnswerAndRanking) {
  const auto v = parse_rank_verdict("Explanation: #2 cites sources.\nAnswer: #2\nRanking: #2 > #4 > #1 > #3\n", 4);
  EXPECT_EQ(v.best_index, 2);
  EXPECT_EQ(v.ranking, (std::vector<int>{2, 4, 1, 3}));
  EXPECT_EQ(v.explanation, "#2 cites sources.");
}

TEST(RankVerdict, LenientFormatting) {
  const auto v = parse_rank_verdict("**answer**: 3\nranking: 3, 1, 9, 3, 2", 3);
  EXPECT_EQ(v.best_index, 3);
  EXPECT_EQ(v.ranking, (std::vector<int>{3, 1, 2}));
}

TEST(RankVerdict, Errors) {
  EXPECT_THROW(parse_rank_verdict("Explanation: none", 4), RankParseError);
  EXPECT_THROW(parse_rank_verdict("Answer: #5", 4), RankParseError);
  EXPECT_THROW(parse_rank_verdict("Answer: #0", 4), RankParseError);
  EXPECT_THROW(parse_rank_verdict("Answer: none", 4), RankParseError);
}

TEST(RankPrompt, SlotsAndLayout) {
  const auto set = TemplateSet::load_default();
  const std::string two = render_rank_prompt(set, "INPUT", {"first", "second"});
  EXPECT_NE(two.find("INPUT"), std::string::npos);
  EXPECT_NE(two.find("first"), std::string::npos);
  EXPECT_LT(two.find("first"), two.find("second"));
  const std::string four = render_rank_prompt(set, "INPUT", {"a1", "a2", "a3", "a4"});
  EXPECT_NE(four.find("a4"), std::string::npos);
  EXPECT_THROW(render_rank_prompt(set, "INPUT", {"a1", "a2", "a3", "a4", "a5"}), RankSlotError);
  EXPECT_THROW(render_rank_prompt(set, "INPUT", {"a1"}), RankSlotError);
}

TEST(Rerank, SelectsRankedBestAndIsIdempotent) {
  const auto set = TemplateSet::load_default();
  ScriptedModel rm;
  rm.push("Explanation: x\nAnswer: #3\nRanking: #3 > #1 > #2 > #4", 10, -1);
  const StepRecord step = answer_step(4);
  const StepRecord out = rerank_step(step, rm, set, 1);
  EXPECT_EQ(out.selected_index, 2);
  EXPECT_EQ(out.min_perplexity_index, 0);
  EXPECT_EQ(out.selection_method, SelectionMethod::rm_ranked);
  EXPECT_EQ(std::get<AnswerAction>(*out.action).answer_text, "answer 2");
  ASSERT_EQ(rm.requests().size(), 1u);
  EXPECT_EQ(rm.requests()[0].n, 1);
  EXPECT_EQ(rm.requests()[0].temperature, 0.0);
  // A second pass neither calls the model nor changes the step.
  const StepRecord again = rerank_step(out, rm, set, 1);
  EXPECT_EQ(again, out);
  EXPECT_EQ(rm.calls(), 1u);
}

TEST(Rerank, FallsThroughInvalidRankedSamples) {
  const auto set = TemplateSet::load_default();
  StepRecord step = answer_step(4);
  step.samples[1] = invalid_record(0.5);
  ScriptedModel rm;
  rm.push("Answer: #2\nRanking: #2 > #4 > #1", 10, -1);
  const auto out = rerank_step(step, rm, set);
  EXPECT_EQ(out.selected_index, 3);
}

TEST(Rerank, SkipsWhenFewerThanTwoValid) {
  const auto set = TemplateSet::load_default();
  StepRecord step = answer_step(2);
  step.samples[1] = invalid_record(0.5);
  ScriptedModel rm;
  EXPECT_EQ(rerank_step(step, rm, set), step);
  EXPECT_EQ(rm.calls(), 0u);
}

TEST(Rerank, UnusableVerdictFallsBack) {
  const auto set = TemplateSet::load_default();
  const StepRecord step = answer_step(4);
  ScriptedModel rm;
  rm.push("I cannot decide.", 3, -1);
  const auto out = rerank_step(step, rm, set);
  EXPECT_TRUE(out.rank_fallback);
  EXPECT_EQ(out.selected_index, 0);
  EXPECT_EQ(out.selection_method, SelectionMethod::min_perplexity);
  ScriptedModel empty;  // backend error
  const auto out2 = rerank_step(step, empty, set);
  EXPECT_TRUE(out2.rank_fallback);
}

TEST(Rerank, MoreSamplesThanSlotsUsesLowestPerplexity) {
  const auto set = TemplateSet::load_default();
  StepRecord step = answer_step(6);  // ppl 1..6
  step.samples[0] = invalid_record(0.1);
  ScriptedModel rm;
  rm.push("Answer: #4", 3, -1);
  const auto out = rerank_step(step, rm, set);
  // Candidates are samples 1..4 (valid, lowest perplexity) in sample order.
  EXPECT_EQ(out.selected_index, 4);
}

TEST(Rerank, SummarizeReattachesLinks) {
  const auto set = TemplateSet::load_default();
  StepRecord step;
  step.kind = StepKind::summarize;
  step.prompt = "p";
  step.search = SearchQueryRecord{"q", {{1, "A", "a"}, {2, "B", "b"}}, "fixture", "", {}};
  step.samples.push_back(valid_record(StepKind::summarize, SelectLinkAction{"t", {1}, {}, "s [link_id=1]"}, 1.0));
  step.samples.push_back(valid_record(StepKind::summarize, SelectLinkAction{"t", {2}, {}, "s [link_id=2]"}, 2.0));
  ScriptedModel rm;
  rm.push("Answer: #2", 3, -1);
  const auto out = rerank_step(step, rm, set);
  const auto& sel = std::get<SelectLinkAction>(*out.action);
  ASSERT_EQ(sel.selected_links.size(), 1u);
  EXPECT_EQ(sel.selected_links[0].link_text, "B");
}

// Randomized: the ranker always names one valid candidate; rerank must pick it.
TEST(Rerank, RandomizedAgreesWithVerdict) {
  const auto set = TemplateSet::load_default();
  std::mt19937_64 rng(11);
  for (int c = 0; c < 300; ++c) {
    const int n = 2 + static_cast<int>(rng() % 3);
    StepRecord step = answer_step(n);
    const int target = static_cast<int>(rng() % n);
    ScriptedModel rm;
    rm.push("Answer: #" + std::to_string(target + 1), 2, -1);
    const auto out = rerank_step(step, rm, set);
    ASSERT_EQ(out.selected_index, target);
    ASSERT_FALSE(out.rank_fallback);
  }
}
