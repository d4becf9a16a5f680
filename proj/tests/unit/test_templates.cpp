#include <gtest/gtest.h>

#include "sagent/codec.hpp"
#include "sagent/templates.hpp"

using namespace sagent;

namespace {

Trajectory sample_trajectory() {
  Trajectory t;
  t.question = Question{"q1", "Who wrote 'Dune'?", QuestionSource::hotpotqa, "Frank Herbert"};
  t.config = AgentConfig{};
  t.remaining_searches = 7;
  return t;
}

}  // namespace

TEST(Templates, ShippedSetLoads) {
  const auto set = TemplateSet::load_default();
  EXPECT_EQ(set.get(StepKind::decision).exemplars.size(), 9u);
  EXPECT_EQ(set.get(StepKind::summarize).exemplars.size(), 6u);
  EXPECT_EQ(set.get(StepKind::answer_gen).exemplars.size(), 5u);
  EXPECT_EQ(set.get(StepKind::relevance_check).exemplars.size(), 6u);
  EXPECT_EQ(set.get(StepKind::grounding_check).exemplars.size(), 5u);
  EXPECT_EQ(set.get(StepKind::auto_eval).exemplars.size(), 5u);
  EXPECT_EQ(set.get(StepKind::reward_ranker).exemplars.size(), 0u);
  EXPECT_EQ(set.get(StepKind::reward_ranker).slots, 4);
}

TEST(Templates, DecisionPromptEndsAtCue) {
  const auto set = TemplateSet::load_default();
  const std::string p = render_prompt(set, StepKind::decision, sample_trajectory());
  EXPECT_TRUE(p.ends_with("\n\nACTION_SELECTED"));
  EXPECT_NE(p.find(example_banner(10)), std::string::npos);
  EXPECT_EQ(p.find(example_banner(11)), std::string::npos);
  const auto live = live_block(p);
  EXPECT_NE(live.find("REMAINING_SEARCHES: int = 7"), std::string::npos);
  EXPECT_NE(live.find("PAST_ACTIONS: List[Action] = []"), std::string::npos);
  EXPECT_EQ(extract_past_actions(live)->size(), 0u);
}

TEST(Templates, SummarizeNeedsResults) {
  const auto set = TemplateSet::load_default();
  try {
    render_prompt(set, StepKind::summarize, sample_trajectory());
    FAIL();
  } catch (const RenderError& e) {
    EXPECT_EQ(e.slot, "CURRENT_SEARCH_RESULTS");
  }
  RenderInputs in;
  in.current_results = SearchQueryRecord{"q", {{1, "a", "b"}, {2, "c", "d"}, {3, "e", "f"}, {4, "g", "h"}}, "fixture", "", {}};
  const std::string p = render_prompt(set, StepKind::summarize, sample_trajectory(), in);
  const auto live = live_block(p);
  EXPECT_NE(live.find("link_id=3"), std::string::npos);
  EXPECT_EQ(live.find("link_id=4"), std::string::npos);  // top_k = 3
}

TEST(Templates, CheckNeedsAnswer) {
  const auto set = TemplateSet::load_default();
  EXPECT_THROW(render_prompt(set, StepKind::grounding_check, sample_trajectory()), RenderError);
  RenderInputs in;
  in.answer = "Frank Herbert [link_id=1].";
  const std::string p = render_prompt(set, StepKind::relevance_check, sample_trajectory(), in);
  EXPECT_NE(live_block(p).find("ANSWER: str = \"Frank Herbert [link_id=1].\""), std::string::npos);
}

TEST(Templates, AutoEvalEndsAtCue) {
  const auto set = TemplateSet::load_default();
  RenderInputs in;
  in.answer = "a";
  in.ref_answer = "b";
  const std::string p = render_autoeval_prompt(set, "q?", in);
  EXPECT_TRUE(p.ends_with(kAutoEvalCue));
}

TEST(Templates, ParseSectionsAndRejectBadSlots) {
  const auto t = parse_template_file(StepKind::answer_gen,
                                     "=== header ===\nH\n=== exemplar ===\nORIGINAL_QUESTION: str = 'x'\n\n"
                                     "ACTION_SELECTED: Answer = Answer(thoughts='t', answer='a')  # [END]\n"
                                     "=== live ===\nORIGINAL_QUESTION: str = {{ORIGINAL_QUESTION}}\n"
                                     "PAST_ACTIONS: List[Action] = {{PAST_ACTIONS}}\n\nACTION_SELECTED\n");
  EXPECT_EQ(t.exemplars.size(), 1u);
  EXPECT_NO_THROW(validate_exemplars(t));
  EXPECT_THROW(parse_template_file(StepKind::answer_gen, "=== header ===\nH\n=== live ===\n{{BOGUS}}\nACTION_SELECTED\n"),
               TemplateError);
  EXPECT_THROW(parse_template_file(StepKind::answer_gen, "=== live ===\n{{ORIGINAL_QUESTION}}\n"), TemplateError);
}

TEST(Templates, BrokenExemplarIsRejected) {
  auto t = TemplateSet::load_default().get(StepKind::answer_gen);
  t.exemplars[0] = "ORIGINAL_QUESTION: str = 'x'\n\nACTION_SELECTED: Answer = Answer(thoughts='t')  # [END]";
  EXPECT_THROW(validate_exemplars(t), TemplateError);
}
