#include <gtest/gtest.h>

#include <random>

#include "sagent/agent.hpp"
#include "sagent/codec.hpp"
#include "script_gen.hpp"

using namespace sagent;

namespace {

Question question() { return Question{"q7", "How fast is an unladen swallow?", QuestionSource::hotpotqa, "11 m/s"}; }

AgentConfig single_sample() {
  AgentConfig c;
  c.samples_per_step = 1;
  return c;
}

void push(ScriptedModel& m, StepKind k, const Action& a) { m.push(render_completion(k, a), 10, -5.0); }

}  // namespace

TEST(Transitions, Table) {
  EXPECT_EQ(transition(StepKind::decision, SearchAction{"t", "q"}, 9), StepKind::summarize);
  EXPECT_EQ(transition(StepKind::decision, TerminateAction{"t"}, 9), StepKind::answer_gen);
  EXPECT_EQ(transition(StepKind::summarize, SelectLinkAction{}, 1), StepKind::decision);
  EXPECT_EQ(transition(StepKind::summarize, SelectLinkAction{}, 0), StepKind::answer_gen);
  EXPECT_EQ(transition(StepKind::answer_gen, AnswerAction{}, 0), StepKind::relevance_check);
  EXPECT_EQ(transition(StepKind::relevance_check, CheckAnswerAction{true, "r"}, 0), StepKind::grounding_check);
  EXPECT_EQ(transition(StepKind::grounding_check, ReviseAnswerAction{"x", "r"}, 0), StepKind::done);
  EXPECT_THROW(transition(StepKind::decision, AnswerAction{}, 3), TransitionError);
  EXPECT_THROW(transition(StepKind::summarize, SearchAction{}, 3), TransitionError);
  EXPECT_THROW(transition(StepKind::answer_gen, TerminateAction{}, 3), TransitionError);
  EXPECT_THROW(transition(StepKind::done, TerminateAction{}, 3), TransitionError);
}

TEST(Transitions, SelfCheck) {
  Trajectory t;
  t.draft_answer = "draft";
  EXPECT_EQ(apply_self_check(t, CheckKind::relevance, CheckAnswerAction{true, "ok"}), "draft");
  EXPECT_EQ(apply_self_check(t, CheckKind::relevance, ReviseAnswerAction{"better", "r"}), "better");
  EXPECT_THROW(apply_self_check(t, CheckKind::grounding, CheckAnswerAction{false, "bad"}), TransitionError);
  EXPECT_THROW(apply_self_check(t, CheckKind::grounding, AnswerAction{}), TransitionError);
}

TEST(Agent, OneSearchTrajectory) {
  const auto set = TemplateSet::load_default();
  ScriptedModel m;
  push(m, StepKind::decision, SearchAction{"Look it up.", "swallow airspeed"});
  push(m, StepKind::summarize, SelectLinkAction{"Link 2 has it.", {2}, {}, "About 11 m/s [link_id=2]."});
  push(m, StepKind::decision, TerminateAction{"Enough."});
  push(m, StepKind::answer_gen, AnswerAction{"Use link 2.", "Roughly 11 m/s [link_id=2]."});
  push(m, StepKind::relevance_check, CheckAnswerAction{true, "Relevant."});
  push(m, StepKind::grounding_check, CheckAnswerAction{true, "Grounded."});
  SimulatedSearch search;
  const auto t = run_trajectory(question(), single_sample(), m, search, set, {.seed = 3});
  ASSERT_EQ(t.status, TrajectoryStatus::completed) << t.failure_reason.value_or("");
  ASSERT_EQ(t.steps.size(), 6u);
  EXPECT_EQ(t.search_count(), 1);
  EXPECT_EQ(t.remaining_searches, 9);
  EXPECT_EQ(t.next_link_id, 4);
  EXPECT_EQ(*t.final_answer, "Roughly 11 m/s [link_id=2].");
  EXPECT_TRUE(matches_step_grammar(t));
  EXPECT_EQ(expected_example_count(t), 6);
  ASSERT_TRUE(t.steps[1].search);
  EXPECT_EQ(t.steps[1].search->query, "swallow airspeed");
  const auto& sel = std::get<SelectLinkAction>(*t.steps[1].action);
  ASSERT_EQ(sel.selected_links.size(), 1u);
  EXPECT_EQ(sel.selected_links[0].link_id, 2);
  // Past actions: Search, SelectLink, Terminate, Answer.
  EXPECT_EQ(t.past_actions.size(), 4u);
  EXPECT_EQ(m.remaining(), 0u);
  // Decision prompt after one search shows the reduced budget.
  EXPECT_NE(live_block(t.steps[2].prompt).find("REMAINING_SEARCHES: int = 9"), std::string::npos);
}

TEST(Agent, AlwaysSearchStopsAtBudget) {
  const auto set = TemplateSet::load_default();
  int searches = 0;
  CallbackModel m([&](const SampleRequest& r) {
    const auto live = live_block(r.prompt);
    if (live.find("REMAINING_SEARCHES: int =") != std::string_view::npos) {
      ++searches;
      return std::vector<SampleResult>{{render_completion(StepKind::decision, SearchAction{"t", "more"}), 5, -1}};
    }
    if (live.find("CURRENT_SEARCH_RESULTS") != std::string_view::npos) {
      return std::vector<SampleResult>{{render_completion(StepKind::summarize, SelectLinkAction{"t", {}, {}, "s"}), 5, -1}};
    }
    if (live.find("\nANSWER: str =") != std::string_view::npos) {
      return std::vector<SampleResult>{{render_completion(StepKind::relevance_check, CheckAnswerAction{true, "ok"}), 5, -1}};
    }
    return std::vector<SampleResult>{{render_completion(StepKind::answer_gen, AnswerAction{"t", "a"}), 5, -1}};
  });
  SimulatedSearch search;
  const auto t = run_trajectory(question(), single_sample(), m, search, set);
  ASSERT_EQ(t.status, TrajectoryStatus::completed);
  EXPECT_EQ(searches, 10);
  EXPECT_EQ(t.search_count(), 10);
  EXPECT_EQ(t.remaining_searches, 0);
  EXPECT_TRUE(matches_step_grammar(t));
  EXPECT_EQ(expected_example_count(t), 23);
  EXPECT_EQ(static_cast<int>(t.steps.size()), 23);
}

TEST(Agent, EmptyQuestionFailsBeforeAnyCall) {
  const auto set = TemplateSet::load_default();
  ScriptedModel m;
  SimulatedSearch s;
  Question q = question();
  q.text = "  ";
  EXPECT_THROW(run_trajectory(q, single_sample(), m, s, set), std::invalid_argument);
  EXPECT_EQ(m.calls(), 0u);
}

TEST(Agent, ParseExhaustion) {
  const auto set = TemplateSet::load_default();
  ScriptedModel m;
  for (int i = 0; i < 3; ++i) m.push("nonsense(", 2, -1);
  SimulatedSearch s;
  const auto t = run_trajectory(question(), single_sample(), m, s, set);
  EXPECT_EQ(t.status, TrajectoryStatus::failed);
  EXPECT_TRUE(t.failure_reason->starts_with("parse_exhausted"));
  EXPECT_EQ(t.steps.back().attempts, 3);
}

TEST(Agent, BackendFailureRecorded) {
  const auto set = TemplateSet::load_default();
  ScriptedModel m;
  push(m, StepKind::decision, SearchAction{"t", "unknown query"});
  FixtureSearch s;
  const auto t = run_trajectory(question(), single_sample(), m, s, set);
  EXPECT_EQ(t.status, TrajectoryStatus::failed);
  EXPECT_TRUE(t.failure_reason->starts_with("backend_error"));
}

TEST(Agent, UnseenCitationIsInvalid) {
  const auto set = TemplateSet::load_default();
  ScriptedModel m;
  push(m, StepKind::decision, TerminateAction{"t"});
  push(m, StepKind::answer_gen, AnswerAction{"t", "made up [link_id=4]"});
  push(m, StepKind::answer_gen, AnswerAction{"t", "no sources"});
  push(m, StepKind::relevance_check, CheckAnswerAction{true, "ok"});
  push(m, StepKind::grounding_check, ReviseAnswerAction{"hedged", "r"});
  SimulatedSearch s;
  const auto t = run_trajectory(question(), single_sample(), m, s, set);
  ASSERT_EQ(t.status, TrajectoryStatus::completed);
  EXPECT_EQ(t.steps[1].attempts, 2);
  EXPECT_FALSE(t.steps[1].samples[0].valid);
  EXPECT_EQ(*t.draft_answer, "no sources");
  EXPECT_EQ(*t.final_answer, "hedged");
  EXPECT_EQ(expected_example_count(t), 4);
}

TEST(Agent, ScriptedRandomTrajectoriesMatchOracle) {
  const auto set = TemplateSet::load_default();
  std::mt19937_64 rng(99);
  AgentConfig cfg;
  for (int c = 0; c < 60; ++c) {
    ScriptedModel m;
    testgen::ScriptBuilder b(rng, cfg);
    const auto oracle = b.build(m, static_cast<int>(rng() % 12));
    SimulatedSearch s;
    const auto t = run_trajectory(question(), cfg, m, s, set, {.seed = static_cast<std::uint64_t>(c)});
    ASSERT_EQ(t.status, TrajectoryStatus::completed) << t.failure_reason.value_or("");
    ASSERT_EQ(t.steps.size(), oracle.kinds.size());
    for (std::size_t i = 0; i < oracle.kinds.size(); ++i) EXPECT_EQ(t.steps[i].kind, oracle.kinds[i]);
    EXPECT_EQ(t.search_count(), oracle.searches);
    EXPECT_EQ(*t.draft_answer, oracle.draft);
    EXPECT_EQ(*t.final_answer, oracle.final_answer);
    EXPECT_TRUE(matches_step_grammar(t));
    EXPECT_EQ(expected_example_count(t), oracle.examples);
    EXPECT_EQ(m.remaining(), 0u);
  }
}
