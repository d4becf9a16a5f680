#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "gen.hpp"
#include "listings.hpp"
#include "sagent/codec.hpp"
#include "sagent/templates.hpp"

using namespace sagent;

namespace {

std::string read(const std::string& name) { return testgen::read_listing(name); }
using testgen::output_blocks;

}  // namespace

TEST(Codec, DecisionListing) {
  const auto blocks = output_blocks(read("decision_step.txt"));
  ASSERT_EQ(blocks.size(), 1u);
  const auto p = parse_completion(StepKind::decision, blocks[0]);
  EXPECT_TRUE(p.terminated);
  const auto& s = std::get<SearchAction>(p.action);
  EXPECT_EQ(s.query, "2019 Honda Odyssey cargo size");
  EXPECT_EQ(s.thoughts.rfind("The past result gives us", 0), 0u);
}

TEST(Codec, SummarizationListing) {
  const auto blocks = output_blocks(read("summarization_step.txt"));
  ASSERT_EQ(blocks.size(), 1u);
  const auto p = parse_completion(StepKind::summarize, blocks[0]);
  const auto& s = std::get<SelectLinkAction>(p.action);
  EXPECT_EQ(s.selected_link_ids, std::vector<int>{19});
  ASSERT_EQ(p.leading_comments.size(), 2u);
  EXPECT_EQ(p.leading_comments[0].rfind("[link_id=17]", 0), 0u);
}

TEST(Codec, AnswerListingAndRepair) {
  const std::string raw = read("answer_generation_step.txt");
  const std::string fixed = read("answer_generation_step.repaired.txt");
  for (const auto* text : {&raw, &fixed}) {
    const auto blocks = output_blocks(*text);
    ASSERT_EQ(blocks.size(), 1u);
    const auto& a = std::get<AnswerAction>(parse_completion(StepKind::answer_gen, blocks[0]).action);
    EXPECT_NE(a.answer_text.find("[link_id=11]"), std::string::npos);
  }
  // The published PAST_ACTIONS list is malformed; the repaired one parses.
  EXPECT_THROW(extract_past_actions(raw), ParseError);
  const auto past = extract_past_actions(fixed);
  ASSERT_TRUE(past.has_value());
  ASSERT_EQ(past->size(), 5u);
  EXPECT_EQ(std::get<SelectLinkAction>((*past)[3]).selected_link_ids, (std::vector<int>{10, 11}));
}

TEST(Codec, SelfCheckListings) {
  for (const auto& [file, kind] : {std::pair{"self_check_relevance.txt", StepKind::relevance_check},
                                   std::pair{"self_check_grounding.txt", StepKind::grounding_check}}) {
    const auto blocks = output_blocks(read(file));
    ASSERT_EQ(blocks.size(), 1u) << file;
    const auto p = parse_completion(kind, blocks[0]);
    const auto& c = std::get<CheckAnswerAction>(p.action);
    EXPECT_TRUE(c.passed);
    EXPECT_FALSE(c.rationale.empty());
  }
}

TEST(Codec, AutoEvalListing) {
  const auto blocks = output_blocks(read("auto_eval.txt"));
  ASSERT_EQ(blocks.size(), 5u);
  const std::vector<bool> expected = {true, false, false, true, false};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto v = parse_autoeval_verdict(blocks[i]);
    EXPECT_EQ(v.value, expected[i]) << i;
    EXPECT_TRUE(v.terminated);
  }
}

TEST(Codec, ContinuationAndBareForms) {
  const auto a = parse_completion(StepKind::answer_gen, ": Answer = Answer(thoughts='t', answer='x')  # [END]");
  EXPECT_EQ(std::get<AnswerAction>(a.action).answer_text, "x");
  const auto b = parse_completion(StepKind::decision, " = ActionWrapper(thoughts='t', action=Terminate())  # [END]");
  EXPECT_TRUE(std::holds_alternative<TerminateAction>(b.action));
  const auto c = parse_completion(StepKind::decision, "Search(query='q', thoughts='t')");
  EXPECT_FALSE(c.terminated);
  EXPECT_EQ(std::get<SearchAction>(c.action).query, "q");
}

TEST(Codec, CheckForms) {
  const auto failed = parse_completion(StepKind::relevance_check,
                                       "# off topic\nACTION_SELECTED: Command = Check_Answer(passed=False)\n"
                                       "ACTION_SELECTED: Command = Revise_Answer(revised_answer='better')  # [END]");
  const auto& r = std::get<ReviseAnswerAction>(failed.action);
  EXPECT_EQ(r.revised_answer, "better");
  EXPECT_EQ(r.rationale, "off topic");
  try {
    parse_completion(StepKind::grounding_check, "ACTION_SELECTED: Command = Check_Answer(passed=False)  # [END]");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.kind, ParseErrorKind::check_without_revision);
  }
}

TEST(Codec, WrongConstructorForStep) {
  try {
    parse_completion(StepKind::summarize, "ACTION_SELECTED = Answer(thoughts='t', answer='a')  # [END]");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.kind, ParseErrorKind::unknown_constructor);
  }
  EXPECT_THROW(parse_completion(StepKind::decision, "ACTION_SELECTED = Search(query='q')  # [END]"), ParseError);
  EXPECT_THROW(parse_completion(StepKind::decision, "ACTION_SELECTED = Search(query=3, thoughts='t')"), ParseError);
  EXPECT_THROW(parse_completion(StepKind::auto_eval, "True"), std::invalid_argument);
}

TEST(Codec, EmptyThoughtsParse) {
  const auto p = parse_completion(StepKind::decision, " = ActionWrapper(thoughts='', action=Terminate())  # [END]");
  EXPECT_EQ(std::get<TerminateAction>(p.action).thoughts, "");
}

TEST(Codec, SelectLinkIdsDerivedFromLinks) {
  const auto acts = parse_action_list(
      "[SelectLink(selected_links=[ResultItem(link_id=4, link_text='t', snippet='s')], "
      "grounded_summarization='g', thoughts='x')]");
  const auto& s = std::get<SelectLinkAction>(acts.at(0));
  EXPECT_EQ(s.selected_link_ids, std::vector<int>{4});
  EXPECT_EQ(canonicalize(s),
            "SelectLink(selected_links=[ResultItem(link_id=4, link_text=\"t\", snippet=\"s\")], "
            "grounded_summarization=\"g\", thoughts=\"x\")");
}

TEST(Codec, RenderCompletionParsesBack) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    const Action a = testgen::random_action(rng);
    const StepKind kind = testgen::output_step(a);
    const std::string text = std::string(kActionCue) + render_completion(kind, a);
    const auto p = parse_completion(kind, text);
    EXPECT_TRUE(p.terminated);
    Action expect = a;
    if (auto* s = std::get_if<SelectLinkAction>(&expect)) s->selected_links.clear();
    EXPECT_EQ(p.action, expect) << text;
  }
}

TEST(Codec, CanonicalRoundTrip) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    const Action a = testgen::random_action(rng);
    const std::string once = canonicalize(a);
    const auto parsed = parse_completion(testgen::output_step(a), once).action;
    EXPECT_EQ(parsed, a) << once;
    EXPECT_EQ(canonicalize(parsed), once);
  }
}

TEST(Codec, ActionListRoundTrip) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    std::vector<Action> list;
    for (int n = static_cast<int>(rng() % 6); n > 0; --n) {
      Action a = testgen::random_action(rng);
      if (testgen::output_step(a) == StepKind::relevance_check) continue;
      list.push_back(a);
    }
    const std::string text = render_action_list(list);
    EXPECT_EQ(parse_action_list(text), list) << text;
  }
}

TEST(Codec, MalformedInputsOnlyThrowParseError) {
  std::mt19937_64 rng(5);
  const std::string seed = "ACTION_SELECTED: LinkSelection = LinkSelection(grounded_summarization='g [link_id=1]', "
                           "thoughts=\"t\", selected_link_ids=[1, 2])  # [END]";
  for (int i = 0; i < 3000; ++i) {
    std::string s = seed;
    for (int m = 1 + static_cast<int>(rng() % 4); m > 0; --m) {
      const std::size_t at = rng() % (s.size() + 1);
      switch (rng() % 3) {
        case 0: if (at < s.size()) s.erase(at, 1); break;
        case 1: s.insert(at, 1, "()[]'\",=#\n\\x"[rng() % 13]); break;
        default: s = s.substr(0, at);
      }
    }
    for (StepKind k : {StepKind::decision, StepKind::summarize, StepKind::answer_gen, StepKind::grounding_check}) {
      try {
        parse_completion(k, s);
      } catch (const ParseError&) {
      }
    }
  }
}
