#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sagent/literal.hpp"
#include "sagent/types.hpp"

namespace sagent {

inline constexpr std::string_view kEndMarker = "# [END]";
inline constexpr std::string_view kActionCue = "ACTION_SELECTED";
inline constexpr std::string_view kAutoEvalCue = "Check_Answer(ORIGINAL_QUESTION, ANSWER, REF_ANSWER) =";

struct ParsedCompletion {
  Action action;
  std::string raw_text;
  std::vector<std::string> leading_comments;
  bool terminated = false;  // saw `# [END]`
};

// Parses a model completion for an agent step. Accepts a full block
// (comments + `ACTION_SELECTED[: Type] = expr  # [END]`), a continuation that
// begins after the cue (`[: Type] = expr`), or a bare constructor expression.
// Throws ParseError; never anything else for any input.
ParsedCompletion parse_completion(StepKind kind, std::string_view completion);

// Non-throwing variant; `error` receives the failure.
std::optional<ParsedCompletion> try_parse_completion(StepKind kind, std::string_view completion,
                                                     std::string* error = nullptr);

// Parses a `[Action(...), ...]` PAST_ACTIONS list literal.
std::vector<Action> parse_action_list(std::string_view text);

// Flat constructor literal, as used inside PAST_ACTIONS. Check actions carry
// their rationale as leading `#` lines.
std::string canonicalize(const Action& action);

// The step's output form as a continuation of the cue, ending with `# [END]`:
//   decision      ` = ActionWrapper(thoughts=..., action=Search(query=...))  # [END]`
//   summarize     `: LinkSelection = LinkSelection(...)  # [END]`
//   answer_gen    `: Answer = Answer(...)  # [END]`
//   checks        `: Command = Check_Answer(passed=True)  # [END]`
// A summarize completion carries selected_link_ids only.
std::string render_completion(StepKind kind, const Action& action);

struct AutoEvalVerdict {
  bool value = false;
  std::vector<std::string> comments;
  bool terminated = false;
};

struct VerdictParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

AutoEvalVerdict parse_autoeval_verdict(std::string_view completion);

// Fills selected_links from the search results the ids refer to, in id order.
// Ids not present in `results` are returned; an empty result means all resolved.
std::vector<int> attach_selected_links(SelectLinkAction& action, const std::vector<ResultItem>& results);

// Renders a PAST_ACTIONS list value.
std::string render_action_list(const std::vector<Action>& actions);
// Renders `SearchResult(links=[...])`.
std::string render_search_result(const std::vector<ResultItem>& items);

}  // namespace sagent
