#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sagent/types.hpp"

namespace sagent {

struct TemplateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Missing step-specific input at render time; `slot` names it.
struct RenderError : std::runtime_error {
  std::string slot;
  RenderError(std::string slot_name, const std::string& msg) : std::runtime_error(msg), slot(std::move(slot_name)) {}
};

// One prompt kind. Agent-step and auto-eval templates are header + numbered
// exemplars + a live block with `{{SLOT}}` placeholders. The ranker template is
// header + one repeated output section (`{{index}}`, `{{action}}`) + footer.
struct PromptTemplate {
  StepKind step_kind = StepKind::decision;
  std::string header;
  std::vector<std::string> exemplars;
  std::string live;
  std::vector<std::string> field_order;  // slot names in order of first appearance in `live`
  // reward_ranker only
  std::string output_section;
  std::string footer;
  int slots = 0;
};

// Template file sections are introduced by lines of the form `=== name ===`.
PromptTemplate parse_template_file(StepKind kind, const std::string& content);

class TemplateSet {
 public:
  // Loads every template named in a manifest:
  //   {"templates": {"decision": {"path": "decision.tmpl", "shots": 9}, ...,
  //                  "reward_ranker": {"path": "reward_ranker.tmpl", "slots": 4}}}
  static TemplateSet load(const std::filesystem::path& manifest);
  // Templates shipped with the source tree.
  static TemplateSet load_default();
  static std::filesystem::path default_manifest_path();

  void add(PromptTemplate t);
  const PromptTemplate& get(StepKind kind) const;
  bool has(StepKind kind) const { return templates_.count(kind) != 0; }

 private:
  std::map<StepKind, PromptTemplate> templates_;
};

struct RenderInputs {
  std::optional<SearchQueryRecord> current_results;  // summarize
  std::optional<std::string> answer;                 // checks, auto_eval
  std::optional<std::string> ref_answer;             // auto_eval
};

// Renders an agent-step prompt; the result ends exactly at the cue.
std::string render_prompt(const TemplateSet& templates, StepKind kind, const Trajectory& trajectory,
                          const RenderInputs& extra = {});

std::string render_autoeval_prompt(const TemplateSet& templates, const std::string& question,
                                   const RenderInputs& extra);

// Replaces every `{{name}}` in `text`; a name without a value is a RenderError.
std::string fill_slots(const std::string& text, const std::map<std::string, std::string>& values);

// Separator line block introducing exemplar `n` (1-based).
std::string example_banner(int n);

// Output block of an exemplar: everything after its last state-field line
// (ORIGINAL_QUESTION / ANSWER / REF_ANSWER / REMAINING_SEARCHES).
std::string_view exemplar_output(std::string_view exemplar);

// Parses the `PAST_ACTIONS: List[Action] = [...]` field of an exemplar or live block.
std::optional<std::vector<Action>> extract_past_actions(std::string_view block);

// Checks every exemplar's output block (and PAST_ACTIONS list) parses for its step kind.
void validate_exemplars(const PromptTemplate& t);

// Text after the last example banner (the live state block), or the whole prompt.
std::string_view live_block(std::string_view prompt);

}  // namespace sagent
