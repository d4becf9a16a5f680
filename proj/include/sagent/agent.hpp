#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

#include "sagent/backends.hpp"
#include "sagent/templates.hpp"
#include "sagent/types.hpp"

namespace sagent {

// Illegal (state, action) pair.
struct TransitionError : std::logic_error {
  StepKind state;
  std::string action;
  TransitionError(StepKind s, std::string action_name);
};

// Pure transition. `remaining_searches` is the budget after `action` took effect.
StepKind transition(StepKind state, const Action& action, int remaining_searches);

// State the trajectory is in before its next step.
StepKind current_state(const Trajectory& t);

// Transition from the trajectory's current state.
StepKind next_state(const Trajectory& t, const Action& action);

enum class CheckKind { relevance, grounding };

// Answer after one self-check: unchanged on a passed check, replaced by a revision.
std::string apply_self_check(const Trajectory& t, CheckKind kind, const Action& action);

// The answer currently under review (final if set, else draft).
std::string current_answer(const Trajectory& t);

struct RunOptions {
  std::uint64_t seed = 0;  // trajectory seed; see trajectory_seed()
  int repeat = 0;
  int generation = 0;
  std::function<void(const Trajectory&, const StepRecord&)> on_step;
};

// Drives one question through the agent. Returns a completed or failed
// trajectory; failure reasons are parse_exhausted, backend_error and budget_misuse.
// Throws std::invalid_argument for an invalid question before any backend call.
Trajectory run_trajectory(const Question& question, const AgentConfig& config, LanguageModel& llm,
                          SearchBackend& search, const TemplateSet& templates, const RunOptions& opts = {});

// Why a sample cannot be used at this point of the trajectory, or empty when it can.
std::string validate_sample(const Trajectory& t, StepKind kind, const std::optional<SearchQueryRecord>& results,
                            const std::string& text, Action* parsed = nullptr);

// Step sequence checks used by tests and by the mixture builder.
bool matches_step_grammar(const Trajectory& t);
// 2s+4 after a voluntary Terminate, 2s+3 on budget exhaustion.
int expected_example_count(const Trajectory& t);

}  // namespace sagent
