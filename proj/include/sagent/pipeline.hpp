#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sagent/agent.hpp"
#include "sagent/backends.hpp"
#include "sagent/templates.hpp"
#include "sagent/types.hpp"

namespace sagent {

struct EmptyMixtureError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// JSONL of {id, text, source, ref_answer?}.
std::vector<Question> load_questions(const std::filesystem::path& path);

// Uniform sample without replacement of `per_dataset` questions from each
// dataset, keyed by `seed`. Eval-only sources are refused.
std::vector<Question> sample_question_set(const std::vector<std::vector<Question>>& datasets, int per_dataset,
                                          std::uint64_t seed);

// Runs fn(i) for i in [0, n) on up to `parallelism` threads. The first
// exception stops further work and is rethrown.
void parallel_for(std::size_t n, int parallelism, const std::function<void(std::size_t)>& fn);

struct GrowOptions {
  int repeats = 1;
  int parallelism = 1;
  std::uint64_t seed = 0;
  int generation = 0;
  AgentConfig config;
  // Stop after this many new trajectories (0 = no limit); leaves the checkpoint
  // in place as an interrupted run would.
  std::size_t limit = 0;
};

struct GrowResult {
  std::size_t total = 0;      // records in the log (or checkpoint, when unfinished)
  std::size_t ran = 0;        // trajectories run by this call
  std::size_t resumed = 0;    // found in the checkpoint
  std::size_t completed = 0;
  std::size_t failed = 0;
  bool finished = false;
};

// Checkpoint file used while a grow into `log` is in progress.
std::filesystem::path checkpoint_path(const std::filesystem::path& log);

// Collects questions × repeats trajectories into a JSONL log sorted by
// (question_id, repeat). Interrupted runs resume from the checkpoint.
GrowResult grow(const std::vector<Question>& questions, const GrowOptions& opts, LanguageModel& llm,
                SearchBackend& search, const TemplateSet& templates, const std::filesystem::path& log);

// Reads a trajectory log. Unreadable lines are counted, not fatal.
std::vector<Trajectory> read_log(const std::filesystem::path& log, std::size_t* unreadable = nullptr);

struct FineTuneExample {
  std::string input_text;
  std::string target_text;
  StepKind step_kind = StepKind::decision;
  std::string trajectory_id;
  std::string question_id;
  int repeat = 0;
  int step_index = 0;
  int generation = 0;
  SelectionMethod selection_method = SelectionMethod::min_perplexity;
  int multiplicity = 1;

  bool operator==(const FineTuneExample&) const = default;
};

void to_json(json& j, const FineTuneExample& e);
void from_json(const json& j, FineTuneExample& e);

// Predicate over one example; returning false removes it.
struct ExampleFilter {
  std::string name;
  std::function<bool(const FineTuneExample&, const Trajectory&, const StepRecord&)> keep;
};

// empty_thoughts, parse_failure, citation_closure.
ExampleFilter builtin_filter(const std::string& name);
std::vector<std::string> builtin_filter_names();

struct MixtureManifest {
  std::size_t total_trajectories = 0;
  std::size_t total_examples = 0;
  std::map<std::string, std::size_t> per_step_counts;
  int repeats_per_question = 0;
  std::map<std::string, std::size_t> filter_stats;
  std::string content_hash;
  // Accounting beyond the core fields.
  std::size_t skipped_failed = 0;
  std::size_t skipped_eval_only = 0;
  std::size_t skipped_over_cap = 0;
  std::size_t unreadable_records = 0;
  std::size_t reranked_steps = 0;
  std::size_t rank_fallbacks = 0;
  bool rerank = false;
  bool dedup = false;
  int repeats_cap = 0;

  double examples_per_trajectory() const;
};

void to_json(json& j, const MixtureManifest& m);
void from_json(const json& j, MixtureManifest& m);

struct ImproveOptions {
  bool rerank = false;
  LanguageModel* rm = nullptr;               // required when rerank
  const TemplateSet* templates = nullptr;    // ranker template, required when rerank
  std::uint64_t rerank_seed = 0;
  std::vector<ExampleFilter> filters;
  int repeats_cap = 0;  // 0 keeps every trajectory
  bool dedup = false;
  int parallelism = 1;
};

std::filesystem::path manifest_path(const std::filesystem::path& mixture);

// Examples of one completed trajectory, in step order, before filtering.
std::vector<FineTuneExample> split_trajectory(const Trajectory& t);

// Builds the fine-tuning mixture and writes `<out>` plus `<out>.manifest.json`.
MixtureManifest improve(const std::filesystem::path& log, const std::filesystem::path& out, const ImproveOptions& opts);
MixtureManifest improve(const std::vector<Trajectory>& trajectories, const std::filesystem::path& out,
                        const ImproveOptions& opts, std::size_t unreadable = 0);

// Recounts a mixture file and checks it against its manifest.
MixtureManifest mixture_stats(const std::filesystem::path& mixture);

// Examples per trajectory in the reference run: 17970 examples from 2000 trajectories.
inline constexpr double kReferenceExamplesPerTrajectory = 17970.0 / 2000.0;

}  // namespace sagent
