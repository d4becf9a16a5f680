#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sagent/agent.hpp"
#include "sagent/backends.hpp"
#include "sagent/templates.hpp"
#include "sagent/types.hpp"

namespace sagent {

enum class EvalStage { draft, final_answer };
std::string_view to_string(EvalStage s);  // "draft" / "final"
EvalStage eval_stage_from_string(std::string_view s);

struct EvalVerdict {
  std::string question_id;
  int run_index = 0;
  EvalStage stage = EvalStage::final_answer;
  bool correct = false;
  std::string judge_raw;
  std::string trajectory_ref;
  bool flagged = false;
  std::string flag;  // judge_unparseable, trajectory_failed, no_answer

  bool operator==(const EvalVerdict&) const = default;
};

struct EvalSummary {
  int runs = 0;
  std::vector<double> per_run_accuracy;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over runs
  EvalStage stage = EvalStage::final_answer;
  std::size_t dataset_size = 0;
  std::size_t failed_trajectories = 0;
  std::size_t flagged_verdicts = 0;

  bool operator==(const EvalSummary&) const = default;
};

void to_json(json& j, const EvalVerdict& v);
void from_json(const json& j, EvalVerdict& v);
void to_json(json& j, const EvalSummary& s);
void from_json(const json& j, EvalSummary& s);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
// Sample standard deviation (n-1); a single value has std 0.
MeanStd mean_and_std(const std::vector<double>& xs);

// Judges one answer against the question's reference with a greedy sample.
// An unparseable verdict is retried once, then scored incorrect and flagged.
// Throws std::invalid_argument without a reference answer.
EvalVerdict judge(const Question& q, const std::string& answer, LanguageModel& judge_model,
                  const TemplateSet& templates, std::uint64_t seed = 0);

struct EvalOptions {
  int runs = 10;
  std::vector<EvalStage> stages{EvalStage::final_answer};
  std::uint64_t seed = 0;
  int parallelism = 1;
  int generation = 0;
  AgentConfig config;
};

struct EvalRun {
  std::vector<Trajectory> trajectories;  // run-major, dataset order
  std::vector<EvalVerdict> verdicts;     // run-major, dataset order, stages in option order
  std::vector<EvalSummary> summaries;    // one per stage
};

// Aggregates verdicts of one stage into per-run accuracy, mean and sample std.
EvalSummary summarize(const std::vector<EvalVerdict>& verdicts, EvalStage stage, int runs, std::size_t dataset_size);

EvalRun evaluate_dataset(const std::vector<Question>& dataset, const EvalOptions& opts, LanguageModel& agent_model,
                         SearchBackend& search, LanguageModel& judge_model, const TemplateSet& templates);

// verdicts.jsonl, summary.json and trajectories.jsonl under `dir`.
void write_eval_dir(const std::filesystem::path& dir, const EvalRun& run);

struct EvalReport {
  std::vector<EvalSummary> summaries;
  std::string text;
  std::string csv;
};

// Recomputes every stored summary from the stored verdicts; a mismatch is an IntegrityError.
EvalReport eval_report(const std::filesystem::path& dir);

struct CorrelationUndefined : std::domain_error {
  using std::domain_error::domain_error;
};

struct Correlation {
  std::size_t n = 0;
  double pearson = 0.0;
  double spearman = 0.0;
  // Both approximate: Student-t transform for Pearson, normal approximation for Spearman.
  double pearson_p = 0.0;
  double spearman_p = 0.0;
};

// Fractional ranks, 1-based; ties share their average rank.
std::vector<double> average_ranks(const std::vector<double>& xs);
Correlation correlate(const std::vector<double>& x, const std::vector<double>& y);

// One number per line, or JSON array.
std::vector<double> load_scores(const std::filesystem::path& path);

// Validates an evaluation set: non-empty text and ref_answer, unique ids,
// optional count check.
std::vector<Question> load_eval_dataset(const std::filesystem::path& path,
                                        std::optional<std::size_t> expected_count = std::nullopt);

}  // namespace sagent
