#include "sagent/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "sagent/agent.hpp"
#include "sagent/codec.hpp"
#include "sagent/config.hpp"
#include "sagent/evaluation.hpp"
#include "sagent/pipeline.hpp"
#include "sagent/util.hpp"

namespace sagent {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> parallel;
  std::string templates;
  std::string record;
  std::string replay;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--seed", c.seed, "run seed");
  cmd->add_option("--parallel", c.parallel, "worker threads");
  cmd->add_option("--templates", c.templates, "template manifest");
  cmd->add_option("--record", c.record, "record backend traffic into this archive directory");
  cmd->add_option("--replay", c.replay, "serve backend traffic from this archive directory");
}

RunConfig resolve(const Common& c, json flags = json::object()) {
  if (c.seed) flags["run_seed"] = *c.seed;
  if (c.parallel) flags["parallelism"] = *c.parallel;
  if (!c.templates.empty()) flags["templates"] = c.templates;
  if (!c.record.empty()) flags["record"] = c.record;
  if (!c.replay.empty()) flags["replay"] = c.replay;
  std::optional<fs::path> file;
  if (!c.config.empty()) file = c.config;
  return load_run_config(file, flags);
}

TemplateSet templates_for(const RunConfig& cfg) {
  return cfg.templates.empty() ? TemplateSet::load_default() : TemplateSet::load(cfg.templates);
}

// The archived config carries env var names only; values never reach disk.
void archive_config(const fs::path& dir, const RunConfig& cfg, const json& extra = json::object()) {
  json j = cfg;
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_text_file_atomic(dir / "effective_config.json", j.dump(2) + "\n");
}

fs::path parent_or_dot(const fs::path& p) { return p.has_parent_path() ? p.parent_path() : fs::path("."); }

std::string one_line(std::string s, std::size_t max = 160) {
  for (char& c : s) {
    if (c == '\n' || c == '\r' || c == '\t') c = ' ';
  }
  if (s.size() > max) s = std::string(utf8_prefix(s, max)) + "...";
  return s;
}

void print_trace(std::ostream& out, const Trajectory& t, bool show_draft) {
  out << "Question [" << t.question.id << "]: " << t.question.text << "\n";
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const StepRecord& s = t.steps[i];
    out << "[" << i + 1 << "] " << to_string(s.kind);
    if (s.selected_index >= 0) {
      out << "  sample " << s.selected_index + 1 << "/" << s.samples.size() << " ppl " << std::fixed
          << std::setprecision(3) << s.samples[static_cast<std::size_t>(s.selected_index)].sample.perplexity();
      out.unsetf(std::ios::fixed);
    }
    if (s.attempts > 1) out << "  attempts " << s.attempts;
    out << "\n";
    if (!s.action) {
      out << "    (no usable sample)\n";
      continue;
    }
    std::visit(
        [&](const auto& a) {
          using A = std::decay_t<decltype(a)>;
          if constexpr (std::is_same_v<A, SearchAction>) {
            out << "    thoughts: " << one_line(a.thoughts) << "\n    Search(query=" << a.query << ")\n";
          } else if constexpr (std::is_same_v<A, TerminateAction>) {
            out << "    thoughts: " << one_line(a.thoughts) << "\n    Terminate()\n";
          } else if constexpr (std::is_same_v<A, SelectLinkAction>) {
            if (s.search) {
              for (const auto& r : s.search->results) {
                out << "    [link_id=" << r.link_id << "] " << one_line(r.link_text, 80) << ": " << one_line(r.snippet)
                    << "\n";
              }
            }
            out << "    thoughts: " << one_line(a.thoughts) << "\n    selected:";
            for (int id : a.selected_link_ids) out << " " << id;
            out << "\n    summary: " << one_line(a.grounded_summarization, 400) << "\n";
          } else if constexpr (std::is_same_v<A, AnswerAction>) {
            out << "    thoughts: " << one_line(a.thoughts) << "\n    answer: " << one_line(a.answer_text, 400) << "\n";
          } else if constexpr (std::is_same_v<A, CheckAnswerAction>) {
            out << "    " << (a.passed ? "passed" : "failed") << ": " << one_line(a.rationale) << "\n";
          } else if constexpr (std::is_same_v<A, ReviseAnswerAction>) {
            out << "    revised: " << one_line(a.revised_answer, 400) << "\n    rationale: " << one_line(a.rationale)
                << "\n";
          }
        },
        *s.action);
  }
  if (show_draft && t.draft_answer) out << "Draft answer: " << *t.draft_answer << "\n";
  if (t.final_answer) out << "Final answer: " << *t.final_answer << "\n";
  out << "Status: " << to_string(t.status);
  if (t.failure_reason) out << " (" << *t.failure_reason << ")";
  out << "\n";
}

std::vector<EvalStage> stages_from(const std::string& s) {
  if (s == "both") return {EvalStage::draft, EvalStage::final_answer};
  return {eval_stage_from_string(s)};
}

ImproveOptions improve_options(const std::vector<std::string>& filters, bool rerank, int cap, bool dedup,
                               const Backends& b, const TemplateSet& templates, const RunConfig& cfg) {
  ImproveOptions io;
  for (const auto& f : filters) io.filters.push_back(builtin_filter(f));
  io.rerank = rerank;
  io.rm = b.ranker.get();
  io.templates = &templates;
  io.rerank_seed = cfg.run_seed;
  io.repeats_cap = cap;
  io.dedup = dedup;
  io.parallelism = cfg.parallelism;
  return io;
}

void print_manifest(std::ostream& out, const MixtureManifest& m) {
  out << "trajectories: " << m.total_trajectories << "\nexamples: " << m.total_examples << "\n";
  for (const auto& [k, v] : m.per_step_counts) out << "  " << k << ": " << v << "\n";
  out << "repeats per question: " << m.repeats_per_question << "\n";
  for (const auto& [k, v] : m.filter_stats) out << "filter " << k << " removed " << v << "\n";
  out << std::fixed << std::setprecision(2) << "examples per trajectory: " << m.examples_per_trajectory()
      << " (reference run: " << kReferenceExamplesPerTrajectory << ")\n";
  out.unsetf(std::ios::fixed);
  out << "content hash: " << m.content_hash << "\n";
}

// ---- loop ----------------------------------------------------------------------

struct LoopArgs {
  std::string questions;
  std::string eval_dataset;
  int iterations = 1;
  std::string out;
  std::string next_endpoint;
};

int cmd_loop(const LoopArgs& a, const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = a.out;
  const fs::path state_path = dir / "loop_state.json";
  json state;
  if (fs::exists(state_path)) {
    state = json::parse(read_text_file(state_path));
  } else {
    if (a.iterations == 0) {
      out << "iterations=0: nothing to do\n";
      return kExitOk;
    }
    state = json{{"iterations", a.iterations}, {"generation", 0}, {"stage", "grow"}, {"endpoints", json::object()}};
  }
  const int iterations = state.at("iterations").get<int>();
  auto save = [&] { write_text_file_atomic(state_path, state.dump(2) + "\n"); };

  const auto questions = load_questions(a.questions);
  const auto eval_set = load_eval_dataset(a.eval_dataset);
  const TemplateSet templates = templates_for(cfg);

  while (state.at("generation").get<int>() < iterations) {
    const int g = state.at("generation").get<int>();
    const std::string gkey = std::to_string(g);
    if (g > 0 && !a.next_endpoint.empty() && !state["endpoints"].contains(gkey) &&
        state.at("stage") == "await_endpoint") {
      BackendSpec spec = cfg.llm;
      if (a.next_endpoint == "simulated") {
        spec.backend = "simulated";
      } else {
        spec.backend = "http";
        spec.base_url = a.next_endpoint;
      }
      state["endpoints"][gkey] = spec;
      state["stage"] = "grow";
    }
    std::optional<BackendSpec> policy;
    if (g == 0) {
      policy = cfg.llm;
    } else if (state["endpoints"].contains(gkey)) {
      policy = state["endpoints"][gkey].get<BackendSpec>();
    } else if (cfg.loop.endpoints.count(g)) {
      policy = cfg.loop.endpoints.at(g);
    }
    if (!policy) {
      state["stage"] = "await_endpoint";
      save();
      out << "paused: generation " << g << " needs the fine-tuned model endpoint; see "
          << (dir / ("gen_" + std::to_string(g - 1)) / "handoff.json").string()
          << "; rerun with --next-endpoint URL to continue\n";
      return kExitOk;
    }
    if (state.at("stage") == "await_endpoint") state["stage"] = "grow";

    const fs::path gdir = dir / ("gen_" + gkey);
    fs::create_directories(gdir);
    RunConfig gcfg = cfg;
    gcfg.generation = g;
    archive_config(gdir, gcfg, json{{"policy", *policy}});
    const Backends b = make_backends(gcfg, policy);

    if (state.at("stage") == "grow") {
      GrowOptions go;
      go.repeats = cfg.loop.repeats;
      go.parallelism = cfg.parallelism;
      go.seed = derive_seed(cfg.run_seed, "generation", static_cast<std::uint64_t>(g));
      go.generation = g;
      go.config = cfg.agent;
      const auto r = grow(questions, go, *b.llm, *b.search, templates, gdir / "log.jsonl");
      out << "gen " << g << " grow: " << r.completed << " completed, " << r.failed << " failed\n";
      state["stage"] = "improve";
      b.finish();
      save();
    }
    if (state.at("stage") == "improve") {
      const auto io = improve_options(cfg.loop.filters, cfg.loop.rerank, cfg.loop.repeats_cap, false, b, templates, gcfg);
      const auto m = improve(gdir / "log.jsonl", gdir / "mixture.jsonl", io);
      out << "gen " << g << " improve: " << m.total_examples << " examples\n";
      state["stage"] = "eval";
      b.finish();
      save();
    }
    if (state.at("stage") == "eval") {
      EvalOptions eo;
      eo.runs = cfg.loop.eval_runs;
      eo.stages = {EvalStage::draft, EvalStage::final_answer};
      eo.seed = derive_seed(cfg.run_seed, "eval", static_cast<std::uint64_t>(g));
      eo.parallelism = cfg.parallelism;
      eo.generation = g;
      eo.config = cfg.agent;
      const auto run = evaluate_dataset(eval_set, eo, *b.llm, *b.search, *b.judge, templates);
      write_eval_dir(gdir / "eval", run);
      out << "gen " << g << " eval: final accuracy " << run.summaries.back().mean << "\n";
      state["stage"] = "handoff";
      b.finish();
      save();
    }
    if (state.at("stage") == "handoff") {
      const auto m = mixture_stats(gdir / "mixture.jsonl");
      const json summary = json::parse(read_text_file(gdir / "eval" / "summary.json"));
      json handoff{{"generation", g},
                   {"policy", *policy},
                   {"trajectory_log", (gdir / "log.jsonl").string()},
                   {"mixture", (gdir / "mixture.jsonl").string()},
                   {"manifest", manifest_path(gdir / "mixture.jsonl").string()},
                   {"total_examples", m.total_examples},
                   {"content_hash", m.content_hash},
                   {"eval_summary", summary.at("summaries")},
                   {"next_generation", g + 1 < iterations ? json(g + 1) : json(nullptr)}};
      if (g + 1 < iterations) {
        handoff["awaiting"] = "fine-tune on the mixture, then supply the generation " + std::to_string(g + 1) +
                              " model endpoint";
      }
      write_text_file_atomic(gdir / "handoff.json", handoff.dump(2) + "\n");
      state["generation"] = g + 1;
      state["stage"] = g + 1 < iterations ? "await_endpoint" : "done";
      save();
    }
  }
  state["stage"] = "done";
  save();
  out << "loop finished: " << iterations << " generation(s) in " << dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Search agent trajectories, fine-tuning mixtures and auto-eval"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "sagent 0.1.0");

  // agent run
  auto* agent = app.add_subcommand("agent", "single-question agent");
  agent->require_subcommand(1);
  auto* agent_run = agent->add_subcommand("run", "run one question and print the trace");
  Common agent_common;
  add_common(agent_run, agent_common);
  std::string q_text, q_id, q_file, agent_out, agent_stage = "final";
  agent_run->add_option("--question", q_text, "question text");
  agent_run->add_option("--question-id", q_id, "question id (with --questions)");
  agent_run->add_option("--questions", q_file, "question JSONL");
  agent_run->add_option("--out", agent_out, "write the trajectory record here");
  agent_run->add_option("--stage", agent_stage, "answers to print")->check(CLI::IsMember({"draft", "final", "both"}));

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "grow / improve / stats");
  pipeline->require_subcommand(1);
  auto* grow_cmd = pipeline->add_subcommand("grow", "collect trajectories");
  Common grow_common;
  add_common(grow_cmd, grow_common);
  std::string grow_questions, grow_out;
  int grow_repeats = 1;
  std::size_t grow_limit = 0;
  grow_cmd->add_option("--questions", grow_questions, "question JSONL")->required();
  grow_cmd->add_option("--repeats", grow_repeats, "trajectories per question");
  grow_cmd->add_option("--out", grow_out, "trajectory log")->required();
  grow_cmd->add_option("--limit", grow_limit, "stop after this many new trajectories");

  auto* improve_cmd = pipeline->add_subcommand("improve", "build the fine-tuning mixture");
  Common improve_common;
  add_common(improve_cmd, improve_common);
  std::string improve_log, improve_out;
  bool improve_rerank = false, improve_dedup = false;
  std::vector<std::string> improve_filters;
  int improve_cap = 0;
  improve_cmd->add_option("--log", improve_log, "trajectory log")->required();
  improve_cmd->add_option("--out", improve_out, "mixture JSONL")->required();
  improve_cmd->add_flag("--rerank", improve_rerank, "re-select samples with the ranking model");
  improve_cmd->add_option("--filter", improve_filters, "empty_thoughts | parse_failure | citation_closure");
  improve_cmd->add_option("--repeats-cap", improve_cap, "max trajectories per question (0 = all)");
  improve_cmd->add_flag("--dedup", improve_dedup, "collapse identical examples");

  auto* stats_cmd = pipeline->add_subcommand("stats", "recount a mixture against its manifest");
  std::string stats_mix;
  stats_cmd->add_option("--mix", stats_mix, "mixture JSONL")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "auto-eval harness");
  eval->require_subcommand(1);
  auto* eval_run = eval->add_subcommand("run", "evaluate a dataset over several runs");
  Common eval_common;
  add_common(eval_run, eval_common);
  std::string eval_dataset, eval_out, eval_stage = "final";
  int eval_runs = 10;
  std::optional<std::size_t> eval_expected;
  eval_run->add_option("--dataset", eval_dataset, "evaluation JSONL")->required();
  eval_run->add_option("--runs", eval_runs, "independent runs");
  eval_run->add_option("--stage", eval_stage, "answer judged")->check(CLI::IsMember({"draft", "final", "both"}));
  eval_run->add_option("--out", eval_out, "output directory")->required();
  eval_run->add_option("--expected-count", eval_expected, "assert the dataset size");

  auto* eval_report_cmd = eval->add_subcommand("report", "print the summary table");
  std::string report_dir, report_csv;
  eval_report_cmd->add_option("--dir", report_dir, "eval output directory")->required();
  eval_report_cmd->add_option("--csv", report_csv, "also write the CSV table here");

  auto* correlate_cmd = eval->add_subcommand("correlate", "auto-eval vs human scores");
  std::string auto_file, human_file;
  correlate_cmd->add_option("--auto", auto_file, "auto-eval scores")->required();
  correlate_cmd->add_option("--human", human_file, "human scores")->required();

  // loop
  auto* loop = app.add_subcommand("loop", "grow, improve and eval per generation");
  Common loop_common;
  add_common(loop, loop_common);
  LoopArgs loop_args;
  loop->add_option("--questions", loop_args.questions, "training question JSONL")->required();
  loop->add_option("--eval-dataset", loop_args.eval_dataset, "evaluation JSONL")->required();
  loop->add_option("--iterations", loop_args.iterations, "generations to run");
  loop->add_option("--out", loop_args.out, "loop directory")->required();
  loop->add_option("--next-endpoint", loop_args.next_endpoint,
                   "model URL for the generation awaiting an endpoint ('simulated' for offline runs)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (agent_run->parsed()) {
      const RunConfig cfg = resolve(agent_common);
      Question q;
      if (!q_id.empty()) {
        if (q_file.empty()) throw std::invalid_argument("--question-id needs --questions");
        const auto qs = load_questions(q_file);
        const auto it = std::find_if(qs.begin(), qs.end(), [&](const Question& x) { return x.id == q_id; });
        if (it == qs.end()) throw DatasetError("question " + q_id + " not found in " + q_file);
        q = *it;
      } else if (!q_text.empty()) {
        q = Question{"cli", q_text, QuestionSource::custom, std::nullopt};
      } else {
        throw std::invalid_argument("give --question or --question-id with --questions");
      }
      const TemplateSet templates = templates_for(cfg);
      const Backends b = make_backends(cfg);
      RunOptions ro;
      ro.seed = trajectory_seed(cfg.run_seed, q.id, 0);
      ro.generation = cfg.generation;
      const Trajectory t = run_trajectory(q, cfg.agent, *b.llm, *b.search, templates, ro);
      b.finish();
      print_trace(out, t, agent_stage != "final");
      if (!agent_out.empty()) {
        write_text_file_atomic(agent_out, serialize_trajectory(t) + "\n");
        archive_config(parent_or_dot(agent_out), cfg);
      }
      if (t.status == TrajectoryStatus::completed) return kExitOk;
      err << "trajectory failed: " << t.failure_reason.value_or("unknown") << "\n";
      return t.failure_reason && t.failure_reason->starts_with("backend_error") ? kExitBackend : kExitFailed;
    }
    if (grow_cmd->parsed()) {
      const RunConfig cfg = resolve(grow_common);
      const auto qs = load_questions(grow_questions);
      const TemplateSet templates = templates_for(cfg);
      const Backends b = make_backends(cfg);
      GrowOptions go;
      go.repeats = grow_repeats;
      go.parallelism = cfg.parallelism;
      go.seed = cfg.run_seed;
      go.generation = cfg.generation;
      go.config = cfg.agent;
      go.limit = grow_limit;
      const auto r = grow(qs, go, *b.llm, *b.search, templates, grow_out);
      b.finish();
      archive_config(parent_or_dot(grow_out), cfg);
      out << (r.finished ? "finished" : "checkpointed") << ": " << r.total << " trajectories (" << r.ran << " run now, "
          << r.resumed << " resumed; " << r.completed << " completed, " << r.failed << " failed)\n";
      return kExitOk;
    }
    if (improve_cmd->parsed()) {
      const RunConfig cfg = resolve(improve_common);
      const TemplateSet templates = templates_for(cfg);
      const Backends b = make_backends(cfg);
      const auto io = improve_options(improve_filters, improve_rerank, improve_cap, improve_dedup, b, templates, cfg);
      const auto m = improve(improve_log, improve_out, io);
      b.finish();
      print_manifest(out, m);
      return kExitOk;
    }
    if (stats_cmd->parsed()) {
      print_manifest(out, mixture_stats(stats_mix));
      out << "manifest matches\n";
      return kExitOk;
    }
    if (eval_run->parsed()) {
      const RunConfig cfg = resolve(eval_common);
      const auto ds = load_eval_dataset(eval_dataset, eval_expected);
      const TemplateSet templates = templates_for(cfg);
      const Backends b = make_backends(cfg);
      EvalOptions eo;
      eo.runs = eval_runs;
      eo.stages = stages_from(eval_stage);
      eo.seed = cfg.run_seed;
      eo.parallelism = cfg.parallelism;
      eo.generation = cfg.generation;
      eo.config = cfg.agent;
      const auto run = evaluate_dataset(ds, eo, *b.llm, *b.search, *b.judge, templates);
      b.finish();
      write_eval_dir(eval_out, run);
      archive_config(eval_out, cfg);
      out << eval_report(eval_out).text;
      return kExitOk;
    }
    if (eval_report_cmd->parsed()) {
      const auto rep = eval_report(report_dir);
      out << rep.text;
      if (!report_csv.empty()) write_text_file_atomic(report_csv, rep.csv);
      return kExitOk;
    }
    if (correlate_cmd->parsed()) {
      const auto c = correlate(load_scores(auto_file), load_scores(human_file));
      out << std::setprecision(6) << "n: " << c.n << "\npearson: " << c.pearson << " (p = " << c.pearson_p
          << ", approximate)\nspearman: " << c.spearman << " (p = " << c.spearman_p << ", approximate)\n";
      return kExitOk;
    }
    if (loop->parsed()) {
      if (loop_args.iterations < 0) throw std::invalid_argument("iterations must be >= 0");
      return cmd_loop(loop_args, resolve(loop_common), out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const BackendError& e) {
    err << "backend error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const DatasetError& e) {
    err << "dataset error: " << e.what() << "\n";
    return kExitData;
  } catch (const IntegrityError& e) {
    err << "integrity error: " << e.what() << "\n";
    return kExitData;
  } catch (const EmptyMixtureError& e) {
    err << "empty mixture: " << e.what() << "\n";
    return kExitData;
  } catch (const TemplateError& e) {
    err << "template error: " << e.what() << "\n";
    return kExitData;
  } catch (const SchemaError& e) {
    err << "schema error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailed;
  }
  return kExitUsage;
}

}  // namespace sagent
