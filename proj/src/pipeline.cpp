#include "sagent/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <thread>
#include <unordered_map>

#include "sagent/codec.hpp"
#include "sagent/selection.hpp"
#include "sagent/util.hpp"

namespace sagent {

namespace fs = std::filesystem;

std::vector<Question> load_questions(const fs::path& path) {
  std::vector<Question> out;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line).get<Question>());
    } catch (const std::exception& e) {
      throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Question> sample_question_set(const std::vector<std::vector<Question>>& datasets, int per_dataset,
                                          std::uint64_t seed) {
  if (per_dataset < 0) throw std::invalid_argument("per_dataset must be >= 0");
  std::vector<Question> out;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    const auto& ds = datasets[d];
    if (static_cast<std::size_t>(per_dataset) > ds.size()) {
      throw DatasetError("dataset " + std::to_string(d) + " has " + std::to_string(ds.size()) +
                         " questions, fewer than the " + std::to_string(per_dataset) + " requested");
    }
    for (const auto& q : ds) {
      if (is_eval_only(q.source)) {
        throw DatasetError("question " + q.id + " comes from eval-only source " + std::string(to_string(q.source)));
      }
    }
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, "question_set", d));
    // Partial Fisher-Yates: the first per_dataset slots are the sample.
    for (std::size_t i = 0; i < static_cast<std::size_t>(per_dataset); ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
      out.push_back(ds[idx[i]]);
    }
  }
  return out;
}

void parallel_for(std::size_t n, int parallelism, const std::function<void(std::size_t)>& fn) {
  if (parallelism < 1) throw std::invalid_argument("parallelism must be >= 1");
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(parallelism), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      while (!stop) {
        const std::size_t i = next++;
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!error) error = std::current_exception();
          stop = true;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

fs::path checkpoint_path(const fs::path& log) { return fs::path(log.string() + ".partial"); }

namespace {

using Key = std::pair<std::string, int>;

// Reads (key, line) pairs; malformed lines (e.g. a torn final write) are dropped.
std::vector<std::pair<Key, std::string>> read_records(const fs::path& p) {
  std::vector<std::pair<Key, std::string>> out;
  if (!fs::exists(p)) return out;
  for (auto& line : read_lines(p)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Key k{j.at("question").at("id").get<std::string>(), j.at("repeat").get<int>()};
      out.emplace_back(std::move(k), std::move(line));
    } catch (const json::exception&) {
    }
  }
  return out;
}

std::string join_lines(const std::vector<std::pair<Key, std::string>>& recs) {
  std::string s;
  for (const auto& r : recs) {
    s += r.second;
    s += '\n';
  }
  return s;
}

}  // namespace

GrowResult grow(const std::vector<Question>& questions, const GrowOptions& opts, LanguageModel& llm,
                SearchBackend& search, const TemplateSet& templates, const fs::path& log) {
  if (opts.repeats < 1) throw std::invalid_argument("repeats must be >= 1");
  if (opts.parallelism < 1) throw std::invalid_argument("parallelism must be >= 1");
  opts.config.validate();
  std::set<std::string> ids;
  for (const auto& q : questions) {
    if (!ids.insert(q.id).second) throw std::invalid_argument("duplicate question id " + q.id);
  }

  const fs::path ckpt = checkpoint_path(log);
  auto records = read_records(fs::exists(ckpt) ? ckpt : log);
  std::set<Key> done;
  for (const auto& r : records) done.insert(r.first);
  // Normalize the checkpoint so appends start on a clean line.
  write_text_file_atomic(ckpt, join_lines(records));

  std::vector<std::pair<const Question*, int>> pending;
  for (const auto& q : questions) {
    for (int r = 0; r < opts.repeats; ++r) {
      if (!done.count({q.id, r})) pending.emplace_back(&q, r);
    }
  }

  GrowResult res;
  res.resumed = records.size();
  std::mutex mu;
  std::ofstream out(ckpt, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot append to " + ckpt.string());
  std::atomic<std::size_t> started{0};
  parallel_for(pending.size(), opts.parallelism, [&](std::size_t i) {
    if (opts.limit && started++ >= opts.limit) return;
    const auto& [q, repeat] = pending[i];
    RunOptions ro;
    ro.seed = trajectory_seed(opts.seed, q->id, repeat);
    ro.repeat = repeat;
    ro.generation = opts.generation;
    const Trajectory t = run_trajectory(*q, opts.config, llm, search, templates, ro);
    const std::string line = serialize_trajectory(t);
    std::lock_guard<std::mutex> lock(mu);
    out << line << '\n';
    out.flush();
    if (!out) throw IoError("write failed on " + ckpt.string());
    ++res.ran;
  });
  out.close();

  records = read_records(ckpt);
  res.total = records.size();
  std::set<Key> have;
  for (const auto& r : records) have.insert(r.first);
  const bool all_done = std::all_of(questions.begin(), questions.end(), [&](const Question& q) {
    for (int r = 0; r < opts.repeats; ++r) {
      if (!have.count({q.id, r})) return false;
    }
    return true;
  });
  if (!all_done) {
    for (const auto& r : records) {
      (json::parse(r.second).at("status").get<std::string>() == "completed" ? res.completed : res.failed)++;
    }
    return res;
  }
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& r : records) {
    (json::parse(r.second).at("status").get<std::string>() == "completed" ? res.completed : res.failed)++;
  }
  write_text_file_atomic(log, join_lines(records));
  fs::remove(ckpt);
  res.finished = true;
  return res;
}

std::vector<Trajectory> read_log(const fs::path& log, std::size_t* unreadable) {
  std::vector<Trajectory> out;
  std::size_t bad = 0;
  for (const auto& line : read_lines(log)) {
    if (line.empty()) continue;
    try {
      out.push_back(parse_trajectory(line));
    } catch (const std::exception&) {
      ++bad;
    }
  }
  if (unreadable) *unreadable = bad;
  return out;
}

void to_json(json& j, const FineTuneExample& e) {
  j = json{{"input_text", e.input_text},
           {"target_text", e.target_text},
           {"step_kind", to_string(e.step_kind)},
           {"trajectory_id", e.trajectory_id},
           {"question_id", e.question_id},
           {"repeat", e.repeat},
           {"step_index", e.step_index},
           {"generation", e.generation},
           {"selection_method", to_string(e.selection_method)},
           {"multiplicity", e.multiplicity}};
}

void from_json(const json& j, FineTuneExample& e) {
  e.input_text = j.at("input_text").get<std::string>();
  e.target_text = j.at("target_text").get<std::string>();
  e.step_kind = step_kind_from_string(j.at("step_kind").get<std::string>());
  e.trajectory_id = j.at("trajectory_id").get<std::string>();
  e.question_id = j.at("question_id").get<std::string>();
  e.repeat = j.at("repeat").get<int>();
  e.step_index = j.at("step_index").get<int>();
  e.generation = j.at("generation").get<int>();
  e.selection_method = selection_method_from_string(j.at("selection_method").get<std::string>());
  e.multiplicity = j.value("multiplicity", 1);
}

namespace {

std::set<int> observed_through(const Trajectory& t, std::size_t step_index) {
  std::set<int> ids;
  for (std::size_t i = 0; i <= step_index && i < t.steps.size(); ++i) {
    if (t.steps[i].search) {
      for (const auto& r : t.steps[i].search->results) ids.insert(r.link_id);
    }
  }
  return ids;
}

}  // namespace

ExampleFilter builtin_filter(const std::string& name) {
  if (name == "empty_thoughts") {
    return {name, [](const FineTuneExample&, const Trajectory&, const StepRecord& s) {
              if (s.action && has_empty_thoughts(*s.action)) return false;
              if (s.selected_index >= 0 && static_cast<std::size_t>(s.selected_index) < s.samples.size() &&
                  s.samples[static_cast<std::size_t>(s.selected_index)].empty_thoughts) {
                return false;
              }
              return true;
            }};
  }
  if (name == "parse_failure") {
    // Drops steps where the policy needed a retry, and any target that does not parse back.
    return {name, [](const FineTuneExample& e, const Trajectory&, const StepRecord& s) {
              return s.attempts <= 1 && try_parse_completion(e.step_kind, e.target_text).has_value();
            }};
  }
  if (name == "citation_closure") {
    return {name, [](const FineTuneExample& e, const Trajectory& t, const StepRecord&) {
              const auto seen = observed_through(t, static_cast<std::size_t>(e.step_index));
              for (int id : cited_link_ids(e.target_text)) {
                if (!seen.count(id)) return false;
              }
              return true;
            }};
  }
  throw std::invalid_argument("unknown filter '" + name + "'");
}

std::vector<std::string> builtin_filter_names() { return {"empty_thoughts", "parse_failure", "citation_closure"}; }

double MixtureManifest::examples_per_trajectory() const {
  return total_trajectories ? static_cast<double>(total_examples) / static_cast<double>(total_trajectories) : 0.0;
}

void to_json(json& j, const MixtureManifest& m) {
  j = json{{"total_trajectories", m.total_trajectories},
           {"total_examples", m.total_examples},
           {"per_step_counts", m.per_step_counts},
           {"repeats_per_question", m.repeats_per_question},
           {"filter_stats", m.filter_stats},
           {"content_hash", m.content_hash},
           {"skipped_failed", m.skipped_failed},
           {"skipped_eval_only", m.skipped_eval_only},
           {"skipped_over_cap", m.skipped_over_cap},
           {"unreadable_records", m.unreadable_records},
           {"reranked_steps", m.reranked_steps},
           {"rank_fallbacks", m.rank_fallbacks},
           {"rerank", m.rerank},
           {"dedup", m.dedup},
           {"repeats_cap", m.repeats_cap},
           {"examples_per_trajectory", m.examples_per_trajectory()},
           {"reference_examples_per_trajectory", kReferenceExamplesPerTrajectory},
           {"known_properties",
            {"filters are example-local: a removed step can still appear in the PAST_ACTIONS of later examples"}}};
}

void from_json(const json& j, MixtureManifest& m) {
  m.total_trajectories = j.at("total_trajectories").get<std::size_t>();
  m.total_examples = j.at("total_examples").get<std::size_t>();
  m.per_step_counts = j.at("per_step_counts").get<std::map<std::string, std::size_t>>();
  m.repeats_per_question = j.at("repeats_per_question").get<int>();
  m.filter_stats = j.at("filter_stats").get<std::map<std::string, std::size_t>>();
  m.content_hash = j.at("content_hash").get<std::string>();
  m.skipped_failed = j.value("skipped_failed", std::size_t{0});
  m.skipped_eval_only = j.value("skipped_eval_only", std::size_t{0});
  m.skipped_over_cap = j.value("skipped_over_cap", std::size_t{0});
  m.unreadable_records = j.value("unreadable_records", std::size_t{0});
  m.reranked_steps = j.value("reranked_steps", std::size_t{0});
  m.rank_fallbacks = j.value("rank_fallbacks", std::size_t{0});
  m.rerank = j.value("rerank", false);
  m.dedup = j.value("dedup", false);
  m.repeats_cap = j.value("repeats_cap", 0);
}

fs::path manifest_path(const fs::path& mixture) { return fs::path(mixture.string() + ".manifest.json"); }

std::vector<FineTuneExample> split_trajectory(const Trajectory& t) {
  std::vector<FineTuneExample> out;
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const StepRecord& s = t.steps[i];
    if (!s.action || !is_agent_step(s.kind)) continue;
    FineTuneExample e;
    e.input_text = s.prompt;
    e.target_text = render_completion(s.kind, *s.action);
    e.step_kind = s.kind;
    e.trajectory_id = t.id();
    e.question_id = t.question.id;
    e.repeat = t.repeat;
    e.step_index = static_cast<int>(i);
    e.generation = t.generation;
    e.selection_method = s.selection_method;
    if (!e.input_text.ends_with(kActionCue)) {
      throw IntegrityError(e.trajectory_id + " step " + std::to_string(i) + ": prompt does not end at the cue");
    }
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

std::map<std::string, std::size_t> empty_step_counts() {
  std::map<std::string, std::size_t> m;
  for (StepKind k : {StepKind::decision, StepKind::summarize, StepKind::answer_gen, StepKind::relevance_check,
                     StepKind::grounding_check}) {
    m[std::string(to_string(k))] = 0;
  }
  return m;
}

// Counts that can be recomputed from the mixture text alone.
void recount(const std::vector<FineTuneExample>& examples, MixtureManifest& m) {
  m.total_examples = examples.size();
  m.per_step_counts = empty_step_counts();
  std::set<std::string> trajectories;
  std::map<std::string, std::set<std::string>> per_question;
  for (const auto& e : examples) {
    ++m.per_step_counts[std::string(to_string(e.step_kind))];
    trajectories.insert(e.trajectory_id);
    per_question[e.question_id].insert(e.trajectory_id);
  }
  m.total_trajectories = trajectories.size();
  m.repeats_per_question = 0;
  for (const auto& [q, ts] : per_question) m.repeats_per_question = std::max(m.repeats_per_question, static_cast<int>(ts.size()));
}

}  // namespace

MixtureManifest improve(const fs::path& log, const fs::path& out, const ImproveOptions& opts) {
  std::size_t unreadable = 0;
  auto trajectories = read_log(log, &unreadable);
  return improve(trajectories, out, opts, unreadable);
}

MixtureManifest improve(const std::vector<Trajectory>& input, const fs::path& out, const ImproveOptions& opts,
                        std::size_t unreadable) {
  if (opts.rerank && (!opts.rm || !opts.templates)) throw std::invalid_argument("rerank needs a ranking model and templates");
  if (opts.repeats_cap < 0) throw std::invalid_argument("repeats_cap must be >= 0");
  MixtureManifest m;
  m.unreadable_records = unreadable;
  m.rerank = opts.rerank;
  m.dedup = opts.dedup;
  m.repeats_cap = opts.repeats_cap;
  for (const auto& f : opts.filters) m.filter_stats[f.name] = 0;

  // Eligible trajectories ordered by (question_id, repeat).
  std::vector<const Trajectory*> kept;
  for (const auto& t : input) {
    if (t.status != TrajectoryStatus::completed) {
      ++m.skipped_failed;
    } else if (is_eval_only(t.question.source)) {
      ++m.skipped_eval_only;
    } else {
      kept.push_back(&t);
    }
  }
  std::stable_sort(kept.begin(), kept.end(), [](const Trajectory* a, const Trajectory* b) {
    return std::tie(a->question.id, a->repeat) < std::tie(b->question.id, b->repeat);
  });
  if (opts.repeats_cap > 0) {
    std::vector<const Trajectory*> capped;
    std::unordered_map<std::string, int> seen;
    for (const Trajectory* t : kept) {
      if (seen[t->question.id]++ < opts.repeats_cap) {
        capped.push_back(t);
      } else {
        ++m.skipped_over_cap;
      }
    }
    kept.swap(capped);
  }

  // Per-trajectory transform; results are assembled in input order.
  struct Partial {
    std::vector<FineTuneExample> examples;
    std::vector<std::size_t> removed;  // per filter
    std::size_t reranked = 0;
    std::size_t fallbacks = 0;
  };
  std::vector<Partial> parts(kept.size());
  parallel_for(kept.size(), std::max(1, opts.parallelism), [&](std::size_t i) {
    Trajectory t = *kept[i];
    Partial& p = parts[i];
    p.removed.assign(opts.filters.size(), 0);
    if (opts.rerank) {
      for (std::size_t s = 0; s < t.steps.size(); ++s) {
        StepRecord& step = t.steps[s];
        const bool before = step.selection_method == SelectionMethod::rm_ranked || step.rank_fallback;
        step = rerank_step(step, *opts.rm, *opts.templates, derive_seed(opts.rerank_seed, t.id(), s));
        if (!before && step.selection_method == SelectionMethod::rm_ranked) ++p.reranked;
        if (!before && step.rank_fallback) ++p.fallbacks;
      }
    }
    for (auto& e : split_trajectory(t)) {
      const StepRecord& step = t.steps[static_cast<std::size_t>(e.step_index)];
      bool keep = true;
      for (std::size_t f = 0; f < opts.filters.size() && keep; ++f) {
        if (!opts.filters[f].keep(e, t, step)) {
          keep = false;
          ++p.removed[f];
        }
      }
      if (keep) p.examples.push_back(std::move(e));
    }
  });

  std::vector<FineTuneExample> examples;
  std::unordered_map<std::string, std::size_t> index;
  for (auto& p : parts) {
    for (std::size_t f = 0; f < opts.filters.size(); ++f) m.filter_stats[opts.filters[f].name] += p.removed[f];
    m.reranked_steps += p.reranked;
    m.rank_fallbacks += p.fallbacks;
    for (auto& e : p.examples) {
      if (opts.dedup) {
        std::string key(to_string(e.step_kind));
        key += '\0';
        key += e.input_text;
        key += '\0';
        key += e.target_text;
        auto [it, fresh] = index.emplace(std::move(key), examples.size());
        if (!fresh) {
          ++examples[it->second].multiplicity;
          continue;
        }
      }
      examples.push_back(std::move(e));
    }
  }
  if (examples.empty()) throw EmptyMixtureError("no examples survived: mixture would be empty");

  std::string text;
  for (const auto& e : examples) {
    text += json(e).dump(-1, ' ', false, json::error_handler_t::replace);
    text += '\n';
  }
  recount(examples, m);
  m.content_hash = sha256_hex(text);
  write_text_file_atomic(out, text);
  write_text_file_atomic(manifest_path(out), json(m).dump(2) + "\n");
  return m;
}

MixtureManifest mixture_stats(const fs::path& mixture) {
  const std::string text = read_text_file(mixture);
  std::vector<FineTuneExample> examples;
  std::size_t start = 0;
  std::size_t lineno = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    ++lineno;
    const std::string_view line(text.data() + start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    try {
      examples.push_back(json::parse(line).get<FineTuneExample>());
    } catch (const std::exception& e) {
      throw IntegrityError(mixture.string() + ":" + std::to_string(lineno) + ": unreadable example: " + e.what());
    }
  }
  if (examples.empty()) throw EmptyMixtureError(mixture.string() + " contains no examples");

  const fs::path mp = manifest_path(mixture);
  if (!fs::exists(mp)) throw IntegrityError("manifest " + mp.string() + " is missing");
  MixtureManifest stored;
  try {
    stored = json::parse(read_text_file(mp)).get<MixtureManifest>();
  } catch (const json::exception& e) {
    throw IntegrityError("manifest " + mp.string() + " is unreadable: " + e.what());
  }
  MixtureManifest m = stored;
  recount(examples, m);
  m.content_hash = sha256_hex(text);
  auto mismatch = [&](const std::string& field, const std::string& a, const std::string& b) {
    throw IntegrityError("manifest mismatch on " + field + ": stored " + a + ", recounted " + b);
  };
  if (m.content_hash != stored.content_hash) mismatch("content_hash", stored.content_hash, m.content_hash);
  if (m.total_examples != stored.total_examples) {
    mismatch("total_examples", std::to_string(stored.total_examples), std::to_string(m.total_examples));
  }
  if (m.total_trajectories != stored.total_trajectories) {
    mismatch("total_trajectories", std::to_string(stored.total_trajectories), std::to_string(m.total_trajectories));
  }
  if (m.per_step_counts != stored.per_step_counts) {
    mismatch("per_step_counts", json(stored.per_step_counts).dump(), json(m.per_step_counts).dump());
  }
  if (m.repeats_per_question != stored.repeats_per_question) {
    mismatch("repeats_per_question", std::to_string(stored.repeats_per_question),
             std::to_string(m.repeats_per_question));
  }
  return m;
}

}  // namespace sagent
