#include "sagent/evaluation.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "sagent/codec.hpp"
#include "sagent/pipeline.hpp"
#include "sagent/util.hpp"

namespace sagent {

namespace fs = std::filesystem;

std::string_view to_string(EvalStage s) { return s == EvalStage::draft ? "draft" : "final"; }

EvalStage eval_stage_from_string(std::string_view s) {
  if (s == "draft") return EvalStage::draft;
  if (s == "final") return EvalStage::final_answer;
  throw std::invalid_argument("unknown eval stage '" + std::string(s) + "'");
}

void to_json(json& j, const EvalVerdict& v) {
  j = json{{"question_id", v.question_id}, {"run_index", v.run_index},        {"stage", to_string(v.stage)},
           {"correct", v.correct},         {"judge_raw", v.judge_raw},        {"trajectory_ref", v.trajectory_ref},
           {"flagged", v.flagged},         {"flag", v.flag}};
}

void from_json(const json& j, EvalVerdict& v) {
  v.question_id = j.at("question_id").get<std::string>();
  v.run_index = j.at("run_index").get<int>();
  v.stage = eval_stage_from_string(j.at("stage").get<std::string>());
  v.correct = j.at("correct").get<bool>();
  v.judge_raw = j.at("judge_raw").get<std::string>();
  v.trajectory_ref = j.at("trajectory_ref").get<std::string>();
  v.flagged = j.value("flagged", false);
  v.flag = j.value("flag", std::string());
}

void to_json(json& j, const EvalSummary& s) {
  j = json{{"runs", s.runs},
           {"per_run_accuracy", s.per_run_accuracy},
           {"mean", s.mean},
           {"std", s.std},
           {"stage", to_string(s.stage)},
           {"dataset_size", s.dataset_size},
           {"failed_trajectories", s.failed_trajectories},
           {"flagged_verdicts", s.flagged_verdicts}};
}

void from_json(const json& j, EvalSummary& s) {
  s.runs = j.at("runs").get<int>();
  s.per_run_accuracy = j.at("per_run_accuracy").get<std::vector<double>>();
  s.mean = j.at("mean").get<double>();
  s.std = j.at("std").get<double>();
  s.stage = eval_stage_from_string(j.at("stage").get<std::string>());
  s.dataset_size = j.at("dataset_size").get<std::size_t>();
  s.failed_trajectories = j.value("failed_trajectories", std::size_t{0});
  s.flagged_verdicts = j.value("flagged_verdicts", std::size_t{0});
}

MeanStd mean_and_std(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean of an empty list");
  MeanStd r;
  r.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

EvalVerdict judge(const Question& q, const std::string& answer, LanguageModel& judge_model,
                  const TemplateSet& templates, std::uint64_t seed) {
  if (!q.ref_answer) throw std::invalid_argument("question " + q.id + " has no ref_answer");
  RenderInputs in;
  in.answer = answer;
  in.ref_answer = q.ref_answer;
  SampleRequest req;
  req.prompt = render_autoeval_prompt(templates, q.text, in);
  req.n = 1;
  req.temperature = 0.0;
  EvalVerdict v;
  v.question_id = q.id;
  for (int attempt = 0; attempt < 2; ++attempt) {
    req.seed = derive_seed(seed, "judge", static_cast<std::uint64_t>(attempt));
    std::vector<SampleResult> out;
    try {
      out = judge_model.sample(req);
    } catch (const BackendError&) {
      if (attempt == 1) throw;
      continue;
    }
    v.judge_raw = out.at(0).text;
    try {
      v.correct = parse_autoeval_verdict(v.judge_raw).value;
      return v;
    } catch (const VerdictParseError&) {
    } catch (const ParseError&) {
    }
  }
  v.correct = false;
  v.flagged = true;
  v.flag = "judge_unparseable";
  return v;
}

EvalSummary summarize(const std::vector<EvalVerdict>& verdicts, EvalStage stage, int runs, std::size_t dataset_size) {
  if (runs < 1) throw std::invalid_argument("runs must be >= 1");
  if (dataset_size == 0) throw std::invalid_argument("empty dataset");
  EvalSummary s;
  s.runs = runs;
  s.stage = stage;
  s.dataset_size = dataset_size;
  std::vector<std::size_t> correct(static_cast<std::size_t>(runs), 0), seen(static_cast<std::size_t>(runs), 0);
  for (const auto& v : verdicts) {
    if (v.stage != stage) continue;
    if (v.run_index < 0 || v.run_index >= runs) throw std::invalid_argument("verdict run index out of range");
    const auto r = static_cast<std::size_t>(v.run_index);
    ++seen[r];
    if (v.correct) ++correct[r];
    if (v.flagged) ++s.flagged_verdicts;
    if (v.flag == "trajectory_failed") ++s.failed_trajectories;
  }
  for (int r = 0; r < runs; ++r) {
    const auto i = static_cast<std::size_t>(r);
    if (seen[i] != dataset_size) {
      throw std::invalid_argument("run " + std::to_string(r) + " has " + std::to_string(seen[i]) + " verdicts for " +
                                  std::to_string(dataset_size) + " questions");
    }
    s.per_run_accuracy.push_back(static_cast<double>(correct[i]) / static_cast<double>(dataset_size));
  }
  const auto ms = mean_and_std(s.per_run_accuracy);
  s.mean = ms.mean;
  s.std = ms.std;
  return s;
}

EvalRun evaluate_dataset(const std::vector<Question>& dataset, const EvalOptions& opts, LanguageModel& agent_model,
                         SearchBackend& search, LanguageModel& judge_model, const TemplateSet& templates) {
  if (opts.runs < 1) throw std::invalid_argument("runs must be >= 1");
  if (dataset.empty()) throw std::invalid_argument("empty evaluation dataset");
  if (opts.stages.empty()) throw std::invalid_argument("no eval stage selected");
  for (const auto& q : dataset) {
    if (!q.ref_answer) throw std::invalid_argument("question " + q.id + " has no ref_answer");
  }
  const std::size_t n = dataset.size();
  const std::size_t total = n * static_cast<std::size_t>(opts.runs);
  EvalRun out;
  out.trajectories.resize(total);
  std::vector<std::vector<EvalVerdict>> per(total);
  parallel_for(total, opts.parallelism, [&](std::size_t i) {
    const int run = static_cast<int>(i / n);
    const Question& q = dataset[i % n];
    RunOptions ro;
    ro.seed = trajectory_seed(opts.seed, q.id, run);  // the run index plays the repeat role
    ro.repeat = run;
    ro.generation = opts.generation;
    Trajectory t = run_trajectory(q, opts.config, agent_model, search, templates, ro);
    for (EvalStage stage : opts.stages) {
      EvalVerdict v;
      const auto& answer = stage == EvalStage::draft ? t.draft_answer : t.final_answer;
      if (t.status != TrajectoryStatus::completed) {
        v.question_id = q.id;
        v.flagged = true;
        v.flag = "trajectory_failed";
      } else if (!answer) {
        v.question_id = q.id;
        v.flagged = true;
        v.flag = "no_answer";
      } else {
        v = judge(q, *answer, judge_model, templates, derive_seed(ro.seed, to_string(stage)));
      }
      v.run_index = run;
      v.stage = stage;
      v.trajectory_ref = t.id();
      per[i].push_back(std::move(v));
    }
    out.trajectories[i] = std::move(t);
  });
  for (auto& vs : per) {
    for (auto& v : vs) out.verdicts.push_back(std::move(v));
  }
  for (EvalStage stage : opts.stages) out.summaries.push_back(summarize(out.verdicts, stage, opts.runs, n));
  return out;
}

void write_eval_dir(const fs::path& dir, const EvalRun& run) {
  std::string verdicts, trajectories;
  for (const auto& v : run.verdicts) verdicts += json(v).dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
  for (const auto& t : run.trajectories) trajectories += serialize_trajectory(t) + "\n";
  write_text_file_atomic(dir / "verdicts.jsonl", verdicts);
  write_text_file_atomic(dir / "trajectories.jsonl", trajectories);
  write_text_file_atomic(dir / "summary.json", json{{"summaries", run.summaries}}.dump(2) + "\n");
}

namespace {

std::string fixed(double v, int prec) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(prec) << v;
  return o.str();
}

}  // namespace

EvalReport eval_report(const fs::path& dir) {
  std::vector<EvalVerdict> verdicts;
  for (const auto& line : read_lines(dir / "verdicts.jsonl")) {
    if (!line.empty()) verdicts.push_back(json::parse(line).get<EvalVerdict>());
  }
  EvalReport rep;
  rep.summaries = json::parse(read_text_file(dir / "summary.json")).at("summaries").get<std::vector<EvalSummary>>();
  for (const auto& s : rep.summaries) {
    const EvalSummary again = summarize(verdicts, s.stage, s.runs, s.dataset_size);
    if (!(again == s)) {
      throw IntegrityError("stored " + std::string(to_string(s.stage)) + " summary does not match its verdicts");
    }
  }
  std::ostringstream text, csv;
  text << std::left << std::setw(8) << "stage" << std::setw(6) << "runs" << std::setw(10) << "questions"
       << std::setw(18) << "accuracy" << std::setw(8) << "failed" << "flagged\n";
  csv << "stage,runs,questions,mean,std,failed,flagged,per_run_accuracy\n";
  for (const auto& s : rep.summaries) {
    text << std::setw(8) << to_string(s.stage) << std::setw(6) << s.runs << std::setw(10) << s.dataset_size
         << std::setw(18) << (fixed(s.mean * 100, 1) + " ± " + fixed(s.std * 100, 1)) << std::setw(8)
         << s.failed_trajectories << s.flagged_verdicts << "\n";
    csv << to_string(s.stage) << ',' << s.runs << ',' << s.dataset_size << ',' << fixed(s.mean, 6) << ','
        << fixed(s.std, 6) << ',' << s.failed_trajectories << ',' << s.flagged_verdicts << ',';
    for (std::size_t i = 0; i < s.per_run_accuracy.size(); ++i) {
      csv << (i ? ";" : "") << fixed(s.per_run_accuracy[i], 6);
    }
    csv << "\n";
  }
  const auto draft = std::find_if(rep.summaries.begin(), rep.summaries.end(),
                                  [](const EvalSummary& s) { return s.stage == EvalStage::draft; });
  const auto fin = std::find_if(rep.summaries.begin(), rep.summaries.end(),
                                [](const EvalSummary& s) { return s.stage == EvalStage::final_answer; });
  if (draft != rep.summaries.end() && fin != rep.summaries.end()) {
    text << "final - draft: " << fixed((fin->mean - draft->mean) * 100, 1) << " points\n";
  }
  rep.text = text.str();
  rep.csv = csv.str();
  return rep;
}

std::vector<double> average_ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

namespace {

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw CorrelationUndefined("correlation is undefined for a constant vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace

Correlation correlate(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("score vectors differ in length");
  if (x.size() < 3) throw std::invalid_argument("correlation needs at least 3 pairs");
  Correlation c;
  c.n = x.size();
  c.pearson = pearson(x, y);
  c.spearman = pearson(average_ranks(x), average_ranks(y));
  const double n = static_cast<double>(c.n);
  if (std::abs(c.pearson) >= 1.0) {
    c.pearson_p = 0.0;
  } else {
    const double t = c.pearson * std::sqrt((n - 2) / (1 - c.pearson * c.pearson));
    boost::math::students_t dist(n - 2);
    c.pearson_p = 2 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }
  const double z = c.spearman * std::sqrt(n - 1);
  c.spearman_p = 2 * boost::math::cdf(boost::math::complement(boost::math::normal(), std::abs(z)));
  return c;
}

std::vector<double> load_scores(const fs::path& path) {
  const std::string text = read_text_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '[') return json::parse(text).get<std::vector<double>>();
  std::vector<double> out;
  for (const auto& line : read_lines(path)) {
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(line, &used);
    } catch (const std::exception&) {
      throw DatasetError(path.string() + ": not a number: " + line);
    }
    out.push_back(v);
  }
  return out;
}

std::vector<Question> load_eval_dataset(const fs::path& path, std::optional<std::size_t> expected_count) {
  auto qs = load_questions(path);
  std::set<std::string> ids;
  for (const auto& q : qs) {
    if (!ids.insert(q.id).second) throw DatasetError(path.string() + ": duplicate question id " + q.id);
    if (q.text.find_first_not_of(" \t\r\n") == std::string::npos) {
      throw DatasetError(path.string() + ": question " + q.id + " has empty text");
    }
    if (!q.ref_answer || q.ref_answer->find_first_not_of(" \t\r\n") == std::string::npos) {
      throw DatasetError(path.string() + ": question " + q.id + " has no ref_answer");
    }
  }
  if (expected_count && qs.size() != *expected_count) {
    throw DatasetError(path.string() + ": expected " + std::to_string(*expected_count) + " questions, found " +
                       std::to_string(qs.size()));
  }
  return qs;
}

}  // namespace sagent
