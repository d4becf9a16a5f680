#include "sagent/templates.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "sagent/codec.hpp"
#include "sagent/literal.hpp"

#ifndef SAGENT_TEMPLATE_DIR
#define SAGENT_TEMPLATE_DIR "templates"
#endif

namespace sagent {

namespace {

constexpr std::string_view kBar = "#########################";

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw TemplateError("cannot read template file " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string trim_blank_lines(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  std::size_t start = 0;
  while (start < s.size() && s[start] == '\n') ++start;
  return s.substr(start);
}

std::vector<std::string> slots_in(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = text.find("{{", pos)) != std::string::npos) {
    const std::size_t end = text.find("}}", pos + 2);
    if (end == std::string::npos) throw TemplateError("unclosed '{{' in template");
    std::string name = text.substr(pos + 2, end - pos - 2);
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
    pos = end + 2;
  }
  return out;
}

std::string substitute(const std::string& text, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t open = text.find("{{", pos);
    if (open == std::string::npos) {
      out.append(text, pos, std::string::npos);
      return out;
    }
    const std::size_t close = text.find("}}", open + 2);
    out.append(text, pos, open - pos);
    const std::string name = text.substr(open + 2, close - open - 2);
    const auto it = values.find(name);
    if (it == values.end()) throw RenderError(name, "no value for template slot '" + name + "'");
    out += it->second;
    pos = close + 2;
  }
}

const std::vector<std::string>& known_slots(StepKind kind) {
  static const std::vector<std::string> decision = {"ORIGINAL_QUESTION", "PAST_ACTIONS", "REMAINING_SEARCHES"};
  static const std::vector<std::string> summarize = {"ORIGINAL_QUESTION", "PAST_ACTIONS", "CURRENT_SEARCH_RESULTS"};
  static const std::vector<std::string> answer = {"ORIGINAL_QUESTION", "PAST_ACTIONS"};
  static const std::vector<std::string> check = {"ORIGINAL_QUESTION", "PAST_ACTIONS", "ANSWER"};
  static const std::vector<std::string> autoeval = {"ORIGINAL_QUESTION", "ANSWER", "REF_ANSWER"};
  static const std::vector<std::string> ranker = {"inputs", "index", "action"};
  static const std::vector<std::string> none;
  switch (kind) {
    case StepKind::decision: return decision;
    case StepKind::summarize: return summarize;
    case StepKind::answer_gen: return answer;
    case StepKind::relevance_check:
    case StepKind::grounding_check: return check;
    case StepKind::auto_eval: return autoeval;
    case StepKind::reward_ranker: return ranker;
    default: return none;
  }
}

std::string assemble(const PromptTemplate& t, const std::map<std::string, std::string>& values) {
  std::string out = t.header;
  out += "\n\n";
  int n = 1;
  for (const auto& ex : t.exemplars) {
    out += example_banner(n++);
    out += ex;
    out += "\n\n";
  }
  out += example_banner(n);
  out += substitute(t.live, values);
  return out;
}

}  // namespace

std::string fill_slots(const std::string& text, const std::map<std::string, std::string>& values) {
  return substitute(text, values);
}

std::string example_banner(int n) {
  return std::string(kBar) + "\n# Example " + std::to_string(n) + ":\n" + std::string(kBar) + "\n\n";
}

std::string_view live_block(std::string_view prompt) {
  const std::string needle = "\n# Example ";
  std::size_t pos = prompt.rfind(needle);
  if (pos == std::string_view::npos) return prompt;
  pos = prompt.find(kBar, pos + needle.size());
  if (pos == std::string_view::npos) return prompt;
  pos += kBar.size();
  while (pos < prompt.size() && prompt[pos] == '\n') ++pos;
  return prompt.substr(pos);
}

std::string_view exemplar_output(std::string_view exemplar) {
  static constexpr std::string_view kFields[] = {"ORIGINAL_QUESTION:", "ANSWER:", "REF_ANSWER:",
                                                 "REMAINING_SEARCHES:"};
  std::size_t out_start = std::string_view::npos;
  std::size_t line_start = 0;
  while (line_start < exemplar.size()) {
    std::size_t line_end = exemplar.find('\n', line_start);
    if (line_end == std::string_view::npos) line_end = exemplar.size();
    const auto line = exemplar.substr(line_start, line_end - line_start);
    for (const auto f : kFields) {
      if (line.starts_with(f)) out_start = std::min(line_end + 1, exemplar.size());
    }
    line_start = line_end + 1;
  }
  if (out_start == std::string_view::npos) return {};
  return exemplar.substr(out_start);
}

std::optional<std::vector<Action>> extract_past_actions(std::string_view block) {
  static constexpr std::string_view kField = "PAST_ACTIONS: List[Action] = ";
  const std::size_t pos = block.find(kField);
  if (pos == std::string_view::npos) return std::nullopt;
  literal::Reader r(block.substr(pos + kField.size()));
  r.parse_value();
  return parse_action_list(block.substr(pos + kField.size(), r.pos()));
}

void validate_exemplars(const PromptTemplate& t) {
  int n = 1;
  for (const auto& ex : t.exemplars) {
    const std::string where = std::string(to_string(t.step_kind)) + " exemplar " + std::to_string(n++);
    const auto out = exemplar_output(ex);
    try {
      if (t.step_kind == StepKind::auto_eval) {
        if (!parse_autoeval_verdict(out).terminated) throw TemplateError(where + " output lacks '# [END]'");
      } else if (is_agent_step(t.step_kind)) {
        if (!parse_completion(t.step_kind, out).terminated) throw TemplateError(where + " output lacks '# [END]'");
        extract_past_actions(ex);
      }
    } catch (const ParseError& e) {
      throw TemplateError(where + ": " + e.what());
    } catch (const VerdictParseError& e) {
      throw TemplateError(where + ": " + e.what());
    }
  }
}

PromptTemplate parse_template_file(StepKind kind, const std::string& content) {
  PromptTemplate t;
  t.step_kind = kind;
  std::istringstream in(content);
  std::string line;
  std::string section;
  std::string current;
  bool saw_live = false;
  auto flush = [&] {
    std::string body = trim_blank_lines(current);
    current.clear();
    if (section.empty()) {
      if (!body.empty()) throw TemplateError("text before the first section marker");
      return;
    }
    if (section == "header") {
      t.header = body;
    } else if (section == "exemplar") {
      t.exemplars.push_back(body);
    } else if (section == "live") {
      t.live = body;
      saw_live = true;
    } else if (section == "output") {
      t.output_section = body;
    } else if (section == "footer") {
      t.footer = body;
    } else {
      throw TemplateError("unknown template section '" + section + "'");
    }
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.size() > 8 && line.starts_with("=== ") && line.ends_with(" ===")) {
      flush();
      section = line.substr(4, line.size() - 8);
      continue;
    }
    current += line;
    current += '\n';
  }
  flush();

  const auto& allowed = known_slots(kind);
  auto check_slots = [&](const std::string& text) {
    for (const auto& s : slots_in(text)) {
      if (std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
        throw TemplateError("template for " + std::string(to_string(kind)) + " uses unknown slot '" + s + "'");
      }
    }
  };

  if (kind == StepKind::reward_ranker) {
    if (t.output_section.empty()) throw TemplateError("reward_ranker template needs an 'output' section");
    check_slots(t.header);
    check_slots(t.output_section);
    check_slots(t.footer);
    t.field_order = slots_in(t.header);
    return t;
  }
  if (!saw_live) throw TemplateError("template for " + std::string(to_string(kind)) + " has no 'live' section");
  check_slots(t.live);
  t.field_order = slots_in(t.live);
  for (const auto& required : allowed) {
    if (std::find(t.field_order.begin(), t.field_order.end(), required) == t.field_order.end()) {
      throw TemplateError("template for " + std::string(to_string(kind)) + " lacks slot '" + required + "'");
    }
  }
  const std::string_view cue = kind == StepKind::auto_eval ? kAutoEvalCue : kActionCue;
  if (!t.live.ends_with(cue)) {
    throw TemplateError("live block for " + std::string(to_string(kind)) + " must end at the cue '" +
                        std::string(cue) + "'");
  }
  return t;
}

void TemplateSet::add(PromptTemplate t) { templates_[t.step_kind] = std::move(t); }

const PromptTemplate& TemplateSet::get(StepKind kind) const {
  const auto it = templates_.find(kind);
  if (it == templates_.end()) throw TemplateError("no template loaded for " + std::string(to_string(kind)));
  return it->second;
}

TemplateSet TemplateSet::load(const std::filesystem::path& manifest) {
  json m;
  try {
    m = json::parse(read_file(manifest));
  } catch (const json::exception& e) {
    throw TemplateError("malformed template manifest " + manifest.string() + ": " + e.what());
  }
  TemplateSet set;
  const auto base = manifest.parent_path();
  for (const auto& [name, entry] : m.at("templates").items()) {
    StepKind kind;
    try {
      kind = step_kind_from_string(name);
    } catch (const SchemaError& e) {
      throw TemplateError(e.what());
    }
    PromptTemplate t = parse_template_file(kind, read_file(base / entry.at("path").get<std::string>()));
    if (kind == StepKind::reward_ranker) {
      t.slots = entry.value("slots", 4);
      if (t.slots < 2) throw TemplateError("reward_ranker needs at least 2 slots");
    } else if (entry.contains("shots")) {
      const int shots = entry.at("shots").get<int>();
      if (shots != static_cast<int>(t.exemplars.size())) {
        throw TemplateError("template for " + name + " declares " + std::to_string(shots) + " shots but has " +
                            std::to_string(t.exemplars.size()) + " exemplars");
      }
    }
    validate_exemplars(t);
    set.add(std::move(t));
  }
  return set;
}

std::filesystem::path TemplateSet::default_manifest_path() {
  if (const char* env = std::getenv("SAGENT_TEMPLATES")) return env;
  return std::filesystem::path(SAGENT_TEMPLATE_DIR) / "manifest.json";
}

TemplateSet TemplateSet::load_default() { return load(default_manifest_path()); }

std::string render_prompt(const TemplateSet& templates, StepKind kind, const Trajectory& trajectory,
                          const RenderInputs& extra) {
  if (!is_agent_step(kind)) {
    throw std::invalid_argument("render_prompt: not an agent step: " + std::string(to_string(kind)));
  }
  const PromptTemplate& t = templates.get(kind);
  std::map<std::string, std::string> values;
  values["ORIGINAL_QUESTION"] = literal::quote(trajectory.question.text);
  values["PAST_ACTIONS"] = render_action_list(trajectory.past_actions);
  values["REMAINING_SEARCHES"] = std::to_string(trajectory.remaining_searches);
  for (const auto& slot : t.field_order) {
    if (slot == "CURRENT_SEARCH_RESULTS") {
      if (!extra.current_results) throw RenderError(slot, "summarize prompt needs CURRENT_SEARCH_RESULTS");
      std::vector<ResultItem> items = extra.current_results->results;
      if (items.size() > static_cast<std::size_t>(trajectory.config.top_k_snippets)) {
        items.resize(static_cast<std::size_t>(trajectory.config.top_k_snippets));
      }
      values[slot] = render_search_result(items);
    } else if (slot == "ANSWER") {
      if (!extra.answer) throw RenderError(slot, "check prompt needs ANSWER");
      values[slot] = literal::quote(*extra.answer);
    }
  }
  return assemble(t, values);
}

std::string render_autoeval_prompt(const TemplateSet& templates, const std::string& question,
                                   const RenderInputs& extra) {
  const PromptTemplate& t = templates.get(StepKind::auto_eval);
  if (!extra.answer) throw RenderError("ANSWER", "auto-eval prompt needs ANSWER");
  if (!extra.ref_answer) throw RenderError("REF_ANSWER", "auto-eval prompt needs REF_ANSWER");
  std::map<std::string, std::string> values{{"ORIGINAL_QUESTION", literal::quote(question)},
                                            {"ANSWER", literal::quote(*extra.answer)},
                                            {"REF_ANSWER", literal::quote(*extra.ref_answer)}};
  return assemble(t, values);
}

}  // namespace sagent
