#include "sagent/codec.hpp"

#include <algorithm>
#include <sstream>

namespace sagent {

using literal::Call;
using literal::List;
using literal::Reader;
using literal::Value;

namespace {

struct Statement {
  Value expr;
  std::size_t offset = 0;
};

struct Block {
  std::vector<std::string> comments;
  std::vector<Statement> statements;
  bool terminated = false;
};

bool is_end_marker(std::string_view line) {
  // line starts at '#'
  std::size_t i = 1;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  return line.substr(i).starts_with("[END]");
}

std::string comment_text(std::string_view line) {
  std::string_view body = line.substr(1);
  if (!body.empty() && body.front() == ' ') body.remove_prefix(1);
  if (!body.empty() && body.back() == '\r') body.remove_suffix(1);
  return std::string(body);
}

std::string_view read_to_eol(Reader& r) {
  const std::size_t start = r.pos();
  const auto text = r.text();
  std::size_t end = text.find('\n', start);
  if (end == std::string_view::npos) end = text.size();
  r.seek(end);
  return text.substr(start, end - start);
}

void expect_cue_tail(Reader& r) {
  r.skip_inline_space();
  if (r.peek() == ':') {
    r.seek(r.pos() + 1);
    r.skip_inline_space();
    if (!r.at_identifier_start()) {
      throw ParseError(ParseErrorKind::unexpected_token, r.pos(), "expected a type annotation after ':'");
    }
    r.read_identifier();
    r.skip_inline_space();
  }
  if (r.peek() != '=') throw ParseError(ParseErrorKind::missing_cue, r.pos(), "expected '=' after the cue");
  r.seek(r.pos() + 1);
}

Block read_block(std::string_view text) {
  Block block;
  Reader r(text);
  while (!r.eof()) {
    r.skip_inline_space();
    if (r.eof()) break;
    if (r.peek() == '\n') {
      r.seek(r.pos() + 1);
      continue;
    }
    if (r.peek() == '#') {
      const auto line = read_to_eol(r);
      if (is_end_marker(line)) {
        block.terminated = true;
        return block;
      }
      block.comments.push_back(comment_text(line));
      continue;
    }

    const std::size_t stmt_start = r.pos();
    const bool first = block.statements.empty();
    if (first && (r.peek() == ':' || r.peek() == '=')) {
      expect_cue_tail(r);
    } else if (r.at_identifier_start()) {
      const std::string ident = r.read_identifier();
      if (ident == kActionCue) {
        expect_cue_tail(r);
      } else if (r.peek() == '(') {
        r.seek(stmt_start);
      } else {
        throw ParseError(ParseErrorKind::missing_cue, stmt_start,
                         "expected '" + std::string(kActionCue) + " = ...', found '" + ident + "'");
      }
    } else {
      throw ParseError(ParseErrorKind::missing_cue, stmt_start, "expected an action assignment");
    }

    Statement stmt{r.parse_value(), stmt_start};
    r.skip_inline_space();
    if (r.peek() == '#') {
      const auto line = read_to_eol(r);
      block.statements.push_back(std::move(stmt));
      if (is_end_marker(line)) {
        block.terminated = true;
        return block;
      }
      block.comments.push_back(comment_text(line));
      continue;
    }
    if (!r.eof() && r.peek() != '\n') {
      throw ParseError(ParseErrorKind::unexpected_token, r.pos(), "trailing text after the action");
    }
    block.statements.push_back(std::move(stmt));
  }
  return block;
}

// Typed access to a call's keyword arguments; rejects positional and unknown keywords.
class Args {
 public:
  Args(const Call& call, std::size_t offset, std::initializer_list<std::string_view> allowed)
      : call_(call), offset_(offset) {
    if (!call.positional.empty()) {
      throw ParseError(ParseErrorKind::malformed_argument, offset,
                       call.name + "() takes keyword arguments only");
    }
    for (const auto& [key, value] : call.keywords) {
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        throw ParseError(ParseErrorKind::malformed_argument, offset,
                         "unexpected keyword '" + key + "' for " + call.name + "()");
      }
    }
  }

  bool has(std::string_view key) const { return call_.keyword(key) != nullptr; }

  const Value& required(std::string_view key) const {
    const Value* v = call_.keyword(key);
    if (!v) {
      throw ParseError(ParseErrorKind::missing_keyword, offset_,
                       call_.name + "() is missing '" + std::string(key) + "'");
    }
    return *v;
  }

  std::string string(std::string_view key) const {
    const Value& v = required(key);
    if (const auto* s = std::get_if<std::string>(&v.data)) return *s;
    throw mismatch(key, "a string");
  }

  bool boolean(std::string_view key) const {
    const Value& v = required(key);
    if (const auto* b = std::get_if<bool>(&v.data)) return *b;
    throw mismatch(key, "True or False");
  }

  int integer(const Value& v, std::string_view key) const {
    if (const auto* i = std::get_if<std::int64_t>(&v.data)) {
      if (*i < 0 || *i > 1'000'000'000) throw mismatch(key, "a link id");
      return static_cast<int>(*i);
    }
    throw mismatch(key, "an integer");
  }

  const List& list(std::string_view key) const {
    const Value& v = required(key);
    if (const auto* l = std::get_if<List>(&v.data)) return *l;
    throw mismatch(key, "a list");
  }

  const Call& call(std::string_view key) const {
    const Value& v = required(key);
    if (const auto* c = std::get_if<Call>(&v.data)) return *c;
    throw mismatch(key, "a constructor call");
  }

  ParseError mismatch(std::string_view key, std::string_view expected) const {
    return ParseError(ParseErrorKind::type_mismatch, offset_,
                      call_.name + "(" + std::string(key) + "=...) must be " + std::string(expected));
  }

 private:
  const Call& call_;
  std::size_t offset_;
};

const Call& as_call(const Value& v, std::size_t offset) {
  if (const auto* c = std::get_if<Call>(&v.data)) return *c;
  throw ParseError(ParseErrorKind::unknown_constructor, offset, "expected a constructor call");
}

ParseError unknown(const Call& c, std::size_t offset, StepKind kind) {
  return ParseError(ParseErrorKind::unknown_constructor, offset,
                    "'" + c.name + "' is not a valid action for step " + std::string(to_string(kind)));
}

ResultItem to_result_item(const Value& v, std::size_t offset) {
  const Call& c = as_call(v, offset);
  if (c.name != "ResultItem") {
    throw ParseError(ParseErrorKind::unknown_constructor, offset, "expected ResultItem, found '" + c.name + "'");
  }
  Args a(c, offset, {"link_id", "link_text", "snippet"});
  return ResultItem{a.integer(a.required("link_id"), "link_id"), a.string("link_text"), a.string("snippet")};
}

SelectLinkAction to_select_link(const Call& c, std::size_t offset) {
  Args a(c, offset, {"selected_link_ids", "selected_links", "grounded_summarization", "thoughts"});
  SelectLinkAction out;
  out.grounded_summarization = a.string("grounded_summarization");
  out.thoughts = a.string("thoughts");
  if (a.has("selected_links")) {
    for (const auto& item : a.list("selected_links")) out.selected_links.push_back(to_result_item(item, offset));
  }
  if (a.has("selected_link_ids")) {
    for (const auto& id : a.list("selected_link_ids")) out.selected_link_ids.push_back(a.integer(id, "selected_link_ids"));
  } else if (a.has("selected_links")) {
    for (const auto& item : out.selected_links) out.selected_link_ids.push_back(item.link_id);
  } else {
    a.required("selected_link_ids");
  }
  return out;
}

// Constructors that may appear in PAST_ACTIONS or as flat decision/answer outputs.
std::optional<Action> to_flat_action(const Call& c, std::size_t offset) {
  if (c.name == "Search") {
    Args a(c, offset, {"query", "thoughts"});
    return SearchAction{a.string("thoughts"), a.string("query")};
  }
  if (c.name == "Terminate") {
    Args a(c, offset, {"thoughts"});
    return TerminateAction{a.string("thoughts")};
  }
  if (c.name == "SelectLink" || c.name == "LinkSelection") return to_select_link(c, offset);
  if (c.name == "Answer") {
    Args a(c, offset, {"thoughts", "answer"});
    return AnswerAction{a.string("thoughts"), a.string("answer")};
  }
  return std::nullopt;
}

Action decision_action(const Call& c, std::size_t offset) {
  if (c.name == "ActionWrapper") {
    Args a(c, offset, {"thoughts", "action"});
    const std::string thoughts = a.string("thoughts");
    const Call& inner = a.call("action");
    if (inner.name == "Search") {
      Args ia(inner, offset, {"query"});
      return SearchAction{thoughts, ia.string("query")};
    }
    if (inner.name == "Terminate") {
      Args ia(inner, offset, {});
      return TerminateAction{thoughts};
    }
    throw unknown(inner, offset, StepKind::decision);
  }
  if (c.name == "Search" || c.name == "Terminate") return *to_flat_action(c, offset);
  throw unknown(c, offset, StepKind::decision);
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out.push_back('\n');
    out += lines[i];
  }
  return out;
}

Action check_action(const Block& block, StepKind kind) {
  const auto& s0 = block.statements.front();
  const Call& c0 = as_call(s0.expr, s0.offset);
  const std::string rationale = join_lines(block.comments);
  auto revise = [&](const Call& c, std::size_t offset) {
    Args a(c, offset, {"revised_answer"});
    return ReviseAnswerAction{a.string("revised_answer"), rationale};
  };
  if (c0.name == "Revise_Answer") {
    if (block.statements.size() > 1) {
      throw ParseError(ParseErrorKind::unexpected_token, block.statements[1].offset, "more than one action");
    }
    return revise(c0, s0.offset);
  }
  if (c0.name != "Check_Answer") throw unknown(c0, s0.offset, kind);
  Args a(c0, s0.offset, {"passed"});
  const bool passed = a.boolean("passed");
  if (passed) {
    if (block.statements.size() > 1) {
      throw ParseError(ParseErrorKind::unexpected_token, block.statements[1].offset,
                       "no action may follow a passed check");
    }
    return CheckAnswerAction{true, rationale};
  }
  if (block.statements.size() < 2) {
    throw ParseError(ParseErrorKind::check_without_revision, s0.offset,
                     "Check_Answer(passed=False) must be followed by Revise_Answer");
  }
  if (block.statements.size() > 2) {
    throw ParseError(ParseErrorKind::unexpected_token, block.statements[2].offset, "more than two actions");
  }
  const auto& s1 = block.statements[1];
  const Call& c1 = as_call(s1.expr, s1.offset);
  if (c1.name != "Revise_Answer") {
    throw ParseError(ParseErrorKind::check_without_revision, s1.offset,
                     "expected Revise_Answer after a failed check, found '" + c1.name + "'");
  }
  return revise(c1, s1.offset);
}

std::string comment_lines(const std::string& rationale) {
  if (rationale.empty()) return {};
  std::string out;
  std::size_t start = 0;
  while (true) {
    const std::size_t nl = rationale.find('\n', start);
    out += "# ";
    out += rationale.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
    out += "\n";
    if (nl == std::string::npos) break;
    start = nl + 1;
  }
  return out;
}

std::string int_list(const std::vector<int>& ids) {
  std::string out = "[";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(ids[i]);
  }
  return out + "]";
}

std::string result_item_literal(const ResultItem& r) {
  return "ResultItem(link_id=" + std::to_string(r.link_id) + ", link_text=" + literal::quote(r.link_text) +
         ", snippet=" + literal::quote(r.snippet) + ")";
}

}  // namespace

ParsedCompletion parse_completion(StepKind kind, std::string_view completion) {
  if (!is_agent_step(kind)) {
    throw std::invalid_argument("parse_completion: not an agent step: " + std::string(to_string(kind)));
  }
  Block block = read_block(completion);
  if (block.statements.empty()) {
    throw ParseError(ParseErrorKind::missing_cue, completion.size(), "no action assignment found");
  }
  const auto& s0 = block.statements.front();
  const bool is_check = kind == StepKind::relevance_check || kind == StepKind::grounding_check;
  if (!is_check && block.statements.size() > 1) {
    throw ParseError(ParseErrorKind::unexpected_token, block.statements[1].offset, "more than one action");
  }

  ParsedCompletion out{TerminateAction{}, std::string(completion), block.comments, block.terminated};
  switch (kind) {
    case StepKind::decision:
      out.action = decision_action(as_call(s0.expr, s0.offset), s0.offset);
      break;
    case StepKind::summarize: {
      const Call& c = as_call(s0.expr, s0.offset);
      if (c.name != "LinkSelection" && c.name != "SelectLink") throw unknown(c, s0.offset, kind);
      out.action = to_select_link(c, s0.offset);
      break;
    }
    case StepKind::answer_gen: {
      const Call& c = as_call(s0.expr, s0.offset);
      if (c.name != "Answer") throw unknown(c, s0.offset, kind);
      out.action = *to_flat_action(c, s0.offset);
      break;
    }
    default:
      out.action = check_action(block, kind);
  }
  return out;
}

std::optional<ParsedCompletion> try_parse_completion(StepKind kind, std::string_view completion,
                                                     std::string* error) {
  try {
    return parse_completion(kind, completion);
  } catch (const ParseError& e) {
    if (error) *error = e.what();
    return std::nullopt;
  }
}

std::vector<Action> parse_action_list(std::string_view text) {
  Reader r(text);
  const std::size_t start = r.pos();
  Value v = r.parse_value();
  r.skip_space_and_comments();
  if (!r.eof()) throw ParseError(ParseErrorKind::unexpected_token, r.pos(), "trailing text after list");
  const auto* items = std::get_if<List>(&v.data);
  if (!items) throw ParseError(ParseErrorKind::type_mismatch, start, "PAST_ACTIONS must be a list");
  std::vector<Action> out;
  for (const auto& item : *items) {
    const Call& c = as_call(item, start);
    auto a = to_flat_action(c, start);
    if (!a) throw ParseError(ParseErrorKind::unknown_constructor, start, "'" + c.name + "' is not a past action");
    out.push_back(std::move(*a));
  }
  return out;
}

std::string canonicalize(const Action& action) {
  using literal::quote;
  struct {
    std::string operator()(const SearchAction& a) const {
      return "Search(query=" + quote(a.query) + ", thoughts=" + quote(a.thoughts) + ")";
    }
    std::string operator()(const SelectLinkAction& a) const {
      std::vector<int> derived;
      for (const auto& r : a.selected_links) derived.push_back(r.link_id);
      std::string out = "SelectLink(";
      const bool emit_links = !a.selected_links.empty() || a.selected_link_ids.empty();
      if (!a.selected_link_ids.empty() && (a.selected_links.empty() || derived != a.selected_link_ids)) {
        out += "selected_link_ids=" + int_list(a.selected_link_ids) + ", ";
      }
      if (emit_links) {
        out += "selected_links=[";
        for (std::size_t i = 0; i < a.selected_links.size(); ++i) {
          if (i) out += ", ";
          out += result_item_literal(a.selected_links[i]);
        }
        out += "], ";
      }
      return out + "grounded_summarization=" + quote(a.grounded_summarization) + ", thoughts=" + quote(a.thoughts) +
             ")";
    }
    std::string operator()(const TerminateAction& a) const { return "Terminate(thoughts=" + quote(a.thoughts) + ")"; }
    std::string operator()(const AnswerAction& a) const {
      return "Answer(thoughts=" + quote(a.thoughts) + ", answer=" + quote(a.answer_text) + ")";
    }
    std::string operator()(const CheckAnswerAction& a) const {
      return comment_lines(a.rationale) + "Check_Answer(passed=" + (a.passed ? "True" : "False") + ")";
    }
    std::string operator()(const ReviseAnswerAction& a) const {
      return comment_lines(a.rationale) + "Revise_Answer(revised_answer=" + quote(a.revised_answer) + ")";
    }
  } v;
  return std::visit(v, action);
}

std::string render_completion(StepKind kind, const Action& action) {
  using literal::quote;
  const std::string end = "  " + std::string(kEndMarker);
  auto mismatch = [&] {
    return std::invalid_argument("render_completion: " + std::string(action_name(action)) +
                                 " is not an output of step " + std::string(to_string(kind)));
  };
  switch (kind) {
    case StepKind::decision:
      if (const auto* s = std::get_if<SearchAction>(&action)) {
        return " = ActionWrapper(thoughts=" + quote(s->thoughts) + ", action=Search(query=" + quote(s->query) + "))" +
               end;
      }
      if (const auto* t = std::get_if<TerminateAction>(&action)) {
        return " = ActionWrapper(thoughts=" + quote(t->thoughts) + ", action=Terminate())" + end;
      }
      throw mismatch();
    case StepKind::summarize:
      if (const auto* s = std::get_if<SelectLinkAction>(&action)) {
        return ": LinkSelection = LinkSelection(grounded_summarization=" + quote(s->grounded_summarization) +
               ", thoughts=" + quote(s->thoughts) + ", selected_link_ids=" + int_list(s->selected_link_ids) + ")" +
               end;
      }
      throw mismatch();
    case StepKind::answer_gen:
      if (const auto* a = std::get_if<AnswerAction>(&action)) {
        return ": Answer = Answer(thoughts=" + quote(a->thoughts) + ", answer=" + quote(a->answer_text) + ")" + end;
      }
      throw mismatch();
    case StepKind::relevance_check:
    case StepKind::grounding_check: {
      std::string stmt;
      std::string rationale;
      if (const auto* c = std::get_if<CheckAnswerAction>(&action)) {
        stmt = std::string("Check_Answer(passed=") + (c->passed ? "True" : "False") + ")";
        rationale = c->rationale;
      } else if (const auto* r = std::get_if<ReviseAnswerAction>(&action)) {
        stmt = "Revise_Answer(revised_answer=" + quote(r->revised_answer) + ")";
        rationale = r->rationale;
      } else {
        throw mismatch();
      }
      if (rationale.empty()) return ": Command = " + stmt + end;
      return ": Command = " + stmt + "\n" + comment_lines(rationale) + std::string(kEndMarker);
    }
    default:
      throw mismatch();
  }
}

AutoEvalVerdict parse_autoeval_verdict(std::string_view completion) {
  AutoEvalVerdict out;
  try {
    Reader r(completion);
    bool found = false;
    while (!r.eof()) {
      r.skip_inline_space();
      if (r.eof()) break;
      if (r.peek() == '\n') {
        r.seek(r.pos() + 1);
        continue;
      }
      if (r.peek() == '#') {
        const auto line = read_to_eol(r);
        if (is_end_marker(line)) {
          out.terminated = true;
          break;
        }
        out.comments.push_back(comment_text(line));
        continue;
      }
      if (found) throw VerdictParseError("text after the verdict");
      const std::size_t start = r.pos();
      if (r.at_identifier_start()) {
        const std::string ident = r.read_identifier();
        if (ident == "Check_Answer" && r.peek() == '(') {
          r.seek(start);
          r.parse_value();
          r.skip_inline_space();
          if (r.peek() != '=') throw VerdictParseError("expected '=' after Check_Answer(...)");
          r.seek(r.pos() + 1);
        } else {
          r.seek(start);
        }
      } else if (r.peek() == '=') {
        r.seek(r.pos() + 1);
      }
      r.skip_inline_space();
      const std::string word = r.at_identifier_start() ? r.read_identifier() : std::string();
      if (word == "True") {
        out.value = true;
      } else if (word == "False") {
        out.value = false;
      } else {
        throw VerdictParseError("no True/False verdict found");
      }
      found = true;
      r.skip_inline_space();
      if (r.peek() == '#') {
        const auto line = read_to_eol(r);
        if (is_end_marker(line)) {
          out.terminated = true;
          break;
        }
        out.comments.push_back(comment_text(line));
      } else if (!r.eof() && r.peek() != '\n') {
        throw VerdictParseError("trailing text after the verdict");
      }
    }
    if (!found) throw VerdictParseError("no verdict assignment found");
  } catch (const ParseError& e) {
    throw VerdictParseError(e.what());
  }
  return out;
}

std::vector<int> attach_selected_links(SelectLinkAction& action, const std::vector<ResultItem>& results) {
  std::vector<int> missing;
  action.selected_links.clear();
  for (int id : action.selected_link_ids) {
    auto it = std::find_if(results.begin(), results.end(), [&](const ResultItem& r) { return r.link_id == id; });
    if (it == results.end()) {
      missing.push_back(id);
    } else {
      action.selected_links.push_back(*it);
    }
  }
  return missing;
}

std::string render_action_list(const std::vector<Action>& actions) {
  if (actions.empty()) return "[]";
  std::string out = "[\n";
  for (const auto& a : actions) out += canonicalize(a) + ",\n";
  return out + "]";
}

std::string render_search_result(const std::vector<ResultItem>& items) {
  std::string out = "SearchResult(links=[\n";
  for (const auto& r : items) out += "  " + result_item_literal(r) + ",\n";
  return out + "])";
}

}  // namespace sagent
