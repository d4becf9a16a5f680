#pragma once

// A tiny grammar for the Python-flavoured constructor literals that models emit:
//   Name(kw='str', n=3, flag=True, items=[Other(...), ...])
// It is not a Python parser. Only identifiers, calls with positional and keyword
// arguments, single/double-quoted strings, integers, booleans, None and lists exist.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace sagent {

enum class ParseErrorKind {
  unterminated_string,
  unbalanced_brackets,
  missing_cue,
  unknown_constructor,
  malformed_argument,
  missing_keyword,
  type_mismatch,
  unexpected_token,
  check_without_revision,
  nesting_too_deep,
};

std::string_view to_string(ParseErrorKind k);

struct ParseError : std::runtime_error {
  ParseErrorKind kind;
  std::size_t offset;
  ParseError(ParseErrorKind k, std::size_t off, const std::string& msg);
};

namespace literal {

struct Value;

struct Name {
  std::string id;
  bool operator==(const Name&) const = default;
};

struct Call {
  std::string name;
  std::vector<Value> positional;
  std::vector<std::pair<std::string, Value>> keywords;

  const Value* keyword(std::string_view key) const;
  bool operator==(const Call&) const;
};

using List = std::vector<Value>;

struct Value {
  std::variant<std::nullptr_t, bool, std::int64_t, std::string, Name, List, Call> data;

  bool is_string() const { return std::holds_alternative<std::string>(data); }
  bool is_call() const { return std::holds_alternative<Call>(data); }
  bool operator==(const Value& o) const { return data == o.data; }
};

// Cursor over source text shared by expression and statement level parsing.
class Reader {
 public:
  explicit Reader(std::string_view text) : text_(text) {}

  std::string_view text() const { return text_; }
  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }
  bool eof() const { return pos_ >= text_.size(); }
  char peek(std::size_t ahead = 0) const {
    return pos_ + ahead < text_.size() ? text_[pos_ + ahead] : '\0';
  }

  // Skips spaces and tabs only (statement level is line sensitive).
  void skip_inline_space();
  // Skips all whitespace and `#` comments (inside brackets newlines are insignificant).
  void skip_space_and_comments();

  bool at_identifier_start() const;
  std::string read_identifier();

  Value parse_value(int depth = 0);

 private:
  std::string read_string();
  std::int64_t read_integer();
  List parse_list(int depth);
  Call parse_call_args(std::string name, int depth);

  std::string_view text_;
  std::size_t pos_ = 0;
};

// Parses a whole string as one value; trailing non-space text is an error.
Value parse_value(std::string_view text);

// Double-quoted literal with Python escapes for `\`, `"` and control bytes.
std::string quote(std::string_view s);

}  // namespace literal
}  // namespace sagent
