#include "sagent/literal.hpp"

#include <cctype>
#include <cstdio>
#include <limits>

namespace sagent {

namespace {
constexpr int kMaxDepth = 64;

bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}
}  // namespace

std::string_view to_string(ParseErrorKind k) {
  switch (k) {
    case ParseErrorKind::unterminated_string: return "unterminated_string";
    case ParseErrorKind::unbalanced_brackets: return "unbalanced_brackets";
    case ParseErrorKind::missing_cue: return "missing_cue";
    case ParseErrorKind::unknown_constructor: return "unknown_constructor";
    case ParseErrorKind::malformed_argument: return "malformed_argument";
    case ParseErrorKind::missing_keyword: return "missing_keyword";
    case ParseErrorKind::type_mismatch: return "type_mismatch";
    case ParseErrorKind::unexpected_token: return "unexpected_token";
    case ParseErrorKind::check_without_revision: return "check_without_revision";
    case ParseErrorKind::nesting_too_deep: return "nesting_too_deep";
  }
  return "?";
}

ParseError::ParseError(ParseErrorKind k, std::size_t off, const std::string& msg)
    : std::runtime_error(std::string(to_string(k)) + " at offset " + std::to_string(off) + ": " + msg),
      kind(k),
      offset(off) {}

namespace literal {

const Value* Call::keyword(std::string_view key) const {
  for (const auto& [k, v] : keywords) {
    if (k == key) return &v;
  }
  return nullptr;
}

bool Call::operator==(const Call& o) const {
  return name == o.name && positional == o.positional && keywords == o.keywords;
}

void Reader::skip_inline_space() {
  while (!eof() && (peek() == ' ' || peek() == '\t' || peek() == '\r')) ++pos_;
}

void Reader::skip_space_and_comments() {
  while (!eof()) {
    const char c = peek();
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++pos_;
    } else if (c == '#') {
      while (!eof() && peek() != '\n') ++pos_;
    } else {
      break;
    }
  }
}

bool Reader::at_identifier_start() const {
  const char c = peek();
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}

std::string Reader::read_identifier() {
  const std::size_t start = pos_;
  while (!eof() && is_ident_char(peek())) ++pos_;
  return std::string(text_.substr(start, pos_ - start));
}

std::string Reader::read_string() {
  const std::size_t start = pos_;
  const char quote_char = peek();
  ++pos_;
  std::string out;
  while (true) {
    if (eof()) throw ParseError(ParseErrorKind::unterminated_string, start, "string literal never closed");
    const char c = peek();
    if (c == '\n') throw ParseError(ParseErrorKind::unterminated_string, start, "newline inside string literal");
    ++pos_;
    if (c == quote_char) break;
    if (c != '\\') {
      out.push_back(c);
      continue;
    }
    if (eof()) throw ParseError(ParseErrorKind::unterminated_string, start, "dangling escape");
    const char e = peek();
    ++pos_;
    switch (e) {
      case '\\': out.push_back('\\'); break;
      case '\'': out.push_back('\''); break;
      case '"': out.push_back('"'); break;
      case 'n': out.push_back('\n'); break;
      case 't': out.push_back('\t'); break;
      case 'r': out.push_back('\r'); break;
      case '0': out.push_back('\0'); break;
      case '\n': break;  // line continuation
      case 'x': {
        const int hi = hex_digit(peek());
        const int lo = hex_digit(peek(1));
        if (hi < 0 || lo < 0) throw ParseError(ParseErrorKind::malformed_argument, pos_, "bad \\x escape");
        pos_ += 2;
        out.push_back(static_cast<char>(hi * 16 + lo));
        break;
      }
      case 'u': {
        std::uint32_t cp = 0;
        for (int i = 0; i < 4; ++i) {
          const int d = hex_digit(peek());
          if (d < 0) throw ParseError(ParseErrorKind::malformed_argument, pos_, "bad \\u escape");
          cp = cp * 16 + static_cast<std::uint32_t>(d);
          ++pos_;
        }
        append_utf8(out, cp);
        break;
      }
      default:
        // Unknown escapes are kept verbatim, as Python does.
        out.push_back('\\');
        out.push_back(e);
    }
  }
  return out;
}

std::int64_t Reader::read_integer() {
  const std::size_t start = pos_;
  bool negative = false;
  if (peek() == '-') {
    negative = true;
    ++pos_;
  }
  if (!std::isdigit(static_cast<unsigned char>(peek()))) {
    throw ParseError(ParseErrorKind::unexpected_token, start, "expected digits");
  }
  std::int64_t value = 0;
  while (!eof() && std::isdigit(static_cast<unsigned char>(peek()))) {
    const int d = peek() - '0';
    if (value > (std::numeric_limits<std::int64_t>::max() - d) / 10) {
      throw ParseError(ParseErrorKind::malformed_argument, start, "integer literal out of range");
    }
    value = value * 10 + d;
    ++pos_;
  }
  if (!eof() && (is_ident_char(peek()) || peek() == '.')) {
    throw ParseError(ParseErrorKind::unexpected_token, pos_, "only integer numbers are supported");
  }
  return negative ? -value : value;
}

List Reader::parse_list(int depth) {
  const std::size_t open = pos_;
  ++pos_;  // '['
  List items;
  while (true) {
    skip_space_and_comments();
    if (eof()) throw ParseError(ParseErrorKind::unbalanced_brackets, open, "'[' never closed");
    if (peek() == ']') {
      ++pos_;
      return items;
    }
    if (peek() == ')') throw ParseError(ParseErrorKind::unbalanced_brackets, pos_, "')' closes '['");
    items.push_back(parse_value(depth + 1));
    skip_space_and_comments();
    if (eof()) throw ParseError(ParseErrorKind::unbalanced_brackets, open, "'[' never closed");
    if (peek() == ',') {
      ++pos_;
    } else if (peek() == ')') {
      throw ParseError(ParseErrorKind::unbalanced_brackets, pos_, "')' closes '['");
    } else if (peek() != ']') {
      throw ParseError(ParseErrorKind::unexpected_token, pos_, "expected ',' or ']' in list");
    }
  }
}

Call Reader::parse_call_args(std::string name, int depth) {
  const std::size_t open = pos_;
  ++pos_;  // '('
  Call call{std::move(name), {}, {}};
  while (true) {
    skip_space_and_comments();
    if (eof()) throw ParseError(ParseErrorKind::unbalanced_brackets, open, "'(' never closed");
    if (peek() == ')') {
      ++pos_;
      return call;
    }
    if (peek() == ']') throw ParseError(ParseErrorKind::unbalanced_brackets, pos_, "']' closes '('");

    // keyword argument?
    const std::size_t arg_start = pos_;
    bool is_keyword = false;
    if (at_identifier_start()) {
      std::string ident = read_identifier();
      skip_space_and_comments();
      if (peek() == '=' && peek(1) != '=') {
        ++pos_;
        is_keyword = true;
        skip_space_and_comments();
        if (eof()) throw ParseError(ParseErrorKind::unbalanced_brackets, open, "'(' never closed");
        const char c = peek();
        if (c == ',' || c == ')' || c == ']' || c == '=') {
          throw ParseError(ParseErrorKind::malformed_argument, arg_start,
                           "keyword argument '" + ident + "' has no value");
        }
        for (const auto& kw : call.keywords) {
          if (kw.first == ident) {
            throw ParseError(ParseErrorKind::malformed_argument, arg_start, "duplicate keyword '" + ident + "'");
          }
        }
        Value v = parse_value(depth + 1);
        call.keywords.emplace_back(std::move(ident), std::move(v));
      } else {
        seek(arg_start);
      }
    }
    if (!is_keyword) {
      if (!call.keywords.empty()) {
        throw ParseError(ParseErrorKind::malformed_argument, arg_start, "positional argument after keyword");
      }
      call.positional.push_back(parse_value(depth + 1));
    }
    skip_space_and_comments();
    if (eof()) throw ParseError(ParseErrorKind::unbalanced_brackets, open, "'(' never closed");
    if (peek() == ',') {
      ++pos_;
    } else if (peek() == ']') {
      throw ParseError(ParseErrorKind::unbalanced_brackets, pos_, "']' closes '('");
    } else if (peek() != ')') {
      throw ParseError(ParseErrorKind::unexpected_token, pos_, "expected ',' or ')' in call");
    }
  }
}

Value Reader::parse_value(int depth) {
  if (depth > kMaxDepth) throw ParseError(ParseErrorKind::nesting_too_deep, pos_, "literal nested too deeply");
  skip_space_and_comments();
  if (eof()) throw ParseError(ParseErrorKind::unexpected_token, pos_, "expected a value, found end of input");
  const char c = peek();
  if (c == '\'' || c == '"') return Value{read_string()};
  if (c == '-' || std::isdigit(static_cast<unsigned char>(c))) return Value{read_integer()};
  if (c == '[') return Value{parse_list(depth)};
  if (c == ')' || c == ']') throw ParseError(ParseErrorKind::unbalanced_brackets, pos_, "unexpected closing bracket");
  if (at_identifier_start()) {
    const std::size_t start = pos_;
    std::string ident = read_identifier();
    // Dotted names (e.g. dataclasses.field) are not part of the output grammar.
    if (peek() == '(') return Value{parse_call_args(std::move(ident), depth)};
    if (ident == "True") return Value{true};
    if (ident == "False") return Value{false};
    if (ident == "None") return Value{nullptr};
    (void)start;
    return Value{Name{std::move(ident)}};
  }
  throw ParseError(ParseErrorKind::unexpected_token, pos_, std::string("unexpected character '") + c + "'");
}

Value parse_value(std::string_view text) {
  Reader r(text);
  Value v = r.parse_value();
  r.skip_space_and_comments();
  if (!r.eof()) throw ParseError(ParseErrorKind::unexpected_token, r.pos(), "trailing text after value");
  return v;
}

std::string quote(std::string_view s) {
  std::string out;
  out.reserve(s.size() + 2);
  out.push_back('"');
  for (const char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    switch (ch) {
      case '\\': out += "\\\\"; break;
      case '"': out += "\\\""; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (c < 0x20 || c == 0x7F) {
          char buf[5];
          std::snprintf(buf, sizeof buf, "\\x%02x", c);
          out += buf;
        } else {
          out.push_back(ch);
        }
    }
  }
  out.push_back('"');
  return out;
}

}  // namespace literal
}  // namespace sagent
