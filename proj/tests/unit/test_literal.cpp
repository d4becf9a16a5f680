#include <gtest/gtest.h>

#include "sagent/literal.hpp"

using namespace sagent;
using namespace sagent::literal;

namespace {

ParseErrorKind error_kind(std::string_view text) {
  try {
    parse_value(text);
  } catch (const ParseError& e) {
    return e.kind;
  }
  ADD_FAILURE() << "no error for: " << text;
  return ParseErrorKind::unexpected_token;
}

}  // namespace

TEST(Literal, Scalars) {
  EXPECT_EQ(std::get<std::int64_t>(parse_value("42").data), 42);
  EXPECT_EQ(std::get<std::int64_t>(parse_value("-3").data), -3);
  EXPECT_EQ(std::get<bool>(parse_value("True").data), true);
  EXPECT_EQ(std::get<bool>(parse_value("False").data), false);
  EXPECT_TRUE(std::holds_alternative<std::nullptr_t>(parse_value("None").data));
  EXPECT_EQ(std::get<Name>(parse_value("ANSWER").data).id, "ANSWER");
}

TEST(Literal, StringEscapes) {
  EXPECT_EQ(std::get<std::string>(parse_value(R"('I\'m')").data), "I'm");
  EXPECT_EQ(std::get<std::string>(parse_value(R"("a\"b")").data), "a\"b");
  EXPECT_EQ(std::get<std::string>(parse_value(R"('a\nb\tc\\')").data), "a\nb\tc\\");
  EXPECT_EQ(std::get<std::string>(parse_value(R"('\x41é')").data), "A\xC3\xA9");
  // Escaping a quote that does not need it is harmless.
  EXPECT_EQ(std::get<std::string>(parse_value(R"("Jim Betts\' run")").data), "Jim Betts' run");
  // Unknown escapes survive as written.
  EXPECT_EQ(std::get<std::string>(parse_value(R"('a\qb')").data), "a\\qb");
}

TEST(Literal, CallsAndLists) {
  const Value v = parse_value("F(1, x='y', items=[G(a=True), 2,],)");
  const auto& c = std::get<Call>(v.data);
  EXPECT_EQ(c.name, "F");
  ASSERT_EQ(c.positional.size(), 1u);
  ASSERT_NE(c.keyword("items"), nullptr);
  const auto& items = std::get<List>(c.keyword("items")->data);
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(std::get<Call>(items[0].data).name, "G");
}

TEST(Literal, CommentsInsideBrackets) {
  const Value v = parse_value("[\n  1,  # first\n  2,\n]");
  EXPECT_EQ(std::get<List>(v.data).size(), 2u);
}

TEST(Literal, Errors) {
  EXPECT_EQ(error_kind("'abc"), ParseErrorKind::unterminated_string);
  EXPECT_EQ(error_kind("'ab\ncd'"), ParseErrorKind::unterminated_string);
  EXPECT_EQ(error_kind("F(a=1"), ParseErrorKind::unbalanced_brackets);
  EXPECT_EQ(error_kind("[1, 2"), ParseErrorKind::unbalanced_brackets);
  EXPECT_EQ(error_kind("F(a=)"), ParseErrorKind::malformed_argument);
  EXPECT_EQ(error_kind("F(a=1, a=2)"), ParseErrorKind::malformed_argument);
  EXPECT_EQ(error_kind("F(a=1) x"), ParseErrorKind::unexpected_token);
  EXPECT_EQ(error_kind(std::string(100, '[') + std::string(100, ']')), ParseErrorKind::nesting_too_deep);
}

TEST(Literal, QuoteRoundTrips) {
  for (const std::string s : {"", "plain", "it's", "say \"hi\"", "back\\slash", "line\nbreak", "\x01\x7f",
                              "caf\xC3\xA9", "# [END]"}) {
    EXPECT_EQ(std::get<std::string>(parse_value(quote(s)).data), s) << quote(s);
  }
}
