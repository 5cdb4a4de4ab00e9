#include <gtest/gtest.h>

#include "semcal/text.hpp"

using namespace semcal::text;

TEST(NormalizeAnswer, Examples) {
  EXPECT_EQ(normalize_answer("The Cat!"), "cat");
  EXPECT_EQ(normalize_answer(""), "");
  EXPECT_EQ(normalize_answer("Shylock."), "shylock");
}

TEST(NormalizeAnswer, CutsAtFirstSentenceOrLine) {
  EXPECT_EQ(normalize_answer("Paris. It is the capital of France."), "paris");
  EXPECT_EQ(normalize_answer("Paris\nQ: next question"), "paris");
  EXPECT_EQ(normalize_answer("  an   Apple  "), "apple");
}

TEST(NormalizeAnswer, Idempotent) {
  for (const char* s : {"The Merchant of Venice", "A.B.C.", "mt. everest", "  x  y ", "Twenty-one!"}) {
    const auto once = normalize_answer(s);
    EXPECT_EQ(normalize_answer(once), once) << s;
  }
}

TEST(NumberWords, Conversions) {
  EXPECT_EQ(number_words_to_digits("twenty"), "20");
  EXPECT_EQ(number_words_to_digits("twenty one"), "21");
  EXPECT_EQ(number_words_to_digits("twenty-one"), "21");
  EXPECT_EQ(number_words_to_digits("one hundred and five"), "105");
  EXPECT_EQ(number_words_to_digits("two thousand"), "2000");
  EXPECT_EQ(number_words_to_digits("three million four hundred"), "3000400");
  EXPECT_EQ(number_words_to_digits("about twelve apples"), "about 12 apples");
  EXPECT_EQ(number_words_to_digits("paris"), "paris");
}

TEST(ParseDate, Examples) {
  EXPECT_EQ(parse_date("20th December 1988"), (Date{1988, 12, 20}));
  EXPECT_EQ(parse_date("1988"), (Date{1988, std::nullopt, std::nullopt}));
  EXPECT_FALSE(parse_date("next Tuesday"));
}

TEST(ParseDate, Formats) {
  EXPECT_EQ(parse_date("19/12/1988"), (Date{1988, 12, 19}));
  EXPECT_EQ(parse_date("12/19/1988"), (Date{1988, 12, 19}));  // day-first impossible
  EXPECT_EQ(parse_date("December 1988"), (Date{1988, 12, std::nullopt}));
  EXPECT_EQ(parse_date("December 20, 1988"), (Date{1988, 12, 20}));
  EXPECT_EQ(parse_date("1988-12-20"), (Date{1988, 12, 20}));
  EXPECT_EQ(parse_date("the 1st of Jan 2000"), (Date{2000, 1, 1}));
  EXPECT_FALSE(parse_date("31/02/1999"));
  EXPECT_EQ(parse_date("29/02/2000"), (Date{2000, 2, 29}));
  EXPECT_FALSE(parse_date("29/02/1900"));
  EXPECT_FALSE(parse_date("42"));
  EXPECT_FALSE(parse_date("born in 1988"));
}

TEST(ParseDate, IsoRendering) {
  EXPECT_EQ(to_iso(Date{1988, 12, 20}), "1988-12-20");
  EXPECT_EQ(to_iso(Date{1988, 3, std::nullopt}), "1988-03");
  EXPECT_EQ(to_iso(Date{1988, std::nullopt, std::nullopt}), "1988");
}

TEST(Whitespace, CollapseAndSplit) {
  EXPECT_EQ(collapse_whitespace("  a \t b\n c  "), "a b c");
  EXPECT_EQ(split_whitespace(" a  b ").size(), 2u);
  EXPECT_TRUE(split_whitespace("   ").empty());
}
