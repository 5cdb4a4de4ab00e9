#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace semcal::text {

std::string to_lower(std::string_view s);

// Trims and collapses every whitespace run to a single space.
std::string collapse_whitespace(std::string_view s);

std::vector<std::string> split_whitespace(std::string_view s);

// Answer normalization used for correctness: cut at the first line or
// sentence break, lowercase, drop punctuation and the articles a/an/the,
// collapse whitespace. Idempotent.
std::string normalize_answer(std::string_view s);

// Keeps only the first line and the first sentence of a response.
std::string first_answer_span(std::string_view s);

// Replaces runs of English number words ("twenty one", "one hundred and
// five", "two thousand") with their digit form. Input is expected lowercase.
std::string number_words_to_digits(std::string_view s);

// A calendar date at whatever granularity the text actually carried.
struct Date {
  int year = 0;
  std::optional<int> month;
  std::optional<int> day;

  friend bool operator==(const Date&, const Date&) = default;
};

// Recognizes "20th December 1988", "December 20, 1988", "19/12/1988",
// "December 1988", "1988", "1988-12-20" and close variants. The whole input
// must be a date; surrounding prose is not searched. Slash dates are read
// day-first unless that is impossible.
std::optional<Date> parse_date(std::string_view s);

// YYYY, YYYY-MM or YYYY-MM-DD depending on granularity.
std::string to_iso(const Date& d);

}  // namespace semcal::text
