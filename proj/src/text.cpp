#include "semcal/text.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <unordered_map>

namespace semcal::text {

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

enum class WordKind { unit, scale_hundred, scale_big };

struct NumberWord {
  WordKind kind;
  std::int64_t value;
};

const std::unordered_map<std::string_view, NumberWord>& number_lexicon() {
  static const std::unordered_map<std::string_view, NumberWord> lex = {
      {"zero", {WordKind::unit, 0}},        {"one", {WordKind::unit, 1}},
      {"two", {WordKind::unit, 2}},         {"three", {WordKind::unit, 3}},
      {"four", {WordKind::unit, 4}},        {"five", {WordKind::unit, 5}},
      {"six", {WordKind::unit, 6}},         {"seven", {WordKind::unit, 7}},
      {"eight", {WordKind::unit, 8}},       {"nine", {WordKind::unit, 9}},
      {"ten", {WordKind::unit, 10}},        {"eleven", {WordKind::unit, 11}},
      {"twelve", {WordKind::unit, 12}},     {"thirteen", {WordKind::unit, 13}},
      {"fourteen", {WordKind::unit, 14}},   {"fifteen", {WordKind::unit, 15}},
      {"sixteen", {WordKind::unit, 16}},    {"seventeen", {WordKind::unit, 17}},
      {"eighteen", {WordKind::unit, 18}},   {"nineteen", {WordKind::unit, 19}},
      {"twenty", {WordKind::unit, 20}},     {"thirty", {WordKind::unit, 30}},
      {"forty", {WordKind::unit, 40}},      {"fifty", {WordKind::unit, 50}},
      {"sixty", {WordKind::unit, 60}},      {"seventy", {WordKind::unit, 70}},
      {"eighty", {WordKind::unit, 80}},     {"ninety", {WordKind::unit, 90}},
      {"hundred", {WordKind::scale_hundred, 100}},
      {"thousand", {WordKind::scale_big, 1000}},
      {"million", {WordKind::scale_big, 1000000}},
      {"billion", {WordKind::scale_big, 1000000000}},
  };
  return lex;
}

bool is_trailing_punct(char c) {
  return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

// Splits "twenty-one," into core "twenty-one" and suffix ",".
std::pair<std::string_view, std::string_view> split_suffix(std::string_view tok) {
  std::size_t end = tok.size();
  while (end > 0 && is_trailing_punct(tok[end - 1])) --end;
  return {tok.substr(0, end), tok.substr(end)};
}

// Number words in a (possibly hyphenated) token, or empty if any part is not one.
std::vector<NumberWord> number_parts(std::string_view core) {
  std::vector<NumberWord> parts;
  const auto& lex = number_lexicon();
  std::size_t start = 0;
  while (start <= core.size()) {
    std::size_t dash = core.find('-', start);
    std::string_view part = core.substr(start, dash == std::string_view::npos ? std::string_view::npos : dash - start);
    auto it = lex.find(part);
    if (it == lex.end()) return {};
    parts.push_back(it->second);
    if (dash == std::string_view::npos) break;
    start = dash + 1;
  }
  return parts;
}

std::int64_t evaluate_number(const std::vector<NumberWord>& words) {
  std::int64_t total = 0;
  std::int64_t current = 0;
  for (const auto& w : words) {
    switch (w.kind) {
      case WordKind::unit:
        current += w.value;
        break;
      case WordKind::scale_hundred:
        current = (current == 0 ? 1 : current) * 100;
        break;
      case WordKind::scale_big:
        total += (current == 0 ? 1 : current) * w.value;
        current = 0;
        break;
    }
  }
  return total + current;
}

}  // namespace

std::string number_words_to_digits(std::string_view s) {
  const auto tokens = split_whitespace(s);
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < tokens.size()) {
    auto [core, suffix] = split_suffix(tokens[i]);
    auto parts = number_parts(core);
    if (parts.empty()) {
      out.push_back(tokens[i]);
      ++i;
      continue;
    }
    std::vector<NumberWord> run = std::move(parts);
    std::string run_suffix(suffix);
    std::size_t j = i + 1;
    // A run continues through number words and through "and" when a number
    // word follows it; trailing punctuation ends the run.
    while (run_suffix.empty() && j < tokens.size()) {
      std::size_t k = j;
      if (tokens[k] == "and" && k + 1 < tokens.size()) ++k;
      auto [next_core, next_suffix] = split_suffix(tokens[k]);
      auto next = number_parts(next_core);
      if (next.empty()) break;
      run.insert(run.end(), next.begin(), next.end());
      run_suffix = std::string(next_suffix);
      j = k + 1;
    }
    out.push_back(std::to_string(evaluate_number(run)) + run_suffix);
    i = j;
  }
  std::string joined;
  for (std::size_t t = 0; t < out.size(); ++t) {
    if (t) joined.push_back(' ');
    joined += out[t];
  }
  return joined;
}

namespace {

std::optional<int> month_from_name(std::string_view w) {
  static constexpr std::array<std::string_view, 12> full = {
      "january", "february", "march",     "april",   "may",      "june",
      "july",    "august",   "september", "october", "november", "december"};
  for (int m = 0; m < 12; ++m) {
    if (w == full[m]) return m + 1;
    if (w.size() >= 3 && w.size() < full[m].size() && full[m].substr(0, w.size()) == w) {
      // Abbreviations: "dec", "sept", "dec." (the dot is stripped earlier).
      return m + 1;
    }
  }
  return std::nullopt;
}

std::optional<int> parse_int(std::string_view s) {
  if (s.empty() || s.size() > 9) return std::nullopt;
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// "20th", "1st", "2nd", "3rd", "20".
std::optional<int> parse_day(std::string_view s) {
  if (s.size() > 2) {
    auto tail = s.substr(s.size() - 2);
    if (tail == "st" || tail == "nd" || tail == "rd" || tail == "th") s = s.substr(0, s.size() - 2);
  }
  auto v = parse_int(s);
  if (!v || *v < 1 || *v > 31) return std::nullopt;
  return v;
}

std::optional<int> parse_year(std::string_view s) {
  if (s.size() != 4) return std::nullopt;
  auto v = parse_int(s);
  if (!v || *v < 1000 || *v > 2999) return std::nullopt;
  return v;
}

bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int days_in_month(int y, int m) {
  static constexpr std::array<int, 12> days = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  return m == 2 && is_leap(y) ? 29 : days[m - 1];
}

std::optional<Date> make_date(int y, std::optional<int> m, std::optional<int> d) {
  if (m && (*m < 1 || *m > 12)) return std::nullopt;
  if (d && (!m || *d < 1 || *d > days_in_month(y, *m))) return std::nullopt;
  return Date{y, m, d};
}

// Numeric forms: YYYY-MM-DD, YYYY-MM, DD/MM/YYYY, MM/DD/YYYY, with / . or - separators.
std::optional<Date> parse_numeric_date(std::string_view s) {
  std::vector<std::string_view> fields;
  char sep = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == '/' || s[i] == '-' || s[i] == '.') {
      if (i < s.size()) {
        if (sep && s[i] != sep) return std::nullopt;
        sep = s[i];
      }
      fields.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  if (fields.size() < 2 || fields.size() > 3) return std::nullopt;
  for (auto f : fields) {
    if (f.empty()) return std::nullopt;
    for (char c : f)
      if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
  }
  if (auto y = parse_year(fields[0])) {
    auto m = parse_int(fields[1]);
    if (!m || fields[1].size() > 2) return std::nullopt;
    std::optional<int> d;
    if (fields.size() == 3) {
      d = parse_int(fields[2]);
      if (!d || fields[2].size() > 2) return std::nullopt;
    }
    return make_date(*y, m, d);
  }
  if (fields.size() != 3) return std::nullopt;
  auto y = parse_year(fields[2]);
  auto a = parse_int(fields[0]);
  auto b = parse_int(fields[1]);
  if (!y || !a || !b || fields[0].size() > 2 || fields[1].size() > 2) return std::nullopt;
  if (auto d = make_date(*y, *b, *a)) return d;  // day-first
  return make_date(*y, *a, *b);
}

}  // namespace

std::optional<Date> parse_date(std::string_view raw) {
  std::string s = to_lower(raw);
  for (auto& c : s)
    if (c == ',') c = ' ';
  auto tokens = split_whitespace(s);
  if (tokens.empty()) return std::nullopt;
  // Trailing sentence period and month abbreviation dots.
  for (auto& t : tokens) {
    while (!t.empty() && t.back() == '.' && !parse_numeric_date(t)) t.pop_back();
  }
  std::erase_if(tokens, [](const std::string& t) { return t.empty() || t == "of" || t == "the"; });
  if (tokens.empty()) return std::nullopt;

  if (tokens.size() == 1) {
    if (auto y = parse_year(tokens[0])) return Date{*y, std::nullopt, std::nullopt};
    return parse_numeric_date(tokens[0]);
  }
  if (tokens.size() == 2) {
    // "december 1988"
    auto m = month_from_name(tokens[0]);
    auto y = parse_year(tokens[1]);
    if (m && y) return make_date(*y, m, std::nullopt);
    return std::nullopt;
  }
  if (tokens.size() == 3) {
    // "20th december 1988"
    if (auto d = parse_day(tokens[0])) {
      auto m = month_from_name(tokens[1]);
      auto y = parse_year(tokens[2]);
      if (m && y) return make_date(*y, m, d);
    }
    // "december 20th 1988"
    if (auto m = month_from_name(tokens[0])) {
      auto d = parse_day(tokens[1]);
      auto y = parse_year(tokens[2]);
      if (d && y) return make_date(*y, m, d);
    }
  }
  return std::nullopt;
}

std::string to_iso(const Date& d) {
  char buf[16];
  if (d.month && d.day) {
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", d.year, *d.month, *d.day);
  } else if (d.month) {
    std::snprintf(buf, sizeof buf, "%04d-%02d", d.year, *d.month);
  } else {
    std::snprintf(buf, sizeof buf, "%04d", d.year);
  }
  return buf;
}

}  // namespace semcal::text

namespace semcal::text {

std::string first_answer_span(std::string_view s) {
  std::size_t end = s.size();
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (c == '\n' || c == '\r') {
      end = i;
      break;
    }
    if ((c == '.' || c == '!' || c == '?') && i + 1 < s.size() &&
        std::isspace(static_cast<unsigned char>(s[i + 1]))) {
      end = i + 1;
      break;
    }
  }
  return std::string(s.substr(0, end));
}

std::string normalize_answer(std::string_view s) {
  std::string lowered = to_lower(first_answer_span(s));
  std::string no_punct;
  no_punct.reserve(lowered.size());
  for (char c : lowered) {
    if (!std::ispunct(static_cast<unsigned char>(c))) no_punct.push_back(c);
  }
  std::string out;
  for (const auto& tok : split_whitespace(no_punct)) {
    if (tok == "a" || tok == "an" || tok == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

}  // namespace semcal::text
