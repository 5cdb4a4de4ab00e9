#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "semcal/error.hpp"
#include "semcal/records.hpp"
#include "test_util.hpp"

using namespace semcal;

namespace {

bool has_code(const std::vector<ValidationIssue>& issues, const std::string& code) {
  return std::any_of(issues.begin(), issues.end(), [&](const auto& i) { return i.code == code; });
}

std::vector<PromptRecord> corpus(std::size_t n) {
  std::vector<PromptRecord> rs;
  for (std::size_t i = 0; i < n; ++i) rs.push_back(testutil::make_record("p" + std::to_string(i), {"a", "b"}, 4, 1, i));
  return rs;
}

std::vector<std::string> ids(const std::vector<PromptRecord>& rs) {
  std::vector<std::string> out;
  for (const auto& r : rs) out.push_back(r.prompt_id);
  return out;
}

}  // namespace

TEST(Parse, EmptyInputGivesNoRecords) {
  std::istringstream in("");
  const auto c = parse_generation_lines(in);
  EXPECT_TRUE(c.records.empty());
  EXPECT_TRUE(c.issues.empty());
}

TEST(Parse, TenSampleLine) {
  std::vector<std::string> answers(10, "paris");
  const auto r = testutil::make_record("q1", answers);
  std::istringstream in(record_to_json(r).dump() + "\n");
  const auto c = parse_generation_lines(in);
  ASSERT_EQ(c.records.size(), 1u);
  EXPECT_EQ(c.records[0].m(), 10u);
}

TEST(Parse, MissingGoldNamesLineAndField) {
  auto j = record_to_json(testutil::make_record("q1", {"x"}));
  const std::string good = j.dump();
  j.erase("gold_answers");
  std::istringstream in(good + "\n" + j.dump() + "\n");
  const auto c = parse_generation_lines(in);
  EXPECT_EQ(c.records.size(), 1u);
  ASSERT_EQ(c.issues.size(), 1u);
  EXPECT_EQ(c.issues[0].line, 2u);
  EXPECT_EQ(c.issues[0].field, "gold_answers");
}

TEST(Parse, UnknownFieldsIgnoredAndMalformedLinesReported) {
  auto j = record_to_json(testutil::make_record("q1", {"x"}));
  j["something_new"] = 42;
  std::istringstream in("{not json\n" + j.dump() + "\n");
  const auto c = parse_generation_lines(in);
  ASSERT_EQ(c.records.size(), 1u);
  ASSERT_EQ(c.issues.size(), 1u);
  EXPECT_EQ(c.issues[0].line, 1u);
}

TEST(Parse, RoundTrip) {
  testutil::TempDir dir("records");
  auto rs = corpus(3);
  rs[1].context = "some context";
  rs[2].greedy_answer = std::nullopt;
  rs[0].greedy_answer = "a";
  // A top-K sample alongside the dense ones.
  SampleGeneration s;
  s.answer_text = s.raw_text = "topk";
  TokenStep st;
  st.token_id = 2;
  st.logprob = -0.25;
  st.topk = TopKLogits{{2, 0}, {1.5, -0.5}};
  s.steps.push_back(st);
  s.topk_k = 2;
  rs[1].samples.push_back(s);
  const auto path = dir.path() / "g.jsonl";
  write_generation_file(path, rs);
  const auto back = load_generation_file(path);
  ASSERT_EQ(back.size(), rs.size());
  for (std::size_t i = 0; i < rs.size(); ++i) EXPECT_EQ(record_to_json(back[i]), record_to_json(rs[i]));
}

TEST(Validate, PositiveLogprob) {
  auto r = testutil::make_record("q", {"a"});
  r.samples[0].steps[0].logprob = 0.5;
  EXPECT_TRUE(has_code(validate_record(r), "POSITIVE_LOGPROB"));
}

TEST(Validate, ValidRecordHasNoIssues) { EXPECT_TRUE(validate_record(testutil::make_record("q", {"a", "b"})).empty()); }

TEST(Validate, VocabMismatch) {
  auto r = testutil::make_record("q", {"a"});
  r.samples[0].steps[1].logits = Eigen::VectorXd::Zero(3);
  EXPECT_TRUE(has_code(validate_record(r), "VOCAB_MISMATCH"));
}

TEST(Validate, OtherInvariants) {
  auto r = testutil::make_record("q", {"a", "b"});
  r.samples[1].steps.clear();
  EXPECT_TRUE(has_code(validate_record(r), "ZERO_LENGTH"));

  auto t = testutil::make_record("q", {"a"});
  t.samples[0].steps[0].logits.reset();
  t.samples[0].steps[0].topk = TopKLogits{{1, 2}, {0.0, 1.0}};
  EXPECT_TRUE(has_code(validate_record(t), "TOPK_UNSORTED"));

  auto d = corpus(2);
  d[1].prompt_id = d[0].prompt_id;
  EXPECT_TRUE(has_code(validate_corpus(d), "DUPLICATE_PROMPT_ID"));
}

TEST(Validate, DegenerateSamplesAreKept) {
  auto r = testutil::make_record("q", {"x", "The."});
  EXPECT_TRUE(validate_record(r).empty());
  EXPECT_TRUE(r.samples[1].degenerate());
  EXPECT_FALSE(r.samples[0].degenerate());
}

TEST(Split, SizesAndDeterminism) {
  const auto rs = corpus(10);
  SplitSpec spec;
  spec.counts = SplitCounts{6, 2, 2};
  spec.seed = 7;
  const auto a = split_dataset(rs, spec);
  EXPECT_EQ(a.train.size(), 6u);
  EXPECT_EQ(a.validation.size(), 2u);
  EXPECT_EQ(a.test.size(), 2u);
  const auto b = split_dataset(rs, spec);
  EXPECT_EQ(ids(a.train), ids(b.train));
  EXPECT_EQ(ids(a.validation), ids(b.validation));
  EXPECT_EQ(ids(a.test), ids(b.test));
}

TEST(Split, TooLargeCountsThrow) {
  SplitSpec spec;
  spec.counts = SplitCounts{std::nullopt, 6, 6};
  EXPECT_THROW(split_dataset(corpus(10), spec), ValidationError);
}

TEST(Split, PaperLayoutSizes) {
  // Only ids matter here, so skip the logits.
  std::vector<PromptRecord> rs(63374);
  for (std::size_t i = 0; i < rs.size(); ++i) rs[i].prompt_id = std::to_string(i);
  SplitSpec spec;
  spec.counts = SplitCounts{std::nullopt, 2000, 2000};
  const auto s = split_dataset(rs, spec);
  EXPECT_EQ(s.train.size(), 59374u);
  EXPECT_EQ(s.validation.size(), 2000u);
  EXPECT_EQ(s.test.size(), 2000u);
}

TEST(Split, PartitionProperty) {
  std::mt19937_64 gen(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + gen() % 40;
    std::vector<PromptRecord> rs(n);
    for (std::size_t i = 0; i < n; ++i) rs[i].prompt_id = "r" + std::to_string(i);
    SplitSpec spec;
    spec.seed = gen();
    if (gen() % 2) {
      const std::size_t v = gen() % (n + 1);
      const std::size_t t = gen() % (n - v + 1);
      spec.counts = SplitCounts{std::nullopt, v, t};
    } else {
      const double v = std::uniform_real_distribution<double>(0.0, 0.5)(gen);
      spec.fractions = SplitFractions{v, std::uniform_real_distribution<double>(0.0, 0.5)(gen)};
    }
    const auto s = split_dataset(rs, spec);
    std::multiset<std::string> seen;
    for (const auto* part : {&s.train, &s.validation, &s.test})
      for (const auto& r : *part) seen.insert(r.prompt_id);
    ASSERT_EQ(seen.size(), n);
    ASSERT_EQ(std::set<std::string>(seen.begin(), seen.end()).size(), n);
    // Each part keeps corpus order.
    for (const auto* part : {&s.train, &s.validation, &s.test})
      ASSERT_TRUE(std::is_sorted(part->begin(), part->end(), [](const auto& a, const auto& b) {
        return std::stoi(a.prompt_id.substr(1)) < std::stoi(b.prompt_id.substr(1));
      }));
  }
}

TEST(Split, ManifestListsIds) {
  SplitSpec spec;
  spec.counts = SplitCounts{6, 2, 2};
  spec.seed = 7;
  const auto j = split_manifest(split_dataset(corpus(10), spec), 7);
  EXPECT_EQ(j.at("seed"), 7);
  EXPECT_EQ(j.at("train").size() + j.at("validation").size() + j.at("test").size(), 10u);
}

TEST(Subsample, IdentityWhenFull) {
  const auto r = testutil::make_record("q", {"a", "b", "c", "d"});
  for (std::uint64_t seed : {0ULL, 1ULL, 12345ULL})
    EXPECT_EQ(record_to_json(subsample_generations(r, 4, seed)), record_to_json(r));
}

TEST(Subsample, FiveOfTenIsStable) {
  std::vector<std::string> answers;
  for (int i = 0; i < 10; ++i) answers.push_back("a" + std::to_string(i));
  const auto r = testutil::make_record("q", answers);
  const auto a = subsample_generations(r, 5, 42);
  const auto b = subsample_generations(r, 5, 42);
  ASSERT_EQ(a.m(), 5u);
  EXPECT_EQ(record_to_json(a), record_to_json(b));
  const auto idx = subsample_indices(r, 5, 42);
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a.samples[i].answer_text, r.samples[idx[i]].answer_text);
}

TEST(Subsample, InvalidSizes) {
  const auto r = testutil::make_record("q", {"a", "b"});
  EXPECT_THROW(subsample_generations(r, 0, 1), ValidationError);
  EXPECT_THROW(subsample_generations(r, 3, 1), ValidationError);
}
