#include <gtest/gtest.h>

#include <random>
#include <set>

#include "semcal/correctness.hpp"
#include "semcal/error.hpp"
#include "test_util.hpp"

using namespace semcal;

namespace {

const MatchConfig kCfg;

SemanticDistributiond dist_of(std::initializer_list<double> probs) {
  SemanticDistributiond d;
  d.log_probs.resize(static_cast<Eigen::Index>(probs.size()));
  Eigen::Index i = 0;
  for (double p : probs) d.log_probs(i++) = std::log(p);
  return d;
}

std::string random_word(std::mt19937_64& gen) {
  const std::size_t n = 1 + gen() % 8;
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<char>('a' + gen() % 6);
  return s;
}

}  // namespace

TEST(Fuzzy, Examples) {
  EXPECT_NEAR(fuzzy_score("colour", "color"), 100.0 * (1 - 1.0 / 11), 1e-12);
  EXPECT_NEAR(fuzzy_score("colour", "color"), 90.9, 0.01);
  EXPECT_EQ(fuzzy_score("venice", "venice"), 100.0);
  EXPECT_EQ(fuzzy_score("a", "b"), 0.0);
  EXPECT_EQ(fuzzy_score("", ""), 100.0);
}

TEST(Fuzzy, Symmetric) {
  std::mt19937_64 gen(1);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_word(gen), b = random_word(gen);
    ASSERT_EQ(fuzzy_score(a, b), fuzzy_score(b, a));
    ASSERT_EQ(fuzzy_score(a, b) == 100.0, a == b);
  }
}

TEST(SquadF1, Examples) {
  EXPECT_NEAR(squad_f1("mt everest", "mount everest"), 50.0, 1e-12);
  EXPECT_EQ(squad_f1("merchant of venice", "merchant of venice"), 100.0);
  EXPECT_EQ(squad_f1("paris", "london"), 0.0);
  EXPECT_EQ(squad_f1("", "x"), 0.0);
  EXPECT_EQ(squad_f1("", ""), 100.0);
}

TEST(DateMatch, Examples) {
  using text::Date;
  EXPECT_TRUE(date_match(Date{1988, 12, 19}, Date{1988, std::nullopt, std::nullopt}));
  EXPECT_FALSE(date_match(Date{1988, 12, 20}, Date{1988, 12, 19}));
  EXPECT_FALSE(date_match(Date{1989, 1, 1}, Date{1988, std::nullopt, std::nullopt}));
  EXPECT_TRUE(date_match(Date{1988, 12, 20}, Date{1988, 12, std::nullopt}));
  EXPECT_FALSE(date_match(Date{1988, std::nullopt, std::nullopt}, Date{1988, 12, 20}));
}

TEST(Cascade, Goldens) {
  const auto shylock = is_correct("Shylock in Merchant of Venice", {"Shylock"}, kCfg);
  EXPECT_TRUE(shylock.correct);
  EXPECT_EQ(shylock.rule, MatchRule::verbatim);
  EXPECT_EQ(shylock.matched_gold, 0u);

  const auto colour = is_correct("colour", {"color"}, kCfg);
  EXPECT_TRUE(colour.correct);
  EXPECT_EQ(colour.rule, MatchRule::fuzzy);

  const auto everest = is_correct("mt everest", {"mount everest"}, kCfg);
  EXPECT_FALSE(everest.correct);
  EXPECT_EQ(everest.rule, MatchRule::none);
  EXPECT_FALSE(everest.matched_gold.has_value());

  const auto year = is_correct("19th December 1988", {"1988"}, kCfg);
  EXPECT_TRUE(year.correct);
  EXPECT_EQ(year.rule, MatchRule::date);
  EXPECT_FALSE(is_correct("19/12/1988", {"20th December 1988"}, kCfg).correct);

  const auto twenty = is_correct("twenty", {"20"}, kCfg);
  EXPECT_TRUE(twenty.correct);
  EXPECT_EQ(twenty.rule, MatchRule::verbatim);
}

TEST(Cascade, VerbatimRespectsTokenBoundaries) {
  EXPECT_FALSE(is_correct("scandinavia", {"scan"}, kCfg).correct);
  EXPECT_TRUE(is_correct("It was Paris.", {"paris"}, kCfg).correct);
  EXPECT_FALSE(is_correct("Jessica", {"Shylock"}, kCfg).correct);
}

TEST(Cascade, ThresholdsAreConfigurable) {
  MatchConfig loose;
  loose.f1_threshold = 49.0;
  EXPECT_TRUE(is_correct("mt everest", {"mount everest"}, loose).correct);
  MatchConfig strict;
  strict.fuzzy_threshold = 95.0;
  EXPECT_FALSE(is_correct("colour", {"color"}, strict).correct);
  MatchConfig bad;
  bad.fuzzy_threshold = 120;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = MatchConfig{};
  bad.max_final_responses = 0;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Cascade, ReflexiveAndMonotone) {
  std::mt19937_64 gen(2);
  for (int i = 0; i < 1000; ++i) {
    const std::string x = random_word(gen) + " " + random_word(gen);
    ASSERT_TRUE(is_correct(x, {x}, kCfg).correct) << x;
    const std::string pred = random_word(gen);
    std::vector<std::string> golds = {random_word(gen)};
    const bool before = is_correct(pred, golds, kCfg).correct;
    golds.push_back(random_word(gen));
    if (before) ASSERT_TRUE(is_correct(pred, golds, kCfg).correct);
  }
  EXPECT_THROW(is_correct("x", {}, kCfg), ValidationError);
}

TEST(Cascade, LabelInvariant) {
  for (const auto& [pred, gold] : std::vector<std::pair<std::string, std::string>>{
           {"a", "a"}, {"a", "b"}, {"colour", "color"}, {"mt everest", "mount everest"}, {"1988", "1988"}}) {
    const auto l = is_correct(pred, {gold}, kCfg);
    EXPECT_EQ(l.correct, l.rule != MatchRule::none);
  }
}

TEST(FinalResponse, SmallTopClusterTakesAll) {
  const auto r = testutil::make_record("p", {"a", "b", "a", "c"});
  const auto c = cluster_set_from_labels({0, 1, 0, 2});
  const auto f = select_final_response(r, c, dist_of({0.6, 0.3, 0.1}), kCfg);
  EXPECT_EQ(f.cluster, 0u);
  EXPECT_EQ(f.samples, (std::vector<std::size_t>{0, 2}));
}

TEST(FinalResponse, LargeTopClusterIsCappedAndStable) {
  std::vector<std::string> answers(10, "x");
  const auto r = testutil::make_record("p", answers);
  const auto c = cluster_set_from_labels(std::vector<int>(10, 0));
  const auto f = select_final_response(r, c, dist_of({1.0}), kCfg);
  EXPECT_EQ(f.cluster, 0u);
  ASSERT_EQ(f.samples.size(), 4u);
  EXPECT_EQ(std::set<std::size_t>(f.samples.begin(), f.samples.end()).size(), 4u);
  EXPECT_EQ(select_final_response(r, c, dist_of({1.0}), kCfg).samples, f.samples);
  // The draw depends on the seed and the prompt, not on call order.
  std::set<std::vector<std::size_t>> draws;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    MatchConfig cfg;
    cfg.seed = seed;
    draws.insert(select_final_response(r, c, dist_of({1.0}), cfg).samples);
  }
  EXPECT_GT(draws.size(), 1u);
}

TEST(FinalResponse, PicksTopCluster) {
  const auto r = testutil::make_record("p", {"a", "b", "b"});
  const auto c = cluster_set_from_labels({0, 1, 1});
  EXPECT_EQ(select_final_response(r, c, dist_of({0.2, 0.8}), kCfg).cluster, 1u);
  EXPECT_EQ(select_final_response(r, c, dist_of({0.5, 0.5}), kCfg).cluster, 0u);
}

TEST(LabelConf, Disjunction) {
  auto r = testutil::make_record("p", {"london", "rome", "paris", "oslo", "lima"});
  r.gold_answers = {"paris"};
  const auto one = cluster_set_from_labels({0, 0, 0, 0, 1});
  const auto l = label_conf(r, one, dist_of({0.9, 0.1}), kCfg);
  EXPECT_TRUE(l.correct);
  EXPECT_EQ(l.sampled_responses, (std::vector<std::size_t>{0, 1, 2, 3}));
  r.gold_answers = {"madrid"};
  EXPECT_FALSE(label_conf(r, one, dist_of({0.9, 0.1}), kCfg).correct);
}

TEST(LabelConf, IdenticalMembersEqualSingleCheck) {
  auto r = testutil::make_record("p", {"Shylock", "Shylock", "Shylock"});
  r.gold_answers = {"shylock"};
  const auto c = cluster_set_from_labels({0, 0, 0});
  const auto l = label_conf(r, c, dist_of({1.0}), kCfg);
  const auto single = is_correct("Shylock", r.gold_answers, kCfg);
  EXPECT_EQ(l.correct, single.correct);
  EXPECT_EQ(l.rule, single.rule);
}

TEST(LabelVanilla, Examples) {
  auto r = testutil::make_record("p", {"x"});
  r.gold_answers = {"Shylock"};
  r.greedy_answer = "Shylock";
  EXPECT_TRUE(label_vanilla(r, kCfg).correct);
  r.greedy_answer = "Jessica";
  EXPECT_FALSE(label_vanilla(r, kCfg).correct);
  r.greedy_answer.reset();
  try {
    label_vanilla(r, kCfg);
    FAIL() << "expected MISSING_GREEDY";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("MISSING_GREEDY"), std::string::npos);
  }
}

TEST(LabelJson, Schema) {
  CorrectnessLabel l{true, MatchRule::fuzzy, 0, {1, 3}};
  const auto j = label_to_json("p", "L-SC", "conf", l);
  EXPECT_EQ(j.at("prompt_id"), "p");
  EXPECT_EQ(j.at("measure"), "L-SC");
  EXPECT_EQ(j.at("protocol"), "conf");
  EXPECT_EQ(j.at("correct"), true);
  EXPECT_EQ(j.at("rule"), "fuzzy");
  EXPECT_EQ(j.at("responses_checked"), (std::vector<std::size_t>{1, 3}));
}
