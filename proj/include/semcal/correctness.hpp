#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "semcal/entailment.hpp"
#include "semcal/measures.hpp"
#include "semcal/records.hpp"
#include "semcal/text.hpp"

namespace semcal {

enum class MatchRule { verbatim, fuzzy, f1, date, none };

std::string to_string(MatchRule r);

struct MatchConfig {
  double fuzzy_threshold = 90.0;  // inclusive
  double f1_threshold = 50.0;     // strict
  std::size_t max_final_responses = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CorrectnessLabel {
  bool correct = false;
  MatchRule rule = MatchRule::none;
  std::optional<std::size_t> matched_gold;
  std::vector<std::size_t> sampled_responses;
};

// Normalized indel similarity on a 0-100 scale: 200·LCS / (|a| + |b|).
double fuzzy_score(std::string_view a, std::string_view b);

// SQuAD token-bag F1 on a 0-100 scale.
double squad_f1(std::string_view pred, std::string_view gold);

// Compares at the gold's granularity only.
bool date_match(const text::Date& pred, const text::Date& gold);

// Text used by the lexical rules: normalized answer with number words
// turned into digits.
std::string correctness_normal_form(std::string_view s);

// Cascade over raw response text: date match when both sides parse as
// dates, else token-aligned verbatim containment, fuzzy, then F1.
CorrectnessLabel is_correct(std::string_view pred, const std::vector<std::string>& golds, const MatchConfig& cfg);

struct FinalResponse {
  std::size_t cluster = 0;
  std::vector<std::size_t> samples;  // ascending
};

// Top cluster of `dist`, then up to max_final_responses of its members drawn
// without replacement with a seed derived from (cfg.seed, prompt_id).
FinalResponse select_final_response(const PromptRecord& record, const ClusterSet& clusters,
                                    const SemanticDistributiond& dist, const MatchConfig& cfg);

// Correct iff any selected response is correct.
CorrectnessLabel label_conf(const PromptRecord& record, const ClusterSet& clusters, const SemanticDistributiond& dist,
                            const MatchConfig& cfg);

// Correctness of the greedy answer. Throws ValidationError with code
// MISSING_GREEDY when the record has none.
CorrectnessLabel label_vanilla(const PromptRecord& record, const MatchConfig& cfg);

nlohmann::json label_to_json(const std::string& prompt_id, const std::string& measure, const std::string& protocol,
                             const CorrectnessLabel& label);

}  // namespace semcal
