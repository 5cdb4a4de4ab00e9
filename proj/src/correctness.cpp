#include "semcal/correctness.hpp"

#include <algorithm>
#include <map>

#include "semcal/rng.hpp"

namespace semcal {

std::string to_string(MatchRule r) {
  switch (r) {
    case MatchRule::verbatim: return "verbatim";
    case MatchRule::fuzzy: return "fuzzy";
    case MatchRule::f1: return "f1";
    case MatchRule::date: return "date";
    case MatchRule::none: return "none";
  }
  return "none";
}

void MatchConfig::validate() const {
  if (fuzzy_threshold < 0 || fuzzy_threshold > 100) throw ValidationError("fuzzy_threshold must lie in [0, 100]");
  if (f1_threshold < 0 || f1_threshold > 100) throw ValidationError("f1_threshold must lie in [0, 100]");
  if (max_final_responses < 1) throw ValidationError("max_final_responses must be >= 1");
}

double fuzzy_score(std::string_view a, std::string_view b) {
  if (a.empty() && b.empty()) return 100.0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return 200.0 * static_cast<double>(prev[b.size()]) / static_cast<double>(a.size() + b.size());
}

double squad_f1(std::string_view pred, std::string_view gold) {
  const auto p = text::split_whitespace(pred);
  const auto g = text::split_whitespace(gold);
  if (p.empty() || g.empty()) return p.empty() && g.empty() ? 100.0 : 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : g) ++counts[t];
  std::size_t common = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common) / static_cast<double>(g.size());
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

bool date_match(const text::Date& pred, const text::Date& gold) {
  if (pred.year != gold.year) return false;
  if (gold.month && pred.month != gold.month) return false;
  if (gold.day && pred.day != gold.day) return false;
  return true;
}

std::string correctness_normal_form(std::string_view s) {
  return text::normalize_answer(text::number_words_to_digits(text::to_lower(text::first_answer_span(s))));
}

namespace {

std::optional<text::Date> response_date(std::string_view s) {
  std::string span = text::first_answer_span(s);
  while (!span.empty() && std::string_view(".!?,;:").find(span.back()) != std::string_view::npos) span.pop_back();
  return text::parse_date(span);
}

// Gold tokens appear as a contiguous run of prediction tokens.
bool contains_tokens(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > hay.size()) return false;
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

}  // namespace

CorrectnessLabel is_correct(std::string_view pred, const std::vector<std::string>& golds, const MatchConfig& cfg) {
  if (golds.empty()) throw ValidationError("correctness check needs at least one gold answer");
  CorrectnessLabel out;
  auto hit = [&](MatchRule rule, std::size_t g) {
    out.correct = true;
    out.rule = rule;
    out.matched_gold = g;
    return out;
  };

  // A (pred, gold) pair where both sides are dates is judged by the date rule
  // alone; the lexical rules only see the remaining golds.
  const auto pd = response_date(pred);
  std::vector<bool> lexical(golds.size(), true);
  if (pd) {
    for (std::size_t g = 0; g < golds.size(); ++g) {
      if (const auto gd = response_date(golds[g])) {
        lexical[g] = false;
        if (date_match(*pd, *gd)) return hit(MatchRule::date, g);
      }
    }
  }

  const std::string p = correctness_normal_form(pred);
  std::vector<std::string> gs;
  gs.reserve(golds.size());
  for (const auto& g : golds) gs.push_back(correctness_normal_form(g));

  const auto ptoks = text::split_whitespace(p);
  for (std::size_t g = 0; g < gs.size(); ++g)
    if (lexical[g] && contains_tokens(ptoks, text::split_whitespace(gs[g]))) return hit(MatchRule::verbatim, g);

  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t g = 0; g < gs.size(); ++g) {
    if (!lexical[g]) continue;
    const double s = fuzzy_score(p, gs[g]);
    if (s > best_score) best_score = s, best = g;
  }
  if (best_score >= cfg.fuzzy_threshold) return hit(MatchRule::fuzzy, best);

  best_score = -1.0;
  for (std::size_t g = 0; g < gs.size(); ++g) {
    if (!lexical[g]) continue;
    const double s = squad_f1(p, gs[g]);
    if (s > best_score) best_score = s, best = g;
  }
  if (best_score > cfg.f1_threshold) return hit(MatchRule::f1, best);
  return out;
}

FinalResponse select_final_response(const PromptRecord& record, const ClusterSet& clusters,
                                    const SemanticDistributiond& dist, const MatchConfig& cfg) {
  cfg.validate();
  if (static_cast<std::size_t>(dist.log_probs.size()) != clusters.k)
    throw ValidationError("distribution and clustering disagree on the number of clusters for " + record.prompt_id);
  FinalResponse out;
  out.cluster = top_cluster(dist);
  const auto members = clusters.members()[out.cluster];
  const std::size_t take = std::min(members.size(), cfg.max_final_responses);
  Rng rng(derive_seed(cfg.seed, {"final_response", record.prompt_id}));
  for (std::size_t idx : rng.sample_without_replacement(members.size(), take)) out.samples.push_back(members[idx]);
  std::sort(out.samples.begin(), out.samples.end());
  return out;
}

CorrectnessLabel label_conf(const PromptRecord& record, const ClusterSet& clusters, const SemanticDistributiond& dist,
                            const MatchConfig& cfg) {
  const FinalResponse fr = select_final_response(record, clusters, dist, cfg);
  CorrectnessLabel out;
  for (std::size_t s : fr.samples) {
    CorrectnessLabel l = is_correct(record.samples.at(s).answer_text, record.gold_answers, cfg);
    if (l.correct && !out.correct) out = l;
  }
  out.sampled_responses = fr.samples;
  return out;
}

CorrectnessLabel label_vanilla(const PromptRecord& record, const MatchConfig& cfg) {
  if (!record.greedy_answer)
    throw ValidationError("MISSING_GREEDY: record " + record.prompt_id + " has no greedy answer");
  return is_correct(*record.greedy_answer, record.gold_answers, cfg);
}

nlohmann::json label_to_json(const std::string& prompt_id, const std::string& measure, const std::string& protocol,
                             const CorrectnessLabel& label) {
  return nlohmann::json{{"prompt_id", prompt_id},
                        {"measure", measure},
                        {"protocol", protocol},
                        {"correct", label.correct},
                        {"rule", to_string(label.rule)},
                        {"responses_checked", label.sampled_responses}};
}

}  // namespace semcal
