#include "semcal/measures.hpp"

namespace semcal {

std::string to_string(Measure m) {
  switch (m) {
    case Measure::esc:
      return "E-SC";
    case Measure::lsc:
      return "L-SC";
    case Measure::mlsc:
      return "ML-SC";
    case Measure::bsc:
      return "B-SC";
    case Measure::tsc:
      return "T-SC";
    case Measure::icsc:
      return "IC-SC";
    case Measure::gsc:
      return "G-SC";
  }
  return "?";
}

Measure measure_from_string(const std::string& s) {
  for (Measure m : all_measures())
    if (to_string(m) == s) return m;
  throw ValidationError("unknown measure '" + s + "'");
}

bool measure_uses_alpha(Measure m) { return m == Measure::tsc || m == Measure::gsc; }

const std::vector<Measure>& all_measures() {
  static const std::vector<Measure> all = {Measure::esc, Measure::lsc,  Measure::mlsc, Measure::bsc,
                                           Measure::tsc, Measure::icsc, Measure::gsc};
  return all;
}

double length_normalized_loglik(const SampleGeneration& sample) {
  if (sample.steps.empty()) throw ValidationError("zero-length sample has no length-normalized likelihood");
  double sum = 0.0;
  for (const auto& s : sample.steps) sum += s.logprob;
  return sum / static_cast<double>(sample.steps.size());
}

Eigen::VectorXd stored_logliks(const PromptRecord& record) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(record.m()));
  for (std::size_t i = 0; i < record.m(); ++i)
    out(static_cast<Eigen::Index>(i)) = length_normalized_loglik(record.samples[i]);
  return out;
}

nlohmann::json measure_record_json(const std::string& prompt_id, const SemanticDistributiond& d) {
  nlohmann::json probs = nlohmann::json::array();
  const Eigen::VectorXd p = d.probs();
  for (Eigen::Index i = 0; i < p.size(); ++i) probs.push_back(p(i));
  return nlohmann::json{{"prompt_id", prompt_id},
                        {"measure", to_string(d.measure)},
                        {"alpha", d.alpha ? nlohmann::json(*d.alpha) : nlohmann::json(nullptr)},
                        {"cluster_probs", probs},
                        {"entropy", semantic_entropy(d)},
                        {"top_cluster", top_cluster(d)}};
}

}  // namespace semcal
