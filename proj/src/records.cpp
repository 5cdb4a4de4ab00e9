#include "semcal/records.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "semcal/error.hpp"
#include "semcal/rng.hpp"
#include "semcal/text.hpp"

namespace semcal {

using nlohmann::json;

bool SampleGeneration::has_dense_logits() const {
  return !steps.empty() &&
         std::all_of(steps.begin(), steps.end(), [](const TokenStep& s) { return s.logits.has_value(); });
}

bool SampleGeneration::has_topk_logits() const {
  return !steps.empty() &&
         std::all_of(steps.begin(), steps.end(), [](const TokenStep& s) { return s.topk.has_value(); });
}

bool SampleGeneration::degenerate() const { return text::normalize_answer(answer_text).empty(); }

namespace {

ValidationIssue issue(std::string code, std::string message, std::optional<std::size_t> sample = {},
                      std::optional<std::size_t> step = {}) {
  return ValidationIssue{std::move(code), std::move(message), sample, step};
}

}  // namespace

std::vector<ValidationIssue> validate_record(const PromptRecord& r, int dense_vocab_cap) {
  std::vector<ValidationIssue> out;
  if (r.prompt_id.empty()) out.push_back(issue("EMPTY_PROMPT_ID", "prompt_id is empty"));
  if (r.gold_answers.empty()) out.push_back(issue("EMPTY_GOLD", "gold_answers is empty"));
  if (r.samples.empty()) out.push_back(issue("EMPTY_SAMPLES", "record has no samples (m = 0)"));
  if (!(r.generation_temperature > 0.0))
    out.push_back(issue("BAD_TEMPERATURE", "generation_temperature must be > 0"));
  const int V = r.vocab_size;

  for (std::size_t si = 0; si < r.samples.size(); ++si) {
    const auto& s = r.samples[si];
    if (s.steps.empty()) out.push_back(issue("ZERO_LENGTH", "sample has no token steps", si));
    if (s.hidden && s.hidden->size() != s.steps.size())
      out.push_back(issue("HIDDEN_LENGTH", "hidden feature rows differ from step count", si));
    for (std::size_t t = 0; t < s.steps.size(); ++t) {
      const auto& st = s.steps[t];
      if (!std::isfinite(st.logprob)) {
        out.push_back(issue("NONFINITE_LOGPROB", "logprob is not finite", si, t));
      } else if (st.logprob > 0.0) {
        out.push_back(issue("POSITIVE_LOGPROB", "logprob " + std::to_string(st.logprob) + " > 0", si, t));
      }
      if (st.token_id < 0 || (V > 0 && st.token_id >= V))
        out.push_back(issue("TOKEN_OUT_OF_RANGE", "token id outside [0, vocab_size)", si, t));
      if (st.logits) {
        if (st.logits->size() != V) {
          out.push_back(issue("VOCAB_MISMATCH",
                              "dense logits length " + std::to_string(st.logits->size()) +
                                  " != vocab_size " + std::to_string(V),
                              si, t));
        } else if (V > dense_vocab_cap) {
          out.push_back(issue("DENSE_OVER_CAP", "dense logits above the configured vocab cap", si, t));
        }
        if (!st.logits->allFinite()) out.push_back(issue("NONFINITE_LOGIT", "dense logits not finite", si, t));
      }
      if (st.topk) {
        const auto& tk = *st.topk;
        if (tk.ids.size() != tk.values.size() || (s.topk_k && tk.ids.size() > static_cast<std::size_t>(*s.topk_k))) {
          out.push_back(issue("TOPK_SIZE", "top-k ids/values sizes disagree or exceed k", si, t));
          continue;
        }
        std::unordered_set<int> seen;
        for (std::size_t q = 0; q < tk.ids.size(); ++q) {
          if (!seen.insert(tk.ids[q]).second) {
            out.push_back(issue("TOPK_DUPLICATE", "top-k ids are not distinct", si, t));
            break;
          }
        }
        for (std::size_t q = 1; q < tk.values.size(); ++q) {
          if (tk.values[q] > tk.values[q - 1]) {
            out.push_back(issue("TOPK_UNSORTED", "top-k values not in descending order", si, t));
            break;
          }
        }
        if (!st.logits && !seen.contains(st.token_id))
          out.push_back(issue("TARGET_NOT_IN_LOGITS", "realized token missing from stored top-k", si, t));
      }
    }
  }
  return out;
}

std::vector<ValidationIssue> validate_corpus(const std::vector<PromptRecord>& records, int dense_vocab_cap) {
  std::vector<ValidationIssue> out;
  std::unordered_set<std::string> ids;
  std::optional<int> vocab;
  for (const auto& r : records) {
    for (auto& i : validate_record(r, dense_vocab_cap)) {
      i.message = r.prompt_id + ": " + i.message;
      out.push_back(std::move(i));
    }
    if (!ids.insert(r.prompt_id).second)
      out.push_back(issue("DUPLICATE_PROMPT_ID", "duplicate prompt_id " + r.prompt_id));
    if (vocab && *vocab != r.vocab_size)
      out.push_back(issue("VOCAB_DISAGREEMENT", r.prompt_id + ": vocab_size differs from earlier records"));
    vocab = vocab.value_or(r.vocab_size);
  }
  return out;
}

namespace {

// Raised while decoding one line; carries the offending field path.
struct FieldError {
  std::string field;
  std::string message;
};

const json& require(const json& j, const char* key, const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) throw FieldError{path + key, "missing required field"};
  return *it;
}

std::string get_string(const json& j, const char* key, const std::string& path) {
  const auto& v = require(j, key, path);
  if (!v.is_string()) throw FieldError{path + key, "expected string"};
  return v.get<std::string>();
}

std::optional<std::string> get_opt_string(const json& j, const char* key, const std::string& path) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw FieldError{path + key, "expected string or null"};
  return it->get<std::string>();
}

double as_double(const json& v, const std::string& field) {
  if (!v.is_number()) throw FieldError{field, "expected number"};
  return v.get<double>();
}

int as_int(const json& v, const std::string& field) {
  if (!v.is_number_integer()) throw FieldError{field, "expected integer"};
  return v.get<int>();
}

const json& as_array(const json& v, const std::string& field) {
  if (!v.is_array()) throw FieldError{field, "expected array"};
  return v;
}

Eigen::VectorXd as_vector(const json& v, const std::string& field) {
  as_array(v, field);
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = as_double(v[i], field);
  return out;
}

SampleGeneration sample_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw FieldError{path, "expected object"};
  SampleGeneration s;
  s.raw_text = get_string(j, "raw_text", path);
  s.answer_text = get_string(j, "answer_text", path);
  const auto& ids = as_array(require(j, "token_ids", path), path + "token_ids");
  const auto& lps = as_array(require(j, "token_logprobs", path), path + "token_logprobs");
  if (ids.size() != lps.size()) throw FieldError{path + "token_logprobs", "length differs from token_ids"};
  s.steps.resize(ids.size());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    s.steps[t].token_id = as_int(ids[t], path + "token_ids");
    s.steps[t].logprob = as_double(lps[t], path + "token_logprobs");
  }
  if (auto it = j.find("logits"); it != j.end() && !it->is_null()) {
    as_array(*it, path + "logits");
    if (it->size() != s.steps.size()) throw FieldError{path + "logits", "row count differs from token count"};
    for (std::size_t t = 0; t < it->size(); ++t) s.steps[t].logits = as_vector((*it)[t], path + "logits");
  }
  if (auto it = j.find("topk"); it != j.end() && !it->is_null()) {
    const std::string tp = path + "topk.";
    s.topk_k = as_int(require(*it, "k", tp), tp + "k");
    const auto& tids = as_array(require(*it, "ids", tp), tp + "ids");
    const auto& tvals = as_array(require(*it, "values", tp), tp + "values");
    if (tids.size() != s.steps.size() || tvals.size() != s.steps.size())
      throw FieldError{tp + "ids", "row count differs from token count"};
    for (std::size_t t = 0; t < s.steps.size(); ++t) {
      TopKLogits tk;
      for (const auto& v : as_array(tids[t], tp + "ids")) tk.ids.push_back(as_int(v, tp + "ids"));
      for (const auto& v : as_array(tvals[t], tp + "values")) tk.values.push_back(as_double(v, tp + "values"));
      s.steps[t].topk = std::move(tk);
    }
  }
  if (auto it = j.find("hidden"); it != j.end() && !it->is_null()) {
    std::vector<Eigen::VectorXd> rows;
    for (const auto& row : as_array(*it, path + "hidden")) rows.push_back(as_vector(row, path + "hidden"));
    s.hidden = std::move(rows);
  }
  return s;
}

PromptRecord decode_record(const json& j) {
  if (!j.is_object()) throw FieldError{"", "line is not a JSON object"};
  PromptRecord r;
  r.prompt_id = get_string(j, "prompt_id", "");
  r.question = get_string(j, "question", "");
  r.context = get_opt_string(j, "context", "");
  const auto& golds = as_array(require(j, "gold_answers", ""), "gold_answers");
  if (golds.empty()) throw FieldError{"gold_answers", "must be nonempty"};
  for (const auto& g : golds) {
    if (!g.is_string()) throw FieldError{"gold_answers", "expected strings"};
    r.gold_answers.push_back(g.get<std::string>());
  }
  r.greedy_answer = get_opt_string(j, "greedy_answer", "");
  r.generation_temperature = as_double(require(j, "generation_temperature", ""), "generation_temperature");
  r.vocab_size = as_int(require(j, "vocab_size", ""), "vocab_size");
  const auto& samples = as_array(require(j, "samples", ""), "samples");
  for (std::size_t i = 0; i < samples.size(); ++i)
    r.samples.push_back(sample_from_json(samples[i], "samples[" + std::to_string(i) + "]."));
  return r;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

}  // namespace

PromptRecord record_from_json(const json& j) {
  try {
    return decode_record(j);
  } catch (const FieldError& e) {
    throw ValidationError("field '" + e.field + "': " + e.message);
  }
}

json record_to_json(const PromptRecord& r) {
  json j;
  j["prompt_id"] = r.prompt_id;
  j["question"] = r.question;
  j["context"] = r.context ? json(*r.context) : json(nullptr);
  j["gold_answers"] = r.gold_answers;
  j["greedy_answer"] = r.greedy_answer ? json(*r.greedy_answer) : json(nullptr);
  j["generation_temperature"] = r.generation_temperature;
  j["vocab_size"] = r.vocab_size;
  json samples = json::array();
  for (const auto& s : r.samples) {
    json js;
    js["raw_text"] = s.raw_text;
    js["answer_text"] = s.answer_text;
    json ids = json::array(), lps = json::array();
    for (const auto& st : s.steps) {
      ids.push_back(st.token_id);
      lps.push_back(st.logprob);
    }
    js["token_ids"] = std::move(ids);
    js["token_logprobs"] = std::move(lps);
    if (s.has_dense_logits()) {
      json rows = json::array();
      for (const auto& st : s.steps) rows.push_back(vector_to_json(*st.logits));
      js["logits"] = std::move(rows);
    } else {
      js["logits"] = nullptr;
    }
    if (s.has_topk_logits()) {
      json tk;
      tk["k"] = s.topk_k.value_or(0);
      json tids = json::array(), tvals = json::array();
      for (const auto& st : s.steps) {
        tids.push_back(st.topk->ids);
        tvals.push_back(st.topk->values);
      }
      tk["ids"] = std::move(tids);
      tk["values"] = std::move(tvals);
      js["topk"] = std::move(tk);
    } else {
      js["topk"] = nullptr;
    }
    if (s.hidden) {
      json rows = json::array();
      for (const auto& h : *s.hidden) rows.push_back(vector_to_json(h));
      js["hidden"] = std::move(rows);
    } else {
      js["hidden"] = nullptr;
    }
    samples.push_back(std::move(js));
  }
  j["samples"] = std::move(samples);
  return j;
}

ParsedCorpus parse_generation_lines(std::istream& in) {
  ParsedCorpus out;
  std::string line;
  std::size_t lineno = 0;
  std::optional<int> vocab;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      out.issues.push_back({lineno, "", std::string("invalid JSON: ") + e.what()});
      continue;
    }
    try {
      PromptRecord r = decode_record(j);
      if (vocab && *vocab != r.vocab_size) {
        out.issues.push_back({lineno, "vocab_size",
                              "vocab_size " + std::to_string(r.vocab_size) + " disagrees with earlier records (" +
                                  std::to_string(*vocab) + ")"});
        continue;
      }
      vocab = r.vocab_size;
      out.records.push_back(std::move(r));
    } catch (const FieldError& e) {
      out.issues.push_back({lineno, e.field, e.message});
    }
  }
  return out;
}

ParsedCorpus parse_generation_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read generation file " + path.string());
  return parse_generation_lines(in);
}

std::vector<PromptRecord> load_generation_file(const std::filesystem::path& path) {
  auto parsed = parse_generation_file(path);
  if (!parsed.issues.empty()) {
    const auto& i = parsed.issues.front();
    throw ValidationError(path.string() + ":" + std::to_string(i.line) + ": field '" + i.field + "': " + i.message);
  }
  return std::move(parsed.records);
}

void write_generation_file(const std::filesystem::path& path, const std::vector<PromptRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

DatasetSplits split_dataset(const std::vector<PromptRecord>& records, const SplitSpec& spec) {
  const std::size_t n = records.size();
  std::size_t n_val = 0, n_test = 0, n_train = 0;
  if (spec.counts) {
    n_val = spec.counts->validation;
    n_test = spec.counts->test;
    if (n_val + n_test > n) throw ValidationError("split counts exceed corpus size");
    n_train = spec.counts->train.value_or(n - n_val - n_test);
    if (n_train + n_val + n_test != n)
      throw ValidationError("split counts (" + std::to_string(n_train) + "," + std::to_string(n_val) + "," +
                            std::to_string(n_test) + ") do not cover the corpus of " + std::to_string(n));
  } else {
    const double fv = spec.fractions ? spec.fractions->validation : 0.0;
    const double ft = spec.fractions ? spec.fractions->test : 0.0;
    if (fv < 0 || ft < 0 || fv + ft > 1.0) throw ValidationError("split fractions must be in [0,1] and sum <= 1");
    n_val = static_cast<std::size_t>(std::floor(fv * static_cast<double>(n)));
    n_test = static_cast<std::size_t>(std::floor(ft * static_cast<double>(n)));
    n_train = n - n_val - n_test;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(spec.seed);
  rng.shuffle(order);

  std::vector<int> part(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    part[order[i]] = i < n_val ? 1 : (i < n_val + n_test ? 2 : 0);
  }
  DatasetSplits out;
  for (std::size_t i = 0; i < n; ++i) {
    (part[i] == 0 ? out.train : part[i] == 1 ? out.validation : out.test).push_back(records[i]);
  }
  return out;
}

json split_manifest(const DatasetSplits& splits, std::uint64_t seed) {
  auto ids = [](const std::vector<PromptRecord>& rs) {
    json a = json::array();
    for (const auto& r : rs) a.push_back(r.prompt_id);
    return a;
  };
  return json{{"seed", seed},
              {"train", ids(splits.train)},
              {"validation", ids(splits.validation)},
              {"test", ids(splits.test)}};
}

std::vector<std::size_t> subsample_indices(const PromptRecord& r, std::size_t m_prime, std::uint64_t seed) {
  if (m_prime == 0) throw ValidationError("subsample size must be >= 1");
  if (m_prime > r.m())
    throw ValidationError("subsample size " + std::to_string(m_prime) + " exceeds m = " + std::to_string(r.m()) +
                          " for " + r.prompt_id);
  if (m_prime == r.m()) {
    std::vector<std::size_t> all(r.m());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  Rng rng(derive_seed(seed, {"subsample", r.prompt_id}));
  return rng.sample_without_replacement(r.m(), m_prime);
}

PromptRecord subsample_generations(const PromptRecord& r, std::size_t m_prime, std::uint64_t seed) {
  const auto idx = subsample_indices(r, m_prime, seed);
  if (idx.size() == r.m()) return r;
  PromptRecord out = r;
  out.samples.clear();
  for (auto i : idx) out.samples.push_back(r.samples[i]);
  return out;
}

}  // namespace semcal
