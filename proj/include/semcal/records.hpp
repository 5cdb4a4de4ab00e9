#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace semcal {

// Truncated logits for one decoding step: the K largest entries, sorted by
// descending value.
struct TopKLogits {
  std::vector<int> ids;
  std::vector<double> values;
};

struct TokenStep {
  int token_id = 0;
  double logprob = 0.0;  // log softmax(z)_token at temperature 1
  std::optional<Eigen::VectorXd> logits;
  std::optional<TopKLogits> topk;
};

struct SampleGeneration {
  std::string raw_text;
  std::string answer_text;
  std::vector<TokenStep> steps;
  std::optional<int> topk_k;
  // Per-step feature vectors for externally trained temperature heads.
  std::optional<std::vector<Eigen::VectorXd>> hidden;

  std::size_t length() const { return steps.size(); }
  bool has_dense_logits() const;
  bool has_topk_logits() const;
  // True when the answer is empty after normalization. Such samples stay in
  // the record so m is unchanged.
  bool degenerate() const;
};

struct PromptRecord {
  std::string prompt_id;
  std::string question;
  std::optional<std::string> context;
  std::vector<std::string> gold_answers;
  std::vector<SampleGeneration> samples;
  std::optional<std::string> greedy_answer;
  double generation_temperature = 1.0;
  int vocab_size = 0;

  std::size_t m() const { return samples.size(); }
};

struct ValidationIssue {
  std::string code;  // machine readable, e.g. "POSITIVE_LOGPROB"
  std::string message;
  std::optional<std::size_t> sample;
  std::optional<std::size_t> step;
};

// Every type invariant a single record must satisfy. Empty means valid.
std::vector<ValidationIssue> validate_record(const PromptRecord& r, int dense_vocab_cap = 4096);

// Corpus-level checks on top of validate_record: unique ids, consistent vocab size.
std::vector<ValidationIssue> validate_corpus(const std::vector<PromptRecord>& records, int dense_vocab_cap = 4096);

struct ParseIssue {
  std::size_t line = 0;  // 1-based
  std::string field;
  std::string message;
};

struct ParsedCorpus {
  std::vector<PromptRecord> records;
  std::vector<ParseIssue> issues;
};

// Parses a generation JSONL file. Records come back in file order, unknown
// fields are ignored, and malformed lines are reported with their line number
// instead of aborting the whole file. Throws Error if the file is unreadable.
ParsedCorpus parse_generation_file(const std::filesystem::path& path);
ParsedCorpus parse_generation_lines(std::istream& in);

// Strict loader: throws ValidationError describing the first issue.
std::vector<PromptRecord> load_generation_file(const std::filesystem::path& path);

nlohmann::json record_to_json(const PromptRecord& r);
PromptRecord record_from_json(const nlohmann::json& j);  // throws ValidationError naming the field
void write_generation_file(const std::filesystem::path& path, const std::vector<PromptRecord>& records);

struct SplitCounts {
  std::optional<std::size_t> train;  // unset: whatever remains
  std::size_t validation = 0;
  std::size_t test = 0;
};

struct SplitFractions {
  double validation = 0.0;
  double test = 0.0;
};

struct SplitSpec {
  std::optional<SplitCounts> counts;
  std::optional<SplitFractions> fractions;
  std::uint64_t seed = 0;
};

struct DatasetSplits {
  std::vector<PromptRecord> train;
  std::vector<PromptRecord> validation;
  std::vector<PromptRecord> test;
};

// Deterministic record-level partition. Each part keeps corpus order.
DatasetSplits split_dataset(const std::vector<PromptRecord>& records, const SplitSpec& spec);

nlohmann::json split_manifest(const DatasetSplits& splits, std::uint64_t seed);

// Sorted sample indices of a uniform without-replacement subset of size m'.
std::vector<std::size_t> subsample_indices(const PromptRecord& r, std::size_t m_prime, std::uint64_t seed);

// Uniform without-replacement subset of m' samples, corpus order preserved.
PromptRecord subsample_generations(const PromptRecord& r, std::size_t m_prime, std::uint64_t seed);

}  // namespace semcal
