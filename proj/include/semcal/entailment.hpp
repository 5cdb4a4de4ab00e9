#pragma once

#include <array>
#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "semcal/records.hpp"

namespace semcal {

enum class NliLabel { entailment, neutral, contradiction };

std::string to_string(NliLabel label);
NliLabel nli_label_from_string(const std::string& s);  // throws ValidationError

// One directed NLI judgement. probs is (entailment, neutral, contradiction).
struct DirectedVerdict {
  NliLabel label = NliLabel::contradiction;
  std::optional<std::array<double, 3>> probs;

  bool entails() const { return label == NliLabel::entailment; }
  friend bool operator==(const DirectedVerdict&, const DirectedVerdict&) = default;
};

struct EntailmentVerdict {
  DirectedVerdict forward;   // answer i entails answer j
  DirectedVerdict backward;  // answer j entails answer i

  bool bidirectional() const { return forward.entails() && backward.entails(); }
  friend bool operator==(const EntailmentVerdict&, const EntailmentVerdict&) = default;
};

// Partition of a record's samples into semantic clusters. Cluster ids follow
// creation order; each cluster's representative is its lowest-index member.
struct ClusterSet {
  std::size_t k = 0;
  std::vector<int> assignment;               // sample index -> cluster id
  std::vector<std::size_t> representative;   // cluster id -> sample index
  std::size_t oracle_queries = 0;            // verdicts requested from the source

  std::size_t m() const { return assignment.size(); }
  std::vector<std::size_t> sizes() const;
  std::vector<std::vector<std::size_t>> members() const;

  friend bool operator==(const ClusterSet& a, const ClusterSet& b) {
    return a.k == b.k && a.assignment == b.assignment && a.representative == b.representative;
  }
};

// Builds a ClusterSet from an arbitrary labelling; cluster ids are renumbered
// in order of first appearance.
ClusterSet cluster_set_from_labels(const std::vector<int>& labels);

nlohmann::json cluster_set_to_json(const std::string& prompt_id, const ClusterSet& c);
ClusterSet cluster_set_from_json(const nlohmann::json& j);

// Lowercases, collapses whitespace, turns number words into digits and whole
// dates into ISO-8601 so formatting differences do not split clusters.
std::string canonicalize_for_clustering(std::string_view text);

// Pair of samples of one prompt, i < j. `a` and `b` are the canonicalized
// answers of samples i and j.
struct PairQuery {
  std::string prompt_id;
  std::size_t i = 0;
  std::size_t j = 0;
  std::string question;
  std::string a;
  std::string b;
};

class EntailmentSource {
 public:
  virtual ~EntailmentSource() = default;
  virtual EntailmentVerdict verdict(const PairQuery& q) = 0;
};

// NLI input convention: premise = question + " " + answer_a,
// hypothesis = question + " " + answer_b.
struct NliPair {
  std::string premise;
  std::string hypothesis;
};

NliPair make_nli_pair(const std::string& question, const std::string& a, const std::string& b);

// Client side of the NLI HTTP protocol.
class NliClient {
 public:
  virtual ~NliClient() = default;
  virtual std::vector<DirectedVerdict> entail_batch(const std::vector<NliPair>& pairs) = 0;
  DirectedVerdict entail(const NliPair& pair) { return entail_batch({pair}).at(0); }
};

struct RemoteEndpoint {
  std::string base_url;  // e.g. http://127.0.0.1:8080
  double timeout_seconds = 30.0;
  int max_in_flight = 4;
  int retry_budget = 3;
};

// Talks to POST /v1/entail_batch. Retries transport errors, 429 and 5xx
// responses up to the retry budget and bounds concurrent requests.
std::unique_ptr<NliClient> make_http_nli_client(const RemoteEndpoint& endpoint);

// Parses a /v1/entail or /v1/entail_batch result object.
DirectedVerdict directed_verdict_from_json(const nlohmann::json& j);
nlohmann::json directed_verdict_to_json(const DirectedVerdict& v);

using PairKey = std::tuple<std::string, std::size_t, std::size_t>;

// In-memory verdict store keyed by (prompt_id, i, j) with i < j. Thread safe.
class VerdictCache {
 public:
  struct LoadReport {
    std::size_t loaded = 0;
    std::vector<std::pair<std::size_t, std::string>> corrupt;  // (line, reason)
  };

  static std::shared_ptr<VerdictCache> load(const std::filesystem::path& path, LoadReport* report = nullptr);
  void persist(const std::filesystem::path& path) const;

  std::optional<EntailmentVerdict> find(const PairKey& key) const;
  void insert(const PairKey& key, const EntailmentVerdict& v);
  std::size_t size() const;
  std::map<PairKey, EntailmentVerdict> snapshot() const;

  static nlohmann::json line_json(const PairKey& key, const EntailmentVerdict& v);

 private:
  mutable std::shared_mutex mu_;
  std::map<PairKey, EntailmentVerdict> entries_;
};

// Serves verdicts from a cache. Misses go to `remote` when one is given
// (cache-only mode otherwise, where a miss is an OracleError). Fetched
// verdicts are inserted into the cache and, if `append_path` is set,
// appended to that file.
class CachedEntailmentSource : public EntailmentSource {
 public:
  CachedEntailmentSource(std::shared_ptr<VerdictCache> cache, std::shared_ptr<NliClient> remote = nullptr,
                         std::optional<std::filesystem::path> append_path = std::nullopt);

  EntailmentVerdict verdict(const PairQuery& q) override;

  std::size_t remote_calls() const { return remote_calls_; }

 private:
  std::shared_ptr<VerdictCache> cache_;
  std::shared_ptr<NliClient> remote_;
  std::optional<std::filesystem::path> append_path_;
  std::mutex append_mu_;
  std::atomic<std::size_t> remote_calls_{0};
};

// True iff both directed verdicts are entailment. Identical canonical strings
// are equivalent without consulting the source; an empty answer matches only
// another empty answer.
bool bidirectional_entailment(EntailmentSource& src, const PairQuery& q, std::size_t* queries = nullptr);

// Greedy representative clustering in sample order: each sample joins the
// first existing cluster (in creation order) whose representative it
// bidirectionally entails, else opens a new cluster.
ClusterSet cluster_generations(const PromptRecord& record, EntailmentSource& src);

}  // namespace semcal
