#include "semcal/entailment.hpp"

#include <chrono>
#include <fstream>
#include <semaphore>
#include <thread>

#include <httplib.h>

#include "semcal/error.hpp"
#include "semcal/text.hpp"

namespace semcal {

using nlohmann::json;

std::string to_string(NliLabel label) {
  switch (label) {
    case NliLabel::entailment:
      return "entailment";
    case NliLabel::neutral:
      return "neutral";
    case NliLabel::contradiction:
      return "contradiction";
  }
  return "contradiction";
}

NliLabel nli_label_from_string(const std::string& s) {
  if (s == "entailment") return NliLabel::entailment;
  if (s == "neutral") return NliLabel::neutral;
  if (s == "contradiction") return NliLabel::contradiction;
  throw ValidationError("unknown NLI label '" + s + "'");
}

std::vector<std::size_t> ClusterSet::sizes() const {
  std::vector<std::size_t> out(k, 0);
  for (int c : assignment) ++out[static_cast<std::size_t>(c)];
  return out;
}

std::vector<std::vector<std::size_t>> ClusterSet::members() const {
  std::vector<std::vector<std::size_t>> out(k);
  for (std::size_t i = 0; i < assignment.size(); ++i) out[static_cast<std::size_t>(assignment[i])].push_back(i);
  return out;
}

ClusterSet cluster_set_from_labels(const std::vector<int>& labels) {
  ClusterSet c;
  std::map<int, int> remap;
  c.assignment.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, fresh] = remap.emplace(labels[i], static_cast<int>(remap.size()));
    if (fresh) c.representative.push_back(i);
    c.assignment[i] = it->second;
  }
  c.k = remap.size();
  return c;
}

json cluster_set_to_json(const std::string& prompt_id, const ClusterSet& c) {
  return json{{"prompt_id", prompt_id}, {"k", c.k}, {"assignment", c.assignment}, {"representative", c.representative}};
}

ClusterSet cluster_set_from_json(const json& j) {
  ClusterSet c;
  c.k = j.at("k").get<std::size_t>();
  c.assignment = j.at("assignment").get<std::vector<int>>();
  c.representative = j.at("representative").get<std::vector<std::size_t>>();
  if (c.representative.size() != c.k) throw ValidationError("cluster set: representative count != k");
  for (int a : c.assignment)
    if (a < 0 || static_cast<std::size_t>(a) >= c.k) throw ValidationError("cluster set: assignment out of range");
  return c;
}

std::string canonicalize_for_clustering(std::string_view raw) {
  std::string s = text::collapse_whitespace(text::to_lower(raw));
  if (auto d = text::parse_date(s)) return text::to_iso(*d);
  s = text::number_words_to_digits(s);
  if (auto d = text::parse_date(s)) return text::to_iso(*d);
  return s;
}

NliPair make_nli_pair(const std::string& question, const std::string& a, const std::string& b) {
  return NliPair{question + " " + a, question + " " + b};
}

DirectedVerdict directed_verdict_from_json(const json& j) {
  DirectedVerdict v;
  v.label = nli_label_from_string(j.at("label").get<std::string>());
  if (auto it = j.find("probs"); it != j.end() && !it->is_null()) {
    auto p = it->get<std::vector<double>>();
    if (p.size() != 3) throw ValidationError("NLI probs must have 3 entries");
    double sum = p[0] + p[1] + p[2];
    if (p[0] < 0 || p[1] < 0 || p[2] < 0 || std::abs(sum - 1.0) > 1e-6)
      throw ValidationError("NLI probs must be a distribution");
    v.probs = std::array<double, 3>{p[0], p[1], p[2]};
  }
  return v;
}

json directed_verdict_to_json(const DirectedVerdict& v) {
  json j{{"label", to_string(v.label)}};
  j["probs"] = v.probs ? json(std::vector<double>(v.probs->begin(), v.probs->end())) : json(nullptr);
  return j;
}

namespace {

class HttpNliClient : public NliClient {
 public:
  explicit HttpNliClient(RemoteEndpoint ep) : ep_(std::move(ep)), slots_(std::max(1, ep_.max_in_flight)) {}

  std::vector<DirectedVerdict> entail_batch(const std::vector<NliPair>& pairs) override {
    json body;
    body["pairs"] = json::array();
    for (const auto& p : pairs) body["pairs"].push_back({{"premise", p.premise}, {"hypothesis", p.hypothesis}});
    const std::string payload = body.dump();

    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};

    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= ep_.retry_budget; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(50 * (1 << std::min(attempt, 6))));
      httplib::Client cli(ep_.base_url);
      const auto secs = static_cast<time_t>(ep_.timeout_seconds);
      const auto usecs = static_cast<time_t>((ep_.timeout_seconds - static_cast<double>(secs)) * 1e6);
      cli.set_connection_timeout(secs, usecs);
      cli.set_read_timeout(secs, usecs);
      cli.set_write_timeout(secs, usecs);
      auto res = cli.Post("/v1/entail_batch", payload, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw OracleError("NLI service rejected request: HTTP " + std::to_string(res->status) + " " + res->body);
      }
      try {
        const auto j = json::parse(res->body);
        const auto& results = j.at("results");
        if (results.size() != pairs.size()) throw OracleError("NLI batch returned wrong result count");
        std::vector<DirectedVerdict> out;
        for (const auto& r : results) out.push_back(directed_verdict_from_json(r));
        return out;
      } catch (const json::exception& e) {
        throw OracleError(std::string("malformed NLI response: ") + e.what());
      }
    }
    throw OracleError("NLI service unavailable after " + std::to_string(ep_.retry_budget + 1) +
                      " attempts: " + last_error);
  }

 private:
  RemoteEndpoint ep_;
  std::counting_semaphore<> slots_;
};

}  // namespace

std::unique_ptr<NliClient> make_http_nli_client(const RemoteEndpoint& endpoint) {
  return std::make_unique<HttpNliClient>(endpoint);
}

json VerdictCache::line_json(const PairKey& key, const EntailmentVerdict& v) {
  auto probs = [](const DirectedVerdict& d) {
    return d.probs ? json(std::vector<double>(d.probs->begin(), d.probs->end())) : json(nullptr);
  };
  return json{{"prompt_id", std::get<0>(key)},
              {"i", std::get<1>(key)},
              {"j", std::get<2>(key)},
              {"fwd", to_string(v.forward.label)},
              {"bwd", to_string(v.backward.label)},
              {"fwd_probs", probs(v.forward)},
              {"bwd_probs", probs(v.backward)}};
}

std::shared_ptr<VerdictCache> VerdictCache::load(const std::filesystem::path& path, LoadReport* report) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read verdict cache " + path.string());
  auto cache = std::make_shared<VerdictCache>();
  LoadReport local;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      const auto i = j.at("i").get<std::size_t>();
      const auto jj = j.at("j").get<std::size_t>();
      if (i >= jj) throw ValidationError("requires i < j");
      EntailmentVerdict v;
      v.forward = directed_verdict_from_json(json{{"label", j.at("fwd")}, {"probs", j.value("fwd_probs", json())}});
      v.backward = directed_verdict_from_json(json{{"label", j.at("bwd")}, {"probs", j.value("bwd_probs", json())}});
      cache->entries_[{j.at("prompt_id").get<std::string>(), i, jj}] = v;
      ++local.loaded;
    } catch (const std::exception& e) {
      local.corrupt.emplace_back(lineno, e.what());
    }
  }
  if (report) *report = std::move(local);
  return cache;
}

void VerdictCache::persist(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write verdict cache " + path.string());
  std::shared_lock lock(mu_);
  for (const auto& [key, v] : entries_) out << line_json(key, v).dump() << '\n';
}

std::optional<EntailmentVerdict> VerdictCache::find(const PairKey& key) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void VerdictCache::insert(const PairKey& key, const EntailmentVerdict& v) {
  std::unique_lock lock(mu_);
  entries_[key] = v;
}

std::size_t VerdictCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

std::map<PairKey, EntailmentVerdict> VerdictCache::snapshot() const {
  std::shared_lock lock(mu_);
  return entries_;
}

CachedEntailmentSource::CachedEntailmentSource(std::shared_ptr<VerdictCache> cache, std::shared_ptr<NliClient> remote,
                                               std::optional<std::filesystem::path> append_path)
    : cache_(std::move(cache)), remote_(std::move(remote)), append_path_(std::move(append_path)) {}

EntailmentVerdict CachedEntailmentSource::verdict(const PairQuery& q) {
  if (q.i >= q.j) throw OracleError("pair query requires i < j");
  const PairKey key{q.prompt_id, q.i, q.j};
  if (auto hit = cache_->find(key)) return *hit;
  if (!remote_) {
    throw OracleError("missing entry in verdict cache for (" + q.prompt_id + ", " + std::to_string(q.i) + ", " +
                      std::to_string(q.j) + ")");
  }
  ++remote_calls_;
  const auto res = remote_->entail_batch({make_nli_pair(q.question, q.a, q.b), make_nli_pair(q.question, q.b, q.a)});
  const EntailmentVerdict v{res.at(0), res.at(1)};
  cache_->insert(key, v);
  if (append_path_) {
    std::lock_guard lock(append_mu_);
    std::ofstream out(*append_path_, std::ios::app);
    if (!out) throw Error("cannot append to verdict cache " + append_path_->string());
    out << VerdictCache::line_json(key, v).dump() << '\n';
  }
  return v;
}

bool bidirectional_entailment(EntailmentSource& src, const PairQuery& q, std::size_t* queries) {
  if (q.a == q.b) return true;
  if (q.a.empty() || q.b.empty()) return false;
  if (queries) ++*queries;
  return src.verdict(q).bidirectional();
}

ClusterSet cluster_generations(const PromptRecord& record, EntailmentSource& src) {
  if (record.samples.empty()) throw ValidationError("cannot cluster a record without samples: " + record.prompt_id);
  std::vector<std::string> canon;
  canon.reserve(record.m());
  for (const auto& s : record.samples) canon.push_back(canonicalize_for_clustering(text::first_answer_span(s.answer_text)));

  ClusterSet c;
  c.assignment.assign(record.m(), -1);
  for (std::size_t s = 0; s < record.m(); ++s) {
    for (std::size_t cid = 0; cid < c.representative.size(); ++cid) {
      const std::size_t rep = c.representative[cid];
      PairQuery q{record.prompt_id, rep, s, record.question, canon[rep], canon[s]};
      if (bidirectional_entailment(src, q, &c.oracle_queries)) {
        c.assignment[s] = static_cast<int>(cid);
        break;
      }
    }
    if (c.assignment[s] < 0) {
      c.assignment[s] = static_cast<int>(c.representative.size());
      c.representative.push_back(s);
    }
  }
  c.k = c.representative.size();
  return c;
}

}  // namespace semcal
