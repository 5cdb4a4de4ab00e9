#include "semcal/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "semcal/parallel.hpp"
#include "semcal/rng.hpp"

namespace semcal {

using nlohmann::json;
namespace fs = std::filesystem;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Methods and config

std::string MethodSpec::label() const {
  switch (kind) {
    case MethodKind::base: return "base";
    case MethodKind::fixed_tau: return "fixed_tau(" + format_double(tau) + ")";
    case MethodKind::ts: return "ts";
    case MethodKind::platt: return "platt";
    case MethodKind::per_token: return "per_token";
  }
  return "unknown";
}

std::string MethodSpec::slug() const {
  if (kind == MethodKind::fixed_tau) return "fixed_tau_" + format_double(tau);
  return label();
}

std::vector<OptimConfig> MethodSpec::grid() const {
  std::vector<OptimConfig> out;
  if (kind != MethodKind::ts && kind != MethodKind::platt) return out;
  const std::vector<double> wds = kind == MethodKind::platt ? weight_decays : std::vector<double>{optim.weight_decay};
  for (double wd : wds) {
    for (const auto& loss : losses) {
      OptimConfig c = optim;
      c.loss = loss;
      c.weight_decay = wd;
      out.push_back(c);
    }
  }
  return out;
}

void PipelineConfig::validate() const {
  if (generations.empty()) throw ValidationError("config: paths.generations is required");
  if (measures.empty()) throw ValidationError("config: at least one measure is required");
  if (methods.empty()) throw ValidationError("config: at least one method is required");
  if (runs < 1) throw ValidationError("config: runs must be >= 1");
  if (bins < 1) throw ValidationError("config: metrics.bins must be >= 1");
  match.validate();
  for (double r : rejection_grid)
    if (!(r >= 0.0 && r < 1.0)) throw ValidationError("config: rejection rates must lie in [0, 1)");
  const bool needs_alpha =
      std::any_of(measures.begin(), measures.end(), [](Measure m) { return measure_uses_alpha(m); });
  if (needs_alpha && alphas.empty()) throw ValidationError("config: T-SC and G-SC need a non-empty alpha grid");
  for (double a : alphas)
    if (!(a > 0)) throw ValidationError("config: alphas must be > 0");
  for (std::size_t m : ablation_m)
    if (m == 0) throw ValidationError("config: ablation sizes must be >= 1");
  std::vector<std::string> labels;
  for (const auto& m : methods) {
    if (m.kind == MethodKind::fixed_tau && !(m.tau > 0)) throw ValidationError("config: fixed_tau needs tau > 0");
    if (m.kind == MethodKind::per_token && m.file.empty()) throw ValidationError("config: per_token needs a file");
    if (m.kind == MethodKind::ts || m.kind == MethodKind::platt) {
      m.optim.validate();
      if (m.optim.epochs < 1) throw ValidationError("config: " + m.label() + " needs epochs >= 1");
      if (m.losses.empty()) throw ValidationError("config: " + m.label() + " needs at least one loss setting");
      if (m.kind == MethodKind::platt && m.weight_decays.empty())
        throw ValidationError("config: platt needs at least one weight decay");
    }
    labels.push_back(m.label());
  }
  std::sort(labels.begin(), labels.end());
  if (std::adjacent_find(labels.begin(), labels.end()) != labels.end())
    throw ValidationError("config: duplicate method");
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

LossSpec parse_loss(const json& j) {
  LossSpec l;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "nll") {
    l = LossSpec::nll();
  } else if (kind == "ss") {
    l = LossSpec::selective_smoothing(j.at("ss_alpha").get<double>());
  } else {
    throw ValidationError("config: unknown loss kind '" + kind + "'");
  }
  l.validate();
  return l;
}

MethodSpec parse_method(const json& j, const fs::path& base) {
  MethodSpec m;
  const auto name = j.at("name").get<std::string>();
  if (name == "base") {
    m.kind = MethodKind::base;
  } else if (name == "fixed_tau") {
    m.kind = MethodKind::fixed_tau;
    m.tau = j.at("tau").get<double>();
  } else if (name == "ts") {
    m.kind = MethodKind::ts;
  } else if (name == "platt") {
    m.kind = MethodKind::platt;
  } else if (name == "per_token") {
    m.kind = MethodKind::per_token;
    m.file = resolve(base, j.at("file").get<std::string>());
  } else {
    throw ValidationError("config: unknown method '" + name + "'");
  }
  const OptimConfig defaults =
      m.kind == MethodKind::platt ? OptimConfig::platt_defaults() : OptimConfig::temperature_defaults();
  m.optim = j.contains("optim") ? optim_from_json(j.at("optim"), defaults) : defaults;
  if (auto it = j.find("losses"); it != j.end()) {
    for (const auto& l : *it) m.losses.push_back(parse_loss(l));
  } else {
    m.losses = loss_grid();
  }
  m.weight_decays = j.value("weight_decays", std::vector<double>{0.0, 0.01});
  return m;
}

}  // namespace

PipelineConfig pipeline_config_from_json(const json& j, const fs::path& base_dir) {
  try {
    PipelineConfig c;
    c.dataset = j.value("dataset", c.dataset);
    const json& paths = j.at("paths");
    c.generations = resolve(base_dir, paths.at("generations").get<std::string>());
    if (auto it = paths.find("entailment_cache"); it != paths.end() && !it->is_null())
      c.entailment_cache = resolve(base_dir, it->get<std::string>());
    if (auto it = paths.find("nli_endpoint"); it != paths.end() && !it->is_null()) {
      RemoteEndpoint e;
      e.base_url = it->at("base_url").get<std::string>();
      e.timeout_seconds = it->value("timeout_seconds", e.timeout_seconds);
      e.max_in_flight = it->value("max_in_flight", e.max_in_flight);
      e.retry_budget = it->value("retry_budget", e.retry_budget);
      c.nli_endpoint = e;
    }
    c.output_dir = resolve(base_dir, paths.value("output_dir", std::string("out")));

    if (auto it = j.find("split"); it != j.end()) {
      c.split.seed = it->value("seed", std::uint64_t{0});
      if (auto ct = it->find("counts"); ct != it->end()) {
        SplitCounts counts;
        if (auto t = ct->find("train"); t != ct->end() && !t->is_null()) counts.train = t->get<std::size_t>();
        counts.validation = ct->value("validation", std::size_t{0});
        counts.test = ct->value("test", std::size_t{0});
        c.split.counts = counts;
      }
      if (auto fr = it->find("fractions"); fr != it->end())
        c.split.fractions = SplitFractions{fr->value("validation", 0.0), fr->value("test", 0.0)};
    }
    for (const auto& m : j.at("measures")) c.measures.push_back(measure_from_string(m.get<std::string>()));
    if (auto it = j.find("alphas"); it != j.end()) c.alphas = it->get<std::vector<double>>();
    for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m, base_dir));
    if (auto it = j.find("match"); it != j.end()) {
      c.match.fuzzy_threshold = it->value("fuzzy_threshold", c.match.fuzzy_threshold);
      c.match.f1_threshold = it->value("f1_threshold", c.match.f1_threshold);
      c.match.max_final_responses = it->value("max_final_responses", c.match.max_final_responses);
    }
    if (auto it = j.find("metrics"); it != j.end()) {
      c.bins = it->value("bins", c.bins);
      if (auto g = it->find("rejection_grid"); g != it->end()) c.rejection_grid = g->get<std::vector<double>>();
    }
    c.ablation_m = j.value("ablation_m", std::vector<std::size_t>{});
    c.master_seed = j.value("master_seed", std::uint64_t{0});
    c.runs = j.value("runs", std::size_t{1});
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j, fs::absolute(path).parent_path());
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::ingest: return "ingest";
    case Stage::cluster: return "cluster";
    case Stage::measure: return "measure";
    case Stage::calibrate: return "calibrate";
    case Stage::evaluate: return "evaluate";
    case Stage::report: return "report";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Manifests

json StageManifest::to_json() const {
  return json{{"stage", stage}, {"inputs", inputs}, {"outputs", outputs}, {"seed", seed}, {"tool_version", tool_version}};
}

StageManifest StageManifest::from_json(const json& j) {
  StageManifest m;
  m.stage = j.at("stage").get<std::string>();
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  m.outputs = j.at("outputs").get<std::vector<std::string>>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.tool_version = j.at("tool_version").get<std::string>();
  return m;
}

namespace {

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::string text_digest(std::string_view s) { return hex64(hash_bytes(s)); }

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    h = hash_bytes(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
    if (!in) break;
  }
  return hex64(h);
}

namespace {

void write_file(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return json::parse(in);
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

std::string jsonl(const std::vector<json>& lines) {
  std::string s;
  for (const auto& l : lines) s += l.dump() + '\n';
  return s;
}

void note(const RunOptions& opts, const std::string& msg) {
  if (opts.log) *opts.log << msg << '\n';
}

[[noreturn]] void rethrow_in_stage(const std::string& stage) {
  const std::string prefix = "stage " + stage + ": ";
  try {
    throw;
  } catch (const ValidationError& e) {
    throw ValidationError(prefix + e.what());
  } catch (const DivergenceError& e) {
    throw DivergenceError(prefix + e.what(), e.step());
  } catch (const OracleError& e) {
    throw OracleError(prefix + e.what());
  } catch (const std::exception& e) {
    throw Error(prefix + e.what());
  }
}

class StageRunner {
 public:
  StageRunner(const RunOptions& opts, PipelineResult& result) : opts_(opts), result_(result) {}

  // Runs `body(dir)` unless the stored manifest matches. `body` returns the
  // output file names (relative to dir) to record.
  template <typename Body>
  void run(const std::string& name, const fs::path& dir, StageManifest manifest, Body&& body) {
    const fs::path mpath = dir / "manifest.json";
    if (!opts_.force && up_to_date(dir, manifest)) {
      result_.skipped.push_back(name);
      note(opts_, "[skip] " + name + " (up to date)");
      return;
    }
    note(opts_, "[run]  " + name);
    fs::create_directories(dir);
    fs::remove(mpath);
    try {
      manifest.outputs = body(dir);
    } catch (...) {
      rethrow_in_stage(name);
    }
    write_file(mpath, manifest.to_json().dump(2) + '\n');
    result_.executed.push_back(name);
  }

 private:
  static bool up_to_date(const fs::path& dir, const StageManifest& want) {
    const fs::path mpath = dir / "manifest.json";
    if (!fs::exists(mpath)) return false;
    try {
      const StageManifest have = StageManifest::from_json(read_json(mpath));
      if (have.inputs != want.inputs || have.seed != want.seed || have.tool_version != want.tool_version ||
          have.stage != want.stage)
        return false;
      for (const auto& o : have.outputs)
        if (!fs::exists(dir / o)) return false;
      return true;
    } catch (const std::exception&) {
      return false;
    }
  }

  const RunOptions& opts_;
  PipelineResult& result_;
};

// Maps sample indices of a subsampled record back to the original corpus so
// cached verdicts stay addressable.
class IndexMappedSource : public EntailmentSource {
 public:
  IndexMappedSource(EntailmentSource& inner, const std::map<std::string, std::vector<std::size_t>>& map)
      : inner_(inner), map_(map) {}

  EntailmentVerdict verdict(const PairQuery& q) override {
    const auto& idx = map_.at(q.prompt_id);
    PairQuery mapped = q;
    mapped.i = idx.at(q.i);
    mapped.j = idx.at(q.j);
    return inner_.verdict(mapped);
  }

 private:
  EntailmentSource& inner_;
  const std::map<std::string, std::vector<std::size_t>>& map_;
};

json split_spec_json(const SplitSpec& s) {
  json j{{"seed", s.seed}};
  if (s.counts) {
    j["counts"] = json{{"train", s.counts->train ? json(*s.counts->train) : json(nullptr)},
                       {"validation", s.counts->validation},
                       {"test", s.counts->test}};
  }
  if (s.fractions) j["fractions"] = json{{"validation", s.fractions->validation}, {"test", s.fractions->test}};
  return j;
}

json methods_json(const std::vector<MethodSpec>& methods) {
  json a = json::array();
  for (const auto& m : methods) {
    json j{{"label", m.label()}};
    if (m.kind == MethodKind::per_token) j["file_digest"] = file_digest(m.file);
    if (m.kind == MethodKind::ts || m.kind == MethodKind::platt) {
      json grid = json::array();
      for (const auto& c : m.grid()) grid.push_back(optim_to_json(c));
      j["grid"] = std::move(grid);
    }
    a.push_back(std::move(j));
  }
  return a;
}

json measures_json(const PipelineConfig& cfg) {
  json a = json::array();
  for (auto m : cfg.measures) a.push_back(to_string(m));
  return json{{"measures", a}, {"alphas", cfg.alphas}};
}

json match_json(const MatchConfig& m) {
  return json{{"fuzzy_threshold", m.fuzzy_threshold},
              {"f1_threshold", m.f1_threshold},
              {"max_final_responses", m.max_final_responses}};
}

json metrics_cfg_json(const PipelineConfig& cfg) {
  return json{{"bins", cfg.bins}, {"rejection_grid", cfg.rejection_grid}};
}

std::string digest_of(const json& j) { return text_digest(j.dump()); }

std::string format_issue(const ValidationIssue& i) {
  std::string s = i.code + ": " + i.message;
  if (i.sample) s += " (sample " + std::to_string(*i.sample) + (i.step ? ", step " + std::to_string(*i.step) : "") + ")";
  return s;
}

// Everything the stages share while a pipeline runs. Inputs are loaded lazily
// so fully up-to-date stages never touch the corpus.
struct Workspace {
  Workspace(const PipelineConfig& c, const RunOptions& o, fs::path r, unsigned j)
      : cfg(c), opts(o), root(std::move(r)), jobs(j) {}

  const PipelineConfig& cfg;
  const RunOptions& opts;
  fs::path root;
  unsigned jobs = 1;

  fs::path ingest_dir() const { return root / "shared" / "ingest"; }
  fs::path cluster_dir() const { return root / "shared" / "cluster"; }
  fs::path measure_dir() const { return root / "shared" / "measure"; }
  fs::path run_dir(std::size_t r) const { return root / ("run_" + std::to_string(r)); }

  fs::path generations_path() const {
    return opts.subsample_m ? ingest_dir() / "generations.jsonl" : cfg.generations;
  }

  std::optional<std::vector<PromptRecord>> records_;
  std::map<std::string, std::size_t> index_;
  std::optional<std::map<std::string, ClusterSet>> clusters_;
  std::optional<json> split_;

  const std::vector<PromptRecord>& records() {
    if (!records_) {
      records_ = load_generation_file(generations_path());
      for (std::size_t i = 0; i < records_->size(); ++i) index_[(*records_)[i].prompt_id] = i;
    }
    return *records_;
  }

  const PromptRecord& record(const std::string& id) {
    records();
    auto it = index_.find(id);
    if (it == index_.end()) throw ValidationError("unknown prompt_id " + id);
    return (*records_)[it->second];
  }

  const std::map<std::string, ClusterSet>& clusters() {
    if (!clusters_) {
      std::map<std::string, ClusterSet> out;
      for (const auto& j : read_jsonl(cluster_dir() / "clusters.jsonl"))
        out[j.at("prompt_id").get<std::string>()] = cluster_set_from_json(j);
      clusters_ = std::move(out);
    }
    return *clusters_;
  }

  const ClusterSet& clusters_for(const PromptRecord& r) {
    const auto& all = clusters();
    auto it = all.find(r.prompt_id);
    if (it == all.end()) throw ValidationError("no clusters for " + r.prompt_id);
    if (it->second.m() != r.m()) throw ValidationError("cluster assignment size differs from m for " + r.prompt_id);
    return it->second;
  }

  std::vector<const PromptRecord*> split_part(const std::string& part) {
    if (!split_) split_ = read_json(ingest_dir() / "split.json");
    std::vector<const PromptRecord*> out;
    for (const auto& id : split_->at(part)) out.push_back(&record(id.get<std::string>()));
    return out;
  }

  std::vector<const PromptRecord*> sorted_records() {
    std::vector<const PromptRecord*> out;
    for (const auto& r : records()) out.push_back(&r);
    std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->prompt_id < b->prompt_id; });
    return out;
  }
};

// ---------------------------------------------------------------------------
// Shared stages

void stage_ingest(Workspace& ws, StageRunner& runner) {
  const auto& cfg = ws.cfg;
  StageManifest m;
  m.stage = "ingest";
  m.seed = cfg.master_seed;
  m.inputs["generations"] = file_digest(cfg.generations);
  m.inputs["split"] = digest_of(split_spec_json(cfg.split));
  m.inputs["subsample"] = ws.opts.subsample_m ? std::to_string(*ws.opts.subsample_m) : "none";
  runner.run("shared/ingest", ws.ingest_dir(), m, [&](const fs::path& dir) {
    ParsedCorpus parsed = parse_generation_file(cfg.generations);
    json issues = json::array();
    for (const auto& i : parsed.issues)
      issues.push_back(json{{"line", i.line}, {"field", i.field}, {"message", i.message}});
    auto corpus_issues = validate_corpus(parsed.records);
    for (const auto& i : corpus_issues) issues.push_back(json{{"code", i.code}, {"message", format_issue(i)}});
    write_file(dir / "issues.json", issues.dump(2) + '\n');
    if (!parsed.issues.empty()) {
      const auto& i = parsed.issues.front();
      throw ValidationError("line " + std::to_string(i.line) + " field " + i.field + ": " + i.message + " (" +
                            std::to_string(issues.size()) + " issue(s), see issues.json)");
    }
    if (!corpus_issues.empty())
      throw ValidationError(format_issue(corpus_issues.front()) + " (" + std::to_string(issues.size()) +
                            " issue(s), see issues.json)");

    std::vector<std::string> outputs{"issues.json", "split.json"};
    std::vector<PromptRecord> records = std::move(parsed.records);
    if (ws.opts.subsample_m) {
      const std::uint64_t seed = derive_seed(cfg.master_seed, {"subsample"});
      json map = json::object();
      for (auto& r : records) {
        const auto idx = subsample_indices(r, *ws.opts.subsample_m, seed);
        map[r.prompt_id] = idx;
        r = subsample_generations(r, *ws.opts.subsample_m, seed);
      }
      write_generation_file(dir / "generations.jsonl", records);
      write_file(dir / "sample_map.json", map.dump() + '\n');
      outputs.push_back("generations.jsonl");
      outputs.push_back("sample_map.json");
    }
    const DatasetSplits splits = split_dataset(records, cfg.split);
    write_file(dir / "split.json", split_manifest(splits, cfg.split.seed).dump(2) + '\n');
    note(ws.opts, "       " + std::to_string(records.size()) + " records: " + std::to_string(splits.train.size()) +
                      " train, " + std::to_string(splits.validation.size()) + " validation, " +
                      std::to_string(splits.test.size()) + " test");
    return outputs;
  });
}

void stage_cluster(Workspace& ws, StageRunner& runner) {
  const auto& cfg = ws.cfg;
  StageManifest m;
  m.stage = "cluster";
  m.inputs["generations"] = file_digest(ws.generations_path());
  m.inputs["entailment_cache"] =
      !cfg.entailment_cache.empty() && fs::exists(cfg.entailment_cache) ? file_digest(cfg.entailment_cache) : "absent";
  m.inputs["nli_endpoint"] = cfg.nli_endpoint ? text_digest(cfg.nli_endpoint->base_url) : "none";
  if (ws.opts.subsample_m) m.inputs["sample_map"] = file_digest(ws.ingest_dir() / "sample_map.json");
  runner.run("shared/cluster", ws.cluster_dir(), m, [&](const fs::path& dir) {
    std::shared_ptr<VerdictCache> cache;
    if (!cfg.entailment_cache.empty() && fs::exists(cfg.entailment_cache)) {
      VerdictCache::LoadReport report;
      cache = VerdictCache::load(cfg.entailment_cache, &report);
      for (const auto& [line, why] : report.corrupt)
        note(ws.opts, "       warning: verdict cache line " + std::to_string(line) + " skipped: " + why);
    } else if (!cfg.nli_endpoint) {
      throw ValidationError("no entailment cache at '" + cfg.entailment_cache.string() + "' and no NLI endpoint");
    } else {
      cache = std::make_shared<VerdictCache>();
    }
    std::shared_ptr<NliClient> remote;
    std::optional<fs::path> append;
    if (cfg.nli_endpoint) {
      remote = make_http_nli_client(*cfg.nli_endpoint);
      if (!cfg.entailment_cache.empty()) append = cfg.entailment_cache;
    }
    CachedEntailmentSource cached(cache, remote, append);
    std::map<std::string, std::vector<std::size_t>> sample_map;
    if (ws.opts.subsample_m)
      sample_map = read_json(ws.ingest_dir() / "sample_map.json").get<std::map<std::string, std::vector<std::size_t>>>();
    IndexMappedSource mapped(cached, sample_map);
    EntailmentSource& src = ws.opts.subsample_m ? static_cast<EntailmentSource&>(mapped) : cached;

    const auto recs = ws.sorted_records();
    std::vector<ClusterSet> out(recs.size());
    parallel_for(recs.size(), ws.jobs, [&](std::size_t i) {
      try {
        out[i] = cluster_generations(*recs[i], src);
      } catch (const OracleError& e) {
        throw OracleError("record " + recs[i]->prompt_id + ": " + e.what());
      }
    });
    std::vector<json> lines;
    std::size_t queries = 0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      lines.push_back(cluster_set_to_json(recs[i]->prompt_id, out[i]));
      queries += out[i].oracle_queries;
    }
    write_file(dir / "clusters.jsonl", jsonl(lines));
    note(ws.opts, "       " + std::to_string(queries) + " verdict lookups, " + std::to_string(cached.remote_calls()) +
                      " remote calls");
    ws.clusters_.reset();
    return std::vector<std::string>{"clusters.jsonl"};
  });
}

void stage_measure(Workspace& ws, StageRunner& runner) {
  StageManifest m;
  m.stage = "measure";
  m.inputs["generations"] = file_digest(ws.generations_path());
  m.inputs["clusters"] = file_digest(ws.cluster_dir() / "clusters.jsonl");
  m.inputs["measures"] = digest_of(measures_json(ws.cfg));
  runner.run("shared/measure", ws.measure_dir(), m, [&](const fs::path& dir) {
    const auto cols = measure_columns(ws.cfg.measures, ws.cfg.alphas);
    const auto recs = ws.sorted_records();
    std::vector<std::vector<json>> per(recs.size());
    for (const auto* r : recs) ws.clusters_for(*r);  // load before going parallel
    parallel_for(recs.size(), ws.jobs, [&](std::size_t i) {
      const ClusterSet& c = ws.clusters().at(recs[i]->prompt_id);
      const Eigen::VectorXd ll = stored_logliks(*recs[i]);
      for (const auto& col : cols)
        per[i].push_back(measure_record_json(recs[i]->prompt_id, compute_measure(col.measure, c, ll, col.alpha)));
    });
    std::vector<json> lines;
    for (auto& p : per)
      for (auto& l : p) lines.push_back(std::move(l));
    write_file(dir / "measures.jsonl", jsonl(lines));
    return std::vector<std::string>{"measures.jsonl"};
  });
}

// ---------------------------------------------------------------------------
// Per-run stages

MatchConfig run_match(const PipelineConfig& cfg, std::uint64_t run_seed) {
  MatchConfig m = cfg.match;
  m.seed = derive_seed(run_seed, {"final_response"});
  return m;
}

double top_confidence(const SemanticDistributiond& d) { return std::exp(d.log_probs.maxCoeff()); }

std::vector<Eigen::VectorXd> recompute_all(const std::vector<const PromptRecord*>& recs,
                                           const CalibrationParams& params, unsigned jobs) {
  std::vector<Eigen::VectorXd> out(recs.size());
  parallel_for(recs.size(), jobs, [&](std::size_t i) { out[i] = recompute_logliks(*recs[i], params); });
  return out;
}

void stage_calibrate(Workspace& ws, StageRunner& runner, std::size_t run, std::uint64_t run_seed) {
  const auto& cfg = ws.cfg;
  const fs::path dir = ws.run_dir(run) / "calibrate";
  StageManifest m;
  m.stage = "calibrate";
  m.seed = run_seed;
  m.inputs["generations"] = file_digest(ws.generations_path());
  m.inputs["split"] = file_digest(ws.ingest_dir() / "split.json");
  m.inputs["clusters"] = file_digest(ws.cluster_dir() / "clusters.jsonl");
  m.inputs["methods"] = digest_of(methods_json(cfg.methods));
  m.inputs["measures"] = digest_of(measures_json(cfg));
  m.inputs["match"] = digest_of(match_json(cfg.match));
  runner.run("run_" + std::to_string(run) + "/calibrate", dir, m, [&](const fs::path& out_dir) {
    const auto train = ws.split_part("train");
    const auto val = ws.split_part("validation");
    for (const auto* r : val) ws.clusters_for(*r);
    const MatchConfig match = run_match(cfg, run_seed);
    const auto cols = measure_columns(cfg.measures, cfg.alphas);

    std::optional<TokenDataset> dataset;
    auto train_data = [&]() -> const TokenDataset& {
      if (!dataset) {
        std::vector<PromptRecord> rs;
        for (const auto* r : train) rs.push_back(*r);
        dataset = make_token_dataset(rs, true);
        if (dataset->truncated) note(ws.opts, "       warning: top-K logits in use; fitted parameters are approximate");
      }
      return *dataset;
    };

    std::vector<std::string> outputs;
    json selection = json::array();
    for (const auto& method : cfg.methods) {
      std::vector<ParamsFile> cands;
      switch (method.kind) {
        case MethodKind::base:
          cands.push_back(ParamsFile{ScalarTemperature{1.0}, LossSpec::nll(), OptimConfig{}, {}});
          break;
        case MethodKind::fixed_tau:
          cands.push_back(ParamsFile{ScalarTemperature{method.tau}, LossSpec::nll(), OptimConfig{}, {}});
          break;
        case MethodKind::per_token: {
          ParamsFile f = read_params_file(method.file);
          if (!std::holds_alternative<PerTokenTemperatures>(f.params))
            throw ValidationError("per_token method expects a per_token params file: " + method.file.string());
          cands.push_back(std::move(f));
          break;
        }
        case MethodKind::ts:
        case MethodKind::platt: {
          if (train.empty()) throw ValidationError("the training split is empty");
          const auto& data = train_data();
          auto grid = method.grid();
          cands.resize(grid.size());
          parallel_for(grid.size(), ws.jobs, [&](std::size_t i) {
            OptimConfig oc = grid[i];
            oc.seed = derive_seed(run_seed, {"fit", method.slug(), std::to_string(i)});
            FitResult fr = method.kind == MethodKind::ts ? fit_temperature(data, oc) : fit_platt(data, oc);
            cands[i] = ParamsFile{std::move(fr.params), oc.loss, oc, std::move(fr.trace)};
          });
          break;
        }
      }
      fs::create_directories(out_dir / method.slug());
      for (std::size_t i = 0; i < cands.size(); ++i) {
        const std::string name = method.slug() + "/candidate_" + std::to_string(i) + ".json";
        write_file(out_dir / name, params_to_json(cands[i]).dump(2) + '\n');
        outputs.push_back(name);
      }

      // Validation log-likelihoods per candidate, then one Brier sweep per measure.
      std::vector<std::vector<Eigen::VectorXd>> val_ll(cands.size());
      for (std::size_t c = 0; c < cands.size(); ++c) val_ll[c] = recompute_all(val, cands[c].params, ws.jobs);

      json sel = json::object();
      for (Measure meas : cfg.measures) {
        std::vector<Candidate> options;
        std::vector<std::size_t> owner;
        const std::vector<std::optional<double>> alphas = [&] {
          std::vector<std::optional<double>> a;
          if (measure_uses_alpha(meas)) {
            for (double x : cfg.alphas) a.push_back(x);
          } else {
            a.push_back(std::nullopt);
          }
          return a;
        }();
        for (std::size_t c = 0; c < cands.size(); ++c)
          for (const auto& a : alphas) {
            options.push_back(Candidate{cands[c].optim, cands[c].params, a});
            owner.push_back(c);
          }
        Selection chosen;
        if (val.empty()) {
          note(ws.opts, "       warning: empty validation split; taking the first candidate");
        } else {
          std::size_t probe = 0;
          chosen = sweep_and_select(options, [&](const Candidate& cand) {
            const std::size_t c = owner[probe++];
            std::vector<ScoredExample> xs;
            for (std::size_t i = 0; i < val.size(); ++i) {
              const auto d = compute_measure(meas, ws.clusters_for(*val[i]), val_ll[c][i], cand.measure_alpha);
              const auto label = label_conf(*val[i], ws.clusters_for(*val[i]), d, match);
              xs.push_back(ScoredExample{top_confidence(d), label.correct, val[i]->prompt_id});
            }
            return brier(xs);
          });
        }
        const auto& pick = options[chosen.index];
        sel[to_string(meas)] = json{{"candidate", owner[chosen.index]},
                                    {"alpha", pick.measure_alpha ? json(*pick.measure_alpha) : json(nullptr)},
                                    {"validation_brier", chosen.brier}};
      }
      selection.push_back(json{{"method", method.label()},
                               {"slug", method.slug()},
                               {"candidates", cands.size()},
                               {"selection", std::move(sel)}});
    }
    write_file(out_dir / "selection.json", selection.dump(2) + '\n');
    outputs.push_back("selection.json");
    return outputs;
  });
}

struct MetricRow {
  std::string method;
  std::string measure;
  std::string protocol;
  std::string metric;
  double value = 0.0;
  std::size_t n = 0;
};

double or_nan(const std::function<double()>& f) {
  try {
    return f();
  } catch (const UndefinedMetric&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

void stage_evaluate(Workspace& ws, StageRunner& runner, std::size_t run, std::uint64_t run_seed) {
  const auto& cfg = ws.cfg;
  const fs::path cal_dir = ws.run_dir(run) / "calibrate";
  const fs::path dir = ws.run_dir(run) / "evaluate";
  StageManifest m;
  m.stage = "evaluate";
  m.seed = run_seed;
  m.inputs["generations"] = file_digest(ws.generations_path());
  m.inputs["split"] = file_digest(ws.ingest_dir() / "split.json");
  m.inputs["clusters"] = file_digest(ws.cluster_dir() / "clusters.jsonl");
  m.inputs["calibrate"] = file_digest(cal_dir / "manifest.json");
  m.inputs["selection"] = file_digest(cal_dir / "selection.json");
  m.inputs["measures"] = digest_of(measures_json(cfg));
  m.inputs["match"] = digest_of(match_json(cfg.match));
  m.inputs["metrics"] = digest_of(metrics_cfg_json(cfg));
  runner.run("run_" + std::to_string(run) + "/evaluate", dir, m, [&](const fs::path& out_dir) {
    const auto test = ws.split_part("test");
    if (test.empty()) throw ValidationError("the test split is empty");
    for (const auto* r : test) ws.clusters_for(*r);
    const MatchConfig match = run_match(cfg, run_seed);
    const bool vanilla = std::all_of(test.begin(), test.end(), [](auto* r) { return r->greedy_answer.has_value(); });
    if (!vanilla) note(ws.opts, "       warning: greedy answers missing; SE_vanilla protocol skipped");

    std::vector<CorrectnessLabel> vanilla_labels;
    if (vanilla)
      for (const auto* r : test) vanilla_labels.push_back(label_vanilla(*r, match));

    const json selection = read_json(cal_dir / "selection.json");
    std::vector<MetricRow> rows;
    std::vector<json> label_lines, dist_lines;
    std::ostringstream selective, reliability;
    selective << "method,measure,protocol,rejection,accuracy,kept\n";
    reliability << "method,measure,protocol,scheme,bin,confidence,accuracy,count\n";

    for (const auto& entry : selection) {
      const std::string method = entry.at("method").get<std::string>();
      const std::string slug = entry.at("slug").get<std::string>();
      std::map<std::size_t, ParamsFile> loaded;
      std::map<std::size_t, std::vector<Eigen::VectorXd>> lls;
      for (Measure meas : cfg.measures) {
        const json& s = entry.at("selection").at(to_string(meas));
        const auto cand = s.at("candidate").get<std::size_t>();
        std::optional<double> alpha;
        if (!s.at("alpha").is_null()) alpha = s.at("alpha").get<double>();
        if (!loaded.count(cand)) {
          loaded.emplace(cand, read_params_file(cal_dir / slug / ("candidate_" + std::to_string(cand) + ".json")));
          lls[cand] = recompute_all(test, loaded.at(cand).params, ws.jobs);
        }
        const ParamsFile& pf = loaded.at(cand);

        std::vector<ScoredExample> conf_xs, van_xs, ent_conf, ent_van;
        for (std::size_t i = 0; i < test.size(); ++i) {
          const auto& r = *test[i];
          const auto d = compute_measure(meas, ws.clusters_for(r), lls[cand][i], alpha);
          const double conf = top_confidence(d);
          const double h = semantic_entropy(d);
          json dl = measure_record_json(r.prompt_id, d);
          dl["method"] = method;
          dist_lines.push_back(std::move(dl));
          const auto lc = label_conf(r, ws.clusters_for(r), d, match);
          json ll = label_to_json(r.prompt_id, to_string(meas), "conf", lc);
          ll["method"] = method;
          label_lines.push_back(std::move(ll));
          conf_xs.push_back({conf, lc.correct, r.prompt_id});
          ent_conf.push_back({std::exp(-h), lc.correct, r.prompt_id});
          if (vanilla) {
            json lv = label_to_json(r.prompt_id, to_string(meas), "vanilla", vanilla_labels[i]);
            lv["method"] = method;
            label_lines.push_back(std::move(lv));
            van_xs.push_back({conf, vanilla_labels[i].correct, r.prompt_id});
            ent_van.push_back({std::exp(-h), vanilla_labels[i].correct, r.prompt_id});
          }
        }

        auto emit = [&](const std::string& protocol, const std::vector<ScoredExample>& xs,
                        const std::vector<ScoredExample>& ent) {
          auto add = [&](const std::string& metric, double v) {
            rows.push_back(MetricRow{method, to_string(meas), protocol, metric, v, xs.size()});
          };
          double acc = 0.0;
          for (const auto& x : xs) acc += x.correct ? 1.0 : 0.0;
          add("accuracy", acc / static_cast<double>(xs.size()));
          add("ece", ece(xs, cfg.bins));
          add("ece_single_bin", ece(xs, 1));
          add("ace", ace(xs, cfg.bins));
          add("auroc", or_nan([&] { return auroc(xs); }));
          add("se_auroc", or_nan([&] { return auroc(ent); }));
          add("brier", brier(xs));
          const auto bd = brier_decomposition(xs);
          add("brier_calibration", bd.calibration);
          add("brier_resolution", bd.resolution);
          add("brier_uncertainty", bd.uncertainty);
          const auto cr = corp(xs);
          add("corp_mcb", cr.mcb);
          add("corp_dsc", cr.dsc);
          add("corp_unc", cr.unc);
          if (const auto* t = std::get_if<ScalarTemperature>(&pf.params)) add("tau", t->tau);
          if (alpha) add("alpha", *alpha);

          const std::string key = method + "," + to_string(meas) + "," + protocol + ",";
          for (const auto& p : selective_accuracy(xs, cfg.rejection_grid))
            selective << key << format_double(p.rejection) << ',' << format_double(p.accuracy) << ',' << p.kept << '\n';
          for (auto scheme : {BinScheme::equal_width, BinScheme::equal_mass}) {
            const auto bins = reliability_bins(xs, cfg.bins, scheme);
            for (std::size_t b = 0; b < bins.size(); ++b)
              reliability << key << (scheme == BinScheme::equal_width ? "equal_width" : "equal_mass") << ',' << b
                          << ',' << format_double(bins[b].confidence) << ',' << format_double(bins[b].accuracy) << ','
                          << bins[b].count << '\n';
          }
        };
        emit("conf", conf_xs, ent_conf);
        if (vanilla) emit("vanilla", van_xs, ent_van);
      }
    }

    json metrics = json::array();
    for (const auto& r : rows) {
      metrics.push_back(json{{"method", r.method},
                             {"measure", r.measure},
                             {"protocol", r.protocol},
                             {"metric", r.metric},
                             {"value", std::isnan(r.value) ? json(nullptr) : json(r.value)},
                             {"n", r.n}});
    }
    write_file(out_dir / "metrics.json", metrics.dump(2) + '\n');
    write_file(out_dir / "labels.jsonl", jsonl(label_lines));
    write_file(out_dir / "distributions.jsonl", jsonl(dist_lines));
    write_file(out_dir / "selective.csv", selective.str());
    write_file(out_dir / "reliability.csv", reliability.str());
    return std::vector<std::string>{"metrics.json", "labels.jsonl", "distributions.jsonl", "selective.csv",
                                    "reliability.csv"};
  });
}

void stage_report(Workspace& ws, StageRunner& runner, PipelineResult& result) {
  const auto& cfg = ws.cfg;
  StageManifest m;
  m.stage = "report";
  m.seed = cfg.master_seed;
  m.inputs["dataset"] = text_digest(cfg.dataset);
  for (std::size_t r = 0; r < cfg.runs; ++r)
    m.inputs["run_" + std::to_string(r)] = file_digest(ws.run_dir(r) / "evaluate" / "metrics.json");
  result.summary_csv = ws.root / "summary.csv";
  result.summary_json = ws.root / "summary.json";
  runner.run("report", ws.root / "report", m, [&](const fs::path&) {
    using Key = std::tuple<std::string, std::string, std::string, std::string>;
    std::vector<Key> order;
    std::map<Key, std::vector<double>> values;
    std::map<Key, std::size_t> counts;
    for (std::size_t r = 0; r < cfg.runs; ++r) {
      for (const auto& row : read_json(ws.run_dir(r) / "evaluate" / "metrics.json")) {
        Key k{row.at("method").get<std::string>(), row.at("measure").get<std::string>(),
              row.at("protocol").get<std::string>(), row.at("metric").get<std::string>()};
        if (!values.count(k)) order.push_back(k);
        values[k].push_back(row.at("value").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                      : row.at("value").get<double>());
        counts[k] = row.at("n").get<std::size_t>();
      }
    }
    std::ostringstream csv;
    csv << "dataset,method,measure,protocol,metric,value,stderr,n\n";
    json rows = json::array();
    for (const auto& k : order) {
      std::vector<double> v;
      for (double x : values[k])
        if (!std::isnan(x)) v.push_back(x);
      double mean = std::numeric_limits<double>::quiet_NaN(), se = mean;
      if (!v.empty()) {
        mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        se = 0.0;
        if (v.size() > 1) {
          double ss = 0.0;
          for (double x : v) ss += (x - mean) * (x - mean);
          se = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
        }
      }
      const auto& [method, measure, protocol, metric] = k;
      csv << cfg.dataset << ',' << method << ',' << measure << ',' << protocol << ',' << metric << ','
          << format_double(mean) << ',' << format_double(se) << ',' << counts[k] << '\n';
      auto num = [](double x) { return std::isnan(x) ? json(nullptr) : json(x); };
      json per_run = json::array();
      for (double x : values[k]) per_run.push_back(num(x));
      rows.push_back(json{{"dataset", cfg.dataset},
                          {"method", method},
                          {"measure", measure},
                          {"protocol", protocol},
                          {"metric", metric},
                          {"value", num(mean)},
                          {"stderr", num(se)},
                          {"n", counts[k]},
                          {"runs", per_run}});
    }
    write_file(ws.root / "summary.csv", csv.str());
    write_file(ws.root / "summary.json", json{{"dataset", cfg.dataset}, {"runs", cfg.runs}, {"rows", rows}}.dump(2) + '\n');
    return std::vector<std::string>{"../summary.csv", "../summary.json"};
  });
}

unsigned resolve_jobs(unsigned jobs) {
  if (jobs == 0) return std::max(1u, std::thread::hardware_concurrency());
  return jobs;
}

PipelineResult run_in(const PipelineConfig& cfg, const RunOptions& opts, const fs::path& root) {
  cfg.validate();
  PipelineResult result;
  StageRunner runner(opts, result);
  Workspace ws(cfg, opts, root, resolve_jobs(opts.jobs));
  stage_ingest(ws, runner);
  if (opts.until == Stage::ingest) return result;
  stage_cluster(ws, runner);
  if (opts.until == Stage::cluster) return result;
  stage_measure(ws, runner);
  if (opts.until == Stage::measure) return result;
  for (std::size_t r = 0; r < cfg.runs; ++r) stage_calibrate(ws, runner, r, derive_seed(cfg.master_seed, r));
  if (opts.until == Stage::calibrate) return result;
  for (std::size_t r = 0; r < cfg.runs; ++r) stage_evaluate(ws, runner, r, derive_seed(cfg.master_seed, r));
  if (opts.until == Stage::evaluate) return result;
  stage_report(ws, runner, result);
  return result;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg, const RunOptions& opts) {
  return run_in(cfg, opts, cfg.output_dir);
}

std::vector<PipelineResult> run_ablation(const PipelineConfig& cfg, const std::vector<std::size_t>& m_list,
                                         const RunOptions& opts) {
  if (m_list.empty()) throw ValidationError("ablation needs at least one m'");
  std::vector<PipelineResult> out;
  for (std::size_t mp : m_list) {
    if (mp == 0) throw ValidationError("ablation sizes must be >= 1");
    RunOptions o = opts;
    o.subsample_m = mp;
    note(opts, "== m' = " + std::to_string(mp));
    out.push_back(run_in(cfg, o, cfg.output_dir / ("ablate_m" + std::to_string(mp))));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Distribution export

std::string MeasureColumn::name() const {
  return alpha ? to_string(measure) + "(" + format_double(*alpha) + ")" : to_string(measure);
}

std::vector<MeasureColumn> measure_columns(const std::vector<Measure>& measures, const std::vector<double>& alphas) {
  std::vector<MeasureColumn> out;
  for (Measure m : measures) {
    if (measure_uses_alpha(m)) {
      for (double a : alphas) out.push_back({m, a});
    } else {
      out.push_back({m, std::nullopt});
    }
  }
  return out;
}

DistributionExport export_confidences(const std::vector<PromptRecord>& records,
                                      const std::map<std::string, ClusterSet>& clusters,
                                      const std::vector<MeasureColumn>& columns) {
  DistributionExport ex;
  ex.columns = columns;
  const auto n = static_cast<Eigen::Index>(records.size());
  const auto k = static_cast<Eigen::Index>(columns.size());
  ex.confidence.resize(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    ex.prompt_ids.push_back(r.prompt_id);
    auto it = clusters.find(r.prompt_id);
    if (it == clusters.end()) throw ValidationError("no clusters for " + r.prompt_id);
    const Eigen::VectorXd ll = stored_logliks(r);
    for (Eigen::Index c = 0; c < k; ++c) {
      const auto& col = columns[static_cast<std::size_t>(c)];
      ex.confidence(i, c) = top_confidence(compute_measure(col.measure, it->second, ll, col.alpha));
    }
  }
  ex.correlation.resize(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = 0; b < k; ++b) {
      const Eigen::VectorXd x = ex.confidence.col(a), y = ex.confidence.col(b);
      ex.correlation(a, b) = or_nan([&] {
        return pearson(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                       std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
      });
    }
  }
  return ex;
}

PipelineResult run_export(const PipelineConfig& cfg, const RunOptions& opts) {
  RunOptions o = opts;
  o.until = Stage::measure;
  PipelineResult result = run_in(cfg, o, cfg.output_dir);
  Workspace ws(cfg, o, cfg.output_dir, resolve_jobs(o.jobs));
  std::vector<PromptRecord> recs;
  for (const auto* r : ws.sorted_records()) recs.push_back(*r);
  const auto ex = export_confidences(recs, ws.clusters(), measure_columns(cfg.measures, cfg.alphas));

  const fs::path dir = cfg.output_dir / "export";
  fs::create_directories(dir);
  std::ostringstream conf, corr;
  conf << "prompt_id";
  corr << "measure";
  for (const auto& c : ex.columns) {
    conf << ',' << c.name();
    corr << ',' << c.name();
  }
  conf << '\n';
  corr << '\n';
  for (Eigen::Index i = 0; i < ex.confidence.rows(); ++i) {
    conf << ex.prompt_ids[static_cast<std::size_t>(i)];
    for (Eigen::Index c = 0; c < ex.confidence.cols(); ++c) conf << ',' << format_double(ex.confidence(i, c));
    conf << '\n';
  }
  for (Eigen::Index a = 0; a < ex.correlation.rows(); ++a) {
    corr << ex.columns[static_cast<std::size_t>(a)].name();
    for (Eigen::Index b = 0; b < ex.correlation.cols(); ++b) corr << ',' << format_double(ex.correlation(a, b));
    corr << '\n';
  }
  write_file(dir / "confidences.csv", conf.str());
  write_file(dir / "correlation.csv", corr.str());
  result.executed.push_back("export");
  return result;
}

}  // namespace semcal
