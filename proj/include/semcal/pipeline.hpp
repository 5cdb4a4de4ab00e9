#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "semcal/calibrate.hpp"
#include "semcal/correctness.hpp"
#include "semcal/entailment.hpp"
#include "semcal/measures.hpp"
#include "semcal/metrics.hpp"
#include "semcal/records.hpp"

namespace semcal {

inline constexpr const char* kToolVersion = "semcal 0.1.0";

enum class MethodKind { base, fixed_tau, ts, platt, per_token };

struct MethodSpec {
  MethodKind kind = MethodKind::base;
  double tau = 1.0;                    // fixed_tau
  std::filesystem::path file;          // per_token params file
  OptimConfig optim;                   // ts / platt starting point
  std::vector<LossSpec> losses;        // swept loss settings
  std::vector<double> weight_decays;   // platt only

  // "base", "fixed_tau(0.5)", "ts", "platt", "per_token".
  std::string label() const;
  // Filesystem-safe label.
  std::string slug() const;
  std::vector<OptimConfig> grid() const;
};

struct PipelineConfig {
  std::string dataset = "dataset";
  std::filesystem::path generations;
  std::filesystem::path entailment_cache;
  std::optional<RemoteEndpoint> nli_endpoint;
  std::filesystem::path output_dir = "out";
  SplitSpec split;
  std::vector<Measure> measures;
  std::vector<double> alphas = default_measure_alphas();  // for T-SC and G-SC
  std::vector<MethodSpec> methods;
  MatchConfig match;
  std::size_t bins = 10;
  std::vector<double> rejection_grid = default_rejection_grid();
  std::vector<std::size_t> ablation_m;
  std::uint64_t master_seed = 0;
  std::size_t runs = 1;

  void validate() const;
};

// Relative paths are resolved against `base_dir`.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

enum class Stage { ingest, cluster, measure, calibrate, evaluate, report };
std::string to_string(Stage s);

struct StageManifest {
  std::string stage;
  std::map<std::string, std::string> inputs;  // name -> content hash
  std::vector<std::string> outputs;           // file names inside the stage directory
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;

  nlohmann::json to_json() const;
  static StageManifest from_json(const nlohmann::json& j);
};

// Hex FNV-1a digest of a file's bytes.
std::string file_digest(const std::filesystem::path& path);
std::string text_digest(std::string_view s);

struct RunOptions {
  Stage until = Stage::report;
  bool force = false;
  unsigned jobs = 1;
  std::ostream* log = nullptr;
  // Ablation: subsample every record to this many generations first.
  std::optional<std::size_t> subsample_m;
};

struct PipelineResult {
  std::vector<std::string> executed;  // e.g. "shared/ingest", "run_0/calibrate", "report"
  std::vector<std::string> skipped;   // up to date
  std::filesystem::path summary_csv;
  std::filesystem::path summary_json;
};

// Runs stages in order up to opts.until. Shared stages (ingest, cluster,
// measure) live under <out>/shared, per-run stages under <out>/run_<r>, and
// the report writes <out>/summary.csv and <out>/summary.json. A stage whose
// manifest matches its current inputs is skipped unless opts.force is set.
PipelineResult run_pipeline(const PipelineConfig& cfg, const RunOptions& opts);

// One full pipeline per m' under <out>/ablate_m<m'>.
std::vector<PipelineResult> run_ablation(const PipelineConfig& cfg, const std::vector<std::size_t>& m_list,
                                         const RunOptions& opts);

// A measure column of the distribution export: the measure and, for T-SC
// and G-SC, its alpha.
struct MeasureColumn {
  Measure measure = Measure::esc;
  std::optional<double> alpha;
  std::string name() const;  // "L-SC", "T-SC(0.5)"
};

std::vector<MeasureColumn> measure_columns(const std::vector<Measure>& measures, const std::vector<double>& alphas);

struct DistributionExport {
  std::vector<MeasureColumn> columns;
  std::vector<std::string> prompt_ids;
  Eigen::MatrixXd confidence;   // prompts x columns, top-cluster probability
  Eigen::MatrixXd correlation;  // columns x columns, NaN where undefined
};

// Top-cluster confidences under the stored log-probabilities and their
// pairwise Pearson correlations.
DistributionExport export_confidences(const std::vector<PromptRecord>& records,
                                      const std::map<std::string, ClusterSet>& clusters,
                                      const std::vector<MeasureColumn>& columns);

// Runs the shared stages, then writes <out>/export/confidences.csv and
// <out>/export/correlation.csv.
PipelineResult run_export(const PipelineConfig& cfg, const RunOptions& opts);

// Shortest round-trip decimal form; "nan" for NaN.
std::string format_double(double v);

}  // namespace semcal
