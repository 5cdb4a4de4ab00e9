// semcal: runs the semantic calibration pipeline from a JSON config.
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "semcal/error.hpp"
#include "semcal/pipeline.hpp"

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool force = false;
  unsigned jobs = 1;
  bool quiet = false;
};

semcal::PipelineConfig load(const GlobalFlags& g) {
  semcal::PipelineConfig cfg = semcal::load_pipeline_config(g.config);
  if (g.seed) cfg.master_seed = *g.seed;
  return cfg;
}

semcal::RunOptions options(const GlobalFlags& g, semcal::Stage until) {
  semcal::RunOptions o;
  o.until = until;
  o.force = g.force;
  o.jobs = g.jobs;
  o.log = g.quiet ? nullptr : &std::cerr;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic confidence measures, recalibration and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalFlags g;
  app.add_option("--config", g.config, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the master seed");
  app.add_flag("--force", g.force, "Rerun stages even when their manifests are current");
  app.add_option("--jobs", g.jobs, "Worker threads (0 = all cores)")->default_val(1);
  app.add_flag("-q,--quiet", g.quiet, "No progress output");

  struct StageCommand {
    const char* name;
    const char* help;
    semcal::Stage stage;
  };
  const std::vector<StageCommand> stages = {
      {"ingest", "Validate the corpus and split it", semcal::Stage::ingest},
      {"cluster", "Cluster generations by bidirectional entailment", semcal::Stage::cluster},
      {"measure", "Compute semantic confidence distributions", semcal::Stage::measure},
      {"calibrate", "Fit recalibration parameters and select hyperparameters", semcal::Stage::calibrate},
      {"evaluate", "Label correctness and compute metrics on the test split", semcal::Stage::evaluate},
      {"report", "Run everything and write summary.csv / summary.json", semcal::Stage::report},
  };
  std::vector<CLI::App*> stage_cmds;
  for (const auto& s : stages) stage_cmds.push_back(app.add_subcommand(s.name, s.help));

  std::vector<std::size_t> m_list;
  auto* ablate = app.add_subcommand("ablate-m", "Repeat the pipeline with m' generations per prompt");
  ablate->add_option("--m", m_list, "Subsample sizes (default: ablation_m from the config)");
  auto* export_dist = app.add_subcommand("export-dist", "Export top-cluster confidences and their correlations");

  CLI11_PARSE(app, argc, argv);

  try {
    const semcal::PipelineConfig cfg = load(g);
    for (std::size_t i = 0; i < stages.size(); ++i) {
      if (!stage_cmds[i]->parsed()) continue;
      const auto res = semcal::run_pipeline(cfg, options(g, stages[i].stage));
      if (!res.summary_csv.empty() && !g.quiet) std::cerr << "summary: " << res.summary_csv.string() << '\n';
      return 0;
    }
    if (ablate->parsed()) {
      if (m_list.empty()) m_list = cfg.ablation_m;
      for (const auto& res : semcal::run_ablation(cfg, m_list, options(g, semcal::Stage::report)))
        if (!g.quiet) std::cerr << "summary: " << res.summary_csv.string() << '\n';
      return 0;
    }
    if (export_dist->parsed()) {
      semcal::run_export(cfg, options(g, semcal::Stage::measure));
      if (!g.quiet) std::cerr << "export: " << (cfg.output_dir / "export").string() << '\n';
      return 0;
    }
  } catch (const semcal::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
