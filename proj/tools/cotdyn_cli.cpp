// cotdyn: command-line driver for the CoT dynamics pipeline.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cotdyn/error.hpp"
#include "cotdyn/pipeline.hpp"

namespace {

using cotdyn::PipelineConfig;

struct Flags {
  std::string config_file;
  std::string traces;
  std::string out;
  std::optional<std::size_t> k_eig;
  std::optional<std::size_t> k_clu;
  std::optional<std::string> gram_mode;
  std::optional<std::string> feature_mode;
  std::optional<std::uint64_t> cluster_seed;
  std::optional<std::size_t> rollouts;
  std::optional<std::size_t> horizon;
  std::optional<std::uint64_t> rollout_seed;
  std::optional<std::string> start_mode;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App& app, Flags& f) {
  app.add_option("--config", f.config_file, "JSON config file (a run manifest also works)");
  app.add_option("--traces", f.traces, "directory of .cotr traces");
  app.add_option("--out", f.out, "output directory");
  app.add_option("--k-eig", f.k_eig, "eigenvalues kept per step (default 64)");
  app.add_option("--k-clu", f.k_clu, "number of latent states (default 5)");
  app.add_option("--gram-mode", f.gram_mode, "cumulative | local");
  app.add_option("--feature-mode", f.feature_mode, "raw | log1p_zscore");
  app.add_option("--cluster-seed", f.cluster_seed, "k-means seed");
  app.add_option("--rollouts", f.rollouts, "number of simulated rollouts");
  app.add_option("--horizon", f.horizon, "rollout length (default 10)");
  app.add_option("--rollout-seed", f.rollout_seed, "rollout seed");
  app.add_option("--start-mode", f.start_mode, "fixed:<c> | empirical");
  app.add_option("--threads", f.threads, "worker threads (0: COT_DYNAMICS_THREADS or all cores)");
}

PipelineConfig merge(const Flags& f) {
  PipelineConfig c;
  if (!f.config_file.empty()) c = cotdyn::load_config(f.config_file, c);
  if (!f.traces.empty()) c.trace_dir = f.traces;
  if (!f.out.empty()) c.output_dir = f.out;
  if (f.k_eig) c.k_eig = *f.k_eig;
  if (f.k_clu) c.k_clu = *f.k_clu;
  if (f.gram_mode) c.gram_mode = cotdyn::parse_gram_mode(*f.gram_mode);
  if (f.feature_mode) c.feature_mode = cotdyn::parse_feature_mode(*f.feature_mode);
  if (f.cluster_seed) c.cluster_seed = *f.cluster_seed;
  if (f.rollouts) c.rollouts = *f.rollouts;
  if (f.horizon) c.horizon = *f.horizon;
  if (f.rollout_seed) c.rollout_seed = *f.rollout_seed;
  if (f.start_mode) c.start_mode = cotdyn::parse_start_mode(*f.start_mode);
  if (f.threads) c.threads = *f.threads;
  cotdyn::validate_config(c);
  return c;
}

void print(const cotdyn::StageResult& r) {
  std::cout << r.stage;
  for (const auto& p : r.outputs) std::cout << ' ' << p.generic_string();
  std::cout << '\n';
  if (r.details.is_object() && r.details.contains("warning")) {
    std::cerr << "warning: " << r.details.at("warning").get<std::string>() << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-state dynamics of chain-of-thought traces"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cotdyn::kVersion));

  Flags flags;
  std::string viz_kind;
  bool json_report = false;

  auto* validate = app.add_subcommand("validate", "check every trace in --traces");
  validate->add_flag("--json", json_report, "print the per-trace report as JSON");
  auto* embed = app.add_subcommand("embed", "spectral trajectories from traces");
  auto* cluster = app.add_subcommand("cluster", "fit k-means and assign states");
  auto* transitions = app.add_subcommand("transitions", "estimate the transition matrix");
  auto* roll = app.add_subcommand("rollout", "simulate latent trajectories");
  auto* analyze = app.add_subcommand("analyze", "simulated vs real consistency report");
  auto* viz = app.add_subcommand("viz", "figure data");
  viz->add_option("kind", viz_kind, "heatmap | sankey | tsne | curve")
      ->required()
      ->check(CLI::IsMember({"heatmap", "sankey", "tsne", "curve"}));
  auto* pipeline = app.add_subcommand("pipeline", "run every stage");
  for (auto* sub : {validate, embed, cluster, transitions, roll, analyze, viz, pipeline}) add_common(*sub, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const PipelineConfig config = merge(flags);
    if (*validate) {
      try {
        const auto r = cotdyn::run_validate(config);
        if (json_report) std::cout << r.details.dump(2) << '\n';
        else std::cout << r.details.size() << " traces ok\n";
      } catch (const cotdyn::Error&) {
        if (json_report) {
          nlohmann::json report = nlohmann::json::array();
          for (const auto& e : cotdyn::validate_corpus(config.trace_dir)) {
            report.push_back({{"file", e.path.filename().string()}, {"ok", e.ok}, {"message", e.message}});
          }
          std::cout << report.dump(2) << '\n';
        }
        throw;
      }
    } else if (*embed) {
      print(cotdyn::run_embed(config));
    } else if (*cluster) {
      print(cotdyn::run_cluster(config));
    } else if (*transitions) {
      print(cotdyn::run_transitions(config));
    } else if (*roll) {
      print(cotdyn::run_rollout(config));
    } else if (*analyze) {
      print(cotdyn::run_analyze(config));
    } else if (*viz) {
      print(cotdyn::run_viz(config, cotdyn::parse_viz_kind(viz_kind)));
    } else if (*pipeline) {
      const auto manifest = cotdyn::run_pipeline(config);
      std::cout << "ok " << (config.output_dir / cotdyn::artifact::manifest).generic_string() << '\n';
      if (manifest.contains("stages")) {
        for (const auto& s : manifest.at("stages")) {
          if (s.at("details").is_object() && s.at("details").contains("warning")) {
            std::cerr << "warning: " << s.at("details").at("warning").get<std::string>() << '\n';
          }
        }
      }
    }
  } catch (const cotdyn::Error& e) {
    std::cerr << "cotdyn: " << cotdyn::to_string(e.kind()) << " error: " << e.what() << '\n';
    return cotdyn::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "cotdyn: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
