#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotdyn/clustering.hpp"
#include "cotdyn/diagnostics.hpp"
#include "cotdyn/markov.hpp"
#include "cotdyn/spectral.hpp"
#include "cotdyn/viz.hpp"

namespace cotdyn {

inline constexpr const char* kVersion = "1.0.0";

struct PipelineConfig {
  std::filesystem::path trace_dir;
  std::filesystem::path output_dir;

  std::size_t k_eig = kDefaultEigenCount;
  std::size_t k_clu = 5;
  GramMode gram_mode = GramMode::cumulative;
  FeatureMode feature_mode = FeatureMode::log1p_zscore;

  std::uint64_t cluster_seed = 1;
  std::size_t kmeans_max_iter = 300;
  double kmeans_tol = 1e-6;

  std::size_t rollouts = 10000;
  std::size_t horizon = kDefaultHorizon;
  std::optional<StartMode> start_mode;  // unset: fixed at argmax of the start distribution
  std::uint64_t rollout_seed = 2;

  PositionPooling pooling = PositionPooling::pooled;
  Alternative alternative = Alternative::greater;

  double tsne_perplexity = 30.0;
  std::size_t tsne_iterations = 1000;
  std::size_t tsne_max_points = 2000;
  bool tsne_raw = false;  // project raw eigenvalues instead of clustering features

  std::size_t sankey_layers = 5;
  std::uint64_t sankey_min_count = 1;
  bool sankey_from_rollouts = false;

  std::size_t threads = 0;  // 0: COT_DYNAMICS_THREADS or hardware concurrency

  /// t-SNE seed, derived from the cluster seed.
  std::uint64_t tsne_seed() const noexcept { return cluster_seed ^ 0x9E3779B97F4A7C15ULL; }
};

/// Checks every count is >= 1 and enumerations parse; throws ConfigurationError.
void validate_config(const PipelineConfig& config);

nlohmann::json to_json(const PipelineConfig& config);
/// Reads a config record. A run manifest is accepted too (its "config" member
/// is used), so a finished run can be replayed from its manifest. Keys absent
/// from the record keep the values already in `base`.
PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});

/// Artifact file names inside the output directory.
namespace artifact {
inline constexpr const char* trajectories = "trajectories.json";
inline constexpr const char* cluster_model = "cluster_model.json";
inline constexpr const char* states = "states.json";
inline constexpr const char* transitions = "transitions.json";
inline constexpr const char* rollouts_bin = "rollouts.bin";
inline constexpr const char* rollouts_header = "rollouts.json";
inline constexpr const char* report = "report.json";
inline constexpr const char* report_csv = "report.csv";
inline constexpr const char* digests = "cluster_digests.json";
inline constexpr const char* heatmap = "heatmap";
inline constexpr const char* sankey = "sankey";
inline constexpr const char* tsne = "tsne";
inline constexpr const char* curve = "curve";
inline constexpr const char* manifest = "manifest.json";
}  // namespace artifact

struct StageResult {
  std::string stage;
  std::vector<std::filesystem::path> outputs;  // relative to the output directory
  nlohmann::json details;
};

/// Validation report over the trace directory; throws ValidationError naming
/// every failing trace when any trace is invalid or none exist.
StageResult run_validate(const PipelineConfig& config);
StageResult run_embed(const PipelineConfig& config);
StageResult run_cluster(const PipelineConfig& config);
StageResult run_transitions(const PipelineConfig& config);
StageResult run_rollout(const PipelineConfig& config);
StageResult run_analyze(const PipelineConfig& config);

enum class VizKind { heatmap, sankey, tsne, curve };
VizKind parse_viz_kind(const std::string& text);
StageResult run_viz(const PipelineConfig& config, VizKind kind);

/// validate -> embed -> cluster -> transitions -> rollout -> analyze -> viz.
/// Always writes manifest.json; on failure the manifest carries
/// status "failed" and the stage name, and the error is rethrown with the
/// stage prefixed to its message.
nlohmann::json run_pipeline(const PipelineConfig& config);

// Artifact readers shared by the stages and tests.
std::vector<SpectralTrajectory> load_trajectories(const std::filesystem::path& output_dir);
std::vector<StateSequence> load_states(const std::filesystem::path& output_dir);
RolloutBatch load_rollouts(const std::filesystem::path& output_dir);

}  // namespace cotdyn
