#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "cotdyn/clustering.hpp"
#include "cotdyn/diagnostics.hpp"
#include "cotdyn/markov.hpp"

namespace cotdyn {

// ---- t-SNE ---------------------------------------------------------------

struct TsneOptions {
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  double early_exaggeration = 12.0;
  std::size_t exaggeration_iters = 250;
  double learning_rate = 200.0;
  double momentum_initial = 0.5;
  double momentum_final = 0.8;
  std::size_t momentum_switch = 250;
  std::uint64_t seed = 0;
};

struct TsneAffinities {
  Eigen::MatrixXd joint;                 // symmetrized P, sums to 1
  std::vector<double> point_perplexity;  // achieved perplexity of each conditional row
};

/// Conditional Gaussian affinities with per-point bandwidth found by
/// bisection on the entropy, symmetrized as (P + P^T) / 2N.
TsneAffinities tsne_affinities(const Eigen::MatrixXd& rows, double perplexity);

/// KL(P || Q) for the Student-t kernel of a 2-D layout.
double tsne_kl(const Eigen::MatrixXd& joint, const Eigen::MatrixXd& layout);

struct Projection2D {
  Eigen::MatrixXd points;          // N x 2
  Eigen::MatrixXd initial_points;  // seeded starting layout
  std::vector<std::uint16_t> labels;
  std::uint64_t seed = 0;
  double initial_kl = 0.0;
  double final_kl = 0.0;
};

/// Exact O(N^2) t-SNE. Deterministic for a fixed seed. Throws
/// ConfigurationError when N < 5 or perplexity is outside [1, N/3).
Projection2D tsne_project(const Eigen::MatrixXd& rows, const std::vector<std::uint16_t>& labels,
                          const TsneOptions& options);

void tsne_emit(const Projection2D& projection, const std::filesystem::path& prefix);

// ---- heatmap -------------------------------------------------------------

/// Comma-separated grid, 6 decimals, '\n' line ends.
std::string heatmap_grid_text(const Eigen::MatrixXd& p);
Eigen::MatrixXd parse_grid_text(const std::string& text);
std::string heatmap_svg(const Eigen::MatrixXd& p);
/// Hex color of a probability on the white-to-blue ramp.
std::string ramp_color(double value);

/// Writes `<prefix>.csv` and `<prefix>.svg`; returns both paths.
std::vector<std::filesystem::path> heatmap_emit(const TransitionModel& model, const std::filesystem::path& prefix);

// ---- sankey --------------------------------------------------------------

struct SankeyNode {
  std::size_t layer = 0;  // 1-based position
  std::uint16_t cluster = 0;
  std::string label;
};

struct SankeyLink {
  std::size_t source = 0;  // node index
  std::size_t target = 0;
  std::uint64_t weight = 0;
};

struct SankeySpec {
  std::vector<SankeyNode> nodes;
  std::vector<SankeyLink> links;
  std::size_t layers = 0;
  std::uint64_t min_count = 1;
  bool degenerate = false;  // every link was pruned
};

/// Flow graph over the first `layers` positions. Links with weight below
/// `min_count` are dropped; nodes are those referenced by surviving links.
SankeySpec build_sankey(const std::vector<std::vector<std::uint16_t>>& sequences, std::size_t layers,
                        std::uint64_t min_count = 1);
SankeySpec build_sankey(const std::vector<StateSequence>& sequences, std::size_t layers, std::uint64_t min_count = 1);
SankeySpec build_sankey(const RolloutBatch& batch, std::size_t layers, std::uint64_t min_count = 1);

nlohmann::json to_json(const SankeySpec& spec);
std::string sankey_svg(const SankeySpec& spec);
std::vector<std::filesystem::path> sankey_emit(const SankeySpec& spec, const std::filesystem::path& prefix);

// ---- position curve ------------------------------------------------------

/// "position,value" header then one "p,value" row per position with the
/// shortest round-trip decimal form ("1,1.0").
std::string curve_table_text(const PositionCurve& curve);
std::vector<double> parse_curve_table(const std::string& text);
std::string curve_svg(const PositionCurve& curve);
std::vector<std::filesystem::path> curve_emit(const PositionCurve& curve, const std::filesystem::path& prefix);

}  // namespace cotdyn
