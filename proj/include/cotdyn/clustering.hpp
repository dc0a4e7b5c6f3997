#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "cotdyn/spectral.hpp"

namespace cotdyn {

enum class FeatureMode { raw, log1p_zscore };

std::string_view to_string(FeatureMode mode);
FeatureMode parse_feature_mode(std::string_view text);

/// Per-dimension feature map applied before clustering. In log1p_zscore mode
/// each coordinate becomes (log(1 + x) - mean) / std.
struct FeatureTransform {
  FeatureMode mode = FeatureMode::raw;
  Eigen::VectorXd means;  // empty in raw mode
  Eigen::VectorXd stds;   // empty in raw mode; never below the floor

  Eigen::Index width() const noexcept { return means.size(); }
};

inline constexpr double kStdFloorThreshold = 1e-12;

/// Fits the transform on pooled rows (population std; stds under 1e-12
/// become 1.0). Throws DomainError on negative input.
FeatureTransform fit_transform_params(const Eigen::MatrixXd& rows, FeatureMode mode);

Eigen::VectorXd apply_transform(const FeatureTransform& t, const Eigen::VectorXd& row);
Eigen::MatrixXd apply_transform(const FeatureTransform& t, const Eigen::MatrixXd& rows);

struct KMeansOptions {
  std::size_t k_clu = 5;
  std::uint64_t seed = 0;
  std::size_t max_iter = 300;
  double tol = 1e-6;
};

struct ClusterModel {
  std::size_t k_clu = 0;
  Eigen::MatrixXd centroids;  // k_clu x width, in transformed feature space
  FeatureTransform transform;
  std::uint64_t seed = 0;
  double inertia = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  /// Inertia after the seeding assignment and after every Lloyd iteration.
  std::vector<double> inertia_history;
};

/// Lloyd's algorithm with k-means++ seeding. Rows are put in a canonical
/// (lexicographic) order first, so the model depends on the row multiset and
/// the seed only. Centroids are returned sorted by their first coordinate.
/// Throws ConfigurationError when N < k or fewer than k distinct rows exist,
/// ValidationError on non-finite input.
ClusterModel kmeans_fit(const Eigen::MatrixXd& rows, const KMeansOptions& options);

/// Index of the nearest centroid (squared Euclidean; lowest index on ties).
std::size_t nearest_centroid(const Eigen::MatrixXd& centroids, const Eigen::VectorXd& row);

struct StateSequence {
  std::string trace_id;
  std::vector<std::uint16_t> states;  // 0-based cluster ids
};

StateSequence assign_states(const ClusterModel& model, const SpectralTrajectory& traj);

/// Pools rows of every trajectory, fits the transform, clusters, and stores
/// the transform inside the returned model.
ClusterModel fit_cluster_model(const std::vector<SpectralTrajectory>& trajectories, FeatureMode mode,
                               const KMeansOptions& options);

Eigen::MatrixXd pool_rows(const std::vector<SpectralTrajectory>& trajectories);

nlohmann::json to_json(const ClusterModel& model);
ClusterModel cluster_model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StateSequence& seq);
StateSequence state_sequence_from_json(const nlohmann::json& j);

}  // namespace cotdyn
