#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cotdyn/clustering.hpp"
#include "cotdyn/markov.hpp"

namespace cotdyn {

/// Per-cluster mean 1-based position; empty optional when the cluster never occurs.
struct ClusterPositions {
  std::vector<std::optional<double>> mean;
  std::vector<std::uint64_t> count;
};

ClusterPositions real_cluster_positions(const std::vector<StateSequence>& sequences, std::size_t k_clu);

enum class PositionPooling {
  pooled,       // mean over every occurrence in every rollout
  per_rollout,  // mean of per-rollout means, over rollouts visiting the cluster
};

/// Positions in a rollout are 1-based: s_0 sits at position 1.
ClusterPositions simulated_cluster_positions(const RolloutBatch& batch,
                                             PositionPooling pooling = PositionPooling::pooled);

enum class Alternative { greater, two_sided };
enum class PValueMethod { exact, t_approx };

std::string_view to_string(PValueMethod method);

inline constexpr std::size_t kExactPermutationLimit = 8;

struct CorrelationReport {
  double rho = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
  PValueMethod method = PValueMethod::exact;
  Alternative alternative = Alternative::greater;
};

/// Average ranks for ties, 1-based.
std::vector<double> fractional_ranks(const std::vector<double>& values);

/// Spearman rank correlation: Pearson correlation of the fractional rank
/// vectors. For n <= 8 the p-value is exact over all n! permutations of the
/// second rank vector; beyond that a Student-t approximation with n-2 degrees
/// of freedom is used. Throws ConfigurationError on length mismatch or n < 3
/// and DataError when either input is constant.
CorrelationReport spearman(const std::vector<double>& x, const std::vector<double>& y,
                           Alternative alternative = Alternative::greater);

struct PositionCurve {
  std::vector<double> values;      // length horizon + 1
  std::vector<double> std_errors;  // Monte Carlo standard error per position
};

/// values[p] = mean over rollouts of real_means[s_p]. Throws DataError listing
/// every visited cluster without a real mean.
PositionCurve position_curve(const RolloutBatch& batch, const std::vector<std::optional<double>>& real_means);

struct ClusterPositionStats {
  std::size_t cluster = 0;
  std::optional<double> real_mean_index;
  std::optional<double> sim_mean_index;
  std::uint64_t real_count = 0;
  std::uint64_t sim_count = 0;
};

struct ConsistencyReport {
  std::size_t k_clu = 0;
  std::vector<ClusterPositionStats> clusters;
  std::vector<std::size_t> paired_clusters;  // clusters with both means present
  std::optional<CorrelationReport> correlation;  // absent when fewer than 3 pairs
  std::string correlation_note;
  PositionCurve curve;
};

struct ConsistencyOptions {
  PositionPooling pooling = PositionPooling::pooled;
  Alternative alternative = Alternative::greater;
};

ConsistencyReport consistency_report(const std::vector<StateSequence>& sequences, const RolloutBatch& batch,
                                     std::size_t k_clu, const ConsistencyOptions& options = {});

nlohmann::json to_json(const ConsistencyReport& report);
ConsistencyReport consistency_report_from_json(const nlohmann::json& j);
/// Spreadsheet table: one row per cluster, then a summary row.
std::string to_csv(const ConsistencyReport& report);

}  // namespace cotdyn
