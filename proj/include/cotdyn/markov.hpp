#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "cotdyn/clustering.hpp"

namespace cotdyn {

using CountMatrix = Eigen::Matrix<std::uint64_t, Eigen::Dynamic, Eigen::Dynamic>;

/// First-order chain over latent states. Rows never observed as a source are
/// absorbing (P_ii = 1).
struct TransitionModel {
  std::size_t k_clu = 0;
  CountMatrix counts;
  Eigen::MatrixXd matrix;     // row-stochastic
  Eigen::VectorXd start_dist; // empirical distribution of first states
  std::size_t n_traces = 0;
};

/// Counts adjacent pairs within each sequence (never across sequences).
TransitionModel estimate_transitions(const std::vector<StateSequence>& sequences, std::size_t k_clu);

/// Builds a model directly from a row-stochastic matrix; counts stay zero.
/// Used for simulations over hand-specified chains.
TransitionModel model_from_matrix(const Eigen::MatrixXd& p, const Eigen::VectorXd& start_dist);

struct StartMode {
  enum class Kind { fixed, empirical };
  Kind kind = Kind::fixed;
  std::uint16_t state = 0;  // used when kind == fixed

  static StartMode fixed(std::uint16_t s) { return {Kind::fixed, s}; }
  static StartMode empirical() { return {Kind::empirical, 0}; }
};

std::string to_string(const StartMode& mode);
/// "fixed:<c>" or "empirical".
StartMode parse_start_mode(const std::string& text);

/// Fixed start at argmax of the start distribution (lowest index on ties).
StartMode default_start_mode(const TransitionModel& model);

inline constexpr std::size_t kDefaultHorizon = 10;

struct RolloutBatch {
  std::size_t n_rollouts = 0;
  std::size_t horizon = 0;
  std::size_t k_clu = 0;
  std::uint64_t seed = 0;
  StartMode start_mode;
  std::vector<std::uint16_t> states;  // n_rollouts x (horizon + 1), row-major

  std::size_t width() const noexcept { return horizon + 1; }
  std::span<const std::uint16_t> rollout(std::size_t r) const {
    return std::span<const std::uint16_t>(states).subspan(r * width(), width());
  }
};

/// Ancestral sampling s_{t+1} ~ P(. | s_t) by inverse CDF. Rollout r draws
/// from the Philox stream (seed, r) only, so the batch is identical for any
/// thread count.
RolloutBatch rollout(const TransitionModel& model, std::size_t n, std::size_t horizon, const StartMode& start,
                     std::uint64_t seed, std::size_t threads = 0);

struct WeightedTrajectory {
  std::vector<std::uint16_t> states;
  double probability = 0.0;
};

inline constexpr double kEnumerationLimit = 1e7;

/// Every trajectory of length horizon+1 with nonzero probability, in
/// lexicographic order. Throws CapacityError when k^(horizon+1) > 1e7.
std::vector<WeightedTrajectory> exact_trajectory_enumeration(const TransitionModel& model, std::size_t horizon,
                                                             const StartMode& start);

using TrajectoryFunctional = std::function<double(std::span<const std::uint16_t>)>;

struct Estimate {
  double estimate = 0.0;
  double std_error = 0.0;  // NaN when fewer than two rollouts
};

/// Sample mean of f over the batch and its standard error s / sqrt(N).
Estimate monte_carlo_expectation(const RolloutBatch& batch, const TrajectoryFunctional& f);

/// sum over trajectories of p(tau) f(tau).
double exact_expectation(const std::vector<WeightedTrajectory>& trajectories, const TrajectoryFunctional& f);

nlohmann::json to_json(const TransitionModel& model);
TransitionModel transition_model_from_json(const nlohmann::json& j);

/// Compact binary: u32 n, u32 horizon, u64 seed, then u16 states row-major.
std::vector<std::uint8_t> encode_rollouts(const RolloutBatch& batch);
/// Decodes the binary; k_clu and start mode come from the text header.
RolloutBatch decode_rollouts(std::span<const std::uint8_t> bytes, const nlohmann::json& header);
/// Text header accompanying the binary (k_clu, start mode, sizes, checksum).
nlohmann::json rollout_header(const RolloutBatch& batch, std::uint64_t payload_checksum);

}  // namespace cotdyn
