#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "cotdyn/trace_store.hpp"

namespace cotdyn {

/// dim x dim symmetric positive semidefinite matrix, accumulated in double.
using GramMatrix = Eigen::MatrixXd;

enum class GramMode { cumulative, local };

std::string_view to_string(GramMode mode);
GramMode parse_gram_mode(std::string_view text);

inline constexpr std::size_t kDefaultEigenCount = 64;

/// X^T X for one step's token matrix. The result is exactly symmetric.
GramMatrix local_gram(const StepRecord& step);

/// prev + local, or local when there is no previous matrix.
GramMatrix accumulate(const std::optional<GramMatrix>& prev, const GramMatrix& local);

/// All eigenvalues of a symmetric matrix, non-increasing, unclamped.
/// Throws DimensionError for non-square or asymmetric input and
/// NumericalError when the solver fails to converge.
Eigen::VectorXd eigenvalues_descending(const GramMatrix& g);

/// Largest `k_eig` eigenvalues, non-increasing, negatives clamped to 0,
/// zero-padded to length `k_eig` when the matrix is smaller.
Eigen::VectorXd top_eigenvalues(const GramMatrix& g, std::size_t k_eig);

struct SpectralTrajectory {
  std::string trace_id;
  std::size_t k_eig = 0;
  GramMode mode = GramMode::cumulative;
  std::size_t dim = 0;          // source embedding width; dim < k_eig means zero padding
  Eigen::MatrixXd embeddings;   // T x k_eig, row t is the spectrum after step t+1

  std::size_t length() const noexcept { return static_cast<std::size_t>(embeddings.rows()); }
  bool zero_padded() const noexcept { return dim < k_eig; }
};

/// Spectral trajectory of a trace. In cumulative mode row t holds the top
/// eigenvalues of the running sum of step Gram matrices; in local mode of the
/// step's own Gram matrix. Every accumulated matrix is checked to be PSD
/// within 1e-6 * max(1, trace).
SpectralTrajectory embed_trace(const Trace& trace, std::size_t k_eig, GramMode mode = GramMode::cumulative);

/// Embeds traces in parallel; output order follows input order.
std::vector<SpectralTrajectory> embed_corpus(const std::vector<Trace>& traces, std::size_t k_eig, GramMode mode,
                                             std::size_t threads = 0);

nlohmann::json to_json(const SpectralTrajectory& traj);
SpectralTrajectory trajectory_from_json(const nlohmann::json& j);

}  // namespace cotdyn
