#include "cotdyn/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "cotdyn/error.hpp"
#include "cotdyn/parallel.hpp"

namespace cotdyn {

using nlohmann::json;

std::string_view to_string(GramMode mode) { return mode == GramMode::cumulative ? "cumulative" : "local"; }

GramMode parse_gram_mode(std::string_view text) {
  if (text == "cumulative") return GramMode::cumulative;
  if (text == "local") return GramMode::local;
  throw ConfigurationError("unknown gram mode '" + std::string(text) + "' (expected cumulative|local)");
}

GramMatrix local_gram(const StepRecord& step) {
  const Eigen::MatrixXd x = step.tokens.cast<double>();
  GramMatrix g = GramMatrix::Zero(x.cols(), x.cols());
  g.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
  // Mirror the lower triangle so the stored matrix is exactly symmetric.
  return g.selfadjointView<Eigen::Lower>();
}

GramMatrix accumulate(const std::optional<GramMatrix>& prev, const GramMatrix& local) {
  if (!prev) return local;
  if (prev->rows() != local.rows() || prev->cols() != local.cols()) {
    throw DimensionError("cannot accumulate " + std::to_string(local.rows()) + "x" + std::to_string(local.cols()) +
                         " onto " + std::to_string(prev->rows()) + "x" + std::to_string(prev->cols()));
  }
  return *prev + local;
}

namespace {

std::string diagnostics(const GramMatrix& g) {
  std::ostringstream ss;
  ss << "dim=" << g.rows() << " trace=" << g.trace() << " max|g|=" << g.cwiseAbs().maxCoeff()
     << " finite=" << (g.allFinite() ? "yes" : "no");
  return ss.str();
}

}  // namespace

Eigen::VectorXd eigenvalues_descending(const GramMatrix& g) {
  if (g.rows() != g.cols()) {
    throw DimensionError("eigenvalues need a square matrix, got " + std::to_string(g.rows()) + "x" +
                         std::to_string(g.cols()));
  }
  if (g.size() == 0) return {};
  if (!g.allFinite()) throw NumericalError("non-finite matrix entries (" + diagnostics(g) + ")");
  const double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
  const double asym = (g - g.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-9 * scale) {
    throw DimensionError("matrix is not symmetric: max |g - g^T| = " + std::to_string(asym));
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(g, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("symmetric eigensolver did not converge (" + diagnostics(g) + ")");
  }
  Eigen::VectorXd ascending = solver.eigenvalues();
  return ascending.reverse();
}

Eigen::VectorXd top_eigenvalues(const GramMatrix& g, std::size_t k_eig) {
  if (k_eig == 0) throw ConfigurationError("k_eig must be >= 1");
  const Eigen::VectorXd all = eigenvalues_descending(g);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k_eig));
  const Eigen::Index keep = std::min<Eigen::Index>(all.size(), out.size());
  out.head(keep) = all.head(keep).cwiseMax(0.0);
  return out;
}

SpectralTrajectory embed_trace(const Trace& trace, std::size_t k_eig, GramMode mode) {
  if (k_eig == 0) throw ConfigurationError("k_eig must be >= 1");
  validate_trace(trace);

  SpectralTrajectory traj;
  traj.trace_id = trace.trace_id;
  traj.k_eig = k_eig;
  traj.mode = mode;
  traj.dim = trace.dim;
  traj.embeddings.resize(static_cast<Eigen::Index>(trace.length()), static_cast<Eigen::Index>(k_eig));

  std::optional<GramMatrix> running;
  for (std::size_t t = 0; t < trace.length(); ++t) {
    GramMatrix local = local_gram(trace.steps[t]);
    const GramMatrix* g = &local;
    if (mode == GramMode::cumulative) {
      running = accumulate(running, local);
      g = &*running;
    }
    const Eigen::VectorXd spectrum = eigenvalues_descending(*g);
    const double floor = -1e-6 * std::max(1.0, g->trace());
    if (spectrum.size() > 0 && spectrum(spectrum.size() - 1) < floor) {
      throw NumericalError("trace '" + trace.trace_id + "' step " + std::to_string(t + 1) +
                           ": Gram matrix not PSD, min eigenvalue " + std::to_string(spectrum(spectrum.size() - 1)));
    }
    Eigen::VectorXd row = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k_eig));
    const Eigen::Index keep = std::min<Eigen::Index>(spectrum.size(), row.size());
    row.head(keep) = spectrum.head(keep).cwiseMax(0.0);
    traj.embeddings.row(static_cast<Eigen::Index>(t)) = row.transpose();
  }
  return traj;
}

std::vector<SpectralTrajectory> embed_corpus(const std::vector<Trace>& traces, std::size_t k_eig, GramMode mode,
                                             std::size_t threads) {
  std::vector<SpectralTrajectory> out(traces.size());
  parallel_for(
      traces.size(), [&](std::size_t i) { out[i] = embed_trace(traces[i], k_eig, mode); }, threads);
  return out;
}

json to_json(const SpectralTrajectory& traj) {
  json rows = json::array();
  for (Eigen::Index t = 0; t < traj.embeddings.rows(); ++t) {
    std::vector<double> r(traj.embeddings.cols());
    for (Eigen::Index i = 0; i < traj.embeddings.cols(); ++i) r[i] = traj.embeddings(t, i);
    rows.push_back(std::move(r));
  }
  return json{{"trace_id", traj.trace_id},
              {"k_eig", traj.k_eig},
              {"mode", std::string(to_string(traj.mode))},
              {"dim", traj.dim},
              {"zero_padded", traj.zero_padded()},
              {"embeddings", std::move(rows)}};
}

SpectralTrajectory trajectory_from_json(const json& j) {
  SpectralTrajectory traj;
  try {
    traj.trace_id = j.at("trace_id").get<std::string>();
    traj.k_eig = j.at("k_eig").get<std::size_t>();
    traj.mode = parse_gram_mode(j.at("mode").get<std::string>());
    traj.dim = j.value("dim", traj.k_eig);
    const auto& rows = j.at("embeddings");
    traj.embeddings.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(traj.k_eig));
    for (std::size_t t = 0; t < rows.size(); ++t) {
      const auto& r = rows[t];
      if (r.size() != traj.k_eig) {
        throw FormatError("trajectory '" + traj.trace_id + "' row " + std::to_string(t + 1) + " has " +
                          std::to_string(r.size()) + " values, expected " + std::to_string(traj.k_eig));
      }
      for (std::size_t i = 0; i < traj.k_eig; ++i) {
        traj.embeddings(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = r[i].get<double>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed trajectory record: ") + e.what());
  }
  return traj;
}

}  // namespace cotdyn
