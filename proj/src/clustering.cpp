#include "cotdyn/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "cotdyn/error.hpp"
#include "cotdyn/random.hpp"

namespace cotdyn {

using nlohmann::json;

std::string_view to_string(FeatureMode mode) { return mode == FeatureMode::raw ? "raw" : "log1p_zscore"; }

FeatureMode parse_feature_mode(std::string_view text) {
  if (text == "raw") return FeatureMode::raw;
  if (text == "log1p_zscore") return FeatureMode::log1p_zscore;
  throw ConfigurationError("unknown feature mode '" + std::string(text) + "' (expected raw|log1p_zscore)");
}

FeatureTransform fit_transform_params(const Eigen::MatrixXd& rows, FeatureMode mode) {
  if (rows.rows() < 1) throw ConfigurationError("cannot fit a feature transform on zero rows");
  FeatureTransform t;
  t.mode = mode;
  if (mode == FeatureMode::raw) return t;
  if ((rows.array() < 0.0).any()) throw DomainError("log1p transform needs non-negative features");

  const Eigen::MatrixXd logged = rows.array().log1p().matrix();
  const double n = static_cast<double>(rows.rows());
  t.means = logged.colwise().sum().transpose() / n;
  t.stds.resize(rows.cols());
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    const double var = (logged.col(c).array() - t.means(c)).square().sum() / n;
    const double sd = std::sqrt(var);
    t.stds(c) = sd < kStdFloorThreshold ? 1.0 : sd;
  }
  return t;
}

Eigen::VectorXd apply_transform(const FeatureTransform& t, const Eigen::VectorXd& row) {
  if (t.mode == FeatureMode::raw) return row;
  if (row.size() != t.width()) {
    throw DimensionError("feature row has " + std::to_string(row.size()) + " values, transform expects " +
                         std::to_string(t.width()));
  }
  return ((row.array().log1p() - t.means.array()) / t.stds.array()).matrix();
}

Eigen::MatrixXd apply_transform(const FeatureTransform& t, const Eigen::MatrixXd& rows) {
  if (t.mode == FeatureMode::raw) return rows;
  if (rows.cols() != t.width()) {
    throw DimensionError("feature rows have " + std::to_string(rows.cols()) + " columns, transform expects " +
                         std::to_string(t.width()));
  }
  Eigen::MatrixXd out = rows.array().log1p().matrix();
  out.rowwise() -= t.means.transpose();
  out.array().rowwise() /= t.stds.transpose().array();
  return out;
}

std::size_t nearest_centroid(const Eigen::MatrixXd& centroids, const Eigen::VectorXd& row) {
  if (row.size() != centroids.cols()) {
    throw DimensionError("row width " + std::to_string(row.size()) + " differs from centroid width " +
                         std::to_string(centroids.cols()));
  }
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < centroids.rows(); ++j) {
    const double d = (centroids.row(j).transpose() - row).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::size_t>(j);
    }
  }
  return best;
}

namespace {

bool lex_less(const Eigen::MatrixXd& m, Eigen::Index a, Eigen::Index b) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (m(a, c) < m(b, c)) return true;
    if (m(b, c) < m(a, c)) return false;
  }
  return false;
}

struct LloydRun {
  Eigen::MatrixXd centroids;
  double inertia = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> history;
};

double assign_all(const Eigen::MatrixXd& x, const Eigen::MatrixXd& c, std::vector<std::size_t>& labels,
                  std::vector<double>& dist) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const std::size_t j = nearest_centroid(c, x.row(i).transpose());
    labels[static_cast<std::size_t>(i)] = j;
    dist[static_cast<std::size_t>(i)] = (x.row(i) - c.row(static_cast<Eigen::Index>(j))).squaredNorm();
    total += dist[static_cast<std::size_t>(i)];
  }
  return total;
}

Eigen::MatrixXd plus_plus_seed(const Eigen::MatrixXd& x, std::size_t k, RandomStream& rng) {
  const auto n = static_cast<std::size_t>(x.rows());
  Eigen::MatrixXd c(static_cast<Eigen::Index>(k), x.cols());
  std::size_t first = rng.below(n);
  c.row(0) = x.row(static_cast<Eigen::Index>(first));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = (x.row(static_cast<Eigen::Index>(i)) - c.row(0)).squaredNorm();

  for (std::size_t j = 1; j < k; ++j) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    const double target = rng.uniform() * total;
    std::size_t pick = n;
    double cum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      cum += d2[i];
      pick = i;
      if (cum > target) break;
    }
    c.row(static_cast<Eigen::Index>(j)) = x.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (x.row(static_cast<Eigen::Index>(i)) - c.row(static_cast<Eigen::Index>(j))).squaredNorm());
    }
  }
  return c;
}

LloydRun lloyd(const Eigen::MatrixXd& x, Eigen::MatrixXd centroids, const KMeansOptions& opt) {
  const auto n = static_cast<std::size_t>(x.rows());
  const std::size_t k = opt.k_clu;
  std::vector<std::size_t> labels(n);
  std::vector<double> dist(n);

  LloydRun run;
  run.history.push_back(assign_all(x, centroids, labels, dist));

  for (std::size_t iter = 1; iter <= opt.max_iter; ++iter) {
    std::vector<std::size_t> counts(k, 0);
    for (auto l : labels) ++counts[l];

    // Empty cluster repair: move the point farthest from its centroid.
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] != 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[labels[i]] > 1 && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      if (far == n) break;
      --counts[labels[far]];
      labels[far] = j;
      counts[j] = 1;
      dist[far] = 0.0;
    }

    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), x.cols());
    for (std::size_t i = 0; i < n; ++i) next.row(static_cast<Eigen::Index>(labels[i])) += x.row(static_cast<Eigen::Index>(i));
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] > 0) {
        next.row(static_cast<Eigen::Index>(j)) /= static_cast<double>(counts[j]);
      } else {
        next.row(static_cast<Eigen::Index>(j)) = centroids.row(static_cast<Eigen::Index>(j));
      }
    }

    double shift = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      shift = std::max(shift, (next.row(static_cast<Eigen::Index>(j)) - centroids.row(static_cast<Eigen::Index>(j))).norm());
    }
    centroids = std::move(next);
    run.history.push_back(assign_all(x, centroids, labels, dist));
    run.iterations = iter;
    if (shift < opt.tol) {
      run.converged = true;
      break;
    }
  }
  run.centroids = std::move(centroids);
  run.inertia = run.history.back();
  return run;
}

}  // namespace

ClusterModel kmeans_fit(const Eigen::MatrixXd& rows, const KMeansOptions& options) {
  const std::size_t k = options.k_clu;
  if (k < 1) throw ConfigurationError("k_clu must be >= 1");
  if (options.max_iter < 1) throw ConfigurationError("max_iter must be >= 1");
  if (static_cast<std::size_t>(rows.rows()) < k) {
    throw ConfigurationError("k-means needs at least k_clu=" + std::to_string(k) + " rows, got " +
                             std::to_string(rows.rows()));
  }
  if (!rows.allFinite()) throw ValidationError("k-means input contains non-finite values");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(rows.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return lex_less(rows, a, b); });
  Eigen::MatrixXd x(rows.rows(), rows.cols());
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = rows.row(order[i]);
    if (i == 0 || x.row(static_cast<Eigen::Index>(i)) != x.row(static_cast<Eigen::Index>(i - 1))) ++distinct;
  }
  if (distinct < k) {
    throw ConfigurationError("only " + std::to_string(distinct) + " distinct rows for k_clu=" + std::to_string(k));
  }

  RandomStream rng(options.seed, 0);
  LloydRun run = lloyd(x, plus_plus_seed(x, k, rng), options);

  std::vector<Eigen::Index> perm(k);
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::stable_sort(perm.begin(), perm.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return lex_less(run.centroids, a, b); });

  ClusterModel model;
  model.k_clu = k;
  model.centroids.resize(static_cast<Eigen::Index>(k), rows.cols());
  for (std::size_t j = 0; j < k; ++j) model.centroids.row(static_cast<Eigen::Index>(j)) = run.centroids.row(perm[j]);
  model.seed = options.seed;
  model.inertia = run.inertia;
  model.iterations = run.iterations;
  model.converged = run.converged;
  model.inertia_history = std::move(run.history);
  return model;
}

StateSequence assign_states(const ClusterModel& model, const SpectralTrajectory& traj) {
  if (static_cast<Eigen::Index>(traj.k_eig) != model.centroids.cols() ||
      traj.embeddings.cols() != model.centroids.cols()) {
    throw DimensionError("trajectory '" + traj.trace_id + "' has width " + std::to_string(traj.k_eig) +
                         ", cluster model expects " + std::to_string(model.centroids.cols()));
  }
  const Eigen::MatrixXd features = apply_transform(model.transform, traj.embeddings);
  StateSequence seq;
  seq.trace_id = traj.trace_id;
  seq.states.reserve(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index t = 0; t < features.rows(); ++t) {
    seq.states.push_back(static_cast<std::uint16_t>(nearest_centroid(model.centroids, features.row(t).transpose())));
  }
  return seq;
}

Eigen::MatrixXd pool_rows(const std::vector<SpectralTrajectory>& trajectories) {
  Eigen::Index total = 0;
  Eigen::Index width = trajectories.empty() ? 0 : trajectories.front().embeddings.cols();
  for (const auto& t : trajectories) {
    if (t.embeddings.cols() != width) {
      throw DimensionError("trajectory '" + t.trace_id + "' has width " + std::to_string(t.embeddings.cols()) +
                           ", expected " + std::to_string(width));
    }
    total += t.embeddings.rows();
  }
  Eigen::MatrixXd pooled(total, width);
  Eigen::Index r = 0;
  for (const auto& t : trajectories) {
    pooled.middleRows(r, t.embeddings.rows()) = t.embeddings;
    r += t.embeddings.rows();
  }
  return pooled;
}

ClusterModel fit_cluster_model(const std::vector<SpectralTrajectory>& trajectories, FeatureMode mode,
                               const KMeansOptions& options) {
  const Eigen::MatrixXd pooled = pool_rows(trajectories);
  FeatureTransform transform = fit_transform_params(pooled, mode);
  ClusterModel model = kmeans_fit(apply_transform(transform, pooled), options);
  model.transform = std::move(transform);
  return model;
}

namespace {

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

json to_json(const ClusterModel& model) {
  json centroids = json::array();
  for (Eigen::Index j = 0; j < model.centroids.rows(); ++j) centroids.push_back(vector_json(model.centroids.row(j).transpose()));
  return json{{"k_clu", model.k_clu},
              {"mode", std::string(to_string(model.transform.mode))},
              {"means", vector_json(model.transform.means)},
              {"stds", vector_json(model.transform.stds)},
              {"centroids", std::move(centroids)},
              {"seed", model.seed},
              {"inertia", model.inertia},
              {"iterations", model.iterations},
              {"converged", model.converged},
              {"inertia_history", model.inertia_history}};
}

ClusterModel cluster_model_from_json(const json& j) {
  ClusterModel model;
  try {
    model.k_clu = j.at("k_clu").get<std::size_t>();
    model.transform.mode = parse_feature_mode(j.at("mode").get<std::string>());
    model.transform.means = vector_from(j.at("means"));
    model.transform.stds = vector_from(j.at("stds"));
    const auto& cs = j.at("centroids");
    if (cs.size() != model.k_clu) throw FormatError("centroid count differs from k_clu");
    const std::size_t width = cs.empty() ? 0 : cs[0].size();
    model.centroids.resize(static_cast<Eigen::Index>(model.k_clu), static_cast<Eigen::Index>(width));
    for (std::size_t r = 0; r < cs.size(); ++r) {
      if (cs[r].size() != width) throw FormatError("ragged centroid matrix");
      for (std::size_t c = 0; c < width; ++c) {
        model.centroids(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cs[r][c].get<double>();
      }
    }
    model.seed = j.at("seed").get<std::uint64_t>();
    model.inertia = j.at("inertia").get<double>();
    model.iterations = j.value("iterations", std::size_t{0});
    model.converged = j.value("converged", false);
    model.inertia_history = j.value("inertia_history", std::vector<double>{});
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed cluster model: ") + e.what());
  }
  if (model.transform.mode == FeatureMode::log1p_zscore &&
      (model.transform.means.size() != model.centroids.cols() || model.transform.stds.size() != model.centroids.cols())) {
    throw FormatError("cluster model transform width differs from centroid width");
  }
  return model;
}

json to_json(const StateSequence& seq) { return json{{"trace_id", seq.trace_id}, {"states", seq.states}}; }

StateSequence state_sequence_from_json(const json& j) {
  try {
    return StateSequence{j.at("trace_id").get<std::string>(), j.at("states").get<std::vector<std::uint16_t>>()};
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed state sequence: ") + e.what());
  }
}

}  // namespace cotdyn
