#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "cotdyn/clustering.hpp"
#include "cotdyn/error.hpp"
#include "oracles/oracles.hpp"

using namespace cotdyn;

namespace {

Eigen::MatrixXd column(std::initializer_list<double> v) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

oracle::Mat to_mat(const Eigen::MatrixXd& m) {
  oracle::Mat out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  }
  return out;
}

// k blobs in d dims; centers 10 apart per axis, unit std.
Eigen::MatrixXd blobs(std::mt19937_64& rng, int k, int per, int d, std::vector<int>& labels, double sep = 10.0) {
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd rows(k * per, d);
  labels.clear();
  for (int c = 0; c < k; ++c) {
    Eigen::VectorXd center = Eigen::VectorXd::Zero(d);
    center(c % d) = sep * (1 + c / d);
    for (int i = 0; i < per; ++i) {
      for (int j = 0; j < d; ++j) rows(c * per + i, j) = center(j) + n(rng);
      labels.push_back(c);
    }
  }
  return rows;
}

}  // namespace

TEST(FeatureTransform, DegenerateStdFloored) {
  const auto t = fit_transform_params(Eigen::MatrixXd::Zero(1, 2), FeatureMode::log1p_zscore);
  EXPECT_EQ(t.means, Eigen::Vector2d(0, 0));
  EXPECT_EQ(t.stds, Eigen::Vector2d(1, 1));
}

TEST(FeatureTransform, PopulationStd) {
  const auto t = fit_transform_params(column({std::exp(1.0) - 1, std::exp(2.0) - 1}), FeatureMode::log1p_zscore);
  EXPECT_NEAR(t.means(0), 1.5, 1e-12);
  EXPECT_NEAR(t.stds(0), 0.5, 1e-12);
}

TEST(FeatureTransform, RawIsIdentity) {
  const auto t = fit_transform_params(column({1, 2, 3}), FeatureMode::raw);
  EXPECT_EQ(t.width(), 0);
  EXPECT_EQ(apply_transform(t, Eigen::VectorXd(Eigen::Vector2d(25, 0))), Eigen::VectorXd(Eigen::Vector2d(25, 0)));
}

TEST(FeatureTransform, Centering) {
  FeatureTransform t{FeatureMode::log1p_zscore, Eigen::Vector2d(1, 1), Eigen::Vector2d(1, 1)};
  const double x = std::exp(1.0) - 1;
  const auto out = apply_transform(t, Eigen::VectorXd(Eigen::Vector2d(x, x)));
  EXPECT_NEAR(out(0), 0.0, 1e-15);
  EXPECT_NEAR(out(1), 0.0, 1e-15);
}

TEST(FeatureTransform, MatchesScalarLoop) {
  std::mt19937_64 rng(1);
  std::exponential_distribution<double> e(0.1);
  Eigen::MatrixXd rows(30, 4);
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows(i) = e(rng);
  rows.col(3).setConstant(2.0);  // constant column exercises the floor
  const auto t = fit_transform_params(rows, FeatureMode::log1p_zscore);
  const auto out = apply_transform(t, rows);
  const auto ref = oracle::log1p_zscore(to_mat(rows));
  for (int i = 0; i < 30; ++i) {
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(out(i, j), ref[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], 1e-12);
  }
}

TEST(FeatureTransform, Errors) {
  EXPECT_THROW(fit_transform_params(column({1, -1}), FeatureMode::log1p_zscore), DomainError);
  const auto t = fit_transform_params(Eigen::MatrixXd::Ones(3, 2), FeatureMode::log1p_zscore);
  EXPECT_THROW(apply_transform(t, Eigen::VectorXd(Eigen::Vector3d(1, 1, 1))), DimensionError);
}

TEST(KMeans, EachPointOwnCentroid) {
  KMeansOptions opt;
  opt.k_clu = 3;
  const auto m = kmeans_fit(column({5, 1, 3}), opt);
  EXPECT_EQ(m.inertia, 0.0);
  EXPECT_EQ(m.centroids, column({1, 3, 5}));
}

TEST(KMeans, SingleClusterIsMean) {
  KMeansOptions opt;
  opt.k_clu = 1;
  Eigen::MatrixXd rows(3, 2);
  rows << 0, 0, 2, 4, 4, 2;
  const auto m = kmeans_fit(rows, opt);
  EXPECT_NEAR(m.centroids(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(m.centroids(0, 1), 2.0, 1e-12);
}

TEST(KMeans, FourPointOptimum) {
  KMeansOptions opt;
  opt.k_clu = 2;
  const auto m = kmeans_fit(column({0.0, 0.1, 10.0, 10.1}), opt);
  EXPECT_NEAR(m.centroids(0, 0), 0.05, 1e-12);
  EXPECT_NEAR(m.centroids(1, 0), 10.05, 1e-12);
  EXPECT_NEAR(m.inertia, oracle::best_two_partition_sse({0.0, 0.1, 10.0, 10.1}), 1e-12);
}

TEST(KMeans, TooFewPoints) {
  KMeansOptions opt;
  opt.k_clu = 3;
  EXPECT_THROW(kmeans_fit(column({1, 2}), opt), ConfigurationError);
  EXPECT_THROW(kmeans_fit(column({1, 1, 1, 2}), opt), ConfigurationError);
  EXPECT_THROW(kmeans_fit(column({1, 2, std::nan("")}), opt), ValidationError);
}

TEST(KMeans, InertiaMonotone) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  for (int run = 0; run < 30; ++run) {
    Eigen::MatrixXd rows(60, 3);
    for (Eigen::Index i = 0; i < rows.size(); ++i) rows(i) = n(rng);
    KMeansOptions opt;
    opt.k_clu = 2 + run % 5;
    opt.seed = static_cast<std::uint64_t>(run);
    const auto m = kmeans_fit(rows, opt);
    ASSERT_GE(m.inertia_history.size(), 1u);
    for (std::size_t i = 1; i < m.inertia_history.size(); ++i) {
      EXPECT_LE(m.inertia_history[i], m.inertia_history[i - 1] * (1 + 1e-9));
    }
  }
}

TEST(KMeans, SeparatedBlobsAriOne) {
  std::mt19937_64 rng(3);
  for (int k : {2, 3, 5}) {
    std::vector<int> labels;
    const auto rows = blobs(rng, k, 40, 3, labels);
    KMeansOptions opt;
    opt.k_clu = static_cast<std::size_t>(k);
    opt.seed = 9;
    const auto m = kmeans_fit(rows, opt);
    std::vector<int> got;
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      got.push_back(static_cast<int>(nearest_centroid(m.centroids, rows.row(i).transpose())));
    }
    EXPECT_DOUBLE_EQ(oracle::adjusted_rand_index(labels, got), 1.0) << "k=" << k;
  }
}

TEST(KMeans, DeterministicAndPermutationInvariant) {
  std::mt19937_64 rng(4);
  std::vector<int> labels;
  const auto rows = blobs(rng, 4, 25, 2, labels, 3.0);
  KMeansOptions opt;
  opt.k_clu = 4;
  opt.seed = 77;
  const auto a = kmeans_fit(rows, opt);
  const auto b = kmeans_fit(rows, opt);
  EXPECT_EQ(a.centroids, b.centroids);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(rows.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Eigen::MatrixXd shuffled(rows.rows(), rows.cols());
  for (std::size_t i = 0; i < order.size(); ++i) shuffled.row(static_cast<Eigen::Index>(i)) = rows.row(order[i]);
  const auto c = kmeans_fit(shuffled, opt);
  EXPECT_EQ(a.centroids, c.centroids);
  EXPECT_EQ(a.inertia, c.inertia);
}

TEST(KMeans, CentroidsSortedByFirstCoordinate) {
  std::mt19937_64 rng(5);
  std::vector<int> labels;
  const auto rows = blobs(rng, 5, 20, 2, labels);
  KMeansOptions opt;
  opt.k_clu = 5;
  const auto m = kmeans_fit(rows, opt);
  for (Eigen::Index i = 1; i < m.centroids.rows(); ++i) EXPECT_LE(m.centroids(i - 1, 0), m.centroids(i, 0));
}

TEST(NearestCentroid, Examples) {
  Eigen::MatrixXd c(4, 2);
  c << 0, 0, 5, 5, 1, 1, 2, 0;
  EXPECT_EQ(nearest_centroid(c, Eigen::Vector2d(1, 1)), 2u);
  EXPECT_EQ(nearest_centroid(c, Eigen::Vector2d(1, 0)), 0u);  // equidistant to 0 and 3
  EXPECT_THROW(nearest_centroid(c, Eigen::Vector3d(1, 0, 0)), DimensionError);
}

TEST(NearestCentroid, MatchesLinearScan) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd c(6, 3);
  for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = n(rng);
  const auto cm = to_mat(c);
  for (int t = 0; t < 500; ++t) {
    const Eigen::Vector3d r(n(rng), n(rng), n(rng));
    EXPECT_EQ(nearest_centroid(c, r), oracle::nearest(cm, {r(0), r(1), r(2)}));
  }
}

TEST(ClusterModel, JsonRoundTrip) {
  std::vector<SpectralTrajectory> trajs(2);
  trajs[0].trace_id = "a";
  trajs[0].k_eig = 2;
  trajs[0].embeddings = (Eigen::MatrixXd(3, 2) << 1, 0, 4, 1, 9, 2).finished();
  trajs[1].trace_id = "b";
  trajs[1].k_eig = 2;
  trajs[1].embeddings = (Eigen::MatrixXd(2, 2) << 2, 0, 20, 3).finished();
  KMeansOptions opt;
  opt.k_clu = 2;
  const auto m = fit_cluster_model(trajs, FeatureMode::log1p_zscore, opt);
  const auto back = cluster_model_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back.centroids, m.centroids);
  EXPECT_EQ(back.transform.means, m.transform.means);
  EXPECT_EQ(back.transform.stds, m.transform.stds);
  EXPECT_EQ(assign_states(back, trajs[0]).states, assign_states(m, trajs[0]).states);
  const auto seq = assign_states(m, trajs[1]);
  EXPECT_EQ(state_sequence_from_json(to_json(seq)).states, seq.states);
}
