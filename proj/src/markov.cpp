#include "cotdyn/markov.hpp"

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "cotdyn/error.hpp"
#include "cotdyn/io_util.hpp"
#include "cotdyn/parallel.hpp"
#include "cotdyn/random.hpp"

namespace cotdyn {

using nlohmann::json;

namespace {

void check_stochastic(const Eigen::MatrixXd& p, const Eigen::VectorXd& start) {
  if (p.rows() != p.cols() || p.rows() == 0) throw DimensionError("transition matrix must be square and non-empty");
  if (start.size() != p.rows()) throw DimensionError("start distribution length differs from matrix size");
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    if ((p.row(i).array() < 0.0).any() || std::abs(p.row(i).sum() - 1.0) > 1e-9) {
      throw ValidationError("transition row " + std::to_string(i) + " is not a probability vector");
    }
  }
  if ((start.array() < 0.0).any() || std::abs(start.sum() - 1.0) > 1e-9) {
    throw ValidationError("start distribution is not a probability vector");
  }
}

std::uint16_t sample_row(const Eigen::MatrixXd& p, std::uint16_t from, double u) {
  const Eigen::Index k = p.cols();
  double cum = 0.0;
  Eigen::Index last_positive = from;
  for (Eigen::Index j = 0; j < k; ++j) {
    const double pj = p(from, j);
    if (pj <= 0.0) continue;
    cum += pj;
    last_positive = j;
    if (u < cum) return static_cast<std::uint16_t>(j);
  }
  // Rounding left u above the accumulated mass.
  return static_cast<std::uint16_t>(last_positive);
}

std::uint16_t sample_vector(const Eigen::VectorXd& dist, double u) {
  double cum = 0.0;
  Eigen::Index last_positive = 0;
  for (Eigen::Index j = 0; j < dist.size(); ++j) {
    if (dist(j) <= 0.0) continue;
    cum += dist(j);
    last_positive = j;
    if (u < cum) return static_cast<std::uint16_t>(j);
  }
  return static_cast<std::uint16_t>(last_positive);
}

void check_start(const TransitionModel& model, const StartMode& start) {
  if (start.kind == StartMode::Kind::fixed && start.state >= model.k_clu) {
    throw ConfigurationError("start state " + std::to_string(start.state) + " outside [0, " +
                             std::to_string(model.k_clu) + ")");
  }
}

}  // namespace

TransitionModel estimate_transitions(const std::vector<StateSequence>& sequences, std::size_t k_clu) {
  if (k_clu == 0) throw ConfigurationError("k_clu must be >= 1");
  if (k_clu > std::numeric_limits<std::uint16_t>::max()) throw ConfigurationError("k_clu exceeds 65535");
  std::size_t usable = 0;
  for (const auto& s : sequences) usable += s.states.empty() ? 0 : 1;
  if (usable == 0) throw ConfigurationError("no non-empty state sequences to estimate transitions from");

  const auto k = static_cast<Eigen::Index>(k_clu);
  TransitionModel m;
  m.k_clu = k_clu;
  m.counts = CountMatrix::Zero(k, k);
  Eigen::VectorXd first = Eigen::VectorXd::Zero(k);
  for (const auto& seq : sequences) {
    for (std::size_t t = 0; t < seq.states.size(); ++t) {
      if (seq.states[t] >= k_clu) {
        throw ValidationError("sequence '" + seq.trace_id + "' position " + std::to_string(t + 1) + ": state " +
                              std::to_string(seq.states[t]) + " outside [0, " + std::to_string(k_clu) + ")");
      }
      if (t > 0) ++m.counts(seq.states[t - 1], seq.states[t]);
    }
    if (!seq.states.empty()) first(seq.states.front()) += 1.0;
  }
  m.n_traces = usable;
  m.start_dist = first / static_cast<double>(usable);

  m.matrix = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    std::uint64_t row_sum = 0;
    for (Eigen::Index j = 0; j < k; ++j) row_sum += m.counts(i, j);
    if (row_sum == 0) {
      m.matrix(i, i) = 1.0;
      continue;
    }
    for (Eigen::Index j = 0; j < k; ++j) {
      m.matrix(i, j) = static_cast<double>(m.counts(i, j)) / static_cast<double>(row_sum);
    }
  }
  return m;
}

TransitionModel model_from_matrix(const Eigen::MatrixXd& p, const Eigen::VectorXd& start_dist) {
  check_stochastic(p, start_dist);
  TransitionModel m;
  m.k_clu = static_cast<std::size_t>(p.rows());
  m.counts = CountMatrix::Zero(p.rows(), p.cols());
  m.matrix = p;
  m.start_dist = start_dist;
  return m;
}

std::string to_string(const StartMode& mode) {
  return mode.kind == StartMode::Kind::empirical ? "empirical" : "fixed:" + std::to_string(mode.state);
}

StartMode parse_start_mode(const std::string& text) {
  if (text == "empirical") return StartMode::empirical();
  if (text.starts_with("fixed:")) {
    const std::string num = text.substr(6);
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(num, &used);
      if (used == num.size() && v <= std::numeric_limits<std::uint16_t>::max()) {
        return StartMode::fixed(static_cast<std::uint16_t>(v));
      }
    } catch (const std::exception&) {
    }
  }
  throw ConfigurationError("bad start mode '" + text + "' (expected fixed:<c> or empirical)");
}

StartMode default_start_mode(const TransitionModel& model) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < model.start_dist.size(); ++i) {
    if (model.start_dist(i) > model.start_dist(best)) best = i;
  }
  return StartMode::fixed(static_cast<std::uint16_t>(best));
}

RolloutBatch rollout(const TransitionModel& model, std::size_t n, std::size_t horizon, const StartMode& start,
                     std::uint64_t seed, std::size_t threads) {
  if (n < 1) throw ConfigurationError("rollout count must be >= 1");
  if (horizon < 1) throw ConfigurationError("rollout horizon must be >= 1");
  check_start(model, start);

  RolloutBatch batch;
  batch.n_rollouts = n;
  batch.horizon = horizon;
  batch.k_clu = model.k_clu;
  batch.seed = seed;
  batch.start_mode = start;
  batch.states.resize(n * (horizon + 1));

  parallel_for(
      n,
      [&](std::size_t r) {
        RandomStream rng(seed, r);
        std::uint16_t* row = batch.states.data() + r * (horizon + 1);
        row[0] = start.kind == StartMode::Kind::fixed ? start.state : sample_vector(model.start_dist, rng.uniform());
        for (std::size_t t = 0; t < horizon; ++t) row[t + 1] = sample_row(model.matrix, row[t], rng.uniform());
      },
      threads);
  return batch;
}

std::vector<WeightedTrajectory> exact_trajectory_enumeration(const TransitionModel& model, std::size_t horizon,
                                                             const StartMode& start) {
  check_start(model, start);
  const double space = std::pow(static_cast<double>(model.k_clu), static_cast<double>(horizon + 1));
  if (space > kEnumerationLimit) {
    throw CapacityError("enumeration of " + std::to_string(model.k_clu) + "^" + std::to_string(horizon + 1) +
                        " trajectories exceeds the 1e7 guard");
  }

  std::vector<WeightedTrajectory> out;
  std::vector<std::uint16_t> path(horizon + 1);
  std::function<void(std::size_t, double)> walk = [&](std::size_t depth, double prob) {
    if (depth == horizon) {
      out.push_back({path, prob});
      return;
    }
    const std::uint16_t from = path[depth];
    for (std::size_t j = 0; j < model.k_clu; ++j) {
      const double pj = model.matrix(from, static_cast<Eigen::Index>(j));
      if (pj <= 0.0) continue;
      path[depth + 1] = static_cast<std::uint16_t>(j);
      walk(depth + 1, prob * pj);
    }
  };

  for (std::size_t s = 0; s < model.k_clu; ++s) {
    double p0 = 0.0;
    if (start.kind == StartMode::Kind::fixed) {
      p0 = s == start.state ? 1.0 : 0.0;
    } else {
      p0 = model.start_dist(static_cast<Eigen::Index>(s));
    }
    if (p0 <= 0.0) continue;
    path[0] = static_cast<std::uint16_t>(s);
    walk(0, p0);
  }
  return out;
}

Estimate monte_carlo_expectation(const RolloutBatch& batch, const TrajectoryFunctional& f) {
  const std::size_t n = batch.n_rollouts;
  std::vector<double> values(n);
  for (std::size_t r = 0; r < n; ++r) values[r] = f(batch.rollout(r));
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  Estimate e;
  e.estimate = mean;
  if (n < 2) {
    e.std_error = std::numeric_limits<double>::quiet_NaN();
    return e;
  }
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  e.std_error = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
  return e;
}

double exact_expectation(const std::vector<WeightedTrajectory>& trajectories, const TrajectoryFunctional& f) {
  double total = 0.0;
  for (const auto& t : trajectories) total += t.probability * f(t.states);
  return total;
}

json to_json(const TransitionModel& model) {
  json counts = json::array();
  json matrix = json::array();
  for (Eigen::Index i = 0; i < model.matrix.rows(); ++i) {
    std::vector<std::uint64_t> c(model.k_clu);
    std::vector<double> p(model.k_clu);
    for (Eigen::Index j = 0; j < model.matrix.cols(); ++j) {
      c[j] = model.counts(i, j);
      p[j] = model.matrix(i, j);
    }
    counts.push_back(std::move(c));
    matrix.push_back(std::move(p));
  }
  return json{{"k_clu", model.k_clu},
              {"counts", std::move(counts)},
              {"matrix", std::move(matrix)},
              {"start_dist", std::vector<double>(model.start_dist.data(), model.start_dist.data() + model.start_dist.size())},
              {"n_traces", model.n_traces}};
}

TransitionModel transition_model_from_json(const json& j) {
  TransitionModel m;
  try {
    m.k_clu = j.at("k_clu").get<std::size_t>();
    const auto k = static_cast<Eigen::Index>(m.k_clu);
    const auto counts = j.at("counts").get<std::vector<std::vector<std::uint64_t>>>();
    const auto matrix = j.at("matrix").get<std::vector<std::vector<double>>>();
    const auto start = j.at("start_dist").get<std::vector<double>>();
    if (counts.size() != m.k_clu || matrix.size() != m.k_clu || start.size() != m.k_clu) {
      throw FormatError("transition model arrays disagree with k_clu");
    }
    m.counts.resize(k, k);
    m.matrix.resize(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
      if (counts[i].size() != m.k_clu || matrix[i].size() != m.k_clu) throw FormatError("ragged transition arrays");
      for (Eigen::Index jx = 0; jx < k; ++jx) {
        m.counts(i, jx) = counts[i][jx];
        m.matrix(i, jx) = matrix[i][jx];
      }
    }
    m.start_dist = Eigen::Map<const Eigen::VectorXd>(start.data(), k);
    m.n_traces = j.value("n_traces", std::size_t{0});
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed transition model: ") + e.what());
  }
  check_stochastic(m.matrix, m.start_dist);
  return m;
}

std::vector<std::uint8_t> encode_rollouts(const RolloutBatch& batch) {
  ByteWriter w;
  w.reserve(16 + 2 * batch.states.size());
  w.u32(static_cast<std::uint32_t>(batch.n_rollouts));
  w.u32(static_cast<std::uint32_t>(batch.horizon));
  w.u64(batch.seed);
  for (std::uint16_t s : batch.states) w.u16(s);
  return std::move(w).take();
}

json rollout_header(const RolloutBatch& batch, std::uint64_t payload_checksum) {
  return json{{"n_rollouts", batch.n_rollouts},
              {"horizon", batch.horizon},
              {"k_clu", batch.k_clu},
              {"seed", batch.seed},
              {"start_mode", to_string(batch.start_mode)},
              {"state_type", "u16"},
              {"checksum", to_hex(payload_checksum)},
              {"checksum_algo", std::string(kChecksumAlgo)}};
}

RolloutBatch decode_rollouts(std::span<const std::uint8_t> bytes, const json& header) {
  ByteReader r(bytes);
  RolloutBatch b;
  b.n_rollouts = r.u32();
  b.horizon = r.u32();
  b.seed = r.u64();
  try {
    b.k_clu = header.at("k_clu").get<std::size_t>();
    b.start_mode = parse_start_mode(header.at("start_mode").get<std::string>());
    if (header.at("n_rollouts").get<std::size_t>() != b.n_rollouts ||
        header.at("horizon").get<std::size_t>() != b.horizon || header.at("seed").get<std::uint64_t>() != b.seed) {
      throw ConsistencyError("rollout header disagrees with binary sizes/seed");
    }
    if (header.contains("checksum") && header.at("checksum").get<std::string>() != to_hex(fnv1a64(bytes))) {
      throw ConsistencyError("rollout checksum mismatch");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed rollout header: ") + e.what());
  }
  const std::size_t count = b.n_rollouts * (b.horizon + 1);
  if (r.remaining() != 2 * count) {
    throw CorruptionError("rollout payload holds " + std::to_string(r.remaining()) + " bytes, expected " +
                          std::to_string(2 * count));
  }
  b.states.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    b.states[i] = r.u16();
    if (b.states[i] >= b.k_clu) throw CorruptionError("rollout state out of range");
  }
  return b;
}

}  // namespace cotdyn
