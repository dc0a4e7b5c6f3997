#include "cotdyn/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "cotdyn/error.hpp"
#include "cotdyn/io_util.hpp"

namespace cotdyn {

using nlohmann::json;

namespace {

ClusterPositions finish(std::vector<double> sums, std::vector<std::uint64_t> counts) {
  ClusterPositions out;
  out.count = std::move(counts);
  out.mean.resize(out.count.size());
  for (std::size_t c = 0; c < out.count.size(); ++c) {
    if (out.count[c] > 0) out.mean[c] = sums[c] / static_cast<double>(out.count[c]);
  }
  return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::optional<double> optional_number(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string optional_fixed(const std::optional<double>& v, int decimals) {
  return v ? format_fixed(*v, decimals) : std::string("-");
}

}  // namespace

ClusterPositions real_cluster_positions(const std::vector<StateSequence>& sequences, std::size_t k_clu) {
  if (sequences.empty()) throw ConfigurationError("no sequences for cluster positions");
  std::vector<double> sums(k_clu, 0.0);
  std::vector<std::uint64_t> counts(k_clu, 0);
  for (const auto& seq : sequences) {
    for (std::size_t t = 0; t < seq.states.size(); ++t) {
      const std::uint16_t s = seq.states[t];
      if (s >= k_clu) {
        throw ValidationError("sequence '" + seq.trace_id + "' position " + std::to_string(t + 1) + ": state " +
                              std::to_string(s) + " outside [0, " + std::to_string(k_clu) + ")");
      }
      sums[s] += static_cast<double>(t + 1);
      ++counts[s];
    }
  }
  return finish(std::move(sums), std::move(counts));
}

ClusterPositions simulated_cluster_positions(const RolloutBatch& batch, PositionPooling pooling) {
  const std::size_t k = batch.k_clu;
  std::vector<double> sums(k, 0.0);
  std::vector<std::uint64_t> counts(k, 0);
  if (pooling == PositionPooling::pooled) {
    for (std::size_t r = 0; r < batch.n_rollouts; ++r) {
      const auto row = batch.rollout(r);
      for (std::size_t p = 0; p < row.size(); ++p) {
        sums[row[p]] += static_cast<double>(p + 1);
        ++counts[row[p]];
      }
    }
    return finish(std::move(sums), std::move(counts));
  }

  // Per-rollout: average the within-rollout mean over rollouts that visit c.
  std::vector<std::uint64_t> visits(k, 0);
  std::vector<double> local_sum(k);
  std::vector<std::uint64_t> local_count(k);
  for (std::size_t r = 0; r < batch.n_rollouts; ++r) {
    std::fill(local_sum.begin(), local_sum.end(), 0.0);
    std::fill(local_count.begin(), local_count.end(), 0);
    const auto row = batch.rollout(r);
    for (std::size_t p = 0; p < row.size(); ++p) {
      local_sum[row[p]] += static_cast<double>(p + 1);
      ++local_count[row[p]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (local_count[c] == 0) continue;
      sums[c] += local_sum[c] / static_cast<double>(local_count[c]);
      ++visits[c];
      counts[c] += local_count[c];
    }
  }
  ClusterPositions out;
  out.count = std::move(counts);
  out.mean.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    if (visits[c] > 0) out.mean[c] = sums[c] / static_cast<double>(visits[c]);
  }
  return out;
}

std::string_view to_string(PValueMethod method) { return method == PValueMethod::exact ? "exact" : "t_approx"; }

std::vector<double> fractional_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) ranks[order[m]] = avg;
    i = j + 1;
  }
  return ranks;
}

CorrelationReport spearman(const std::vector<double>& x, const std::vector<double>& y, Alternative alternative) {
  if (x.size() != y.size()) {
    throw ConfigurationError("spearman inputs differ in length (" + std::to_string(x.size()) + " vs " +
                             std::to_string(y.size()) + ")");
  }
  const std::size_t n = x.size();
  if (n < 3) throw ConfigurationError("spearman needs n >= 3, got " + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw ConfigurationError("spearman inputs must be finite");
  }

  const std::vector<double> rx = fractional_ranks(x);
  const std::vector<double> ry = fractional_ranks(y);
  const auto constant = [](const std::vector<double>& r) {
    return std::all_of(r.begin(), r.end(), [&](double v) { return v == r.front(); });
  };
  if (constant(rx) || constant(ry)) throw DataError("spearman input is constant; rank correlation undefined");

  CorrelationReport rep;
  rep.n = n;
  rep.alternative = alternative;
  rep.rho = std::clamp(pearson(rx, ry), -1.0, 1.0);

  const double eps = 1e-12;
  if (n <= kExactPermutationLimit) {
    rep.method = PValueMethod::exact;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::vector<double> permuted(n);
    std::uint64_t hits = 0, total = 0;
    do {
      for (std::size_t i = 0; i < n; ++i) permuted[i] = ry[perm[i]];
      const double r = pearson(rx, permuted);
      const bool extreme = alternative == Alternative::greater ? r >= rep.rho - eps
                                                               : std::abs(r) >= std::abs(rep.rho) - eps;
      hits += extreme ? 1 : 0;
      ++total;
    } while (std::next_permutation(perm.begin(), perm.end()));
    rep.p_value = static_cast<double>(hits) / static_cast<double>(total);
    return rep;
  }

  rep.method = PValueMethod::t_approx;
  const double df = static_cast<double>(n - 2);
  const boost::math::students_t dist(df);
  double p = 0.0;
  if (std::abs(rep.rho) < 1.0) {
    const double t = rep.rho * std::sqrt(df / (1.0 - rep.rho * rep.rho));
    p = alternative == Alternative::greater ? boost::math::cdf(boost::math::complement(dist, t))
                                            : 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  } else if (alternative == Alternative::greater && rep.rho < 0.0) {
    p = 1.0;
  }
  // No permutation test can report less than one arrangement in n!.
  double floor = std::exp(-std::lgamma(static_cast<double>(n) + 1.0));
  if (floor <= 0.0) floor = std::numeric_limits<double>::denorm_min();
  rep.p_value = std::clamp(p, floor, 1.0);
  return rep;
}

PositionCurve position_curve(const RolloutBatch& batch, const std::vector<std::optional<double>>& real_means) {
  std::vector<bool> missing(batch.k_clu, false);
  for (std::uint16_t s : batch.states) {
    if (s >= real_means.size() || !real_means[s]) missing[s] = true;
  }
  std::string missing_list;
  for (std::size_t c = 0; c < missing.size(); ++c) {
    if (missing[c]) missing_list += (missing_list.empty() ? "" : ", ") + std::to_string(c);
  }
  if (!missing_list.empty()) {
    throw DataError("no real mean step index for visited cluster(s): " + missing_list);
  }

  PositionCurve curve;
  const std::size_t w = batch.width();
  const auto n = static_cast<double>(batch.n_rollouts);
  curve.values.assign(w, 0.0);
  curve.std_errors.assign(w, 0.0);
  for (std::size_t p = 0; p < w; ++p) {
    double sum = 0.0;
    for (std::size_t r = 0; r < batch.n_rollouts; ++r) sum += *real_means[batch.states[r * w + p]];
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t r = 0; r < batch.n_rollouts; ++r) {
      const double d = *real_means[batch.states[r * w + p]] - mean;
      ss += d * d;
    }
    curve.values[p] = mean;
    curve.std_errors[p] = batch.n_rollouts > 1 ? std::sqrt(ss / (n - 1.0) / n) : std::numeric_limits<double>::quiet_NaN();
  }
  return curve;
}

ConsistencyReport consistency_report(const std::vector<StateSequence>& sequences, const RolloutBatch& batch,
                                     std::size_t k_clu, const ConsistencyOptions& options) {
  if (batch.k_clu != k_clu) {
    throw ConfigurationError("rollout batch has k_clu=" + std::to_string(batch.k_clu) + ", expected " +
                             std::to_string(k_clu));
  }
  const ClusterPositions real = real_cluster_positions(sequences, k_clu);
  const ClusterPositions sim = simulated_cluster_positions(batch, options.pooling);

  ConsistencyReport rep;
  rep.k_clu = k_clu;
  std::vector<double> xs, ys;
  for (std::size_t c = 0; c < k_clu; ++c) {
    rep.clusters.push_back({c, real.mean[c], sim.mean[c], real.count[c], sim.count[c]});
    if (real.mean[c] && sim.mean[c]) {
      rep.paired_clusters.push_back(c);
      xs.push_back(*sim.mean[c]);
      ys.push_back(*real.mean[c]);
    }
  }
  if (xs.size() < 3) {
    rep.correlation_note = "only " + std::to_string(xs.size()) + " clusters have both means; need 3";
  } else {
    try {
      rep.correlation = spearman(xs, ys, options.alternative);
      if (xs.size() < k_clu) {
        rep.correlation_note = std::to_string(k_clu - xs.size()) + " cluster(s) excluded for missing means";
      }
    } catch (const DataError& e) {
      rep.correlation_note = e.what();
    }
  }
  rep.curve = position_curve(batch, real.mean);
  return rep;
}

json to_json(const ConsistencyReport& report) {
  json clusters = json::array();
  for (const auto& c : report.clusters) {
    clusters.push_back({{"cluster", c.cluster},
                        {"sim_real", optional_fixed(c.sim_mean_index, 2) + "/" + optional_fixed(c.real_mean_index, 2)},
                        {"sim_mean_index", optional_json(c.sim_mean_index)},
                        {"real_mean_index", optional_json(c.real_mean_index)},
                        {"sim_count", c.sim_count},
                        {"real_count", c.real_count}});
  }
  json corr = nullptr;
  if (report.correlation) {
    const auto& r = *report.correlation;
    corr = {{"rho", r.rho},
            {"p_value", r.p_value},
            {"n", r.n},
            {"method", std::string(to_string(r.method))},
            {"alternative", r.alternative == Alternative::greater ? "greater" : "two_sided"}};
  }
  return json{{"k_clu", report.k_clu},
              {"clusters", std::move(clusters)},
              {"paired_clusters", report.paired_clusters},
              {"correlation", std::move(corr)},
              {"note", report.correlation_note},
              {"curve", {{"values", report.curve.values}, {"std_errors", report.curve.std_errors}}}};
}

ConsistencyReport consistency_report_from_json(const json& j) {
  ConsistencyReport rep;
  try {
    rep.k_clu = j.at("k_clu").get<std::size_t>();
    for (const auto& c : j.at("clusters")) {
      rep.clusters.push_back({c.at("cluster").get<std::size_t>(), optional_number(c, "real_mean_index"),
                              optional_number(c, "sim_mean_index"), c.at("real_count").get<std::uint64_t>(),
                              c.at("sim_count").get<std::uint64_t>()});
    }
    rep.paired_clusters = j.at("paired_clusters").get<std::vector<std::size_t>>();
    if (!j.at("correlation").is_null()) {
      const auto& c = j.at("correlation");
      CorrelationReport r;
      r.rho = c.at("rho").get<double>();
      r.p_value = c.at("p_value").get<double>();
      r.n = c.at("n").get<std::size_t>();
      r.method = c.at("method").get<std::string>() == "exact" ? PValueMethod::exact : PValueMethod::t_approx;
      r.alternative = c.at("alternative").get<std::string>() == "greater" ? Alternative::greater : Alternative::two_sided;
      rep.correlation = r;
    }
    rep.correlation_note = j.value("note", std::string{});
    const auto& curve = j.at("curve");
    rep.curve.values = curve.at("values").get<std::vector<double>>();
    // NaN standard errors are stored as null.
    for (const auto& v : curve.at("std_errors")) {
      rep.curve.std_errors.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed consistency report: ") + e.what());
  }
  return rep;
}

std::string to_csv(const ConsistencyReport& report) {
  std::ostringstream out;
  out << "cluster,sim_mean_index,real_mean_index,sim_count,real_count\n";
  for (const auto& c : report.clusters) {
    out << c.cluster << ',' << (c.sim_mean_index ? format_fixed(*c.sim_mean_index, 6) : "") << ','
        << (c.real_mean_index ? format_fixed(*c.real_mean_index, 6) : "") << ',' << c.sim_count << ','
        << c.real_count << '\n';
  }
  out << '\n' << "statistic,value\n";
  if (report.correlation) {
    const auto& r = *report.correlation;
    out << "rho," << format_fixed(r.rho, 6) << '\n'
        << "p_value," << format_fixed(r.p_value, 6) << '\n'
        << "n," << r.n << '\n'
        << "method," << to_string(r.method) << '\n';
  } else {
    out << "rho,\np_value,\nn," << report.paired_clusters.size() << "\nmethod,\n";
  }
  return out.str();
}

}  // namespace cotdyn
