#include "cotdyn/viz.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cotdyn/error.hpp"
#include "cotdyn/io_util.hpp"
#include "cotdyn/random.hpp"

namespace cotdyn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) { return format_fixed(v, 2); }

std::string svg_header(double width, double height) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" + num(height) +
         "\" viewBox=\"0 0 " + num(width) + " " + num(height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
}

constexpr std::array<const char*, 10> kPalette = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

const char* category_color(std::size_t c) { return kPalette[c % kPalette.size()]; }

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto* begin = s.data();
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc{} || ptr != end) throw FormatError("not a number: '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  for (auto l : split(text, '\n')) {
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

fs::path with_suffix(const fs::path& prefix, const char* ext) {
  fs::path p = prefix;
  p += ext;
  return p;
}

// ---- t-SNE internals ----

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = (x.row(i) - x.row(j)).squaredNorm();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

Eigen::MatrixXd jitter_duplicates(const Eigen::MatrixXd& rows, std::uint64_t seed) {
  const Eigen::Index n = rows.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  auto less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      if (rows(a, c) != rows(b, c)) return rows(a, c) < rows(b, c);
    }
    return a < b;
  };
  std::sort(order.begin(), order.end(), less);
  Eigen::MatrixXd out = rows;
  const double scale = std::max(rows.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  RandomStream rng(seed, 1);
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (rows.row(order[k]) == rows.row(order[k - 1])) {
      for (Eigen::Index c = 0; c < rows.cols(); ++c) out(order[k], c) += 1e-10 * scale * rng.normal();
    }
  }
  return out;
}

}  // namespace

TsneAffinities tsne_affinities(const Eigen::MatrixXd& rows, double perplexity) {
  const Eigen::Index n = rows.rows();
  const Eigen::MatrixXd d = squared_distances(rows);
  const double target = std::log(perplexity);

  TsneAffinities out;
  Eigen::MatrixXd cond = Eigen::MatrixXd::Zero(n, n);
  out.point_perplexity.resize(static_cast<std::size_t>(n));
  std::vector<double> shifted(static_cast<std::size_t>(n));
  std::vector<double> w(static_cast<std::size_t>(n));

  for (Eigen::Index i = 0; i < n; ++i) {
    double dmin = std::numeric_limits<double>::infinity();
    double dmean = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      dmin = std::min(dmin, d(i, j));
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      shifted[j] = j == i ? 0.0 : d(i, j) - dmin;
      dmean += shifted[j];
    }
    dmean /= static_cast<double>(n - 1);

    double beta = dmean > 0.0 ? 1.0 / dmean : 1.0;
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double entropy = 0.0, sum = 0.0;
    for (int it = 0; it < 200; ++it) {
      sum = 0.0;
      double weighted = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        w[j] = j == i ? 0.0 : std::exp(-beta * shifted[j]);
        sum += w[j];
        weighted += w[j] * shifted[j];
      }
      entropy = std::log(sum) + beta * weighted / sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-10) break;
      if (diff > 0.0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    for (Eigen::Index j = 0; j < n; ++j) cond(i, j) = w[j] / sum;
    out.point_perplexity[static_cast<std::size_t>(i)] = std::exp(entropy);
  }

  out.joint = (cond + cond.transpose()) / (2.0 * static_cast<double>(n));
  return out;
}

double tsne_kl(const Eigen::MatrixXd& joint, const Eigen::MatrixXd& layout) {
  const Eigen::Index n = layout.rows();
  Eigen::MatrixXd q(n, n);
  double z = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    q(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = 1.0 / (1.0 + (layout.row(i) - layout.row(j)).squaredNorm());
      q(i, j) = v;
      q(j, i) = v;
      z += 2.0 * v;
    }
  }
  double kl = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j || joint(i, j) <= 0.0) continue;
      kl += joint(i, j) * std::log(joint(i, j) / std::max(q(i, j) / z, std::numeric_limits<double>::min()));
    }
  }
  return std::max(kl, 0.0);
}

Projection2D tsne_project(const Eigen::MatrixXd& rows, const std::vector<std::uint16_t>& labels,
                          const TsneOptions& opt) {
  const Eigen::Index n = rows.rows();
  if (n < 5) throw ConfigurationError("t-SNE needs at least 5 points, got " + std::to_string(n));
  if (!(opt.perplexity >= 1.0) || opt.perplexity >= static_cast<double>(n) / 3.0) {
    throw ConfigurationError("perplexity " + format_shortest(opt.perplexity) + " infeasible for " +
                             std::to_string(n) + " points (need 1 <= perplexity < N/3)");
  }
  if (opt.iterations < 1) throw ConfigurationError("t-SNE iterations must be >= 1");
  if (!rows.allFinite()) throw ValidationError("t-SNE input contains non-finite values");
  if (!labels.empty() && labels.size() != static_cast<std::size_t>(n)) {
    throw DimensionError("t-SNE label count differs from row count");
  }

  const TsneAffinities aff = tsne_affinities(jitter_duplicates(rows, opt.seed), opt.perplexity);
  const Eigen::MatrixXd& p = aff.joint;

  Eigen::MatrixXd y(n, 2);
  RandomStream rng(opt.seed, 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i, 0) = 1e-4 * rng.normal();
    y(i, 1) = 1e-4 * rng.normal();
  }

  Projection2D out;
  out.seed = opt.seed;
  out.labels = labels;
  out.initial_points = y;
  out.initial_kl = tsne_kl(p, y);

  Eigen::MatrixXd update = Eigen::MatrixXd::Zero(n, 2);
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);
  Eigen::MatrixXd num(n, n);
  Eigen::MatrixXd grad(n, 2);
  for (std::size_t iter = 0; iter < opt.iterations; ++iter) {
    const double exaggeration = iter < opt.exaggeration_iters ? opt.early_exaggeration : 1.0;
    const double momentum = iter < opt.momentum_switch ? opt.momentum_initial : opt.momentum_final;

    double z = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double dx = y(i, 0) - y(j, 0);
        const double dy = y(i, 1) - y(j, 1);
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        num(i, j) = v;
        num(j, i) = v;
        z += 2.0 * v;
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      double gx = 0.0, gy = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double m = (exaggeration * p(i, j) - num(i, j) / z) * num(i, j);
        gx += m * (y(i, 0) - y(j, 0));
        gy += m * (y(i, 1) - y(j, 1));
      }
      grad(i, 0) = 4.0 * gx;
      grad(i, 1) = 4.0 * gy;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index c = 0; c < 2; ++c) {
        const bool same_sign = (grad(i, c) > 0.0) == (update(i, c) > 0.0);
        gains(i, c) = same_sign ? std::max(gains(i, c) * 0.8, 0.01) : gains(i, c) + 0.2;
        update(i, c) = momentum * update(i, c) - opt.learning_rate * gains(i, c) * grad(i, c);
        y(i, c) += update(i, c);
      }
    }
    y.rowwise() -= y.colwise().mean();
  }

  if (!y.allFinite()) throw NumericalError("t-SNE diverged to non-finite coordinates");
  out.points = y;
  out.final_kl = tsne_kl(p, y);
  return out;
}

void tsne_emit(const Projection2D& projection, const fs::path& prefix) {
  std::ostringstream csv;
  csv << "x,y,label\n";
  const Eigen::Index n = projection.points.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    csv << format_fixed(projection.points(i, 0), 6) << ',' << format_fixed(projection.points(i, 1), 6) << ','
        << (projection.labels.empty() ? 0 : projection.labels[static_cast<std::size_t>(i)]) << '\n';
  }
  write_text_file(with_suffix(prefix, ".csv"), csv.str());

  const double size = 600.0, margin = 30.0;
  const Eigen::Vector2d lo = projection.points.colwise().minCoeff();
  const Eigen::Vector2d hi = projection.points.colwise().maxCoeff();
  const double span = std::max({hi(0) - lo(0), hi(1) - lo(1), 1e-12});
  std::ostringstream svg;
  svg << svg_header(size, size);
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    const double cx = margin + (projection.points(i, 0) - lo(0)) / span * (size - 2 * margin);
    const double cy = size - margin - (projection.points(i, 1) - lo(1)) / span * (size - 2 * margin);
    const std::size_t label = projection.labels.empty() ? 0 : projection.labels[static_cast<std::size_t>(i)];
    svg << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(cy) << "\" r=\"3\" fill=\"" << category_color(label)
        << "\" fill-opacity=\"0.8\"/>\n";
  }
  svg << "<text x=\"" << num(margin) << "\" y=\"18\">t-SNE of step embeddings (KL " << format_fixed(projection.final_kl, 4)
      << ")</text>\n</svg>\n";
  write_text_file(with_suffix(prefix, ".svg"), svg.str());
}

// ---- heatmap ----

std::string heatmap_grid_text(const Eigen::MatrixXd& p) {
  std::string out;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      if (j > 0) out += ',';
      out += format_fixed(p(i, j), 6);
    }
    out += '\n';
  }
  return out;
}

Eigen::MatrixXd parse_grid_text(const std::string& text) {
  std::vector<std::vector<double>> rows;
  for (auto line : lines_of(text)) {
    std::vector<double> r;
    for (auto cell : split(line, ',')) r.push_back(parse_double(cell));
    if (!rows.empty() && r.size() != rows.front().size()) throw FormatError("ragged grid");
    rows.push_back(std::move(r));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

std::string ramp_color(double value) {
  const double v = std::clamp(value, 0.0, 1.0);
  constexpr std::array<int, 3> top = {8, 48, 107};
  std::array<char, 8> buf{};
  int rgb[3];
  for (int c = 0; c < 3; ++c) rgb[c] = static_cast<int>(std::lround(255.0 + v * (top[c] - 255.0)));
  std::snprintf(buf.data(), buf.size(), "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
  return std::string(buf.data());
}

std::string heatmap_svg(const Eigen::MatrixXd& p) {
  const double cell = 60.0, left = 50.0, top = 40.0;
  const auto k = static_cast<double>(p.rows());
  const double grid = cell * k;
  const double bar_x = left + grid + 30.0, bar_w = 20.0;
  std::ostringstream svg;
  svg << svg_header(bar_x + bar_w + 60.0, top + grid + 40.0);
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  svg << "<text x=\"" << num(left) << "\" y=\"20\">Transition probability (row: from, column: to)</text>\n";
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double y = top + cell * static_cast<double>(i);
    svg << "<text x=\"" << num(left - 8) << "\" y=\"" << num(y + cell / 2 + 4) << "\" text-anchor=\"end\">C" << i
        << "</text>\n";
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double x = left + cell * static_cast<double>(j);
      const double v = p(i, j);
      svg << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(cell) << "\" height=\"" << num(cell)
          << "\" fill=\"" << ramp_color(v) << "\" stroke=\"#cccccc\"><title>" << format_fixed(v, 6)
          << "</title></rect>\n";
      svg << "<text x=\"" << num(x + cell / 2) << "\" y=\"" << num(y + cell / 2 + 4)
          << "\" text-anchor=\"middle\" fill=\"" << (v > 0.5 ? "#ffffff" : "#000000") << "\">" << format_fixed(v, 2)
          << "</text>\n";
    }
  }
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    svg << "<text x=\"" << num(left + cell * static_cast<double>(j) + cell / 2) << "\" y=\"" << num(top + grid + 16)
        << "\" text-anchor=\"middle\">C" << j << "</text>\n";
  }
  // Color scale: 0 at the bottom, 1 at the top, linear.
  svg << "<defs><linearGradient id=\"ramp\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\">"
      << "<stop offset=\"0\" stop-color=\"" << ramp_color(0.0) << "\"/>"
      << "<stop offset=\"1\" stop-color=\"" << ramp_color(1.0) << "\"/></linearGradient></defs>\n";
  svg << "<rect x=\"" << num(bar_x) << "\" y=\"" << num(top) << "\" width=\"" << num(bar_w) << "\" height=\""
      << num(grid) << "\" fill=\"url(#ramp)\" stroke=\"#999999\"/>\n";
  svg << "<text x=\"" << num(bar_x + bar_w + 4) << "\" y=\"" << num(top + 10) << "\">1.0</text>\n";
  svg << "<text x=\"" << num(bar_x + bar_w + 4) << "\" y=\"" << num(top + grid) << "\">0.0</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

std::vector<fs::path> heatmap_emit(const TransitionModel& model, const fs::path& prefix) {
  const fs::path csv = with_suffix(prefix, ".csv");
  const fs::path svg = with_suffix(prefix, ".svg");
  write_text_file(csv, heatmap_grid_text(model.matrix));
  write_text_file(svg, heatmap_svg(model.matrix));
  return {csv, svg};
}

// ---- sankey ----

SankeySpec build_sankey(const std::vector<std::vector<std::uint16_t>>& sequences, std::size_t layers,
                        std::uint64_t min_count) {
  if (layers < 2) throw ConfigurationError("sankey needs at least 2 layers");
  // (layer, from, to) -> count, layer 0-based.
  std::map<std::tuple<std::size_t, std::uint16_t, std::uint16_t>, std::uint64_t> flows;
  for (const auto& seq : sequences) {
    const std::size_t upto = std::min(layers, seq.size());
    for (std::size_t l = 0; l + 1 < upto; ++l) ++flows[{l, seq[l], seq[l + 1]}];
  }

  SankeySpec spec;
  spec.layers = layers;
  spec.min_count = min_count;
  std::map<std::pair<std::size_t, std::uint16_t>, std::size_t> node_ids;
  for (const auto& [key, w] : flows) {
    if (w < min_count) continue;
    node_ids.emplace(std::pair{std::get<0>(key), std::get<1>(key)}, 0);
    node_ids.emplace(std::pair{std::get<0>(key) + 1, std::get<2>(key)}, 0);
  }
  for (auto& [key, id] : node_ids) {
    id = spec.nodes.size();
    spec.nodes.push_back({key.first + 1, key.second, "C" + std::to_string(key.second) + "@" + std::to_string(key.first + 1)});
  }
  for (const auto& [key, w] : flows) {
    if (w < min_count) continue;
    const auto& [l, a, b] = key;
    spec.links.push_back({node_ids.at({l, a}), node_ids.at({l + 1, b}), w});
  }
  spec.degenerate = spec.links.empty();
  return spec;
}

SankeySpec build_sankey(const std::vector<StateSequence>& sequences, std::size_t layers, std::uint64_t min_count) {
  std::vector<std::vector<std::uint16_t>> raw;
  raw.reserve(sequences.size());
  for (const auto& s : sequences) raw.push_back(s.states);
  return build_sankey(raw, layers, min_count);
}

SankeySpec build_sankey(const RolloutBatch& batch, std::size_t layers, std::uint64_t min_count) {
  std::vector<std::vector<std::uint16_t>> raw;
  raw.reserve(batch.n_rollouts);
  for (std::size_t r = 0; r < batch.n_rollouts; ++r) {
    const auto row = batch.rollout(r);
    raw.emplace_back(row.begin(), row.end());
  }
  return build_sankey(raw, layers, min_count);
}

json to_json(const SankeySpec& spec) {
  json nodes = json::array();
  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    const auto& n = spec.nodes[i];
    nodes.push_back({{"id", i}, {"layer", n.layer}, {"cluster", n.cluster}, {"label", n.label}});
  }
  json links = json::array();
  for (const auto& l : spec.links) links.push_back({{"source", l.source}, {"target", l.target}, {"weight", l.weight}});
  return json{{"layers", spec.layers},
              {"min_count", spec.min_count},
              {"degenerate", spec.degenerate},
              {"nodes", std::move(nodes)},
              {"links", std::move(links)}};
}

std::string sankey_svg(const SankeySpec& spec) {
  const double col_gap = 180.0, node_w = 16.0, left = 40.0, top = 40.0, height = 400.0, pad = 10.0;
  std::vector<std::uint64_t> in(spec.nodes.size(), 0), out(spec.nodes.size(), 0);
  for (const auto& l : spec.links) {
    out[l.source] += l.weight;
    in[l.target] += l.weight;
  }
  std::vector<std::uint64_t> layer_total(spec.layers + 1, 0);
  std::vector<std::uint64_t> size(spec.nodes.size());
  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    size[i] = std::max(in[i], out[i]);
    layer_total[spec.nodes[i].layer] += size[i];
  }
  const std::uint64_t max_total = std::max<std::uint64_t>(1, *std::max_element(layer_total.begin(), layer_total.end()));
  const double unit = (height - pad * 5) / static_cast<double>(max_total);

  std::vector<double> node_y(spec.nodes.size()), out_cursor(spec.nodes.size()), in_cursor(spec.nodes.size());
  std::vector<double> layer_cursor(spec.layers + 1, top);
  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    const std::size_t l = spec.nodes[i].layer;
    node_y[i] = layer_cursor[l];
    out_cursor[i] = in_cursor[i] = node_y[i];
    layer_cursor[l] += static_cast<double>(size[i]) * unit + pad;
  }

  std::ostringstream svg;
  svg << svg_header(left * 2 + col_gap * static_cast<double>(spec.layers > 0 ? spec.layers - 1 : 0) + node_w + 60.0,
                    top + height);
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  for (const auto& l : spec.links) {
    const double w = static_cast<double>(l.weight) * unit;
    const double x0 = left + col_gap * static_cast<double>(spec.nodes[l.source].layer - 1) + node_w;
    const double x1 = left + col_gap * static_cast<double>(spec.nodes[l.target].layer - 1);
    const double y0 = out_cursor[l.source] + w / 2;
    const double y1 = in_cursor[l.target] + w / 2;
    out_cursor[l.source] += w;
    in_cursor[l.target] += w;
    const double mx = (x0 + x1) / 2;
    svg << "<path d=\"M" << num(x0) << "," << num(y0) << " C" << num(mx) << "," << num(y0) << " " << num(mx) << ","
        << num(y1) << " " << num(x1) << "," << num(y1) << "\" fill=\"none\" stroke=\""
        << category_color(spec.nodes[l.source].cluster) << "\" stroke-opacity=\"0.4\" stroke-width=\""
        << num(std::max(w, 0.5)) << "\"><title>" << spec.nodes[l.source].label << " -> " << spec.nodes[l.target].label
        << ": " << l.weight << "</title></path>\n";
  }
  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    const double x = left + col_gap * static_cast<double>(spec.nodes[i].layer - 1);
    svg << "<rect x=\"" << num(x) << "\" y=\"" << num(node_y[i]) << "\" width=\"" << num(node_w) << "\" height=\""
        << num(std::max(static_cast<double>(size[i]) * unit, 0.5)) << "\" fill=\"" << category_color(spec.nodes[i].cluster)
        << "\"/>\n";
    svg << "<text x=\"" << num(x + node_w + 3) << "\" y=\"" << num(node_y[i] + 12) << "\">C" << spec.nodes[i].cluster
        << "</text>\n";
  }
  if (spec.degenerate) svg << "<text x=\"" << num(left) << "\" y=\"20\">no links above min_count</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

std::vector<fs::path> sankey_emit(const SankeySpec& spec, const fs::path& prefix) {
  const fs::path j = with_suffix(prefix, ".json");
  const fs::path s = with_suffix(prefix, ".svg");
  write_text_file(j, to_json(spec).dump(2) + "\n");
  write_text_file(s, sankey_svg(spec));
  return {j, s};
}

// ---- curve ----

std::string curve_table_text(const PositionCurve& curve) {
  std::string out = "position,value\n";
  for (std::size_t p = 0; p < curve.values.size(); ++p) {
    out += std::to_string(p + 1) + "," + format_shortest(curve.values[p]) + "\n";
  }
  return out;
}

std::vector<double> parse_curve_table(const std::string& text) {
  std::vector<double> values;
  const auto lines = lines_of(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i == 0 && lines[i].starts_with("position")) continue;
    const auto cells = split(lines[i], ',');
    if (cells.size() != 2) throw FormatError("curve row needs two columns");
    values.push_back(parse_double(cells[1]));
  }
  return values;
}

std::string curve_svg(const PositionCurve& curve) {
  if (curve.values.empty()) throw ConfigurationError("empty position curve");
  const double w = 600.0, h = 400.0, left = 60.0, right = 20.0, top = 30.0, bottom = 50.0;
  const auto [mn_it, mx_it] = std::minmax_element(curve.values.begin(), curve.values.end());
  double lo = *mn_it, hi = *mx_it;
  if (hi - lo < 1e-12) {
    lo -= 1.0;
    hi += 1.0;
  }
  const std::size_t n = curve.values.size();
  auto px = [&](std::size_t p) {
    return n == 1 ? left + (w - left - right) / 2 : left + (w - left - right) * static_cast<double>(p) / static_cast<double>(n - 1);
  };
  auto py = [&](double v) { return top + (h - top - bottom) * (1.0 - (v - lo) / (hi - lo)); };

  std::ostringstream svg;
  svg << svg_header(w, h);
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  svg << "<line x1=\"" << num(left) << "\" y1=\"" << num(h - bottom) << "\" x2=\"" << num(w - right) << "\" y2=\""
      << num(h - bottom) << "\" stroke=\"#000000\"/>\n";
  svg << "<line x1=\"" << num(left) << "\" y1=\"" << num(top) << "\" x2=\"" << num(left) << "\" y2=\"" << num(h - bottom)
      << "\" stroke=\"#000000\"/>\n";
  svg << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (std::size_t p = 0; p < n; ++p) svg << (p ? " " : "") << num(px(p)) << "," << num(py(curve.values[p]));
  svg << "\"/>\n";
  for (std::size_t p = 0; p < n; ++p) {
    svg << "<circle cx=\"" << num(px(p)) << "\" cy=\"" << num(py(curve.values[p])) << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
    svg << "<text x=\"" << num(px(p)) << "\" y=\"" << num(h - bottom + 16) << "\" text-anchor=\"middle\">" << p + 1
        << "</text>\n";
  }
  svg << "<text x=\"" << num(left) << "\" y=\"" << num(top - 10) << "\">" << format_fixed(hi, 2) << "</text>\n";
  svg << "<text x=\"" << num(left - 6) << "\" y=\"" << num(h - bottom) << "\" text-anchor=\"end\">" << format_fixed(lo, 2)
      << "</text>\n";
  svg << "<text x=\"" << num(w / 2) << "\" y=\"" << num(h - 10)
      << "\" text-anchor=\"middle\">Simulated position (mean real step index on y)</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

std::vector<fs::path> curve_emit(const PositionCurve& curve, const fs::path& prefix) {
  if (curve.values.empty()) throw ConfigurationError("empty position curve");
  const fs::path csv = with_suffix(prefix, ".csv");
  const fs::path svg = with_suffix(prefix, ".svg");
  write_text_file(csv, curve_table_text(curve));
  write_text_file(svg, curve_svg(curve));
  return {csv, svg};
}

}  // namespace cotdyn
