#include "cotdyn/pipeline.hpp"

#include <algorithm>
#include <map>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "cotdyn/error.hpp"
#include "cotdyn/io_util.hpp"
#include "cotdyn/trace_store.hpp"

namespace cotdyn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

fs::path out_path(const PipelineConfig& c, const std::string& name) { return c.output_dir / name; }

void ensure_output_dir(const PipelineConfig& c) {
  if (c.output_dir.empty()) throw ConfigurationError("no output directory configured (--out)");
  std::error_code ec;
  fs::create_directories(c.output_dir, ec);
  if (ec) throw IoError("cannot create output directory " + c.output_dir.string() + ": " + ec.message());
}

void require_trace_dir(const PipelineConfig& c) {
  if (c.trace_dir.empty()) throw ConfigurationError("no trace directory configured (--traces)");
}

std::vector<fs::path> relative_outputs(const std::vector<fs::path>& paths, const fs::path& base) {
  std::vector<fs::path> out;
  for (const auto& p : paths) out.push_back(p.lexically_relative(base));
  return out;
}

std::string truncate_text(const std::string& s, std::size_t limit) {
  if (s.size() <= limit) return s;
  std::size_t cut = limit;
  while (cut > 0 && (static_cast<unsigned char>(s[cut]) & 0xC0) == 0x80) --cut;  // keep UTF-8 intact
  return s.substr(0, cut) + "...";
}

ClusterModel load_cluster_model(const fs::path& dir) { return cluster_model_from_json(read_json(dir / artifact::cluster_model)); }

TransitionModel load_transitions(const fs::path& dir) {
  return transition_model_from_json(read_json(dir / artifact::transitions));
}

template <typename Enum>
Enum pick(const std::string& text, std::initializer_list<std::pair<const char*, Enum>> options, const char* what) {
  for (const auto& [name, value] : options) {
    if (text == name) return value;
  }
  throw ConfigurationError(std::string("unknown ") + what + " '" + text + "'");
}

}  // namespace

void validate_config(const PipelineConfig& c) {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw ConfigurationError(std::string(name) + " must be >= 1");
  };
  positive(c.k_eig, "k_eig");
  positive(c.k_clu, "k_clu");
  positive(c.kmeans_max_iter, "kmeans max_iter");
  positive(c.rollouts, "rollouts");
  positive(c.horizon, "horizon");
  positive(c.tsne_iterations, "tsne iterations");
  positive(c.tsne_max_points, "tsne max_points");
  positive(c.sankey_min_count, "sankey min_count");
  if (c.sankey_layers < 2) throw ConfigurationError("sankey layers must be >= 2");
  if (!(c.kmeans_tol >= 0.0)) throw ConfigurationError("kmeans tol must be >= 0");
  if (!(c.tsne_perplexity >= 1.0)) throw ConfigurationError("tsne perplexity must be >= 1");
  if (c.k_clu > 65535) throw ConfigurationError("k_clu must fit in 16 bits");
  if (c.start_mode && c.start_mode->kind == StartMode::Kind::fixed && c.start_mode->state >= c.k_clu) {
    throw ConfigurationError("fixed start state " + std::to_string(c.start_mode->state) + " >= k_clu");
  }
}

json to_json(const PipelineConfig& c) {
  return json{
      {"trace_dir", c.trace_dir.string()},
      {"output_dir", c.output_dir.string()},
      {"k_eig", c.k_eig},
      {"k_clu", c.k_clu},
      {"gram_mode", std::string(to_string(c.gram_mode))},
      {"feature_mode", std::string(to_string(c.feature_mode))},
      {"kmeans", {{"seed", c.cluster_seed}, {"max_iter", c.kmeans_max_iter}, {"tol", c.kmeans_tol}}},
      {"rollout",
       {{"n", c.rollouts},
        {"horizon", c.horizon},
        {"start_mode", c.start_mode ? to_string(*c.start_mode) : std::string("auto")},
        {"seed", c.rollout_seed}}},
      {"report",
       {{"pooling", c.pooling == PositionPooling::pooled ? "pooled" : "per_rollout"},
        {"alternative", c.alternative == Alternative::greater ? "greater" : "two_sided"}}},
      {"tsne",
       {{"perplexity", c.tsne_perplexity},
        {"iterations", c.tsne_iterations},
        {"max_points", c.tsne_max_points},
        {"input", c.tsne_raw ? "raw" : "transformed"}}},
      {"sankey",
       {{"layers", c.sankey_layers},
        {"min_count", c.sankey_min_count},
        {"source", c.sankey_from_rollouts ? "rollouts" : "real"}}},
      {"threads", c.threads},
  };
}

PipelineConfig config_from_json(const json& input, PipelineConfig c) {
  const json& j = input.contains("config") && input.at("config").is_object() ? input.at("config") : input;
  try {
    if (j.contains("trace_dir")) c.trace_dir = j.at("trace_dir").get<std::string>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("k_eig")) c.k_eig = j.at("k_eig").get<std::size_t>();
    if (j.contains("k_clu")) c.k_clu = j.at("k_clu").get<std::size_t>();
    if (j.contains("gram_mode")) c.gram_mode = parse_gram_mode(j.at("gram_mode").get<std::string>());
    if (j.contains("feature_mode")) c.feature_mode = parse_feature_mode(j.at("feature_mode").get<std::string>());
    if (j.contains("threads")) c.threads = j.at("threads").get<std::size_t>();
    if (auto it = j.find("kmeans"); it != j.end()) {
      c.cluster_seed = it->value("seed", c.cluster_seed);
      c.kmeans_max_iter = it->value("max_iter", c.kmeans_max_iter);
      c.kmeans_tol = it->value("tol", c.kmeans_tol);
    }
    if (auto it = j.find("rollout"); it != j.end()) {
      c.rollouts = it->value("n", c.rollouts);
      c.horizon = it->value("horizon", c.horizon);
      c.rollout_seed = it->value("seed", c.rollout_seed);
      if (it->contains("start_mode")) {
        const auto s = it->at("start_mode").get<std::string>();
        c.start_mode = s == "auto" ? std::nullopt : std::optional<StartMode>(parse_start_mode(s));
      }
    }
    if (auto it = j.find("report"); it != j.end()) {
      if (it->contains("pooling")) {
        c.pooling = pick<PositionPooling>(it->at("pooling").get<std::string>(),
                                          {{"pooled", PositionPooling::pooled}, {"per_rollout", PositionPooling::per_rollout}},
                                          "pooling");
      }
      if (it->contains("alternative")) {
        c.alternative = pick<Alternative>(it->at("alternative").get<std::string>(),
                                          {{"greater", Alternative::greater}, {"two_sided", Alternative::two_sided}},
                                          "alternative");
      }
    }
    if (auto it = j.find("tsne"); it != j.end()) {
      c.tsne_perplexity = it->value("perplexity", c.tsne_perplexity);
      c.tsne_iterations = it->value("iterations", c.tsne_iterations);
      c.tsne_max_points = it->value("max_points", c.tsne_max_points);
      if (it->contains("input")) {
        c.tsne_raw = pick<bool>(it->at("input").get<std::string>(), {{"raw", true}, {"transformed", false}}, "tsne input");
      }
    }
    if (auto it = j.find("sankey"); it != j.end()) {
      c.sankey_layers = it->value("layers", c.sankey_layers);
      c.sankey_min_count = it->value("min_count", c.sankey_min_count);
      if (it->contains("source")) {
        c.sankey_from_rollouts =
            pick<bool>(it->at("source").get<std::string>(), {{"rollouts", true}, {"real", false}}, "sankey source");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("bad config value: ") + e.what());
  }
  return c;
}

PipelineConfig load_config(const fs::path& path, PipelineConfig base) {
  return config_from_json(read_json(path), std::move(base));
}

std::vector<SpectralTrajectory> load_trajectories(const fs::path& dir) {
  const json j = read_json(dir / artifact::trajectories);
  std::vector<SpectralTrajectory> out;
  try {
    for (const auto& t : j.at("trajectories")) out.push_back(trajectory_from_json(t));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed trajectories artifact: ") + e.what());
  }
  return out;
}

std::vector<StateSequence> load_states(const fs::path& dir) {
  const json j = read_json(dir / artifact::states);
  std::vector<StateSequence> out;
  try {
    for (const auto& s : j.at("sequences")) out.push_back(state_sequence_from_json(s));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed states artifact: ") + e.what());
  }
  return out;
}

RolloutBatch load_rollouts(const fs::path& dir) {
  const auto bytes = read_file_bytes(dir / artifact::rollouts_bin);
  return decode_rollouts(bytes, read_json(dir / artifact::rollouts_header));
}

StageResult run_validate(const PipelineConfig& c) {
  require_trace_dir(c);
  const auto report = validate_corpus(c.trace_dir);
  StageResult r{"validate", {}, json::array()};
  std::string failures;
  for (const auto& e : report) {
    r.details.push_back({{"trace_id", e.trace_id},
                         {"file", e.path.filename().string()},
                         {"status", e.ok ? "ok" : "error"},
                         {"message", e.message}});
    if (!e.ok) failures += "\n  " + e.path.filename().string() + ": " + e.message;
  }
  if (report.empty()) throw ValidationError("no .cotr traces in " + c.trace_dir.string());
  if (!failures.empty()) throw ValidationError("invalid traces:" + failures);
  return r;
}

StageResult run_embed(const PipelineConfig& c) {
  validate_config(c);
  require_trace_dir(c);
  ensure_output_dir(c);
  const auto files = list_trace_files(c.trace_dir);
  if (files.empty()) throw ValidationError("no .cotr traces in " + c.trace_dir.string());

  std::vector<Trace> traces;
  json inputs = json::array();
  for (const auto& f : files) {
    traces.push_back(read_trace(f));
    const auto m = read_manifest(manifest_path_for(f));
    inputs.push_back({{"trace_id", m.trace_id}, {"file", f.filename().string()}, {"checksum", m.checksum},
                      {"checksum_algo", m.checksum_algo}});
  }
  const auto trajectories = embed_corpus(traces, c.k_eig, c.gram_mode, c.threads);

  json arr = json::array();
  for (const auto& t : trajectories) arr.push_back(to_json(t));
  const bool padded = !trajectories.empty() && trajectories.front().zero_padded();
  write_json(out_path(c, artifact::trajectories),
             json{{"k_eig", c.k_eig}, {"mode", std::string(to_string(c.gram_mode))}, {"zero_padded", padded},
                  {"trajectories", std::move(arr)}});
  return {"embed", {artifact::trajectories}, {{"inputs", std::move(inputs)}, {"traces", trajectories.size()}}};
}

StageResult run_cluster(const PipelineConfig& c) {
  validate_config(c);
  ensure_output_dir(c);
  const auto trajectories = load_trajectories(c.output_dir);
  if (trajectories.empty()) throw DataError("no trajectories to cluster");

  KMeansOptions opt;
  opt.k_clu = c.k_clu;
  opt.seed = c.cluster_seed;
  opt.max_iter = c.kmeans_max_iter;
  opt.tol = c.kmeans_tol;
  const ClusterModel model = fit_cluster_model(trajectories, c.feature_mode, opt);

  json seqs = json::array();
  for (const auto& t : trajectories) seqs.push_back(to_json(assign_states(model, t)));
  write_json(out_path(c, artifact::cluster_model), to_json(model));
  write_json(out_path(c, artifact::states), json{{"k_clu", c.k_clu}, {"sequences", std::move(seqs)}});
  return {"cluster",
          {artifact::cluster_model, artifact::states},
          {{"inertia", model.inertia}, {"iterations", model.iterations}, {"converged", model.converged}}};
}

StageResult run_transitions(const PipelineConfig& c) {
  validate_config(c);
  ensure_output_dir(c);
  const TransitionModel model = estimate_transitions(load_states(c.output_dir), c.k_clu);
  write_json(out_path(c, artifact::transitions), to_json(model));
  return {"transitions", {artifact::transitions}, {{"n_traces", model.n_traces}}};
}

StageResult run_rollout(const PipelineConfig& c) {
  validate_config(c);
  ensure_output_dir(c);
  const TransitionModel model = load_transitions(c.output_dir);
  const StartMode start = c.start_mode ? *c.start_mode : default_start_mode(model);
  const RolloutBatch batch = rollout(model, c.rollouts, c.horizon, start, c.rollout_seed, c.threads);
  const auto bytes = encode_rollouts(batch);
  write_file_bytes(out_path(c, artifact::rollouts_bin), bytes);
  write_json(out_path(c, artifact::rollouts_header), rollout_header(batch, fnv1a64(bytes)));
  return {"rollout",
          {artifact::rollouts_bin, artifact::rollouts_header},
          {{"start_mode", to_string(start)}, {"seed", c.rollout_seed}}};
}

StageResult run_analyze(const PipelineConfig& c) {
  validate_config(c);
  ensure_output_dir(c);
  const auto sequences = load_states(c.output_dir);
  const auto batch = load_rollouts(c.output_dir);
  const ConsistencyReport report = consistency_report(sequences, batch, c.k_clu, {c.pooling, c.alternative});
  write_json(out_path(c, artifact::report), to_json(report));
  write_text_file(out_path(c, artifact::report_csv), to_csv(report));
  StageResult r{"analyze", {artifact::report, artifact::report_csv}, json::object()};

  // Step-text digests per cluster for manual labeling.
  if (!c.trace_dir.empty() && fs::exists(c.trace_dir)) {
    std::map<std::string, const StateSequence*> by_id;
    for (const auto& s : sequences) by_id[s.trace_id] = &s;
    const ClusterPositions real = real_cluster_positions(sequences, c.k_clu);
    std::vector<json> examples(c.k_clu, json::array());
    for (const auto& f : list_trace_files(c.trace_dir)) {
      const auto m = read_manifest(manifest_path_for(f));
      auto it = by_id.find(m.trace_id);
      if (it == by_id.end()) continue;
      const auto& states = it->second->states;
      for (std::size_t t = 0; t < std::min(states.size(), m.steps.size()); ++t) {
        auto& bucket = examples[states[t]];
        if (bucket.size() >= 5 || !m.steps[t].second) continue;
        bucket.push_back({{"trace_id", m.trace_id}, {"step", t + 1}, {"text", truncate_text(*m.steps[t].second, 240)}});
      }
    }
    json clusters = json::array();
    for (std::size_t k = 0; k < c.k_clu; ++k) {
      clusters.push_back({{"cluster", k},
                          {"count", real.count[k]},
                          {"mean_step_index", real.mean[k] ? json(*real.mean[k]) : json(nullptr)},
                          {"examples", std::move(examples[k])}});
    }
    write_json(out_path(c, artifact::digests), json{{"clusters", std::move(clusters)}});
    r.outputs.push_back(artifact::digests);
  }
  if (report.correlation) {
    r.details = {{"rho", report.correlation->rho}, {"p_value", report.correlation->p_value}, {"n", report.correlation->n}};
  }
  return r;
}

VizKind parse_viz_kind(const std::string& text) {
  return pick<VizKind>(text,
                       {{"heatmap", VizKind::heatmap}, {"sankey", VizKind::sankey}, {"tsne", VizKind::tsne}, {"curve", VizKind::curve}},
                       "viz kind");
}

StageResult run_viz(const PipelineConfig& c, VizKind kind) {
  validate_config(c);
  ensure_output_dir(c);
  const fs::path& dir = c.output_dir;
  switch (kind) {
    case VizKind::heatmap: {
      auto paths = heatmap_emit(load_transitions(dir), dir / artifact::heatmap);
      return {"viz:heatmap", relative_outputs(paths, dir), json::object()};
    }
    case VizKind::sankey: {
      const SankeySpec spec = c.sankey_from_rollouts ? build_sankey(load_rollouts(dir), c.sankey_layers, c.sankey_min_count)
                                                     : build_sankey(load_states(dir), c.sankey_layers, c.sankey_min_count);
      auto paths = sankey_emit(spec, dir / artifact::sankey);
      json details = {{"links", spec.links.size()}};
      if (spec.degenerate) details["warning"] = "every link fell below min_count; spec is empty";
      return {"viz:sankey", relative_outputs(paths, dir), details};
    }
    case VizKind::tsne: {
      const auto trajectories = load_trajectories(dir);
      const auto sequences = load_states(dir);
      const ClusterModel model = load_cluster_model(dir);
      Eigen::MatrixXd rows = pool_rows(trajectories);
      if (!c.tsne_raw) rows = apply_transform(model.transform, rows);
      std::vector<std::uint16_t> labels;
      for (const auto& s : sequences) labels.insert(labels.end(), s.states.begin(), s.states.end());
      if (labels.size() != static_cast<std::size_t>(rows.rows())) {
        throw ConsistencyError("states artifact does not match trajectories artifact");
      }
      const auto n = static_cast<std::size_t>(rows.rows());
      if (n > c.tsne_max_points) {
        // Even stride subsample.
        Eigen::MatrixXd sub(static_cast<Eigen::Index>(c.tsne_max_points), rows.cols());
        std::vector<std::uint16_t> sub_labels(c.tsne_max_points);
        for (std::size_t i = 0; i < c.tsne_max_points; ++i) {
          const std::size_t src = i * n / c.tsne_max_points;
          sub.row(static_cast<Eigen::Index>(i)) = rows.row(static_cast<Eigen::Index>(src));
          sub_labels[i] = labels[src];
        }
        rows = std::move(sub);
        labels = std::move(sub_labels);
      }
      TsneOptions opt;
      opt.seed = c.tsne_seed();
      opt.iterations = c.tsne_iterations;
      const double points = static_cast<double>(rows.rows());
      // Small corpora cannot support the configured perplexity.
      opt.perplexity = std::max(1.0, std::min(c.tsne_perplexity, (points - 1.0) / 3.0));
      const Projection2D proj = tsne_project(rows, labels, opt);
      tsne_emit(proj, dir / artifact::tsne);
      return {"viz:tsne",
              {fs::path(artifact::tsne) += ".csv", fs::path(artifact::tsne) += ".svg"},
              {{"points", rows.rows()},
               {"perplexity", opt.perplexity},
               {"initial_kl", proj.initial_kl},
               {"final_kl", proj.final_kl}}};
    }
    case VizKind::curve: {
      const ConsistencyReport report = consistency_report_from_json(read_json(dir / artifact::report));
      auto paths = curve_emit(report.curve, dir / artifact::curve);
      return {"viz:curve", relative_outputs(paths, dir), json::object()};
    }
  }
  throw ConfigurationError("unknown viz kind");
}

json run_pipeline(const PipelineConfig& c) {
  validate_config(c);
  ensure_output_dir(c);

  json manifest = {{"tool", "cotdyn"},
                   {"version", kVersion},
                   {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                         "." + std::to_string(EIGEN_MINOR_VERSION)},
                   {"config", to_json(c)},
                   {"seeds", {{"cluster", c.cluster_seed}, {"rollout", c.rollout_seed}, {"tsne", c.tsne_seed()}}},
                   {"stages", json::array()},
                   {"status", "running"}};
  const fs::path manifest_path = out_path(c, artifact::manifest);

  std::string stage = "validate";
  auto record = [&](StageResult r) {
    json outputs = json::array();
    for (const auto& p : r.outputs) outputs.push_back(p.generic_string());
    if (r.stage == "embed") manifest["inputs"] = r.details.at("inputs");
    manifest["stages"].push_back({{"stage", r.stage}, {"outputs", std::move(outputs)}, {"details", std::move(r.details)}});
  };

  try {
    record(run_validate(c));
    stage = "embed";
    record(run_embed(c));
    stage = "cluster";
    record(run_cluster(c));
    stage = "transitions";
    record(run_transitions(c));
    stage = "rollout";
    record(run_rollout(c));
    stage = "analyze";
    record(run_analyze(c));
    for (VizKind kind : {VizKind::heatmap, VizKind::sankey, VizKind::tsne, VizKind::curve}) {
      stage = "viz";
      record(run_viz(c, kind));
    }
  } catch (const Error& e) {
    manifest["status"] = "failed";
    manifest["failed_stage"] = stage;
    manifest["error"] = {{"kind", std::string(to_string(e.kind()))}, {"message", e.what()}};
    try {
      write_json(manifest_path, manifest);
    } catch (const Error&) {
    }
    throw Error(e.kind(), "stage '" + stage + "': " + e.what());
  }
  manifest["status"] = "ok";
  write_json(manifest_path, manifest);
  return manifest;
}

}  // namespace cotdyn
