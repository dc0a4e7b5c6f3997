#include <gtest/gtest.h>

#include <cstdlib>
#include <random>

#include <nlohmann/json.hpp>

#include "cotdyn/error.hpp"
#include "cotdyn/io_util.hpp"
#include "cotdyn/pipeline.hpp"
#include "support/synthetic.hpp"

namespace fs = std::filesystem;
using namespace cotdyn;
using nlohmann::json;

#ifndef COTDYN_CLI
#error "COTDYN_CLI must name the command-line binary"
#endif

namespace {

const std::vector<std::string> kArtifacts = {
    "trajectories.json", "cluster_model.json", "states.json", "transitions.json", "rollouts.bin",
    "rollouts.json",     "report.json",        "report.csv",  "cluster_digests.json", "heatmap.csv",
    "heatmap.svg",       "sankey.json",        "sankey.svg",  "tsne.csv",          "tsne.svg",
    "curve.csv",         "curve.svg"};

PipelineConfig small_config(const fs::path& traces, const fs::path& out) {
  PipelineConfig c;
  c.trace_dir = traces;
  c.output_dir = out;
  c.k_eig = 8;
  c.k_clu = 3;
  c.rollouts = 500;
  c.tsne_iterations = 250;
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(COTDYN_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void expect_same_artifacts(const fs::path& a, const fs::path& b) {
  for (const auto& name : kArtifacts) {
    ASSERT_TRUE(fs::exists(a / name)) << name;
    ASSERT_TRUE(fs::exists(b / name)) << name;
    EXPECT_EQ(read_file_bytes(a / name), read_file_bytes(b / name)) << name;
  }
}

class PipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    traces_ = synth::fresh_dir("pipe_traces");
    synth::write_random_corpus(traces_, 6, 21);
  }
  static fs::path traces_;
};
fs::path PipelineTest::traces_;

}  // namespace

TEST(PipelineConfig, DefaultsAndValidation) {
  PipelineConfig c;
  EXPECT_EQ(c.k_eig, 64u);
  EXPECT_EQ(c.k_clu, 5u);
  EXPECT_EQ(c.horizon, 10u);
  EXPECT_EQ(c.gram_mode, GramMode::cumulative);
  EXPECT_EQ(c.feature_mode, FeatureMode::log1p_zscore);
  EXPECT_NO_THROW(validate_config(c));
  c.k_clu = 0;
  EXPECT_THROW(validate_config(c), ConfigurationError);
}

TEST(PipelineConfig, JsonRoundTrip) {
  PipelineConfig c;
  c.trace_dir = "in";
  c.output_dir = "out";
  c.k_eig = 7;
  c.gram_mode = GramMode::local;
  c.feature_mode = FeatureMode::raw;
  c.start_mode = StartMode::empirical();
  c.pooling = PositionPooling::per_rollout;
  c.alternative = Alternative::two_sided;
  c.tsne_raw = true;
  c.sankey_from_rollouts = true;
  const auto back = config_from_json(json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(to_json(config_from_json(json{{"config", to_json(c)}})), to_json(c));
  EXPECT_THROW(config_from_json(json{{"gram_mode", "sideways"}}), ConfigurationError);
  EXPECT_THROW(config_from_json(json{{"k_clu", "five"}}), ConfigurationError);
}

TEST_F(PipelineTest, Completeness) {
  const auto out = synth::fresh_dir("pipe_full");
  const auto manifest = run_pipeline(small_config(traces_, out));
  for (const auto& name : kArtifacts) EXPECT_TRUE(fs::exists(out / name)) << name;
  const auto m = json::parse(read_text_file(out / "manifest.json"));
  EXPECT_EQ(m, manifest);
  EXPECT_EQ(m.at("status"), "ok");
  EXPECT_EQ(m.at("inputs").size(), 6u);
  EXPECT_EQ(m.at("inputs")[0].at("checksum_algo"), "fnv1a64");
  EXPECT_EQ(m.at("seeds").at("cluster"), 1);
  EXPECT_EQ(m.at("seeds").at("rollout"), 2);
  EXPECT_EQ(m.at("config").at("k_clu"), 3);
  EXPECT_TRUE(m.contains("version"));
  EXPECT_EQ(m.at("stages").size(), 10u);
}

TEST_F(PipelineTest, ThreeTraceCorpusWithDefaults) {
  const auto traces = synth::fresh_dir("pipe_three");
  synth::write_random_corpus(traces, 3, 22);
  const auto out = synth::fresh_dir("pipe_three_out");
  PipelineConfig c;
  c.trace_dir = traces;
  c.output_dir = out;
  run_pipeline(c);
  for (const auto& name : kArtifacts) EXPECT_TRUE(fs::exists(out / name)) << name;
}

TEST_F(PipelineTest, DeterministicAndThreadInvariant) {
  const auto a = synth::fresh_dir("pipe_det_a");
  const auto b = synth::fresh_dir("pipe_det_b");
  auto ca = small_config(traces_, a);
  auto cb = small_config(traces_, b);
  ca.threads = 1;
  cb.threads = 3;
  run_pipeline(ca);
  run_pipeline(cb);
  expect_same_artifacts(a, b);
}

TEST_F(PipelineTest, ManifestReplaysRun) {
  const auto a = synth::fresh_dir("pipe_replay_a");
  const auto b = synth::fresh_dir("pipe_replay_b");
  auto c = small_config(traces_, a);
  c.cluster_seed = 17;
  c.start_mode = StartMode::empirical();
  run_pipeline(c);
  auto replay = load_config(a / "manifest.json");
  replay.output_dir = b;
  run_pipeline(replay);
  expect_same_artifacts(a, b);
}

TEST_F(PipelineTest, StageIsolationThroughCli) {
  const auto one_shot = synth::fresh_dir("pipe_iso_a");
  const auto staged = synth::fresh_dir("pipe_iso_b");
  const auto cfg_path = synth::fresh_dir("pipe_iso_cfg") / "config.json";
  auto c = small_config(traces_, one_shot);
  write_text_file(cfg_path, to_json(c).dump(2));
  ASSERT_EQ(run_cli("pipeline --config " + cfg_path.string()), 0);
  const std::string common = " --config " + cfg_path.string() + " --out " + staged.string();
  for (const char* sub : {"validate", "embed", "cluster", "transitions", "rollout", "analyze", "viz heatmap",
                          "viz sankey", "viz tsne", "viz curve"}) {
    ASSERT_EQ(run_cli(std::string(sub) + common), 0) << sub;
  }
  expect_same_artifacts(one_shot, staged);
}

TEST_F(PipelineTest, FlagsOverrideConfigFile) {
  const auto out = synth::fresh_dir("pipe_flags");
  const auto cfg_path = synth::fresh_dir("pipe_flags_cfg") / "config.json";
  write_text_file(cfg_path, to_json(small_config(traces_, out)).dump(2));
  ASSERT_EQ(run_cli("pipeline --config " + cfg_path.string() +
                    " --k-clu 2 --rollout-seed 99 --start-mode fixed:1 --gram-mode local"),
            0);
  const auto m = json::parse(read_text_file(out / "manifest.json"));
  EXPECT_EQ(m.at("config").at("k_clu"), 2);
  EXPECT_EQ(m.at("config").at("k_eig"), 8);
  EXPECT_EQ(m.at("config").at("gram_mode"), "local");
  EXPECT_EQ(m.at("config").at("rollout").at("seed"), 99);
  EXPECT_EQ(m.at("config").at("rollout").at("start_mode"), "fixed:1");
}

TEST_F(PipelineTest, ExitCodes) {
  const auto out = synth::fresh_dir("pipe_exit");
  EXPECT_EQ(run_cli("pipeline --traces /nonexistent/cotdyn --out " + out.string()), 4);
  EXPECT_EQ(run_cli("pipeline --traces " + traces_.string() + " --out " + out.string() + " --k-clu 0"), 2);
  EXPECT_EQ(run_cli("pipeline --traces " + traces_.string() + " --out " + out.string() + " --gram-mode bogus"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);

  const auto bad = synth::fresh_dir("pipe_exit_bad");
  synth::write_random_corpus(bad, 2, 23);
  auto bytes = read_file_bytes(bad / "trace_000.cotr");
  bytes.resize(20);
  write_file_bytes(bad / "trace_000.cotr", bytes);
  EXPECT_EQ(run_cli("validate --traces " + bad.string()), 2);
  EXPECT_EQ(run_cli("validate --traces " + traces_.string()), 0);
}

TEST_F(PipelineTest, FailureRecordedInManifest) {
  const auto out = synth::fresh_dir("pipe_fail");
  auto c = small_config(traces_, out);
  c.k_clu = 500;  // more clusters than pooled rows
  try {
    run_pipeline(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("cluster"), std::string::npos) << e.what();
  }
  const auto m = json::parse(read_text_file(out / "manifest.json"));
  EXPECT_EQ(m.at("status"), "failed");
  EXPECT_EQ(m.at("failed_stage"), "cluster");
  EXPECT_TRUE(fs::exists(out / "trajectories.json"));
}

TEST_F(PipelineTest, DigestsCarryStepText) {
  const auto out = synth::fresh_dir("pipe_digest");
  run_pipeline(small_config(traces_, out));
  const auto d = json::parse(read_text_file(out / "cluster_digests.json"));
  ASSERT_EQ(d.at("clusters").size(), 3u);
  std::size_t examples = 0;
  for (const auto& c : d.at("clusters")) examples += c.at("examples").size();
  EXPECT_GT(examples, 0u);
}

TEST(PipelinePlanted, MonotoneRegimesGiveRhoOne) {
  const auto traces = synth::fresh_dir("pipe_planted");
  std::mt19937_64 rng(31);
  for (int i = 0; i < 30; ++i) {
    const auto p = synth::planted_trace(rng, "p" + std::to_string(i));
    write_trace(p.trace, traces / ("p" + std::to_string(100 + i) + ".cotr"));
  }
  const auto out = synth::fresh_dir("pipe_planted_out");
  PipelineConfig c;
  c.trace_dir = traces;
  c.output_dir = out;
  c.k_eig = 16;
  c.k_clu = 3;
  c.rollouts = 2000;
  c.tsne_iterations = 250;
  run_pipeline(c);
  const auto r = json::parse(read_text_file(out / "report.json"));
  ASSERT_TRUE(r.at("correlation").is_object());
  EXPECT_EQ(r.at("correlation").at("rho"), 1.0);
}
