#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "cotdyn/error.hpp"
#include "cotdyn/io_util.hpp"
#include "cotdyn/trace_store.hpp"
#include "support/synthetic.hpp"

namespace fs = std::filesystem;
using namespace cotdyn;

namespace {

Trace tiny_trace() {
  Trace t;
  t.trace_id = "t0";
  t.model_id = "m";
  t.dataset_id = "d";
  t.dim = 2;
  StepRecord s;
  s.step_index = 1;
  s.tokens.resize(1, 2);
  s.tokens << 3.0f, 4.0f;
  s.text = "Step 1: only step";
  t.steps.push_back(s);
  return t;
}

}  // namespace

TEST(TraceStore, OneStepLayout) {
  const auto bytes = encode_trace_payload(tiny_trace());
  // magic + version + dim + T + n_tokens + 2 floats
  ASSERT_EQ(bytes.size(), 8u + 4 + 4 + 4 + 4 + 8);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "COTTRACE");
  ByteReader r(bytes);
  r.raw(8);
  EXPECT_EQ(r.u32(), 1u);
  EXPECT_EQ(r.u32(), 2u);
  EXPECT_EQ(r.u32(), 1u);
  EXPECT_EQ(r.u32(), 1u);
  EXPECT_EQ(r.f32(), 3.0f);
  EXPECT_EQ(r.f32(), 4.0f);
}

TEST(TraceStore, WriteReadRoundTrip) {
  const auto dir = synth::fresh_dir("roundtrip");
  const Trace t = tiny_trace();
  write_trace(t, dir / "a.cotr");
  EXPECT_EQ(read_trace(dir / "a.cotr"), t);
}

TEST(TraceStore, RandomRoundTripBitExact) {
  const auto dir = synth::fresh_dir("roundtrip_random");
  std::mt19937_64 rng(11);
  for (int i = 0; i < 40; ++i) {
    Trace t = synth::random_trace(rng, "r" + std::to_string(i), 1 + i % 7, 1 + i % 9, 1, 5);
    // Include awkward but valid values.
    t.steps[0].tokens(0, 0) = -0.0f;
    if (t.dim > 1) t.steps[0].tokens(0, 1) = std::numeric_limits<float>::denorm_min();
    const auto path = dir / ("r" + std::to_string(i) + ".cotr");
    write_trace(t, path);
    const Trace back = read_trace(path);
    EXPECT_EQ(back, t);
    EXPECT_TRUE(std::signbit(back.steps[0].tokens(0, 0)));
  }
}

TEST(TraceStore, NanRejectedWithStepIndex) {
  Trace t = tiny_trace();
  StepRecord s = t.steps[0];
  s.step_index = 2;
  s.tokens(0, 1) = std::numeric_limits<float>::quiet_NaN();
  t.steps.push_back(s);
  try {
    validate_trace(t);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
  }
}

TEST(TraceStore, InvalidTracesRejected) {
  Trace empty = tiny_trace();
  empty.steps.clear();
  EXPECT_THROW(validate_trace(empty), ValidationError);

  Trace gap = tiny_trace();
  gap.steps[0].step_index = 2;
  EXPECT_THROW(validate_trace(gap), ValidationError);

  Trace width = tiny_trace();
  width.dim = 3;
  EXPECT_THROW(validate_trace(width), ValidationError);

  Trace no_tokens = tiny_trace();
  no_tokens.steps[0].tokens.resize(0, 2);
  EXPECT_THROW(validate_trace(no_tokens), ValidationError);
}

TEST(TraceStore, IdenticalContentIdenticalChecksum) {
  const auto dir = synth::fresh_dir("checksum");
  const auto a = write_trace(tiny_trace(), dir / "a.cotr");
  const auto b = write_trace(tiny_trace(), dir / "b.cotr");
  EXPECT_EQ(a, b);
  EXPECT_EQ(read_manifest(dir / "a.json").checksum, to_hex(a));
  EXPECT_EQ(read_manifest(dir / "a.json").checksum_algo, "fnv1a64");
}

TEST(TraceStore, Fnv1aReferenceValues) {
  const std::string empty, a = "a", foobar = "foobar";
  auto h = [](const std::string& s) {
    return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  };
  EXPECT_EQ(h(empty), 0xcbf29ce484222325ull);
  EXPECT_EQ(h(a), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(h(foobar), 0x85944171f73967e8ull);
}

TEST(TraceStore, BadMagic) {
  auto bytes = encode_trace_payload(tiny_trace());
  std::fill(bytes.begin(), bytes.begin() + 8, 'X');
  EXPECT_THROW(decode_trace_payload(bytes), FormatError);
}

TEST(TraceStore, BadVersion) {
  auto bytes = encode_trace_payload(tiny_trace());
  bytes[8] = 2;
  EXPECT_THROW(decode_trace_payload(bytes), FormatError);
}

TEST(TraceStore, TruncatedPayload) {
  auto bytes = encode_trace_payload(tiny_trace());
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(decode_trace_payload(bytes), CorruptionError);
}

TEST(TraceStore, TrailingBytes) {
  auto bytes = encode_trace_payload(tiny_trace());
  bytes.push_back(0);
  EXPECT_THROW(decode_trace_payload(bytes), CorruptionError);
}

TEST(TraceStore, ManifestMismatch) {
  const auto dir = synth::fresh_dir("mismatch");
  write_trace(tiny_trace(), dir / "a.cotr");
  auto bytes = read_file_bytes(dir / "a.cotr");
  bytes.back() ^= 1;  // flip a payload bit, keep the length
  write_file_bytes(dir / "a.cotr", bytes);
  EXPECT_THROW(read_trace(dir / "a.cotr"), ConsistencyError);

  write_trace(tiny_trace(), dir / "b.cotr");
  auto j = nlohmann::json::parse(read_text_file(dir / "b.json"));
  j["steps"].push_back({{"step_index", 2}, {"text", "extra"}});
  write_text_file(dir / "b.json", j.dump());
  EXPECT_THROW(read_trace(dir / "b.cotr"), ConsistencyError);
}

TEST(TraceStore, CorpusValidation) {
  const auto dir = synth::fresh_dir("corpus3");
  synth::write_random_corpus(dir, 3, 5);
  const auto report = validate_corpus(dir);
  ASSERT_EQ(report.size(), 3u);
  for (const auto& e : report) EXPECT_TRUE(e.ok) << e.message;
  EXPECT_EQ(read_corpus(dir).size(), 3u);
}

TEST(TraceStore, CorpusWithTruncatedTrace) {
  const auto dir = synth::fresh_dir("corpus_bad");
  synth::write_random_corpus(dir, 2, 6);
  auto bytes = read_file_bytes(dir / "trace_001.cotr");
  bytes.resize(bytes.size() / 2);
  write_file_bytes(dir / "trace_001.cotr", bytes);
  const auto report = validate_corpus(dir);
  ASSERT_EQ(report.size(), 2u);
  EXPECT_TRUE(report[0].ok);
  EXPECT_FALSE(report[1].ok);
  EXPECT_THROW(read_corpus(dir), Error);
}

TEST(TraceStore, EmptyDirectory) {
  const auto dir = synth::fresh_dir("corpus_empty");
  EXPECT_TRUE(validate_corpus(dir).empty());
}

TEST(TraceStore, MissingDirectoryIsIoError) {
  EXPECT_THROW(validate_corpus("/nonexistent/cotdyn/dir"), IoError);
}
