#include "cotdyn/trace_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "cotdyn/error.hpp"
#include "cotdyn/io_util.hpp"

namespace cotdyn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool same_bits(const TokenMatrix& a, const TokenMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

std::string step_label(const Trace& trace, std::size_t i) {
  return "trace '" + trace.trace_id + "' step " + std::to_string(i + 1);
}

json manifest_to_json(const Trace& trace, std::uint64_t checksum) {
  json steps = json::array();
  for (const auto& s : trace.steps) {
    steps.push_back({{"step_index", s.step_index}, {"text", s.text ? json(*s.text) : json(nullptr)}});
  }
  return json{{"trace_id", trace.trace_id},
              {"model_id", trace.model_id},
              {"dataset_id", trace.dataset_id},
              {"prompt", trace.prompt ? json(*trace.prompt) : json(nullptr)},
              {"steps", std::move(steps)},
              {"checksum", to_hex(checksum)},
              {"checksum_algo", std::string(kChecksumAlgo)}};
}

std::optional<std::string> optional_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

}  // namespace

bool operator==(const StepRecord& a, const StepRecord& b) {
  return a.step_index == b.step_index && a.text == b.text && same_bits(a.tokens, b.tokens);
}

bool operator==(const Trace& a, const Trace& b) {
  return a.trace_id == b.trace_id && a.model_id == b.model_id && a.dataset_id == b.dataset_id &&
         a.dim == b.dim && a.prompt == b.prompt && a.steps == b.steps;
}

void validate_trace(const Trace& trace) {
  if (trace.steps.empty()) throw ValidationError("trace '" + trace.trace_id + "' has no steps");
  if (trace.dim == 0) throw ValidationError("trace '" + trace.trace_id + "' has dim 0");
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const auto& step = trace.steps[i];
    if (step.step_index != i + 1) {
      throw ValidationError(step_label(trace, i) + ": step_index " + std::to_string(step.step_index) +
                            " breaks the contiguous 1..T numbering");
    }
    if (step.tokens.rows() < 1) throw ValidationError(step_label(trace, i) + ": n_tokens must be >= 1");
    if (static_cast<std::uint32_t>(step.tokens.cols()) != trace.dim) {
      throw ValidationError(step_label(trace, i) + ": token matrix has " + std::to_string(step.tokens.cols()) +
                            " columns, trace dim is " + std::to_string(trace.dim));
    }
    if (!step.tokens.allFinite()) {
      throw ValidationError(step_label(trace, i) + ": token matrix contains a non-finite entry");
    }
  }
}

std::vector<std::uint8_t> encode_trace_payload(const Trace& trace) {
  std::size_t floats = 0;
  for (const auto& s : trace.steps) floats += static_cast<std::size_t>(s.tokens.size());

  std::vector<std::uint8_t> out(std::begin(kTraceMagic), std::end(kTraceMagic));
  out.reserve(20 + 4 * trace.steps.size() + 4 * floats);

  ByteWriter body;
  body.reserve(out.capacity() - out.size());
  body.u32(kTraceVersion);
  body.u32(trace.dim);
  body.u32(static_cast<std::uint32_t>(trace.steps.size()));
  for (const auto& s : trace.steps) {
    body.u32(static_cast<std::uint32_t>(s.tokens.rows()));
    const float* p = s.tokens.data();
    for (Eigen::Index k = 0; k < s.tokens.size(); ++k) body.f32(p[k]);
  }
  const auto& b = body.bytes();
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

Trace decode_trace_payload(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kTraceMagic, 8) != 0) {
    throw FormatError("bad magic: not a COTTRACE file");
  }
  ByteReader r(bytes.subspan(8));
  const std::uint32_t version = r.u32();
  if (version != kTraceVersion) throw FormatError("unsupported trace version " + std::to_string(version));

  Trace trace;
  trace.dim = r.u32();
  const std::uint32_t n_steps = r.u32();
  if (trace.dim == 0) throw CorruptionError("declared dim is 0");
  trace.steps.reserve(std::min<std::size_t>(n_steps, r.remaining() / 4 + 1));
  for (std::uint32_t t = 0; t < n_steps; ++t) {
    StepRecord step;
    step.step_index = t + 1;
    const std::uint32_t n_tokens = r.u32();
    const std::uint64_t need = static_cast<std::uint64_t>(n_tokens) * trace.dim * 4;
    if (need > r.remaining()) {
      throw CorruptionError("step " + std::to_string(t + 1) + " declares " + std::to_string(n_tokens) + "x" +
                            std::to_string(trace.dim) + " floats (" + std::to_string(need) + " bytes), only " +
                            std::to_string(r.remaining()) + " bytes remain");
    }
    step.tokens.resize(n_tokens, trace.dim);
    float* p = step.tokens.data();
    for (std::uint64_t k = 0; k < static_cast<std::uint64_t>(n_tokens) * trace.dim; ++k) p[k] = r.f32();
    trace.steps.push_back(std::move(step));
  }
  if (r.remaining() != 0) {
    throw CorruptionError(std::to_string(r.remaining()) + " trailing bytes after the last step");
  }
  return trace;
}

fs::path manifest_path_for(const fs::path& trace_path) {
  fs::path p = trace_path;
  p.replace_extension(".json");
  return p;
}

std::uint64_t write_trace(const Trace& trace, const fs::path& path) {
  validate_trace(trace);
  const auto payload = encode_trace_payload(trace);
  const std::uint64_t checksum = fnv1a64(payload);
  write_file_bytes(path, payload);
  write_text_file(manifest_path_for(path), manifest_to_json(trace, checksum).dump(2) + "\n");
  return checksum;
}

TraceManifest read_manifest(const fs::path& manifest_path) {
  const std::string text = read_text_file(manifest_path);
  TraceManifest m;
  try {
    const json j = json::parse(text);
    m.trace_id = j.at("trace_id").get<std::string>();
    m.model_id = j.value("model_id", std::string{});
    m.dataset_id = j.value("dataset_id", std::string{});
    m.prompt = optional_string(j, "prompt");
    for (const auto& s : j.at("steps")) {
      m.steps.emplace_back(s.at("step_index").get<std::uint32_t>(), optional_string(s, "text"));
    }
    m.checksum = j.at("checksum").get<std::string>();
    m.checksum_algo = j.at("checksum_algo").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  return m;
}

Trace read_trace(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  Trace trace = decode_trace_payload(bytes);

  const fs::path mpath = manifest_path_for(path);
  if (!fs::exists(mpath)) throw ConsistencyError("missing sidecar manifest " + mpath.string());
  const TraceManifest m = read_manifest(mpath);

  if (m.checksum_algo != kChecksumAlgo) {
    throw ConsistencyError("unsupported checksum algorithm '" + m.checksum_algo + "'");
  }
  const std::string actual = to_hex(fnv1a64(bytes));
  if (m.checksum != actual) {
    throw ConsistencyError("checksum mismatch for " + path.string() + ": manifest " + m.checksum + ", payload " +
                           actual);
  }
  if (m.steps.size() != trace.steps.size()) {
    throw ConsistencyError("manifest lists " + std::to_string(m.steps.size()) + " steps, binary holds " +
                           std::to_string(trace.steps.size()));
  }
  for (std::size_t i = 0; i < m.steps.size(); ++i) {
    if (m.steps[i].first != i + 1) {
      throw ConsistencyError("manifest step " + std::to_string(i + 1) + " has step_index " +
                             std::to_string(m.steps[i].first));
    }
    trace.steps[i].text = m.steps[i].second;
  }
  trace.trace_id = m.trace_id;
  trace.model_id = m.model_id;
  trace.dataset_id = m.dataset_id;
  trace.prompt = m.prompt;
  validate_trace(trace);
  return trace;
}

std::vector<fs::path> list_trace_files(const fs::path& dir) {
  std::error_code ec;
  fs::directory_iterator it(dir, ec);
  if (ec) throw IoError("cannot read directory " + dir.string() + ": " + ec.message());
  std::vector<fs::path> files;
  for (const auto& entry : it) {
    if (entry.is_regular_file() && entry.path().extension() == kTraceExtension) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<CorpusEntry> validate_corpus(const fs::path& dir) {
  std::vector<CorpusEntry> report;
  for (const auto& path : list_trace_files(dir)) {
    CorpusEntry e;
    e.path = path;
    e.trace_id = path.stem().string();
    try {
      const Trace t = read_trace(path);
      e.trace_id = t.trace_id;
      e.ok = true;
      e.message = std::to_string(t.length()) + " steps, dim " + std::to_string(t.dim);
    } catch (const Error& err) {
      e.message = std::string(to_string(err.kind())) + " error: " + err.what();
    }
    report.push_back(std::move(e));
  }
  return report;
}

std::vector<Trace> read_corpus(const fs::path& dir) {
  std::vector<Trace> traces;
  for (const auto& path : list_trace_files(dir)) traces.push_back(read_trace(path));
  return traces;
}

}  // namespace cotdyn
