#pragma once

// On-disk trace corpus: a little-endian `.cotr` binary holding the per-step
// token-embedding matrices, plus a `<name>.json` sidecar manifest holding
// the human-facing text and the payload checksum.
//
//   bytes 0-7   "COTTRACE"
//   u32         version (1)
//   u32         dim
//   u32         T (step count)
//   T times:    u32 n_tokens, then n_tokens*dim float32, row-major

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace cotdyn {

using TokenMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr char kTraceMagic[8] = {'C', 'O', 'T', 'T', 'R', 'A', 'C', 'E'};
inline constexpr std::uint32_t kTraceVersion = 1;
inline constexpr const char* kTraceExtension = ".cotr";

struct StepRecord {
  std::uint32_t step_index = 0;  // 1-based
  TokenMatrix tokens;            // n_tokens x dim
  std::optional<std::string> text;

  std::size_t n_tokens() const noexcept { return static_cast<std::size_t>(tokens.rows()); }
};

struct Trace {
  std::string trace_id;
  std::string model_id;
  std::string dataset_id;
  std::uint32_t dim = 0;
  std::vector<StepRecord> steps;
  std::optional<std::string> prompt;

  std::size_t length() const noexcept { return steps.size(); }
};

/// Bit-exact equality: float payloads are compared by their IEEE bit patterns.
bool operator==(const StepRecord& a, const StepRecord& b);
bool operator==(const Trace& a, const Trace& b);

struct TraceManifest {
  std::string trace_id;
  std::string model_id;
  std::string dataset_id;
  std::optional<std::string> prompt;
  std::vector<std::pair<std::uint32_t, std::optional<std::string>>> steps;  // (step_index, text)
  std::string checksum;  // hex
  std::string checksum_algo;
};

/// Throws ValidationError naming the offending step when an invariant fails.
void validate_trace(const Trace& trace);

/// Binary `.cotr` encoding of the trace (no manifest content).
std::vector<std::uint8_t> encode_trace_payload(const Trace& trace);

/// Decodes a `.cotr` payload. Text fields and ids are left empty.
Trace decode_trace_payload(std::span<const std::uint8_t> bytes);

/// Sidecar manifest path for a trace file: `dir/name.cotr` -> `dir/name.json`.
std::filesystem::path manifest_path_for(const std::filesystem::path& trace_path);

/// Writes `path` (binary) and its sidecar manifest; returns the payload checksum.
std::uint64_t write_trace(const Trace& trace, const std::filesystem::path& path);

/// Reads a trace and its manifest, verifying the checksum and step count.
Trace read_trace(const std::filesystem::path& path);

TraceManifest read_manifest(const std::filesystem::path& manifest_path);

struct CorpusEntry {
  std::string trace_id;  // manifest id when readable, else the file stem
  std::filesystem::path path;
  bool ok = false;
  std::string message;
};

/// Trace files (`*.cotr`) in a directory, sorted by file name.
std::vector<std::filesystem::path> list_trace_files(const std::filesystem::path& dir);

/// One entry per `.cotr` file in `dir`, in file-name order. Never stops at the
/// first failure. Throws IoError when the directory itself is unreadable.
std::vector<CorpusEntry> validate_corpus(const std::filesystem::path& dir);

/// Reads every trace in `dir` in file-name order; the first failure throws.
std::vector<Trace> read_corpus(const std::filesystem::path& dir);

}  // namespace cotdyn
