#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bgpt/patch.hpp"

namespace bgpt::corpus {

inline constexpr std::size_t kMaxFileBytes = kDefaultPatchSize * kDefaultMaxPatches;  // 8KB

struct Example {
  Bytes bytes;
  std::optional<std::size_t> label;
  std::string source_id;
};

struct PairExample {
  Bytes side_a;
  Bytes side_b;
  std::string source_id;
};

enum class Split { kTrain, kEval };

struct ManifestEntry {
  std::string id;
  std::size_t length = 0;
  std::optional<std::size_t> label;
  Split split = Split::kTrain;
  std::string digest;  // SHA-256 of the content, lowercase hex

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> label_names;  // index = label id

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct IngestReport {
  std::size_t ingested = 0;
  std::vector<std::string> oversize;    // skipped: larger than the cap
  std::vector<std::string> duplicates;  // skipped: same digest as an earlier file
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Example> examples;  // parallel to manifest.entries
  IngestReport report;
};

enum class LabelMode { kFlat, kBySubdirectory };

/// Reads every regular file under `root` (recursively), sorted by relative
/// path. In kBySubdirectory mode each immediate subdirectory is a class, with
/// ids assigned in lexicographic order of the subdirectory names.
Dataset ingest_directory(const std::filesystem::path& root, LabelMode mode,
                         std::size_t max_bytes = kMaxFileBytes);

/// Seeded assignment of round(n * eval_fraction) entries (clamped to
/// [1, n-1]) to the eval split.
DatasetManifest split(DatasetManifest manifest, double eval_fraction, std::uint64_t seed);

/// Line-delimited JSON: {"id", "length", "label", "split", "digest"} per line.
std::string manifest_to_jsonl(const DatasetManifest& manifest);
DatasetManifest manifest_from_jsonl(const std::string& text);

std::string sha256_hex(std::span<const std::uint8_t> bytes);

struct PairReport {
  std::size_t matched = 0;
  std::vector<std::string> unmatched;  // "a/<file>" or "b/<file>"
  std::vector<std::string> over_capacity;
};

struct PairDataset {
  std::vector<PairExample> pairs;
  PairReport report;
};

/// Pairs files of `dir_a` and `dir_b` by identical stem. Pairs whose combined
/// patch sequence (with separator and terminator) exceeds `max_patches` are
/// skipped.
PairDataset build_pair_dataset(const std::filesystem::path& dir_a,
                               const std::filesystem::path& dir_b,
                               std::size_t patch_size = kDefaultPatchSize,
                               std::size_t max_patches = kDefaultMaxPatches);

/// Run-length code: each maximal run becomes (value, length) with runs longer
/// than 255 split.
Bytes rle_encode(std::span<const std::uint8_t> bytes);
Bytes rle_decode(std::span<const std::uint8_t> code);

/// side_a: printable ASCII (0x20..0x7E) of uniform length in [min_len,
/// max_len]; side_b = rle_encode(side_a).
std::vector<PairExample> synthetic_pairs(std::size_t count, std::uint64_t seed,
                                         std::size_t min_len = 16, std::size_t max_len = 512);

/// Writes pairs as <dir>/a/<id>.txt and <dir>/b/<id>.rle.
void write_pairs(const std::filesystem::path& dir, std::span<const PairExample> pairs);

/// Sorted list of regular files under `dir` with the given extension (any
/// extension when empty).
std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir,
                                              const std::string& extension = "");

}  // namespace bgpt::corpus
