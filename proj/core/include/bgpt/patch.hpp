#pragma once

// Byte streams <-> fixed-size patches of symbols. Symbols 0..255 are byte
// values; 256 is the end-of-patch marker used for padding and separators.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bgpt/tensor.hpp"

namespace bgpt {

using Symbol = std::uint16_t;
using Bytes = std::vector<std::uint8_t>;

inline constexpr Symbol kEndOfPatch = 256;
inline constexpr std::size_t kVocabSize = 257;
inline constexpr std::size_t kDefaultPatchSize = 16;
inline constexpr std::size_t kDefaultMaxPatches = 512;

enum class SegmentTag : std::uint8_t { kFileA, kSeparator, kFileB, kPadding };

/// Which symbols of a sequence count towards a loss or metric.
enum class SymbolMask {
  kAll,      // every symbol, including padding and separators
  kContent,  // file bytes of both segments
  kFileA,
  kFileB,
};

struct PatchSequence {
  std::size_t patch_size = kDefaultPatchSize;
  std::vector<Symbol> symbols;       // num_patches() * patch_size, row-major
  std::vector<SegmentTag> segments;  // one tag per patch
  std::size_t source_length = 0;     // content bytes across all file segments

  std::size_t num_patches() const { return patch_size == 0 ? 0 : symbols.size() / patch_size; }
  std::span<const Symbol> patch(std::size_t i) const {
    return std::span<const Symbol>(symbols).subspan(i * patch_size, patch_size);
  }
};

/// Splits `bytes` into ceil(T/S) patches, padding the last with end-of-patch.
/// Throws on empty input or when the result exceeds `max_patches`.
PatchSequence segment(std::span<const std::uint8_t> bytes, std::size_t patch_size,
                      std::size_t max_patches = kDefaultMaxPatches);

/// Inverse of segment(): concatenated content of every file segment.
Bytes reassemble(const PatchSequence& seq);

/// Content bytes of one file segment (kFileA or kFileB).
Bytes reassemble_segment(const PatchSequence& seq, SegmentTag which);

/// One-hot encodes each symbol into 257 slots and concatenates them.
std::vector<float> one_hot_flatten(std::span<const Symbol> patch);

/// [segment(a)] ++ [separator patch] ++ [segment(b)]. With `terminate`, a
/// trailing all-end-of-patch patch is appended when b fills its last patch,
/// so that every b segment ends in-band with an end-of-patch symbol.
PatchSequence make_pair_sequence(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b,
                                 std::size_t patch_size,
                                 std::size_t max_patches = kDefaultMaxPatches,
                                 bool terminate = false);

/// Number of patches segment() would produce for `length` bytes.
constexpr std::size_t patch_count(std::size_t length, std::size_t patch_size) {
  return (length + patch_size - 1) / patch_size;
}

/// Per-symbol include flags for `mask`.
std::vector<std::uint8_t> symbol_mask(const PatchSequence& seq, SymbolMask mask);

}  // namespace bgpt
