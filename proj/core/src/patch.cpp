#include "bgpt/patch.hpp"

#include <string>

namespace bgpt {

namespace {

void append_file(PatchSequence& seq, std::span<const std::uint8_t> bytes, SegmentTag tag) {
  const std::size_t s = seq.patch_size;
  const std::size_t n = patch_count(bytes.size(), s);
  for (std::size_t i = 0; i < n * s; ++i) {
    seq.symbols.push_back(i < bytes.size() ? Symbol{bytes[i]} : kEndOfPatch);
  }
  seq.segments.insert(seq.segments.end(), n, tag);
  seq.source_length += bytes.size();
}

void append_marker_patch(PatchSequence& seq, SegmentTag tag) {
  seq.symbols.insert(seq.symbols.end(), seq.patch_size, kEndOfPatch);
  seq.segments.push_back(tag);
}

bool is_file(SegmentTag t) { return t == SegmentTag::kFileA || t == SegmentTag::kFileB; }

void check_shape(const PatchSequence& seq) {
  if (seq.patch_size == 0 || seq.symbols.size() % seq.patch_size != 0 ||
      seq.segments.size() != seq.num_patches()) {
    throw FormatError("malformed patch sequence");
  }
}

}  // namespace

PatchSequence segment(std::span<const std::uint8_t> bytes, std::size_t patch_size,
                      std::size_t max_patches) {
  if (bytes.empty()) throw Error("segment: empty byte sequence");
  if (patch_size == 0) throw Error("segment: patch size must be positive");
  if (patch_count(bytes.size(), patch_size) > max_patches) {
    throw CapacityError("segment: " + std::to_string(bytes.size()) + " bytes exceed " +
                        std::to_string(max_patches) + " patches of " +
                        std::to_string(patch_size));
  }
  PatchSequence seq;
  seq.patch_size = patch_size;
  seq.symbols.reserve(patch_count(bytes.size(), patch_size) * patch_size);
  append_file(seq, bytes, SegmentTag::kFileA);
  return seq;
}

Bytes reassemble_segment(const PatchSequence& seq, SegmentTag which) {
  check_shape(seq);
  Bytes out;
  for (std::size_t p = 0; p < seq.num_patches(); ++p) {
    const SegmentTag tag = seq.segments[p];
    auto patch = seq.patch(p);
    if (!is_file(tag)) {
      for (Symbol s : patch) {
        if (s != kEndOfPatch) throw FormatError("content symbol inside a separator patch");
      }
      continue;
    }
    bool padded = false;
    for (Symbol s : patch) {
      if (s == kEndOfPatch) {
        padded = true;
      } else if (s > 255) {
        throw FormatError("symbol out of range");
      } else if (padded) {
        throw FormatError("end-of-patch symbol before content within a file segment");
      } else if (tag == which) {
        out.push_back(static_cast<std::uint8_t>(s));
      }
    }
    // Padding is only legal in the final patch of a segment.
    if (padded && p + 1 < seq.num_patches() && seq.segments[p + 1] == tag) {
      throw FormatError("padding inside a file segment");
    }
  }
  return out;
}

Bytes reassemble(const PatchSequence& seq) {
  Bytes a = reassemble_segment(seq, SegmentTag::kFileA);
  Bytes b = reassemble_segment(seq, SegmentTag::kFileB);
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::vector<float> one_hot_flatten(std::span<const Symbol> patch) {
  std::vector<float> v(patch.size() * kVocabSize, 0.0f);
  for (std::size_t j = 0; j < patch.size(); ++j) {
    if (patch[j] >= kVocabSize) throw Error("one_hot_flatten: symbol out of range");
    v[j * kVocabSize + patch[j]] = 1.0f;
  }
  return v;
}

PatchSequence make_pair_sequence(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b,
                                 std::size_t patch_size, std::size_t max_patches,
                                 bool terminate) {
  if (a.empty() || b.empty()) throw Error("make_pair_sequence: empty file");
  if (patch_size == 0) throw Error("make_pair_sequence: patch size must be positive");
  const bool needs_terminator = terminate && b.size() % patch_size == 0;
  const std::size_t total = patch_count(a.size(), patch_size) + 1 +
                            patch_count(b.size(), patch_size) + (needs_terminator ? 1 : 0);
  if (total > max_patches) {
    throw CapacityError("make_pair_sequence: " + std::to_string(total) + " patches exceed " +
                        std::to_string(max_patches));
  }
  PatchSequence seq;
  seq.patch_size = patch_size;
  seq.symbols.reserve(total * patch_size);
  append_file(seq, a, SegmentTag::kFileA);
  append_marker_patch(seq, SegmentTag::kSeparator);
  append_file(seq, b, SegmentTag::kFileB);
  if (needs_terminator) append_marker_patch(seq, SegmentTag::kPadding);
  return seq;
}

std::vector<std::uint8_t> symbol_mask(const PatchSequence& seq, SymbolMask mask) {
  check_shape(seq);
  std::vector<std::uint8_t> out(seq.symbols.size(), 0);
  for (std::size_t p = 0; p < seq.num_patches(); ++p) {
    const SegmentTag tag = seq.segments[p];
    bool take = false;
    switch (mask) {
      case SymbolMask::kAll:
        take = true;
        break;
      case SymbolMask::kContent:
        take = is_file(tag);
        break;
      case SymbolMask::kFileA:
        take = tag == SegmentTag::kFileA;
        break;
      case SymbolMask::kFileB:
        take = tag == SegmentTag::kFileB;
        break;
    }
    if (!take) continue;
    for (std::size_t j = 0; j < seq.patch_size; ++j) {
      const std::size_t k = p * seq.patch_size + j;
      out[k] = mask == SymbolMask::kAll || seq.symbols[k] != kEndOfPatch;
    }
  }
  return out;
}

}  // namespace bgpt
