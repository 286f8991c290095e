#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "bgpt/corpus.hpp"

namespace bgpt::corpus {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_bytes(const fs::path& p, std::size_t n, std::uint8_t fill) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  const std::string s(n, static_cast<char>(fill));
  out << s;
}

DatasetManifest numbered(std::size_t n) {
  DatasetManifest m;
  for (std::size_t i = 0; i < n; ++i) {
    m.entries.push_back({"f" + std::to_string(i), i + 1, std::nullopt, Split::kTrain,
                         sha256_hex(Bytes(1, static_cast<std::uint8_t>(i)))});
  }
  return m;
}

std::size_t eval_count(const DatasetManifest& m) {
  std::size_t n = 0;
  for (const auto& e : m.entries) n += e.split == Split::kEval;
  return n;
}

TEST(Sha256, KnownDigest) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex(Bytes(abc.begin(), abc.end())),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Ingest, OversizeFilesAreSkipped) {
  TempDir dir("bgpt_ingest_cap");
  write_bytes(dir.path() / "small.bin", 100, 1);
  write_bytes(dir.path() / "big.bin", 9000, 2);
  const auto ds = ingest_directory(dir.path(), LabelMode::kFlat);
  EXPECT_EQ(ds.examples.size(), 1u);
  EXPECT_EQ(ds.report.ingested, 1u);
  ASSERT_EQ(ds.report.oversize.size(), 1u);
  EXPECT_EQ(ds.manifest.entries[0].length, 100u);
}

TEST(Ingest, CapBoundaryIsInclusive) {
  TempDir dir("bgpt_ingest_edge");
  write_bytes(dir.path() / "a.bin", kMaxFileBytes, 1);
  write_bytes(dir.path() / "b.bin", kMaxFileBytes + 1, 2);
  const auto ds = ingest_directory(dir.path(), LabelMode::kFlat);
  ASSERT_EQ(ds.examples.size(), 1u);
  EXPECT_EQ(ds.examples[0].bytes.size(), kMaxFileBytes);
}

TEST(Ingest, LabelsFromSortedSubdirectories) {
  TempDir dir("bgpt_ingest_labels");
  write_bytes(dir.path() / "yes" / "1.bin", 10, 1);
  write_bytes(dir.path() / "no" / "1.bin", 10, 2);
  write_bytes(dir.path() / "no" / "2.bin", 11, 3);
  const auto ds = ingest_directory(dir.path(), LabelMode::kBySubdirectory);
  ASSERT_EQ(ds.manifest.label_names, (std::vector<std::string>{"no", "yes"}));
  ASSERT_EQ(ds.examples.size(), 3u);
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    const auto& id = ds.manifest.entries[i].id;
    const std::size_t want = id.rfind("yes", 0) == 0 ? 1u : 0u;
    EXPECT_EQ(ds.examples[i].label, want) << id;
    EXPECT_EQ(ds.manifest.entries[i].label, want);
  }
}

TEST(Ingest, DuplicateContentIsSkipped) {
  TempDir dir("bgpt_ingest_dup");
  write_bytes(dir.path() / "a.bin", 10, 7);
  write_bytes(dir.path() / "b.bin", 10, 7);
  const auto ds = ingest_directory(dir.path(), LabelMode::kFlat);
  EXPECT_EQ(ds.examples.size(), 1u);
  EXPECT_EQ(ds.report.duplicates.size(), 1u);
}

TEST(Ingest, Deterministic) {
  TempDir dir("bgpt_ingest_det");
  for (int i = 0; i < 12; ++i) {
    write_bytes(dir.path() / ("f" + std::to_string(i) + ".bin"), 20 + i, static_cast<std::uint8_t>(i));
  }
  const auto a = ingest_directory(dir.path(), LabelMode::kFlat);
  const auto b = ingest_directory(dir.path(), LabelMode::kFlat);
  EXPECT_EQ(a.manifest, b.manifest);
  EXPECT_EQ(manifest_to_jsonl(a.manifest), manifest_to_jsonl(b.manifest));
  std::set<std::string> digests;
  for (const auto& e : a.manifest.entries) digests.insert(e.digest);
  EXPECT_EQ(digests.size(), a.manifest.entries.size());
  EXPECT_TRUE(std::is_sorted(a.manifest.entries.begin(), a.manifest.entries.end(),
                             [](const auto& x, const auto& y) { return x.id < y.id; }));
}

TEST(Ingest, MissingDirectory) {
  EXPECT_THROW(ingest_directory("/nonexistent/bgpt", LabelMode::kFlat), Error);
}

TEST(Split, OnePercentOfHundred) {
  EXPECT_EQ(eval_count(split(numbered(100), 0.01, 0)), 1u);
}

TEST(Split, HalfOfTwo) {
  EXPECT_EQ(eval_count(split(numbered(2), 0.5, 0)), 1u);
}

TEST(Split, ClampedToLeaveBothSides) {
  EXPECT_EQ(eval_count(split(numbered(10), 0.01, 0)), 1u);
  EXPECT_EQ(eval_count(split(numbered(10), 0.99, 0)), 9u);
}

TEST(Split, SeedDeterminism) {
  const auto a = split(numbered(200), 0.1, 5);
  const auto b = split(numbered(200), 0.1, 5);
  const auto c = split(numbered(200), 0.1, 6);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_EQ(eval_count(a), 20u);
}

TEST(Split, Errors) {
  EXPECT_THROW(split(numbered(10), 0.0, 0), Error);
  EXPECT_THROW(split(numbered(10), 1.0, 0), Error);
  EXPECT_THROW(split(numbered(1), 0.5, 0), Error);
}

TEST(Manifest, JsonlRoundTrip) {
  auto m = split(numbered(5), 0.4, 1);
  m.entries[2].label = 3;
  const auto back = manifest_from_jsonl(manifest_to_jsonl(m));
  EXPECT_EQ(back.entries, m.entries);
}

TEST(Manifest, BadSplitTag) {
  EXPECT_THROW(
      manifest_from_jsonl(R"({"id":"x","length":1,"label":null,"split":"test","digest":"00"})"),
      FormatError);
}

TEST(Pairs, MatchedByStem) {
  TempDir dir("bgpt_pairs_match");
  write_bytes(dir.path() / "a" / "x.abc", 30, 'a');
  write_bytes(dir.path() / "b" / "x.mid", 40, 'b');
  write_bytes(dir.path() / "a" / "y.abc", 30, 'c');
  const auto ds = build_pair_dataset(dir.path() / "a", dir.path() / "b");
  ASSERT_EQ(ds.pairs.size(), 1u);
  EXPECT_EQ(ds.pairs[0].source_id, "x");
  EXPECT_EQ(ds.pairs[0].side_a.size(), 30u);
  EXPECT_EQ(ds.pairs[0].side_b.size(), 40u);
  EXPECT_EQ(ds.report.unmatched, (std::vector<std::string>{"a/y.abc"}));
}

TEST(Pairs, OverCapacitySkipped) {
  TempDir dir("bgpt_pairs_cap");
  write_bytes(dir.path() / "a" / "x.abc", 30, 'a');
  write_bytes(dir.path() / "b" / "x.mid", 40, 'b');
  write_bytes(dir.path() / "a" / "big.abc", 5000, 'a');
  write_bytes(dir.path() / "b" / "big.mid", 5000, 'b');
  const auto ds = build_pair_dataset(dir.path() / "a", dir.path() / "b");
  EXPECT_EQ(ds.pairs.size(), 1u);
  EXPECT_EQ(ds.report.over_capacity, (std::vector<std::string>{"big"}));
}

TEST(Pairs, NoMatchesIsAnError) {
  TempDir dir("bgpt_pairs_none");
  write_bytes(dir.path() / "a" / "x.abc", 30, 'a');
  write_bytes(dir.path() / "b" / "y.mid", 30, 'b');
  EXPECT_THROW(build_pair_dataset(dir.path() / "a", dir.path() / "b"), Error);
}

TEST(Rle, DocumentedExample) {
  const std::string text = "AAAAB";
  EXPECT_EQ(rle_encode(Bytes(text.begin(), text.end())), (Bytes{65, 4, 66, 1}));
}

TEST(Rle, LongRunsSplit) {
  const Bytes run(300, 9);
  EXPECT_EQ(rle_encode(run), (Bytes{9, 255, 9, 45}));
  EXPECT_EQ(rle_decode(rle_encode(run)), run);
}

TEST(Rle, MalformedCode) {
  EXPECT_THROW(rle_decode(Bytes{1, 2, 3}), FormatError);
  EXPECT_THROW(rle_decode(Bytes{1, 0}), FormatError);
  EXPECT_TRUE(rle_decode(Bytes{}).empty());
}

TEST(Synthetic, InvertibleAndPrintable) {
  const auto pairs = synthetic_pairs(300, 4);
  ASSERT_EQ(pairs.size(), 300u);
  for (const auto& p : pairs) {
    EXPECT_GE(p.side_a.size(), 16u);
    EXPECT_LE(p.side_a.size(), 512u);
    for (auto c : p.side_a) {
      EXPECT_GE(c, 0x20);
      EXPECT_LE(c, 0x7E);
    }
    EXPECT_EQ(rle_decode(p.side_b), p.side_a);
    EXPECT_EQ(rle_encode(p.side_a), p.side_b);
  }
}

TEST(Synthetic, Deterministic) {
  const auto a = synthetic_pairs(20, 9);
  const auto b = synthetic_pairs(20, 9);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].side_a, b[i].side_a);
    EXPECT_EQ(a[i].source_id, b[i].source_id);
  }
  EXPECT_NE(synthetic_pairs(1, 10)[0].side_a, a[0].side_a);
}

TEST(Synthetic, WrittenPairsReload) {
  TempDir dir("bgpt_pairs_written");
  const auto pairs = synthetic_pairs(8, 2);
  write_pairs(dir.path(), pairs);
  const auto ds = build_pair_dataset(dir.path() / "a", dir.path() / "b");
  ASSERT_EQ(ds.pairs.size(), 8u);
  EXPECT_TRUE(ds.report.unmatched.empty());
  for (const auto& p : ds.pairs) EXPECT_EQ(rle_decode(p.side_b), p.side_a);
}

}  // namespace
}  // namespace bgpt::corpus
