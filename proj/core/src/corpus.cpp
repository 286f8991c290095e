#include "bgpt/corpus.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bgpt/checkpoint.hpp"

namespace bgpt::corpus {

namespace fs = std::filesystem;

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 0xF];
  }
  return out;
}

std::vector<fs::path> list_files(const fs::path& dir, const std::string& extension) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error("not a readable directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (!extension.empty() && e.path().extension() != extension) continue;
    out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Dataset ingest_directory(const fs::path& root, LabelMode mode, std::size_t max_bytes) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw Error("ingest: unreadable directory " + root.string());

  struct Candidate {
    std::string id;
    fs::path path;
    std::optional<std::size_t> label;
  };
  std::vector<Candidate> candidates;
  Dataset ds;
  if (mode == LabelMode::kBySubdirectory) {
    std::vector<fs::path> subdirs;
    for (const auto& e : fs::directory_iterator(root)) {
      if (e.is_directory()) subdirs.push_back(e.path());
    }
    std::sort(subdirs.begin(), subdirs.end());
    for (std::size_t label = 0; label < subdirs.size(); ++label) {
      ds.manifest.label_names.push_back(subdirs[label].filename().string());
      for (const auto& f : list_files(subdirs[label])) {
        candidates.push_back({fs::relative(f, root).generic_string(), f, label});
      }
    }
  } else {
    for (const auto& f : list_files(root)) {
      candidates.push_back({fs::relative(f, root).generic_string(), f, std::nullopt});
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) { return a.id < b.id; });

  std::set<std::string> seen;
  for (auto& c : candidates) {
    const auto size = fs::file_size(c.path);
    if (size > max_bytes) {
      ds.report.oversize.push_back(c.id);
      continue;
    }
    Bytes bytes = read_file(c.path);
    if (bytes.empty()) continue;
    std::string digest = sha256_hex(bytes);
    if (!seen.insert(digest).second) {
      ds.report.duplicates.push_back(c.id);
      continue;
    }
    ds.manifest.entries.push_back({c.id, bytes.size(), c.label, Split::kTrain, digest});
    ds.examples.push_back({std::move(bytes), c.label, c.id});
  }
  ds.report.ingested = ds.examples.size();
  if (ds.examples.empty()) throw Error("ingest: no usable files under " + root.string());
  return ds;
}

DatasetManifest split(DatasetManifest manifest, double eval_fraction, std::uint64_t seed) {
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
    throw Error("split: eval fraction must be in (0, 1)");
  }
  const std::size_t n = manifest.entries.size();
  if (n < 2) throw Error("split: need at least 2 entries");
  auto n_eval = static_cast<std::size_t>(std::llround(static_cast<double>(n) * eval_fraction));
  n_eval = std::clamp<std::size_t>(n_eval, 1, n - 1);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  for (auto& e : manifest.entries) e.split = Split::kTrain;
  for (std::size_t i = 0; i < n_eval; ++i) manifest.entries[order[i]].split = Split::kEval;
  return manifest;
}

std::string manifest_to_jsonl(const DatasetManifest& manifest) {
  std::string out;
  for (const auto& e : manifest.entries) {
    nlohmann::json j{{"id", e.id},
                     {"length", e.length},
                     {"label", e.label ? nlohmann::json(*e.label) : nlohmann::json(nullptr)},
                     {"split", e.split == Split::kEval ? "eval" : "train"},
                     {"digest", e.digest}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

DatasetManifest manifest_from_jsonl(const std::string& text) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    ManifestEntry e;
    e.id = j.at("id").get<std::string>();
    e.length = j.at("length").get<std::size_t>();
    if (!j.at("label").is_null()) e.label = j.at("label").get<std::size_t>();
    const auto s = j.at("split").get<std::string>();
    if (s != "train" && s != "eval") throw FormatError("manifest: bad split tag '" + s + "'");
    e.split = s == "eval" ? Split::kEval : Split::kTrain;
    e.digest = j.at("digest").get<std::string>();
    m.entries.push_back(std::move(e));
  }
  return m;
}

PairDataset build_pair_dataset(const fs::path& dir_a, const fs::path& dir_b,
                               std::size_t patch_size, std::size_t max_patches) {
  auto by_stem = [](const fs::path& dir, const char* tag, PairReport& report) {
    std::map<std::string, fs::path> out;
    for (const auto& f : list_files(dir)) {
      const std::string stem = f.stem().string();
      if (!out.emplace(stem, f).second) {
        report.unmatched.push_back(std::string(tag) + "/" + f.filename().string());
      }
    }
    return out;
  };
  PairDataset ds;
  const auto a = by_stem(dir_a, "a", ds.report);
  const auto b = by_stem(dir_b, "b", ds.report);
  for (const auto& [stem, path] : a) {
    auto it = b.find(stem);
    if (it == b.end()) {
      ds.report.unmatched.push_back("a/" + path.filename().string());
      continue;
    }
    Bytes bytes_a = read_file(path);
    Bytes bytes_b = read_file(it->second);
    if (bytes_a.empty() || bytes_b.empty()) {
      ds.report.unmatched.push_back("a/" + path.filename().string());
      continue;
    }
    const std::size_t patches = patch_count(bytes_a.size(), patch_size) + 1 +
                                patch_count(bytes_b.size(), patch_size) +
                                (bytes_b.size() % patch_size == 0 ? 1 : 0);
    if (patches > max_patches) {
      ds.report.over_capacity.push_back(stem);
      continue;
    }
    ds.pairs.push_back({std::move(bytes_a), std::move(bytes_b), stem});
  }
  for (const auto& [stem, path] : b) {
    if (!a.contains(stem)) ds.report.unmatched.push_back("b/" + path.filename().string());
  }
  ds.report.matched = ds.pairs.size();
  if (ds.pairs.empty()) throw Error("build_pair_dataset: no matched pairs");
  return ds;
}

Bytes rle_encode(std::span<const std::uint8_t> bytes) {
  Bytes out;
  for (std::size_t i = 0; i < bytes.size();) {
    std::size_t run = 1;
    while (i + run < bytes.size() && bytes[i + run] == bytes[i] && run < 255) ++run;
    out.push_back(bytes[i]);
    out.push_back(static_cast<std::uint8_t>(run));
    i += run;
  }
  return out;
}

Bytes rle_decode(std::span<const std::uint8_t> code) {
  if (code.size() % 2 != 0) throw FormatError("rle_decode: odd length");
  Bytes out;
  for (std::size_t i = 0; i < code.size(); i += 2) {
    if (code[i + 1] == 0) throw FormatError("rle_decode: zero run length");
    out.insert(out.end(), code[i + 1], code[i]);
  }
  return out;
}

std::vector<PairExample> synthetic_pairs(std::size_t count, std::uint64_t seed,
                                         std::size_t min_len, std::size_t max_len) {
  if (min_len < 1 || max_len < min_len) throw Error("synthetic_pairs: bad length range");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_len(min_len, max_len);
  std::uniform_int_distribution<int> pick_char(0x20, 0x7E);
  std::vector<PairExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    PairExample p;
    p.side_a.resize(pick_len(rng));
    for (auto& c : p.side_a) c = static_cast<std::uint8_t>(pick_char(rng));
    p.side_b = rle_encode(p.side_a);
    char id[32];
    std::snprintf(id, sizeof(id), "pair_%07zu", i);
    p.source_id = id;
    out.push_back(std::move(p));
  }
  return out;
}

void write_pairs(const fs::path& dir, std::span<const PairExample> pairs) {
  for (const auto& p : pairs) {
    write_file(dir / "a" / (p.source_id + ".txt"), p.side_a);
    write_file(dir / "b" / (p.source_id + ".rle"), p.side_b);
  }
}

}  // namespace bgpt::corpus
