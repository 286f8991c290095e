#include <bit>
#include <cstring>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "bgpt/checkpoint.hpp"
#include "bgpt/gradcheck.hpp"
#include "bgpt/model.hpp"
#include "checks.hpp"

namespace bgpt {
namespace {

ModelConfig small_config(std::size_t s = 4, std::size_t h = 16) {
  ModelConfig c;
  c.patch_size = s;
  c.max_patches = 16;
  c.patch_layers = 2;
  c.byte_layers = 1;
  c.hidden = h;
  c.patch_heads = 2;
  c.byte_heads = 2;
  return c;
}

template <typename T>
Model<T> make_model(const ModelConfig& c, std::uint64_t seed = 1) {
  ModelParams<T> p(c);
  p.init(seed);
  return Model<T>(std::move(p));
}

Bytes some_bytes(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Bytes b(n);
  for (auto& v : b) v = static_cast<std::uint8_t>(rng() & 0xFF);
  return b;
}

bool rows_bit_equal(const Mat<float>& a, const Mat<float>& b, Eigen::Index row) {
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    if (std::bit_cast<std::uint32_t>(a(row, c)) != std::bit_cast<std::uint32_t>(b(row, c))) {
      return false;
    }
  }
  return true;
}

TEST(ParamCount, PaperConfigInWindow) {
  const std::size_t n = param_count(ModelConfig::paper());
  EXPECT_GE(n, 105'000'000u);
  EXPECT_LE(n, 115'000'000u);
  // Shape-by-shape sum for S=16, H=768, 512 patches, 12 + 3 layers.
  EXPECT_EQ(n, 110'872'577u);
}

TEST(ParamCount, MatchesAllocatedShapes) {
  for (const auto& c : {small_config(), small_config(2, 8), ModelConfig::desk()}) {
    EXPECT_EQ(param_count(c), ModelParams<float>(c).size());
  }
  ModelConfig k = small_config();
  k.class_count = 3;
  EXPECT_EQ(param_count(k), ModelParams<float>(k).size());
}

TEST(ParamCount, NoLayersLeavesEmbeddingsAndHeads) {
  ModelConfig c = small_config(4, 8);
  c.patch_layers = 0;
  c.byte_layers = 0;
  const std::size_t s = 4, h = 8, v = 257, p = 16;
  const std::size_t expected = (s * v * h + h) + p * h + h + v * h + (s + 1) * h + (h * h + h) +
                               4 * h + (h * v + v);
  EXPECT_EQ(param_count(c), expected);
}

TEST(ParamCount, DoublingHiddenRoughlyQuadruplesStacks) {
  auto stack_only = [](std::size_t h) {
    ModelConfig with = ModelConfig::paper();
    with.hidden = h;
    ModelConfig without = with;
    without.patch_layers = 0;
    without.byte_layers = 0;
    return static_cast<double>(param_count(with) - param_count(without));
  };
  const double ratio = stack_only(1536) / stack_only(768);
  EXPECT_GE(ratio, 3.5);
  EXPECT_LE(ratio, 4.5);
}

TEST(Config, Validation) {
  ModelConfig c = small_config();
  c.patch_heads = 3;
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.patch_size = 0;
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.max_patches = 0;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_NO_THROW(ModelConfig::paper().validate());
  EXPECT_NO_THROW(ModelConfig::desk().validate());
}

TEST(Config, JsonRoundTrip) {
  ModelConfig c = ModelConfig::desk();
  c.class_count = 5;
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<ModelConfig>(), c);
}

TEST(Embed, ZeroProjectionGivesZeros) {
  auto m = make_model<float>(small_config());
  m.params().patch_w.value.zero();
  m.params().patch_b.value.zero();
  const auto seq = segment(some_bytes(10, 2), 4, 16);
  const Mat<float> e = m.embed_patches(seq.symbols, seq.num_patches());
  EXPECT_EQ(e.rows(), 3);
  EXPECT_EQ(e.cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Embed, MatchesScalarLoopMatmul) {
  auto m = make_model<double>(small_config(2, 4), 5);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : m.params().patch_b.value.data()) v = n(rng);
  const std::vector<Symbol> symbols = {3, kEndOfPatch, 200, 0};
  const Mat<double> e = m.embed_patches(symbols, 2);
  const auto& w = m.params().patch_w.value;
  for (std::size_t p = 0; p < 2; ++p) {
    const auto flat = one_hot_flatten(std::span<const Symbol>(symbols).subspan(p * 2, 2));
    for (std::size_t c = 0; c < 4; ++c) {
      double acc = m.params().patch_b.value[c];
      for (std::size_t r = 0; r < flat.size(); ++r) acc += flat[r] * w[r * 4 + c];
      EXPECT_NEAR(e(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)), acc, 1e-12);
    }
  }
}

TEST(Embed, CapacityExceeded) {
  auto m = make_model<float>(small_config());
  std::vector<Symbol> symbols(17 * 4, 1);
  EXPECT_THROW(m.embed_patches(symbols, 17), CapacityError);
}

TEST(PatchLevel, FirstFeatureDependsOnStartOnly) {
  auto m = make_model<float>(small_config());
  const auto a = segment(some_bytes(24, 1), 4, 16);
  const auto b = segment(some_bytes(24, 2), 4, 16);
  const Mat<float> fa = m.predict_patch_features(m.embed_patches(a.symbols, a.num_patches()));
  const Mat<float> fb = m.predict_patch_features(m.embed_patches(b.symbols, b.num_patches()));
  EXPECT_EQ(fa.rows(), 6);
  EXPECT_TRUE(rows_bit_equal(fa, fb, 0));
}

TEST(PatchLevel, SinglePatchGivesOneFeature) {
  auto m = make_model<float>(small_config());
  const auto a = segment(some_bytes(3, 1), 4, 16);
  EXPECT_EQ(m.predict_patch_features(m.embed_patches(a.symbols, 1)).rows(), 1);
}

TEST(PatchLevel, PerturbingSecondPatchChangesOnlyLaterFeatures) {
  auto m = make_model<float>(small_config());
  auto a = segment(some_bytes(16, 3), 4, 16);
  auto b = a;
  b.symbols[4] = static_cast<Symbol>((b.symbols[4] + 1) % 256);
  const Mat<float> fa = m.predict_patch_features(m.embed_patches(a.symbols, 4));
  const Mat<float> fb = m.predict_patch_features(m.embed_patches(b.symbols, 4));
  EXPECT_TRUE(rows_bit_equal(fa, fb, 0));
  EXPECT_TRUE(rows_bit_equal(fa, fb, 1));
  EXPECT_FALSE(rows_bit_equal(fa, fb, 2));
}

TEST(PatchLevel, CausalityProperty) {
  const auto r = checks::patch_level_causality(20, 4);
  EXPECT_TRUE(r.ok) << r.detail;
}

TEST(ByteLevel, CausalityProperty) {
  const auto r = checks::byte_level_causality(20, 4);
  EXPECT_TRUE(r.ok) << r.detail;
}

TEST(ByteLevel, PrefixTooLong) {
  auto m = make_model<float>(small_config());
  std::vector<float> f(16, 0.1f);
  std::vector<Symbol> prefix(4, 1);
  EXPECT_THROW(m.byte_logits(f, prefix), Error);
  prefix.pop_back();
  EXPECT_EQ(m.byte_logits(f, prefix).rows(), 4);
}

TEST(ByteLevel, EmptyPrefixDependsOnFeature) {
  auto m = make_model<float>(small_config());
  std::vector<float> f1(16, 0.5f);
  std::vector<float> f2(16, -0.5f);
  const Mat<float> l1 = m.byte_logits(f1, {});
  const Mat<float> l2 = m.byte_logits(f2, {});
  EXPECT_EQ(l1.rows(), 1);
  EXPECT_EQ(l1.cols(), 257);
  EXPECT_GT((l1 - l2).cwiseAbs().maxCoeff(), 0.0f);
  EXPECT_EQ(l1, m.byte_logits(f1, {}));
}

TEST(Score, UniformHeadGivesLog2Vocab) {
  auto m = make_model<float>(small_config());
  m.params().head_w.value.zero();
  m.params().head_b.value.zero();
  const auto seq = segment(some_bytes(23, 4), 4, 16);
  const LossStats s = m.score(seq);
  EXPECT_EQ(s.count, seq.symbols.size());
  EXPECT_NEAR(s.bpb(), std::log2(257.0), 1e-5);
}

TEST(Score, OracleLogitsGiveZeroBits) {
  // Head biased hard towards the only symbol in the sequence.
  auto m = make_model<float>(small_config());
  m.params().head_w.value.zero();
  m.params().head_b.value.zero();
  m.params().head_b.value[65] = 1e4f;
  const Bytes b(12, 65);
  const LossStats s = m.score(segment(b, 4, 16));
  EXPECT_NEAR(s.bits, 0.0, 1e-6);
}

TEST(Score, EqualsPerPositionCrossEntropy) {
  auto m = make_model<double>(small_config(), 3);
  const auto seq = segment(some_bytes(7, 9), 4, 16);  // 2 patches, 1 padding symbol
  const Mat<double> features = m.predict_patch_features(m.embed_patches(seq.symbols, 2));
  double expected = 0.0;
  for (std::size_t p = 0; p < 2; ++p) {
    const auto patch = seq.patch(p);
    const RowVec<double> f = features.row(static_cast<Eigen::Index>(p));
    const Mat<double> logits =
        m.byte_logits(std::span<const double>(f.data(), 16), patch.first(3));
    for (std::size_t j = 0; j < 4; ++j) {
      const RowVec<double> row = logits.row(static_cast<Eigen::Index>(j));
      expected += cross_entropy_bits<double>(std::span<const double>(row.data(), 257), patch[j]);
    }
  }
  const LossStats s = m.score(seq);
  EXPECT_EQ(s.count, 8u);
  EXPECT_NEAR(s.bits, expected, 1e-9);
}

TEST(Score, MaskLengthMismatch) {
  auto m = make_model<float>(small_config());
  const auto seq = segment(some_bytes(7, 9), 4, 16);
  std::vector<std::uint8_t> mask(5, 1);
  EXPECT_THROW(m.score(seq, mask), Error);
}

TEST(Score, MaskSelectsSymbols) {
  auto m = make_model<float>(small_config());
  const auto seq = segment(some_bytes(7, 9), 4, 16);
  const auto content = symbol_mask(seq, SymbolMask::kContent);
  EXPECT_EQ(m.score(seq, content).count, 7u);
}

TEST(Pooled, SinglePatchEqualsItsOutput) {
  auto m = make_model<double>(small_config());
  const auto seq = segment(some_bytes(3, 1), 4, 16);
  const Mat<double> out = m.patch_level(m.embed_patches(seq.symbols, 1), 2);
  const RowVec<double> pooled = m.pooled_feature(seq);
  EXPECT_LT((pooled - out.row(1)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Pooled, MeanOfOutputsAfterEachPatch) {
  auto m = make_model<double>(small_config());
  const auto seq = segment(some_bytes(19, 6), 4, 16);
  const std::size_t n = seq.num_patches();
  const Mat<double> out = m.patch_level(m.embed_patches(seq.symbols, n), n + 1);
  const RowVec<double> pooled = m.pooled_feature(seq);
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    double sum = 0.0;
    for (std::size_t r = 1; r <= n; ++r) sum += out(static_cast<Eigen::Index>(r), c);
    EXPECT_NEAR(pooled(c), sum / static_cast<double>(n), 1e-12);
  }
}

TEST(Classify, ZeroHeadIsUniform) {
  auto m = make_model<double>(small_config());
  m.params().add_classifier(4, 1);
  m.params().cls_w.value.zero();
  const auto seq = segment(some_bytes(9, 2), 4, 16);
  for (double p : m.classify(seq)) EXPECT_NEAR(p, 0.25, 1e-12);
  EXPECT_NEAR(m.classify_forward_backward(seq, 2, 1.0), std::log(4.0), 1e-12);
}

TEST(Classify, ProbabilitiesSumToOne) {
  auto m = make_model<float>(small_config());
  m.params().add_classifier(5, 3);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto probs = m.classify(segment(some_bytes(5 + s * 7, s), 4, 16));
    float sum = 0.0f;
    for (float p : probs) {
      EXPECT_GE(p, 0.0f);
      sum += p;
    }
    EXPECT_NEAR(sum, 1.0f, 1e-6f);
  }
}

TEST(Classify, MissingHead) {
  auto m = make_model<float>(small_config());
  EXPECT_THROW(m.classify(segment(some_bytes(5, 1), 4, 16)), Error);
}

TEST(Gradients, GenerativeLossMatchesFiniteDifferences) {
  ModelConfig c = small_config();
  c.patch_layers = 1;
  auto m = make_model<double>(c, 11);
  const auto seq = make_pair_sequence(some_bytes(6, 1), some_bytes(5, 2), 4, 16, true);
  const auto mask = symbol_mask(seq, SymbolMask::kAll);
  auto loss = [&](bool grad) {
    return grad ? m.forward_backward(seq, mask, 1.0).bits : m.score(seq, mask).bits;
  };
  const auto r = finite_diff_gradcheck(loss, m.params().list(), 300, 1e-4, 3);
  EXPECT_EQ(r.probes, 300u);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Gradients, MaskedLossMatchesFiniteDifferences) {
  ModelConfig c = small_config();
  c.patch_layers = 1;
  auto m = make_model<double>(c, 12);
  const auto seq = segment(some_bytes(21, 3), 4, 16);
  std::vector<std::uint8_t> mask(seq.symbols.size(), 0);
  for (std::size_t i = 9; i < 15; ++i) mask[i] = 1;
  auto loss = [&](bool grad) {
    return grad ? m.forward_backward(seq, mask, 0.5).bits * 0.5 : m.score(seq, mask).bits * 0.5;
  };
  const auto r = finite_diff_gradcheck(loss, m.params().list(), 200, 1e-4, 4);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Gradients, ClassifierLossMatchesFiniteDifferences) {
  ModelConfig c = small_config();
  c.patch_layers = 1;
  auto m = make_model<double>(c, 13);
  m.params().add_classifier(3, 2);
  const auto seq = segment(some_bytes(14, 5), 4, 16);
  auto loss = [&](bool grad) {
    return grad ? m.classify_forward_backward(seq, 1, 1.0) : -std::log(m.classify(seq)[1]);
  };
  const auto r = finite_diff_gradcheck(loss, m.params().list(), 300, 1e-4, 5);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Generate, GreedyIsDeterministic) {
  auto m = make_model<float>(small_config(), 21);
  const Bytes prompt = some_bytes(6, 3);
  const Bytes a = m.generate_bytes(prompt, 20);
  const Bytes b = m.generate_bytes(prompt, 20);
  EXPECT_EQ(a, b);
  EXPECT_EQ(Bytes(a.begin(), a.begin() + 6), prompt);
}

TEST(Generate, ZeroBudgetReturnsPrompt) {
  auto m = make_model<float>(small_config());
  const Bytes prompt = some_bytes(9, 3);
  EXPECT_EQ(m.generate_bytes(prompt, 0), prompt);
}

TEST(Generate, SamplingIsSeeded) {
  auto m = make_model<float>(small_config(), 22);
  const Bytes prompt = some_bytes(4, 3);
  const auto mode = SamplingMode::sample(8, 1.0, 99);
  EXPECT_EQ(m.generate_bytes(prompt, 12, mode), m.generate_bytes(prompt, 12, mode));
}

TEST(Generate, PromptOverCapacity) {
  auto m = make_model<float>(small_config());
  EXPECT_THROW(m.generate_bytes(some_bytes(65, 1), 1), CapacityError);
}

TEST(Checkpoint, ByteExactRoundTrip) {
  ModelConfig c = small_config();
  c.class_count = 3;
  auto params = ModelParams<float>(c);
  params.init(7);
  const Bytes blob = serialize_checkpoint(params);
  const auto loaded = deserialize_checkpoint(blob);
  EXPECT_EQ(loaded.config, c);
  EXPECT_EQ(serialize_checkpoint(loaded), blob);
  EXPECT_EQ(std::memcmp(blob.data(), "BGPTCKPT", 8), 0);
}

TEST(Checkpoint, ConfigMismatchIsRejected) {
  auto params = ModelParams<float>(small_config());
  params.init(7);
  const Bytes blob = serialize_checkpoint(params);
  EXPECT_THROW(deserialize_checkpoint(blob, small_config(4, 32)), FormatError);
  EXPECT_NO_THROW(deserialize_checkpoint(blob, small_config()));
}

TEST(Checkpoint, CorruptInputIsRejected) {
  auto params = ModelParams<float>(small_config());
  const Bytes blob = serialize_checkpoint(params);
  Bytes bad = blob;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  EXPECT_THROW(deserialize_checkpoint(std::span(blob).first(blob.size() - 1)), FormatError);
  Bytes longer = blob;
  longer.push_back(0);
  EXPECT_THROW(deserialize_checkpoint(longer), FormatError);
}

}  // namespace
}  // namespace bgpt
