#pragma once

// Hierarchical byte model: a linear projection of one-hot patches, a causal
// patch-level decoder that predicts the feature of the next patch, and a
// causal byte-level decoder that spells out each patch from its feature.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bgpt/nn.hpp"
#include "bgpt/patch.hpp"
#include "bgpt/tensor.hpp"

namespace bgpt {

struct ModelConfig {
  std::size_t patch_size = 16;
  std::size_t max_patches = 512;
  std::size_t patch_layers = 12;
  std::size_t byte_layers = 3;
  std::size_t hidden = 768;
  std::size_t patch_heads = 12;
  std::size_t byte_heads = 12;
  std::size_t class_count = 0;  // 0 = no classifier head

  /// The 110M-parameter configuration.
  static ModelConfig paper();
  /// Desk-scale configuration used for the bundled experiments.
  static ModelConfig desk();

  std::size_t max_bytes() const { return patch_size * max_patches; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Exact number of scalar parameters for `config`.
std::size_t param_count(const ModelConfig& config);

template <typename T>
struct ModelParams {
  ModelConfig config;
  Parameter<T> patch_w, patch_b;  // [S*257, H], [H]
  Parameter<T> patch_pos;         // [max_patches, H]
  Parameter<T> start;             // [1, H]
  Parameter<T> byte_emb;          // [257, H]
  Parameter<T> byte_pos;          // [S+1, H]
  Parameter<T> feat_w, feat_b;    // [H, H], [H]
  StackParams<T> patch_stack;
  StackParams<T> byte_stack;
  Parameter<T> head_w, head_b;  // [H, 257], [257]
  Parameter<T> cls_w, cls_b;    // [H, K], [K]; empty when class_count == 0

  ModelParams() = default;
  explicit ModelParams(const ModelConfig& cfg);

  /// Normal(0, 0.02) weights and embeddings, zero biases, unit norm gains.
  void init(std::uint64_t seed);
  /// Adds (or replaces) a freshly initialized K-way classifier head.
  void add_classifier(std::size_t classes, std::uint64_t seed);

  /// Every parameter in a fixed order (also the checkpoint order).
  std::vector<Parameter<T>*> list();
  std::vector<const Parameter<T>*> list() const;
  void zero_grad();
  std::size_t size() const;

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out(config);
    auto dst = out.list();
    auto src = list();
    for (std::size_t i = 0; i < src.size(); ++i) {
      dst[i]->value = src[i]->value.template cast<U>();
    }
    return out;
  }
};

/// Sum of bits and the number of symbols they cover.
struct LossStats {
  double bits = 0.0;
  std::size_t count = 0;
  std::size_t correct = 0;  // argmax hits among counted symbols

  double bpb() const { return count == 0 ? 0.0 : bits / static_cast<double>(count); }
  double accuracy() const {
    return count == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(count);
  }
  LossStats& operator+=(const LossStats& o) {
    bits += o.bits;
    count += o.count;
    correct += o.correct;
    return *this;
  }
};

struct SamplingMode {
  enum class Kind { kGreedy, kTopK };
  Kind kind = Kind::kGreedy;
  std::size_t top_k = 8;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  static SamplingMode greedy() { return {}; }
  static SamplingMode sample(std::size_t k, double temperature, std::uint64_t seed) {
    return {Kind::kTopK, k, temperature, seed};
  }
};

struct GenerationResult {
  Bytes bytes;              // generated content only
  bool terminated = false;  // an end-of-patch symbol closed the file
  bool hit_capacity = false;
};

template <typename T>
class Model {
 public:
  explicit Model(ModelParams<T> params);

  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }
  const ModelConfig& config() const { return params_.config; }

  /// E_i = Flatten(P_i) * W + b for the first `count` patches of `symbols`.
  Mat<T> embed_patches(std::span<const Symbol> symbols, std::size_t count) const;

  /// Runs the patch-level decoder over [start, E_1+X_1, ..., E_{L-1}+X_{L-1}]
  /// and returns its L outputs. Output i is the predicted feature of patch i.
  Mat<T> patch_level(const Mat<T>& embeddings, std::size_t positions,
                     StackCache<T>* cache = nullptr) const;

  /// Predicted features for every patch of E (N rows in, N rows out).
  Mat<T> predict_patch_features(const Mat<T>& embeddings) const;

  /// Next-symbol logits at every position 0..|prefix| of a patch conditioned
  /// on `feature`. Row j depends only on the feature and prefix[0..j).
  Mat<T> byte_logits(std::span<const T> feature, std::span<const Symbol> prefix) const;

  /// Teacher-forced bits over symbols selected by `mask` (all symbols when
  /// empty).
  LossStats score(const PatchSequence& seq, std::span<const std::uint8_t> mask = {}) const;

  /// Bits for every symbol from one pass over all patches; argmax hits go to
  /// `hits` when given.
  std::vector<double> symbol_bits(const PatchSequence& seq,
                                  std::vector<std::uint8_t>* hits = nullptr) const;

  /// Same as score() and accumulates d(scale * bits)/dparams into grads.
  LossStats forward_backward(const PatchSequence& seq, std::span<const std::uint8_t> mask,
                             T scale);

  /// Mean of the final patch-level outputs after each patch has been read.
  RowVec<T> pooled_feature(const PatchSequence& seq) const;

  /// Class probabilities from the classifier head.
  std::vector<T> classify(const PatchSequence& seq) const;

  /// Returns -ln p(label) and accumulates d(scale * loss)/dparams. Class
  /// probabilities are copied to `probs` when given.
  T classify_forward_backward(const PatchSequence& seq, std::size_t label, T scale,
                              std::vector<T>* probs = nullptr);

  /// Feature predicted for patch `index` given the first `index` patches.
  RowVec<T> patch_feature(std::span<const Symbol> complete_patches, std::size_t index) const;

  /// Extends a stream of complete patches plus a partial patch.
  GenerationResult continue_stream(std::vector<Symbol> complete, std::vector<Symbol> partial,
                                   std::size_t max_new, const SamplingMode& mode) const;

  /// Prompt followed by up to `max_new` generated bytes.
  Bytes generate_bytes(std::span<const std::uint8_t> prompt, std::size_t max_new,
                       const SamplingMode& mode = SamplingMode::greedy()) const;

 private:
  struct Forward;
  void run_forward(const PatchSequence& seq, std::span<const std::uint8_t> mask, bool keep,
                   Forward& fw) const;

  ModelParams<T> params_;
};

/// Free-function helpers mirroring the model's operations.
template <typename T>
LossStats sequence_nll_bits(const Model<T>& model, const PatchSequence& seq,
                            std::span<const std::uint8_t> mask = {}) {
  return model.score(seq, mask);
}

}  // namespace bgpt
