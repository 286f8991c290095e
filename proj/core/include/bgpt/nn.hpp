#pragma once

// Dense building blocks for the byte model with hand-written backward passes.
//
// Everything is templated on the scalar type so the same code path runs in
// float for training and in double for finite-difference gradient checks.
// Matrices are row-major with one sequence position per row.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bgpt/tensor.hpp"

namespace bgpt {

inline constexpr double kLayerNormEps = 1e-5;

/// Parameters of one pre-norm transformer block.
template <typename T>
struct BlockParams {
  Parameter<T> ln1_gain, ln1_bias;
  Parameter<T> qkv_w, qkv_b;    // [H, 3H], [3H]
  Parameter<T> proj_w, proj_b;  // [H, H], [H]
  Parameter<T> ln2_gain, ln2_bias;
  Parameter<T> fc_w, fc_b;    // [H, 4H], [4H]
  Parameter<T> out_w, out_b;  // [4H, H], [H]

  BlockParams() = default;
  BlockParams(const std::string& prefix, std::size_t hidden);

  std::vector<Parameter<T>*> list();
};

/// A causal decoder stack: `layers` blocks followed by a final layer norm.
template <typename T>
struct StackParams {
  std::vector<BlockParams<T>> blocks;
  Parameter<T> lnf_gain, lnf_bias;
  std::size_t heads = 1;

  StackParams() = default;
  StackParams(const std::string& prefix, std::size_t hidden, std::size_t layers,
              std::size_t heads);

  std::size_t hidden() const { return lnf_gain.size(); }
  std::vector<Parameter<T>*> list();
};

/// Activations retained by a forward pass for the matching backward pass.
template <typename T>
struct BlockCache {
  Mat<T> ln1_xhat, h1;
  std::vector<T> ln1_rstd;
  Mat<T> qkv, att_out;
  std::vector<T> att_probs;
  Mat<T> ln2_xhat, h2;
  std::vector<T> ln2_rstd;
  Mat<T> pre_act, act;
};

template <typename T>
struct StackCache {
  std::vector<BlockCache<T>> blocks;
  Mat<T> lnf_xhat;
  std::vector<T> lnf_rstd;
  std::size_t seq_len = 0;
};

namespace nn {

/// out = LN(x) * gain + bias, row-wise. Caches xhat and 1/std when requested.
template <typename T>
void layer_norm_forward(const Mat<T>& x, std::span<const T> gain, std::span<const T> bias,
                        Mat<T>& out, Mat<T>* xhat, std::vector<T>* rstd);

/// Accumulates into dx, dgain and dbias.
template <typename T>
void layer_norm_backward(const Mat<T>& dout, const Mat<T>& xhat, const std::vector<T>& rstd,
                         std::span<const T> gain, Mat<T>& dx, std::span<T> dgain,
                         std::span<T> dbias);

template <typename T>
T gelu(T u);
template <typename T>
T gelu_grad(T u);

/// Causal multi-head attention over `rows / seq_len` independent sequences of
/// length `seq_len` laid out back to back. qkv is [rows, 3H].
template <typename T>
void attention_forward(const Mat<T>& qkv, std::size_t seq_len, std::size_t heads,
                       Mat<T>& out, std::vector<T>& probs);

template <typename T>
void attention_backward(const Mat<T>& qkv, const std::vector<T>& probs, const Mat<T>& dout,
                        std::size_t seq_len, std::size_t heads, Mat<T>& dqkv);

template <typename T>
Mat<T> stack_forward(const StackParams<T>& params, const Mat<T>& x, std::size_t seq_len,
                     StackCache<T>* cache);

/// Returns dL/dx and accumulates parameter gradients.
template <typename T>
Mat<T> stack_backward(StackParams<T>& params, const StackCache<T>& cache, const Mat<T>& dout);

}  // namespace nn

/// Row-wise layer normalization with epsilon kLayerNormEps.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias);

/// Runs a causal decoder stack over a single sequence x[L, H].
template <typename T>
Tensor<T> causal_decoder_stack(const Tensor<T>& x, const StackParams<T>& params);

/// -log2 softmax(logits)[target]. When `dlogits` is non-empty it receives
/// d(bits)/d(logits).
template <typename T>
T cross_entropy_bits(std::span<const T> logits, int target, std::span<T> dlogits = {});

/// Fills with N(0, stddev) draws from `rng`.
template <typename T>
void init_normal(Tensor<T>& t, std::mt19937_64& rng, double stddev);

}  // namespace bgpt
