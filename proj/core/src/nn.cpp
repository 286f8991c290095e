#include "bgpt/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bgpt {

namespace {

template <typename T>
void init_ln(Parameter<T>& gain, Parameter<T>& bias, const std::string& prefix,
             std::size_t hidden) {
  gain = Parameter<T>(prefix + ".gain", {hidden});
  gain.value.fill(T(1));
  bias = Parameter<T>(prefix + ".bias", {hidden});
}

template <typename T>
void add_bias(Mat<T>& m, const Tensor<T>& b) {
  m.rowwise() += b.vector();
}

template <typename T>
void accumulate_bias_grad(const Mat<T>& d, Tensor<T>& db) {
  db.vector() += d.colwise().sum();
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;

template <typename T>
Mat<T> gelu_matrix(const Mat<T>& u) {
  auto a = u.array();
  auto t = (T(kGeluC) * (a + T(kGeluK) * a * a * a)).tanh();
  return (T(0.5) * a * (T(1) + t)).matrix();
}

template <typename T>
Mat<T> gelu_grad_matrix(const Mat<T>& u) {
  auto a = u.array();
  Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> t =
      (T(kGeluC) * (a + T(kGeluK) * a * a * a)).tanh();
  return (T(0.5) * (T(1) + t) +
          T(0.5) * a * (T(1) - t * t) * T(kGeluC) * (T(1) + T(3 * kGeluK) * a * a))
      .matrix();
}

}  // namespace

template <typename T>
BlockParams<T>::BlockParams(const std::string& prefix, std::size_t hidden) {
  init_ln(ln1_gain, ln1_bias, prefix + ".ln1", hidden);
  qkv_w = Parameter<T>(prefix + ".attn.qkv.weight", {hidden, 3 * hidden});
  qkv_b = Parameter<T>(prefix + ".attn.qkv.bias", {3 * hidden});
  proj_w = Parameter<T>(prefix + ".attn.proj.weight", {hidden, hidden});
  proj_b = Parameter<T>(prefix + ".attn.proj.bias", {hidden});
  init_ln(ln2_gain, ln2_bias, prefix + ".ln2", hidden);
  fc_w = Parameter<T>(prefix + ".mlp.fc.weight", {hidden, 4 * hidden});
  fc_b = Parameter<T>(prefix + ".mlp.fc.bias", {4 * hidden});
  out_w = Parameter<T>(prefix + ".mlp.out.weight", {4 * hidden, hidden});
  out_b = Parameter<T>(prefix + ".mlp.out.bias", {hidden});
}

template <typename T>
std::vector<Parameter<T>*> BlockParams<T>::list() {
  return {&ln1_gain, &ln1_bias, &qkv_w, &qkv_b, &proj_w,  &proj_b,
          &ln2_gain, &ln2_bias, &fc_w,  &fc_b,  &out_w, &out_b};
}

template <typename T>
StackParams<T>::StackParams(const std::string& prefix, std::size_t hidden, std::size_t layers,
                            std::size_t num_heads)
    : heads(num_heads) {
  if (num_heads == 0 || hidden % num_heads != 0) {
    throw Error("hidden size " + std::to_string(hidden) + " is not divisible by " +
                std::to_string(num_heads) + " heads");
  }
  blocks.reserve(layers);
  for (std::size_t i = 0; i < layers; ++i) {
    blocks.emplace_back(prefix + ".blocks." + std::to_string(i), hidden);
  }
  init_ln(lnf_gain, lnf_bias, prefix + ".ln_f", hidden);
}

template <typename T>
std::vector<Parameter<T>*> StackParams<T>::list() {
  std::vector<Parameter<T>*> out;
  for (auto& b : blocks) {
    auto l = b.list();
    out.insert(out.end(), l.begin(), l.end());
  }
  out.push_back(&lnf_gain);
  out.push_back(&lnf_bias);
  return out;
}

namespace nn {

template <typename T>
void layer_norm_forward(const Mat<T>& x, std::span<const T> gain, std::span<const T> bias,
                        Mat<T>& out, Mat<T>* xhat, std::vector<T>* rstd) {
  const Eigen::Index rows = x.rows();
  const Eigen::Index h = x.cols();
  if (h == 0) throw Error("layer_norm: zero-length row");
  out.resize(rows, h);
  if (xhat) xhat->resize(rows, h);
  if (rstd) rstd->resize(static_cast<std::size_t>(rows));
  ConstRowVecMap<T> g(gain.data(), h);
  ConstRowVecMap<T> b(bias.data(), h);
  for (Eigen::Index r = 0; r < rows; ++r) {
    auto row = x.row(r);
    const T mean = row.mean();
    const T var = (row.array() - mean).square().mean();
    const T inv = T(1) / std::sqrt(var + T(kLayerNormEps));
    RowVec<T> n = (row.array() - mean) * inv;
    out.row(r) = n.cwiseProduct(g) + b;
    if (xhat) xhat->row(r) = n;
    if (rstd) (*rstd)[static_cast<std::size_t>(r)] = inv;
  }
}

template <typename T>
void layer_norm_backward(const Mat<T>& dout, const Mat<T>& xhat, const std::vector<T>& rstd,
                         std::span<const T> gain, Mat<T>& dx, std::span<T> dgain,
                         std::span<T> dbias) {
  const Eigen::Index rows = dout.rows();
  const Eigen::Index h = dout.cols();
  ConstRowVecMap<T> g(gain.data(), h);
  RowVecMap<T> dg(dgain.data(), h);
  RowVecMap<T> db(dbias.data(), h);
  dg += dout.cwiseProduct(xhat).colwise().sum();
  db += dout.colwise().sum();
  for (Eigen::Index r = 0; r < rows; ++r) {
    RowVec<T> dn = dout.row(r).cwiseProduct(g);
    const T mean_dn = dn.mean();
    const T mean_dn_x = dn.dot(xhat.row(r)) / T(h);
    dx.row(r).array() +=
        (dn.array() - mean_dn - xhat.row(r).array() * mean_dn_x) *
        rstd[static_cast<std::size_t>(r)];
  }
}

template <typename T>
T gelu(T u) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  return T(0.5) * u * (T(1) + std::tanh(c * (u + T(0.044715) * u * u * u)));
}

template <typename T>
T gelu_grad(T u) {
  constexpr T c = T(0.7978845608028654);
  const T t = std::tanh(c * (u + T(0.044715) * u * u * u));
  return T(0.5) * (T(1) + t) +
         T(0.5) * u * (T(1) - t * t) * c * (T(1) + T(3) * T(0.044715) * u * u);
}

template <typename T>
void attention_forward(const Mat<T>& qkv, std::size_t seq_len, std::size_t heads, Mat<T>& out,
                       std::vector<T>& probs) {
  const std::size_t rows = static_cast<std::size_t>(qkv.rows());
  const std::size_t hidden = static_cast<std::size_t>(qkv.cols()) / 3;
  const std::size_t d = hidden / heads;
  const std::size_t seqs = rows / seq_len;
  const T scale = T(1) / std::sqrt(T(d));
  const Eigen::Index de = static_cast<Eigen::Index>(d);
  out.setZero(qkv.rows(), static_cast<Eigen::Index>(hidden));
  probs.assign(seqs * heads * seq_len * seq_len, T(0));
  std::vector<T> scores(seq_len);
  for (std::size_t s = 0; s < seqs; ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      T* p = probs.data() + (s * heads + h) * seq_len * seq_len;
      const Eigen::Index qc = static_cast<Eigen::Index>(h * d);
      const Eigen::Index kc = static_cast<Eigen::Index>(hidden + h * d);
      const Eigen::Index vc = static_cast<Eigen::Index>(2 * hidden + h * d);
      for (std::size_t i = 0; i < seq_len; ++i) {
        const Eigen::Index ri = static_cast<Eigen::Index>(s * seq_len + i);
        auto q = qkv.row(ri).segment(qc, de);
        T maxv = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const Eigen::Index rj = static_cast<Eigen::Index>(s * seq_len + j);
          scores[j] = q.dot(qkv.row(rj).segment(kc, de)) * scale;
          maxv = std::max(maxv, scores[j]);
        }
        T sum = T(0);
        for (std::size_t j = 0; j <= i; ++j) {
          scores[j] = std::exp(scores[j] - maxv);
          sum += scores[j];
        }
        auto o = out.row(ri).segment(qc, de);
        for (std::size_t j = 0; j <= i; ++j) {
          const T pij = scores[j] / sum;
          p[i * seq_len + j] = pij;
          const Eigen::Index rj = static_cast<Eigen::Index>(s * seq_len + j);
          o += pij * qkv.row(rj).segment(vc, de);
        }
      }
    }
  }
}

template <typename T>
void attention_backward(const Mat<T>& qkv, const std::vector<T>& probs, const Mat<T>& dout,
                        std::size_t seq_len, std::size_t heads, Mat<T>& dqkv) {
  const std::size_t rows = static_cast<std::size_t>(qkv.rows());
  const std::size_t hidden = static_cast<std::size_t>(qkv.cols()) / 3;
  const std::size_t d = hidden / heads;
  const std::size_t seqs = rows / seq_len;
  const T scale = T(1) / std::sqrt(T(d));
  const Eigen::Index de = static_cast<Eigen::Index>(d);
  dqkv.setZero(qkv.rows(), qkv.cols());
  std::vector<T> dp(seq_len);
  for (std::size_t s = 0; s < seqs; ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      const T* p = probs.data() + (s * heads + h) * seq_len * seq_len;
      const Eigen::Index qc = static_cast<Eigen::Index>(h * d);
      const Eigen::Index kc = static_cast<Eigen::Index>(hidden + h * d);
      const Eigen::Index vc = static_cast<Eigen::Index>(2 * hidden + h * d);
      for (std::size_t i = 0; i < seq_len; ++i) {
        const Eigen::Index ri = static_cast<Eigen::Index>(s * seq_len + i);
        auto go = dout.row(ri).segment(qc, de);
        T dot_pd = T(0);
        for (std::size_t j = 0; j <= i; ++j) {
          const Eigen::Index rj = static_cast<Eigen::Index>(s * seq_len + j);
          const T pij = p[i * seq_len + j];
          dp[j] = go.dot(qkv.row(rj).segment(vc, de));
          dot_pd += pij * dp[j];
          dqkv.row(rj).segment(vc, de) += pij * go;
        }
        auto q = qkv.row(ri).segment(qc, de);
        for (std::size_t j = 0; j <= i; ++j) {
          const Eigen::Index rj = static_cast<Eigen::Index>(s * seq_len + j);
          const T ds = p[i * seq_len + j] * (dp[j] - dot_pd) * scale;
          dqkv.row(ri).segment(qc, de) += ds * qkv.row(rj).segment(kc, de);
          dqkv.row(rj).segment(kc, de) += ds * q;
        }
      }
    }
  }
}

template <typename T>
Mat<T> stack_forward(const StackParams<T>& params, const Mat<T>& x, std::size_t seq_len,
                     StackCache<T>* cache) {
  if (seq_len == 0 || static_cast<std::size_t>(x.rows()) % seq_len != 0) {
    throw Error("stack_forward: rows are not a multiple of the sequence length");
  }
  const std::size_t hidden = params.hidden();
  if (static_cast<std::size_t>(x.cols()) != hidden) {
    throw Error("stack_forward: input width does not match hidden size");
  }
  if (hidden % params.heads != 0) {
    throw Error("stack_forward: hidden size not divisible by heads");
  }
  if (cache) {
    cache->blocks.resize(params.blocks.size());
    cache->seq_len = seq_len;
  }
  Mat<T> h = x;
  BlockCache<T> scratch;
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    const auto& b = params.blocks[l];
    BlockCache<T>& c = cache ? cache->blocks[l] : scratch;
    layer_norm_forward<T>(h, b.ln1_gain.value.data(), b.ln1_bias.value.data(), c.h1,
                          cache ? &c.ln1_xhat : nullptr, cache ? &c.ln1_rstd : nullptr);
    c.qkv.noalias() = c.h1 * b.qkv_w.value.matrix();
    add_bias(c.qkv, b.qkv_b.value);
    attention_forward<T>(c.qkv, seq_len, params.heads, c.att_out, c.att_probs);
    Mat<T> a = c.att_out * b.proj_w.value.matrix();
    add_bias(a, b.proj_b.value);
    h += a;
    layer_norm_forward<T>(h, b.ln2_gain.value.data(), b.ln2_bias.value.data(), c.h2,
                          cache ? &c.ln2_xhat : nullptr, cache ? &c.ln2_rstd : nullptr);
    c.pre_act.noalias() = c.h2 * b.fc_w.value.matrix();
    add_bias(c.pre_act, b.fc_b.value);
    c.act = gelu_matrix(c.pre_act);
    Mat<T> m = c.act * b.out_w.value.matrix();
    add_bias(m, b.out_b.value);
    h += m;
  }
  Mat<T> out;
  layer_norm_forward<T>(h, params.lnf_gain.value.data(), params.lnf_bias.value.data(), out,
                        cache ? &cache->lnf_xhat : nullptr, cache ? &cache->lnf_rstd : nullptr);
  return out;
}

template <typename T>
Mat<T> stack_backward(StackParams<T>& params, const StackCache<T>& cache, const Mat<T>& dout) {
  Mat<T> dh = Mat<T>::Zero(dout.rows(), dout.cols());
  layer_norm_backward<T>(dout, cache.lnf_xhat, cache.lnf_rstd, params.lnf_gain.value.data(), dh,
                         params.lnf_gain.grad.data(), params.lnf_bias.grad.data());
  for (std::size_t l = params.blocks.size(); l-- > 0;) {
    auto& b = params.blocks[l];
    const auto& c = cache.blocks[l];
    // MLP branch.
    b.out_w.grad.matrix().noalias() += c.act.transpose() * dh;
    accumulate_bias_grad(dh, b.out_b.grad);
    Mat<T> dact = dh * b.out_w.value.matrix().transpose();
    Mat<T> dpre = dact.cwiseProduct(gelu_grad_matrix(c.pre_act));
    b.fc_w.grad.matrix().noalias() += c.h2.transpose() * dpre;
    accumulate_bias_grad(dpre, b.fc_b.grad);
    Mat<T> dh2 = dpre * b.fc_w.value.matrix().transpose();
    layer_norm_backward<T>(dh2, c.ln2_xhat, c.ln2_rstd, b.ln2_gain.value.data(), dh,
                           b.ln2_gain.grad.data(), b.ln2_bias.grad.data());
    // Attention branch.
    b.proj_w.grad.matrix().noalias() += c.att_out.transpose() * dh;
    accumulate_bias_grad(dh, b.proj_b.grad);
    Mat<T> datt = dh * b.proj_w.value.matrix().transpose();
    Mat<T> dqkv;
    attention_backward<T>(c.qkv, c.att_probs, datt, cache.seq_len, params.heads, dqkv);
    b.qkv_w.grad.matrix().noalias() += c.h1.transpose() * dqkv;
    accumulate_bias_grad(dqkv, b.qkv_b.grad);
    Mat<T> dh1 = dqkv * b.qkv_w.value.matrix().transpose();
    layer_norm_backward<T>(dh1, c.ln1_xhat, c.ln1_rstd, b.ln1_gain.value.data(), dh,
                           b.ln1_gain.grad.data(), b.ln1_bias.grad.data());
  }
  return dh;
}

}  // namespace nn

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
  if (x.cols() == 0) throw Error("layer_norm: zero-length row");
  if (gain.size() != x.cols() || bias.size() != x.cols()) {
    throw Error("layer_norm: gain/bias width mismatch");
  }
  Mat<T> in = x.matrix();
  Mat<T> out;
  nn::layer_norm_forward<T>(in, gain.data(), bias.data(), out, nullptr, nullptr);
  Tensor<T> result(x.shape());
  result.matrix() = out;
  return result;
}

template <typename T>
Tensor<T> causal_decoder_stack(const Tensor<T>& x, const StackParams<T>& params) {
  if (x.rows() == 0) throw Error("causal_decoder_stack: empty sequence");
  Mat<T> in = x.matrix();
  Mat<T> out = nn::stack_forward<T>(params, in, x.rows(), nullptr);
  Tensor<T> result(x.shape());
  result.matrix() = out;
  return result;
}

template <typename T>
T cross_entropy_bits(std::span<const T> logits, int target, std::span<T> dlogits) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size()) {
    throw Error("cross_entropy_bits: target " + std::to_string(target) + " out of range");
  }
  T maxv = *std::max_element(logits.begin(), logits.end());
  T sum = T(0);
  for (T l : logits) sum += std::exp(l - maxv);
  const T lse = maxv + std::log(sum);
  const T bits = (lse - logits[static_cast<std::size_t>(target)]) / T(M_LN2);
  if (!std::isfinite(bits)) throw NumericError("cross_entropy_bits: non-finite loss");
  if (!dlogits.empty()) {
    for (std::size_t i = 0; i < logits.size(); ++i) {
      dlogits[i] = std::exp(logits[i] - lse) / T(M_LN2);
    }
    dlogits[static_cast<std::size_t>(target)] -= T(1) / T(M_LN2);
  }
  return bits;
}

template <typename T>
void init_normal(Tensor<T>& t, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

#define BGPT_INSTANTIATE_NN(T)                                                                 \
  template struct BlockParams<T>;                                                              \
  template struct StackParams<T>;                                                              \
  template void nn::layer_norm_forward<T>(const Mat<T>&, std::span<const T>,                   \
                                          std::span<const T>, Mat<T>&, Mat<T>*,                \
                                          std::vector<T>*);                                    \
  template void nn::layer_norm_backward<T>(const Mat<T>&, const Mat<T>&,                       \
                                           const std::vector<T>&, std::span<const T>, Mat<T>&, \
                                           std::span<T>, std::span<T>);                        \
  template T nn::gelu<T>(T);                                                                   \
  template T nn::gelu_grad<T>(T);                                                              \
  template void nn::attention_forward<T>(const Mat<T>&, std::size_t, std::size_t, Mat<T>&,     \
                                         std::vector<T>&);                                     \
  template void nn::attention_backward<T>(const Mat<T>&, const std::vector<T>&,                \
                                          const Mat<T>&, std::size_t, std::size_t, Mat<T>&);   \
  template Mat<T> nn::stack_forward<T>(const StackParams<T>&, const Mat<T>&, std::size_t,      \
                                       StackCache<T>*);                                        \
  template Mat<T> nn::stack_backward<T>(StackParams<T>&, const StackCache<T>&, const Mat<T>&); \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> causal_decoder_stack<T>(const Tensor<T>&, const StackParams<T>&);         \
  template T cross_entropy_bits<T>(std::span<const T>, int, std::span<T>);                     \
  template void init_normal<T>(Tensor<T>&, std::mt19937_64&, double);

BGPT_INSTANTIATE_NN(float)
BGPT_INSTANTIATE_NN(double)

}  // namespace bgpt
