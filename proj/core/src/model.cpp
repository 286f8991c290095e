#include "bgpt/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace bgpt {

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.patch_size = 16;
  c.max_patches = 128;
  c.patch_layers = 4;
  c.byte_layers = 2;
  c.hidden = 128;
  c.patch_heads = 4;
  c.byte_heads = 4;
  return c;
}

void ModelConfig::validate() const {
  if (patch_size == 0) throw Error("config: patch_size must be >= 1");
  if (max_patches == 0) throw Error("config: max_patches must be >= 1");
  if (hidden == 0) throw Error("config: hidden must be >= 1");
  if (patch_heads == 0 || hidden % patch_heads != 0) {
    throw Error("config: hidden not divisible by patch_heads");
  }
  if (byte_heads == 0 || hidden % byte_heads != 0) {
    throw Error("config: hidden not divisible by byte_heads");
  }
  if (class_count == 1) throw Error("config: a classifier needs at least 2 classes");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"patch_size", c.patch_size},     {"max_patches", c.max_patches},
                     {"patch_layers", c.patch_layers}, {"byte_layers", c.byte_layers},
                     {"hidden", c.hidden},             {"patch_heads", c.patch_heads},
                     {"byte_heads", c.byte_heads},     {"class_count", c.class_count}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.patch_size = j.value("patch_size", d.patch_size);
  c.max_patches = j.value("max_patches", d.max_patches);
  c.patch_layers = j.value("patch_layers", d.patch_layers);
  c.byte_layers = j.value("byte_layers", d.byte_layers);
  c.hidden = j.value("hidden", d.hidden);
  c.patch_heads = j.value("patch_heads", d.patch_heads);
  c.byte_heads = j.value("byte_heads", d.byte_heads);
  c.class_count = j.value("class_count", d.class_count);
}

std::size_t param_count(const ModelConfig& c) {
  const std::size_t h = c.hidden;
  const std::size_t s = c.patch_size;
  const std::size_t v = kVocabSize;
  const std::size_t block = 12 * h * h + 13 * h;
  std::size_t n = 0;
  n += s * v * h + h;                              // linear projection
  n += c.max_patches * h + h;                      // patch positions + start patch
  n += v * h + (s + 1) * h;                        // byte embeddings + positions
  n += h * h + h;                                  // feature projection
  n += (c.patch_layers + c.byte_layers) * block;   // decoder blocks
  n += 2 * 2 * h;                                  // final norms
  n += h * v + v;                                  // output head
  if (c.class_count > 0) n += h * c.class_count + c.class_count;
  return n;
}

template <typename T>
ModelParams<T>::ModelParams(const ModelConfig& cfg) : config(cfg) {
  config.validate();
  const std::size_t h = cfg.hidden;
  const std::size_t s = cfg.patch_size;
  patch_w = Parameter<T>("patch.proj.weight", {s * kVocabSize, h});
  patch_b = Parameter<T>("patch.proj.bias", {h});
  patch_pos = Parameter<T>("patch.pos", {cfg.max_patches, h});
  start = Parameter<T>("patch.start", {1, h});
  byte_emb = Parameter<T>("byte.embed", {kVocabSize, h});
  byte_pos = Parameter<T>("byte.pos", {s + 1, h});
  feat_w = Parameter<T>("byte.feature.weight", {h, h});
  feat_b = Parameter<T>("byte.feature.bias", {h});
  patch_stack = StackParams<T>("patch.decoder", h, cfg.patch_layers, cfg.patch_heads);
  byte_stack = StackParams<T>("byte.decoder", h, cfg.byte_layers, cfg.byte_heads);
  head_w = Parameter<T>("head.weight", {h, kVocabSize});
  head_b = Parameter<T>("head.bias", {kVocabSize});
  if (cfg.class_count > 0) {
    cls_w = Parameter<T>("classifier.weight", {h, cfg.class_count});
    cls_b = Parameter<T>("classifier.bias", {cfg.class_count});
  }
}

template <typename T>
void ModelParams<T>::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  constexpr double kStd = 0.02;
  for (Parameter<T>* p : list()) {
    const std::string& n = p->name;
    const bool is_norm = n.find(".ln") != std::string::npos;
    const bool is_bias = n.ends_with(".bias");
    if (is_norm) {
      p->value.fill(n.ends_with(".gain") ? T(1) : T(0));
    } else if (is_bias) {
      p->value.zero();
    } else {
      init_normal(p->value, rng, kStd);
    }
  }
}

template <typename T>
void ModelParams<T>::add_classifier(std::size_t classes, std::uint64_t seed) {
  if (classes < 2) throw Error("classifier needs at least 2 classes");
  config.class_count = classes;
  cls_w = Parameter<T>("classifier.weight", {config.hidden, classes});
  cls_b = Parameter<T>("classifier.bias", {classes});
  std::mt19937_64 rng(seed);
  init_normal(cls_w.value, rng, 0.02);
}

template <typename T>
std::vector<Parameter<T>*> ModelParams<T>::list() {
  std::vector<Parameter<T>*> out{&patch_w, &patch_b, &patch_pos, &start,
                                 &byte_emb, &byte_pos, &feat_w,   &feat_b};
  for (auto* p : patch_stack.list()) out.push_back(p);
  for (auto* p : byte_stack.list()) out.push_back(p);
  out.push_back(&head_w);
  out.push_back(&head_b);
  if (config.class_count > 0) {
    out.push_back(&cls_w);
    out.push_back(&cls_b);
  }
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> ModelParams<T>::list() const {
  auto mut = const_cast<ModelParams<T>*>(this)->list();
  return {mut.begin(), mut.end()};
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto* p : list()) p->zero_grad();
}

template <typename T>
std::size_t ModelParams<T>::size() const {
  std::size_t n = 0;
  for (const auto* p : list()) n += p->size();
  return n;
}

// ---------------------------------------------------------------------------

template <typename T>
struct Model<T>::Forward {
  std::size_t patches = 0;
  StackCache<T> patch_cache;
  Mat<T> features;
  std::vector<std::size_t> selected;  // patches that contribute to the loss
  Mat<T> selected_features;
  StackCache<T> byte_cache;
  Mat<T> byte_out;
  Mat<T> dlogits;
  LossStats stats;
  std::vector<double>* symbol_bits = nullptr;
  std::vector<std::uint8_t>* symbol_hits = nullptr;
};

template <typename T>
Model<T>::Model(ModelParams<T> params) : params_(std::move(params)) {
  params_.config.validate();
}

template <typename T>
Mat<T> Model<T>::embed_patches(std::span<const Symbol> symbols, std::size_t count) const {
  const std::size_t s = config().patch_size;
  if (count > config().max_patches) {
    throw CapacityError("embed_patches: " + std::to_string(count) + " patches exceed capacity");
  }
  if (symbols.size() < count * s) throw Error("embed_patches: not enough symbols");
  const Eigen::Index h = static_cast<Eigen::Index>(config().hidden);
  Mat<T> e(static_cast<Eigen::Index>(count), h);
  auto w = params_.patch_w.value.matrix();
  auto b = params_.patch_b.value.vector();
  for (std::size_t i = 0; i < count; ++i) {
    auto row = e.row(static_cast<Eigen::Index>(i));
    row = b;
    for (std::size_t j = 0; j < s; ++j) {
      const Symbol sym = symbols[i * s + j];
      if (sym >= kVocabSize) throw Error("embed_patches: symbol out of range");
      row += w.row(static_cast<Eigen::Index>(j * kVocabSize + sym));
    }
  }
  return e;
}

template <typename T>
Mat<T> Model<T>::patch_level(const Mat<T>& embeddings, std::size_t positions,
                             StackCache<T>* cache) const {
  if (positions == 0) throw Error("patch_level: no positions");
  if (positions > config().max_patches + 1 ||
      static_cast<std::size_t>(embeddings.rows()) + 1 < positions) {
    throw CapacityError("patch_level: too many positions");
  }
  const Eigen::Index l = static_cast<Eigen::Index>(positions);
  Mat<T> z(l, static_cast<Eigen::Index>(config().hidden));
  z.row(0) = params_.start.value.vector();
  if (l > 1) {
    z.bottomRows(l - 1) = embeddings.topRows(l - 1) + params_.patch_pos.value.matrix().topRows(l - 1);
  }
  return nn::stack_forward<T>(params_.patch_stack, z, positions, cache);
}

template <typename T>
Mat<T> Model<T>::predict_patch_features(const Mat<T>& embeddings) const {
  return patch_level(embeddings, static_cast<std::size_t>(embeddings.rows()));
}

template <typename T>
Mat<T> Model<T>::byte_logits(std::span<const T> feature, std::span<const Symbol> prefix) const {
  const std::size_t s = config().patch_size;
  if (prefix.size() >= s) throw Error("byte_logits: prefix must be shorter than the patch size");
  if (feature.size() != config().hidden) throw Error("byte_logits: feature width mismatch");
  const Eigen::Index rows = static_cast<Eigen::Index>(prefix.size() + 1);
  const Eigen::Index h = static_cast<Eigen::Index>(config().hidden);
  Mat<T> y(rows, h);
  auto pos = params_.byte_pos.value.matrix();
  auto emb = params_.byte_emb.value.matrix();
  y.row(0) = ConstRowVecMap<T>(feature.data(), h) * params_.feat_w.value.matrix() +
             params_.feat_b.value.vector() + pos.row(0);
  for (std::size_t j = 0; j < prefix.size(); ++j) {
    if (prefix[j] >= kVocabSize) throw Error("byte_logits: symbol out of range");
    y.row(static_cast<Eigen::Index>(j + 1)) =
        emb.row(prefix[j]) + pos.row(static_cast<Eigen::Index>(j + 1));
  }
  Mat<T> g = nn::stack_forward<T>(params_.byte_stack, y, prefix.size() + 1, nullptr);
  Mat<T> logits = g * params_.head_w.value.matrix();
  logits.rowwise() += params_.head_b.value.vector();
  return logits;
}

template <typename T>
void Model<T>::run_forward(const PatchSequence& seq, std::span<const std::uint8_t> mask,
                           bool keep, Forward& fw) const {
  const std::size_t s = config().patch_size;
  if (seq.patch_size != s) throw Error("sequence patch size does not match the model");
  const std::size_t n = seq.num_patches();
  if (n == 0) throw Error("empty patch sequence");
  if (n > config().max_patches) {
    throw CapacityError(std::to_string(n) + " patches exceed capacity " +
                        std::to_string(config().max_patches));
  }
  if (!mask.empty() && mask.size() != seq.symbols.size()) {
    throw Error("mask length does not match the sequence");
  }
  fw.patches = n;
  const Eigen::Index h = static_cast<Eigen::Index>(config().hidden);

  Mat<T> e = embed_patches(seq.symbols, n - 1);
  fw.features = patch_level(e, n, keep ? &fw.patch_cache : nullptr);

  fw.selected.clear();
  for (std::size_t p = 0; p < n; ++p) {
    bool any = mask.empty();
    for (std::size_t j = 0; j < s && !any; ++j) any = mask[p * s + j] != 0;
    if (any) fw.selected.push_back(p);
  }
  fw.stats = LossStats{};
  const std::size_t sel = fw.selected.size();
  if (sel == 0) return;

  fw.selected_features.resize(static_cast<Eigen::Index>(sel), h);
  for (std::size_t i = 0; i < sel; ++i) {
    fw.selected_features.row(static_cast<Eigen::Index>(i)) =
        fw.features.row(static_cast<Eigen::Index>(fw.selected[i]));
  }
  Mat<T> proj = fw.selected_features * params_.feat_w.value.matrix();
  proj.rowwise() += params_.feat_b.value.vector();

  auto pos = params_.byte_pos.value.matrix();
  auto emb = params_.byte_emb.value.matrix();
  Mat<T> y(static_cast<Eigen::Index>(sel * s), h);
  for (std::size_t i = 0; i < sel; ++i) {
    const std::size_t p = fw.selected[i];
    const Eigen::Index base = static_cast<Eigen::Index>(i * s);
    y.row(base) = proj.row(static_cast<Eigen::Index>(i)) + pos.row(0);
    for (std::size_t j = 1; j < s; ++j) {
      y.row(base + static_cast<Eigen::Index>(j)) =
          emb.row(seq.symbols[p * s + j - 1]) + pos.row(static_cast<Eigen::Index>(j));
    }
  }
  fw.byte_out = nn::stack_forward<T>(params_.byte_stack, y, s, keep ? &fw.byte_cache : nullptr);
  Mat<T> logits = fw.byte_out * params_.head_w.value.matrix();
  logits.rowwise() += params_.head_b.value.vector();

  if (keep) fw.dlogits.setZero(logits.rows(), logits.cols());
  std::vector<T> scratch;
  for (std::size_t i = 0; i < sel; ++i) {
    const std::size_t p = fw.selected[i];
    for (std::size_t j = 0; j < s; ++j) {
      const std::size_t k = p * s + j;
      if (!mask.empty() && !mask[k]) continue;
      const Eigen::Index r = static_cast<Eigen::Index>(i * s + j);
      std::span<const T> row(logits.row(r).data(), kVocabSize);
      std::span<T> grad = keep ? std::span<T>(fw.dlogits.row(r).data(), kVocabSize)
                               : std::span<T>();
      const int target = seq.symbols[k];
      const double bits = static_cast<double>(cross_entropy_bits<T>(row, target, grad));
      fw.stats.bits += bits;
      fw.stats.count += 1;
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      if (best == target) fw.stats.correct += 1;
      if (fw.symbol_bits) (*fw.symbol_bits)[k] = bits;
      if (fw.symbol_hits) (*fw.symbol_hits)[k] = best == target ? 1 : 0;
    }
  }
}

template <typename T>
LossStats Model<T>::score(const PatchSequence& seq, std::span<const std::uint8_t> mask) const {
  Forward fw;
  run_forward(seq, mask, false, fw);
  return fw.stats;
}

template <typename T>
std::vector<double> Model<T>::symbol_bits(const PatchSequence& seq,
                                         std::vector<std::uint8_t>* hits) const {
  std::vector<double> bits(seq.symbols.size(), 0.0);
  Forward fw;
  fw.symbol_bits = &bits;
  if (hits) {
    hits->assign(seq.symbols.size(), 0);
    fw.symbol_hits = hits;
  }
  run_forward(seq, {}, false, fw);
  return bits;
}

namespace {

// Routes gradients of the patch-level decoder input back to the start
// embedding, positional embeddings and the linear projection. Row r >= 1 of
// dz belongs to patch r - 1.
template <typename T>
void backward_patch_inputs(ModelParams<T>& p, std::span<const Symbol> symbols, const Mat<T>& dz) {
  const std::size_t s = p.config.patch_size;
  p.start.grad.vector() += dz.row(0);
  auto dpos = p.patch_pos.grad.matrix();
  auto dw = p.patch_w.grad.matrix();
  auto db = p.patch_b.grad.vector();
  for (Eigen::Index r = 1; r < dz.rows(); ++r) {
    const std::size_t patch = static_cast<std::size_t>(r - 1);
    auto g = dz.row(r);
    dpos.row(r - 1) += g;
    db += g;
    for (std::size_t j = 0; j < s; ++j) {
      dw.row(static_cast<Eigen::Index>(j * kVocabSize + symbols[patch * s + j])) += g;
    }
  }
}

}  // namespace

template <typename T>
LossStats Model<T>::forward_backward(const PatchSequence& seq, std::span<const std::uint8_t> mask,
                                     T scale) {
  Forward fw;
  run_forward(seq, mask, true, fw);
  if (fw.selected.empty()) return fw.stats;
  auto& p = params_;
  const std::size_t s = config().patch_size;
  const Eigen::Index h = static_cast<Eigen::Index>(config().hidden);

  fw.dlogits *= scale;
  p.head_w.grad.matrix().noalias() += fw.byte_out.transpose() * fw.dlogits;
  p.head_b.grad.vector() += fw.dlogits.colwise().sum();
  Mat<T> dg = fw.dlogits * p.head_w.value.matrix().transpose();
  Mat<T> dy = nn::stack_backward<T>(p.byte_stack, fw.byte_cache, dg);

  const std::size_t sel = fw.selected.size();
  Mat<T> dproj(static_cast<Eigen::Index>(sel), h);
  auto dpos = p.byte_pos.grad.matrix();
  auto demb = p.byte_emb.grad.matrix();
  for (std::size_t i = 0; i < sel; ++i) {
    const std::size_t patch = fw.selected[i];
    const Eigen::Index base = static_cast<Eigen::Index>(i * s);
    dproj.row(static_cast<Eigen::Index>(i)) = dy.row(base);
    dpos.row(0) += dy.row(base);
    for (std::size_t j = 1; j < s; ++j) {
      const Eigen::Index r = base + static_cast<Eigen::Index>(j);
      demb.row(seq.symbols[patch * s + j - 1]) += dy.row(r);
      dpos.row(static_cast<Eigen::Index>(j)) += dy.row(r);
    }
  }
  p.feat_w.grad.matrix().noalias() += fw.selected_features.transpose() * dproj;
  p.feat_b.grad.vector() += dproj.colwise().sum();
  Mat<T> dsel = dproj * p.feat_w.value.matrix().transpose();

  Mat<T> dfeat = Mat<T>::Zero(static_cast<Eigen::Index>(fw.patches), h);
  for (std::size_t i = 0; i < sel; ++i) {
    dfeat.row(static_cast<Eigen::Index>(fw.selected[i])) = dsel.row(static_cast<Eigen::Index>(i));
  }
  Mat<T> dz = nn::stack_backward<T>(p.patch_stack, fw.patch_cache, dfeat);
  backward_patch_inputs(p, seq.symbols, dz);
  return fw.stats;
}

template <typename T>
RowVec<T> Model<T>::pooled_feature(const PatchSequence& seq) const {
  const std::size_t n = seq.num_patches();
  if (n == 0) throw Error("pooled_feature: empty sequence");
  if (seq.patch_size != config().patch_size) throw Error("patch size mismatch");
  Mat<T> e = embed_patches(seq.symbols, n);
  Mat<T> out = patch_level(e, n + 1);
  return out.bottomRows(static_cast<Eigen::Index>(n)).colwise().mean();
}

namespace {

template <typename T>
std::vector<T> softmax(const RowVec<T>& logits) {
  const T m = logits.maxCoeff();
  std::vector<T> p(static_cast<std::size_t>(logits.size()));
  T sum = T(0);
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    p[static_cast<std::size_t>(i)] = std::exp(logits(i) - m);
    sum += p[static_cast<std::size_t>(i)];
  }
  for (auto& v : p) v /= sum;
  return p;
}

}  // namespace

template <typename T>
std::vector<T> Model<T>::classify(const PatchSequence& seq) const {
  if (config().class_count < 2) throw Error("classify: model has no classifier head");
  RowVec<T> pooled = pooled_feature(seq);
  RowVec<T> logits = pooled * params_.cls_w.value.matrix() + params_.cls_b.value.vector();
  return softmax<T>(logits);
}

template <typename T>
T Model<T>::classify_forward_backward(const PatchSequence& seq, std::size_t label, T scale,
                                     std::vector<T>* probs) {
  const std::size_t k = config().class_count;
  if (k < 2) throw Error("classify: model has no classifier head");
  if (label >= k) throw Error("classify: label out of range");
  const std::size_t n = seq.num_patches();
  if (n == 0) throw Error("classify: empty sequence");
  if (seq.patch_size != config().patch_size) throw Error("patch size mismatch");
  auto& p = params_;
  StackCache<T> cache;
  Mat<T> e = embed_patches(seq.symbols, n);
  Mat<T> out = patch_level(e, n + 1, &cache);
  const Eigen::Index ni = static_cast<Eigen::Index>(n);
  RowVec<T> pooled = out.bottomRows(ni).colwise().mean();
  RowVec<T> logits = pooled * p.cls_w.value.matrix() + p.cls_b.value.vector();
  std::vector<T> prob = softmax<T>(logits);
  const T loss = -std::log(prob[label]);
  if (!std::isfinite(loss)) throw NumericError("classify: non-finite loss");
  if (probs != nullptr) *probs = prob;

  RowVec<T> dlogits(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    dlogits(static_cast<Eigen::Index>(i)) = scale * (prob[i] - (i == label ? T(1) : T(0)));
  }
  p.cls_w.grad.matrix().noalias() += pooled.transpose() * dlogits;
  p.cls_b.grad.vector() += dlogits;
  RowVec<T> dpooled = dlogits * p.cls_w.value.matrix().transpose();
  Mat<T> dout = Mat<T>::Zero(out.rows(), out.cols());
  dout.bottomRows(ni).rowwise() = dpooled / T(n);
  Mat<T> dz = nn::stack_backward<T>(p.patch_stack, cache, dout);
  backward_patch_inputs(p, seq.symbols, dz);
  return loss;
}

template <typename T>
RowVec<T> Model<T>::patch_feature(std::span<const Symbol> complete_patches,
                                  std::size_t index) const {
  if (index >= config().max_patches) throw CapacityError("patch_feature: index beyond capacity");
  Mat<T> e = embed_patches(complete_patches, index);
  Mat<T> out = patch_level(e, index + 1);
  return out.row(static_cast<Eigen::Index>(index));
}

namespace {

template <typename T>
Symbol pick_symbol(const RowVec<T>& logits, const SamplingMode& mode, std::mt19937_64& rng) {
  Eigen::Index best = 0;
  logits.maxCoeff(&best);
  if (mode.kind == SamplingMode::Kind::kGreedy) return static_cast<Symbol>(best);
  const std::size_t v = static_cast<std::size_t>(logits.size());
  std::vector<std::size_t> order(v);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t k = std::clamp<std::size_t>(mode.top_k, 1, v);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return logits(static_cast<Eigen::Index>(a)) >
                             logits(static_cast<Eigen::Index>(b));
                    });
  const double temp = std::max(mode.temperature, 1e-6);
  const double top = static_cast<double>(logits(static_cast<Eigen::Index>(order[0])));
  std::vector<double> weights(k);
  for (std::size_t i = 0; i < k; ++i) {
    weights[i] =
        std::exp((static_cast<double>(logits(static_cast<Eigen::Index>(order[i]))) - top) / temp);
  }
  std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
  return static_cast<Symbol>(order[dist(rng)]);
}

}  // namespace

template <typename T>
GenerationResult Model<T>::continue_stream(std::vector<Symbol> complete, std::vector<Symbol> partial,
                                           std::size_t max_new, const SamplingMode& mode) const {
  const std::size_t s = config().patch_size;
  if (complete.size() % s != 0) throw Error("continue_stream: incomplete patch in history");
  if (partial.size() >= s) throw Error("continue_stream: partial patch too long");
  GenerationResult result;
  std::mt19937_64 rng(mode.seed);
  while (result.bytes.size() < max_new) {
    const std::size_t index = complete.size() / s;
    if (index >= config().max_patches) {
      result.hit_capacity = true;
      break;
    }
    RowVec<T> feature = patch_feature(complete, index);
    std::span<const T> f(feature.data(), config().hidden);
    while (partial.size() < s && result.bytes.size() < max_new) {
      Mat<T> logits = byte_logits(f, partial);
      RowVec<T> last = logits.row(logits.rows() - 1);
      const Symbol sym = pick_symbol<T>(last, mode, rng);
      if (sym == kEndOfPatch) {
        result.terminated = true;
        return result;
      }
      partial.push_back(sym);
      result.bytes.push_back(static_cast<std::uint8_t>(sym));
    }
    if (partial.size() == s) {
      complete.insert(complete.end(), partial.begin(), partial.end());
      partial.clear();
    }
  }
  return result;
}

template <typename T>
Bytes Model<T>::generate_bytes(std::span<const std::uint8_t> prompt, std::size_t max_new,
                               const SamplingMode& mode) const {
  const std::size_t s = config().patch_size;
  if (prompt.size() > config().max_bytes()) throw CapacityError("generate_bytes: prompt too long");
  const std::size_t full = prompt.size() / s * s;
  std::vector<Symbol> complete(prompt.begin(), prompt.begin() + static_cast<std::ptrdiff_t>(full));
  std::vector<Symbol> partial(prompt.begin() + static_cast<std::ptrdiff_t>(full), prompt.end());
  Bytes out(prompt.begin(), prompt.end());
  if (max_new == 0) return out;
  GenerationResult r = continue_stream(std::move(complete), std::move(partial), max_new, mode);
  out.insert(out.end(), r.bytes.begin(), r.bytes.end());
  return out;
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template class Model<float>;
template class Model<double>;

}  // namespace bgpt
