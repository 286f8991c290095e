#include "bgpt/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "bgpt/adam.hpp"
#include "bgpt/checkpoint.hpp"

namespace bgpt::harness {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string task_name(Task t) {
  switch (t) {
    case Task::kLm: return "lm";
    case Task::kCpu: return "cpu";
    case Task::kConversion: return "conversion";
  }
  return "?";
}

Task parse_task(const std::string& s) {
  if (s == "lm") return Task::kLm;
  if (s == "cpu") return Task::kCpu;
  if (s == "conversion") return Task::kConversion;
  throw Error("unknown task '" + s + "' (expected lm, cpu or conversion)");
}

std::string direction_name(Direction d) {
  switch (d) {
    case Direction::kAtoB: return "a2b";
    case Direction::kBtoA: return "b2a";
    case Direction::kBoth: return "both";
  }
  return "?";
}

Direction parse_direction(const std::string& s) {
  if (s == "a2b") return Direction::kAtoB;
  if (s == "b2a") return Direction::kBtoA;
  if (s == "both") return Direction::kBoth;
  throw Error("unknown direction '" + s + "' (expected a2b, b2a or both)");
}

TrainConfig TrainConfig::pretrain_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::finetune_defaults() {
  TrainConfig c;
  c.lr = 1e-5;
  c.batch_size = 1;
  return c;
}

void TrainConfig::validate() const {
  model.validate();
  if (!(std::isfinite(lr) && lr >= 0.0)) throw Error("config: lr must be finite and >= 0");
  if (batch_size == 0) throw Error("config: batch_size must be >= 1");
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
    throw Error("config: eval_fraction must be in (0, 1)");
  }
  if (max_instructions == 0 || max_instructions > cpu::kMaxInstructions) {
    throw Error("config: max_instructions must be in [1, 256]");
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"model", c.model},
           {"task", task_name(c.task)},
           {"objective", c.objective == Objective::kGenerative ? "generative" : "classification"},
           {"lr", c.lr},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"seed", c.seed},
           {"eval_fraction", c.eval_fraction},
           {"loss_region", c.loss_region == LossRegion::kAll ? "all" : "states"},
           {"direction", direction_name(c.direction)},
           {"max_steps", c.max_steps},
           {"max_instructions", c.max_instructions},
           {"eval_limit", c.eval_limit},
           {"data", c.data},
           {"pair_data", c.pair_data},
           {"out", c.out},
           {"checkpoint", c.checkpoint}};
}

void from_json(const json& j, TrainConfig& c) {
  if (!j.is_object()) throw FormatError("config: expected a JSON object");
  static const char* kKeys[] = {"model",         "task",      "objective",  "lr",
                                "batch_size",    "epochs",    "seed",       "eval_fraction",
                                "loss_region",   "direction", "max_steps",  "max_instructions",
                                "eval_limit",    "data",      "pair_data",  "out",
                                "checkpoint"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys)) {
      throw FormatError("config: unknown key '" + key + "'");
    }
  }
  if (j.contains("model")) {
    json merged = c.model;
    merged.update(j.at("model"));
    c.model = merged.get<ModelConfig>();
  }
  if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
  if (j.contains("objective")) {
    const auto o = j.at("objective").get<std::string>();
    if (o == "generative") {
      c.objective = Objective::kGenerative;
    } else if (o == "classification") {
      c.objective = Objective::kClassification;
    } else {
      throw FormatError("config: unknown objective '" + o + "'");
    }
  }
  if (j.contains("loss_region")) {
    const auto r = j.at("loss_region").get<std::string>();
    if (r == "all") {
      c.loss_region = LossRegion::kAll;
    } else if (r == "states") {
      c.loss_region = LossRegion::kStates;
    } else {
      throw FormatError("config: unknown loss_region '" + r + "'");
    }
  }
  if (j.contains("direction")) c.direction = parse_direction(j.at("direction").get<std::string>());
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.eval_fraction = j.value("eval_fraction", c.eval_fraction);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.max_instructions = j.value("max_instructions", c.max_instructions);
  c.eval_limit = j.value("eval_limit", c.eval_limit);
  c.data = j.value("data", c.data);
  c.pair_data = j.value("pair_data", c.pair_data);
  c.out = j.value("out", c.out);
  c.checkpoint = j.value("checkpoint", c.checkpoint);
}

TrainConfig load_train_config(const fs::path& path, TrainConfig base) {
  const Bytes raw = read_file(path);
  json j;
  try {
    j = json::parse(raw.begin(), raw.end());
  } catch (const json::parse_error& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  from_json(j, base);
  base.validate();
  return base;
}

json to_json(const MetricsRecord& r) {
  return json{{"epoch", r.epoch},       {"split", r.split}, {"bpb", r.bpb},
              {"accuracy", r.accuracy}, {"loss", r.loss},   {"seconds", r.seconds}};
}

// ---------------------------------------------------------------------------
// Items

Item make_lm_item(std::span<const std::uint8_t> bytes, const ModelConfig& model,
                  std::optional<std::size_t> label) {
  Item it;
  it.seq = segment(bytes, model.patch_size, model.max_patches);
  it.loss_mask = symbol_mask(it.seq, SymbolMask::kAll);
  it.eval_mask = symbol_mask(it.seq, SymbolMask::kContent);
  it.label = label;
  return it;
}

std::vector<std::uint8_t> cpu_state_mask(const PatchSequence& seq) {
  constexpr std::size_t first = cpu::kMemorySize + cpu::kStateSize;
  std::vector<std::uint8_t> mask(seq.symbols.size(), 0);
  for (std::size_t i = first; i < std::min(seq.source_length, mask.size()); ++i) mask[i] = 1;
  return mask;
}

Item make_cpu_item(const cpu::CpuInstance& inst, const ModelConfig& model, LossRegion region) {
  const Bytes bytes = cpu::serialize_instance(inst);
  Item it;
  it.seq = segment(bytes, model.patch_size, model.max_patches);
  it.eval_mask = cpu_state_mask(it.seq);
  it.loss_mask =
      region == LossRegion::kStates ? it.eval_mask : symbol_mask(it.seq, SymbolMask::kAll);
  return it;
}

Item make_pair_item(const corpus::PairExample& pair, const ModelConfig& model, Direction dir) {
  if (dir == Direction::kBoth) throw Error("make_pair_item: pick a single direction");
  const auto& first = dir == Direction::kAtoB ? pair.side_a : pair.side_b;
  const auto& second = dir == Direction::kAtoB ? pair.side_b : pair.side_a;
  Item it;
  it.seq = make_pair_sequence(first, second, model.patch_size, model.max_patches, true);
  it.loss_mask = symbol_mask(it.seq, SymbolMask::kAll);
  it.eval_mask = symbol_mask(it.seq, SymbolMask::kContent);
  return it;
}

namespace {

std::vector<Item> pair_items(std::span<const corpus::PairExample> pairs, const ModelConfig& model,
                             Direction dir) {
  std::vector<Item> out;
  for (const auto& p : pairs) {
    if (dir == Direction::kBoth) {
      out.push_back(make_pair_item(p, model, Direction::kAtoB));
      out.push_back(make_pair_item(p, model, Direction::kBtoA));
    } else {
      out.push_back(make_pair_item(p, model, dir));
    }
  }
  return out;
}

std::size_t mask_count(const Item& it) {
  return static_cast<std::size_t>(std::count(it.loss_mask.begin(), it.loss_mask.end(), 1));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::span<const Item> limited(std::span<const Item> items, std::size_t limit) {
  return limit == 0 || limit >= items.size() ? items : items.first(limit);
}

// Per-run output files.
class RunWriter {
 public:
  explicit RunWriter(const std::optional<fs::path>& dir) : dir_(dir) {
    if (!dir_) return;
    fs::create_directories(*dir_);
    metrics_.open(*dir_ / "metrics.jsonl", std::ios::trunc);
    curve_.open(*dir_ / "curve.csv", std::ios::trunc);
    if (!metrics_ || !curve_) throw Error("cannot write to " + dir_->string());
    curve_ << "epoch,train_loss_bpb,eval_loss_bpb\n";
    curve_.flush();
  }

  void record(const MetricsRecord& r) {
    if (!dir_) return;
    metrics_ << to_json(r).dump() << '\n';
    metrics_.flush();
  }

  void curve_row(std::size_t epoch, double train, std::optional<double> eval) {
    if (!dir_) return;
    curve_ << epoch << ',' << train << ',';
    if (eval) curve_ << *eval;
    curve_ << '\n';
    curve_.flush();
  }

  void checkpoint(const ModelParams<float>& params, bool best) {
    if (!dir_) return;
    save_checkpoint(*dir_ / "last.ckpt", params);
    if (best) save_checkpoint(*dir_ / "best.ckpt", params);
  }

 private:
  std::optional<fs::path> dir_;
  std::ofstream metrics_;
  std::ofstream curve_;
};

void emit(std::vector<MetricsRecord>& records, RunWriter& writer, const TrainHooks& hooks,
          MetricsRecord r) {
  writer.record(r);
  if (hooks.on_record) hooks.on_record(r);
  records.push_back(std::move(r));
}

struct StepStats {
  double loss = 0.0;      // per counted unit (bits/symbol or nats/example)
  double accuracy = 0.0;  // fraction
  double weight = 0.0;    // units in this batch
  LossStats stats;
};

struct GenerativeStep {
  static constexpr bool kGenerative = true;
  Model<float>& model;
  StepStats operator()(const std::vector<const Item*>& batch) const {
    std::size_t count = 0;
    for (const Item* it : batch) count += mask_count(*it);
    StepStats s;
    if (count == 0) return s;
    const float scale = 1.0f / static_cast<float>(count);
    for (const Item* it : batch) s.stats += model.forward_backward(it->seq, it->loss_mask, scale);
    s.loss = s.stats.bpb();
    s.accuracy = s.stats.accuracy();
    s.weight = static_cast<double>(s.stats.count);
    return s;
  }
};

struct ClassifierStep {
  static constexpr bool kGenerative = false;
  Model<float>& model;
  StepStats operator()(const std::vector<const Item*>& batch) const {
    StepStats s;
    const float scale = 1.0f / static_cast<float>(batch.size());
    double loss = 0.0;
    std::size_t hits = 0;
    std::vector<float> probs;
    for (const Item* it : batch) {
      if (!it->label) throw Error("train_classifier: unlabelled example");
      loss += model.classify_forward_backward(it->seq, *it->label, scale, &probs);
      const auto top = static_cast<std::size_t>(
          std::max_element(probs.begin(), probs.end()) - probs.begin());
      hits += top == *it->label ? 1 : 0;
    }
    s.weight = static_cast<double>(batch.size());
    s.loss = loss / s.weight;
    s.accuracy = static_cast<double>(hits) / s.weight;
    return s;
  }
};

template <typename StepFn, typename EvalFn>
TrainResult run_loop(Model<float>& model, const TrainConfig& config, std::span<const Item> train,
                     const std::optional<fs::path>& out_dir, const TrainHooks& hooks,
                     StepFn&& step_fn, EvalFn&& eval_fn) {
  config.validate();
  if (train.empty()) throw Error("train: empty dataset");
  RunWriter writer(out_dir);
  TrainResult result;
  Adam<float> opt(model.params().list(), AdamConfig{config.lr});
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  bool have_best = false;

  auto stop_requested = [&] { return hooks.stop && hooks.stop(); };
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (stop_requested()) break;
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    MetricsRecord tr{epoch, "train"};
    double loss_sum = 0.0;
    double acc_sum = 0.0;
    double weight = 0.0;
    bool capped = false;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      if ((config.max_steps != 0 && result.steps >= config.max_steps) ||
          (b != 0 && stop_requested())) {
        capped = true;
        break;
      }
      const std::size_t e = std::min(order.size(), b + config.batch_size);
      std::vector<const Item*> batch;
      for (std::size_t i = b; i < e; ++i) batch.push_back(&train[order[i]]);
      model.params().zero_grad();
      const auto s = step_fn(batch);
      if (!std::isfinite(s.loss)) {
        throw NumericError("training diverged: non-finite loss at epoch " +
                           std::to_string(epoch) + ", step " + std::to_string(result.steps + 1));
      }
      try {
        opt.step();
      } catch (const NumericError& err) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(result.steps + 1) + ": " + err.what());
      }
      ++result.steps;
      loss_sum += s.loss * s.weight;
      acc_sum += s.accuracy * s.weight;
      weight += s.weight;
      if (hooks.on_step) hooks.on_step(result.steps, s.stats);
    }
    tr.loss = weight > 0 ? loss_sum / weight : 0.0;
    tr.bpb = std::decay_t<StepFn>::kGenerative ? tr.loss : 0.0;
    tr.accuracy = weight > 0 ? acc_sum / weight : 0.0;
    tr.seconds = seconds_since(t0);
    emit(result.records, writer, hooks, tr);

    std::optional<double> eval_curve;
    double score = tr.loss;
    if (auto ev = eval_fn(epoch)) {
      ev->seconds = seconds_since(t0);
      score = ev->loss;
      eval_curve = ev->loss;
      emit(result.records, writer, hooks, *ev);
    }
    writer.curve_row(epoch, tr.loss, eval_curve);
    const bool best = !have_best || score < result.best_eval_bpb;
    if (best) {
      have_best = true;
      result.best_eval_bpb = score;
      result.best_epoch = epoch;
    }
    writer.checkpoint(model.params(), best);
    if (capped) break;
  }
  if (config.epochs == 0) writer.checkpoint(model.params(), true);
  return result;
}

}  // namespace

// ---------------------------------------------------------------------------
// Training loops

TrainResult train_generative(Model<float>& model, const TrainConfig& config,
                             std::span<const Item> train, std::span<const Item> eval,
                             const std::optional<fs::path>& out_dir, const TrainHooks& hooks) {
  const auto eval_set = limited(eval, config.eval_limit);
  auto eval_fn = [&](std::size_t epoch) -> std::optional<MetricsRecord> {
    if (eval_set.empty()) return std::nullopt;
    const LossStats s = evaluate(model, eval_set);
    MetricsRecord r{epoch, "eval"};
    r.bpb = s.bpb();
    r.loss = r.bpb;
    r.accuracy = s.accuracy();
    return r;
  };
  return run_loop(model, config, train, out_dir, hooks, GenerativeStep{model}, eval_fn);
}

TrainResult train_classifier(Model<float>& model, const TrainConfig& config,
                             std::span<const Item> train, std::span<const Item> eval,
                             const std::optional<fs::path>& out_dir, const TrainHooks& hooks) {
  if (model.config().class_count < 2) throw Error("train_classifier: model has no classifier head");
  const auto eval_set = limited(eval, config.eval_limit);
  auto eval_fn = [&](std::size_t epoch) -> std::optional<MetricsRecord> {
    if (eval_set.empty()) return std::nullopt;
    const ClassifyStats s = evaluate_classifier(model, eval_set);
    MetricsRecord r{epoch, "eval"};
    r.loss = s.loss;
    r.accuracy = s.accuracy;
    return r;
  };
  return run_loop(model, config, train, out_dir, hooks, ClassifierStep{model}, eval_fn);
}

// ---------------------------------------------------------------------------
// Evaluation

LossStats evaluate(const Model<float>& model, std::span<const Item> items,
                   std::optional<SymbolMask> mask) {
  LossStats total;
  for (const auto& it : items) {
    if (mask) {
      // One unmasked pass per item so every segment sees the same per-symbol bits.
      const auto m = symbol_mask(it.seq, *mask);
      std::vector<std::uint8_t> hits;
      const auto bits = model.symbol_bits(it.seq, &hits);
      for (std::size_t k = 0; k < m.size(); ++k) {
        if (!m[k]) continue;
        total.bits += bits[k];
        total.count += 1;
        total.correct += hits[k];
      }
    } else {
      total += model.score(it.seq, it.eval_mask);
    }
  }
  if (total.count == 0) throw Error("evaluate: empty mask");
  return total;
}

ClassifyStats evaluate_classifier(const Model<float>& model, std::span<const Item> items) {
  ClassifyStats s;
  double loss = 0.0;
  std::size_t hits = 0;
  for (const auto& it : items) {
    if (!it.label) throw Error("evaluate_classifier: unlabelled example");
    const auto probs = model.classify(it.seq);
    const auto top =
        static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    hits += top == *it.label ? 1 : 0;
    loss -= std::log(static_cast<double>(probs.at(*it.label)));
    ++s.count;
  }
  if (s.count == 0) throw Error("evaluate_classifier: empty dataset");
  s.accuracy = static_cast<double>(hits) / static_cast<double>(s.count);
  s.loss = loss / static_cast<double>(s.count);
  return s;
}

namespace {

std::size_t argmax_symbol(const Mat<float>& logits, Eigen::Index row, std::size_t limit) {
  Eigen::Index best = 0;
  logits.row(row).head(static_cast<Eigen::Index>(limit)).maxCoeff(&best);
  return static_cast<std::size_t>(best);
}

}  // namespace

std::array<std::uint8_t, cpu::kStateSize> ModelPredictor::predict_state(
    std::span<const std::uint8_t> context, std::span<const std::uint8_t> truth) {
  const std::size_t s = model_.config().patch_size;
  if (context.size() % s != 0) throw Error("predict_state: context is not patch aligned");
  if (s != cpu::kStateSize) throw Error("predict_state: patch size must equal the state size");
  std::vector<Symbol> symbols(context.begin(), context.end());
  const RowVec<float> feature = model_.patch_feature(symbols, context.size() / s);
  std::span<const float> f(feature.data(), static_cast<std::size_t>(feature.size()));
  std::array<std::uint8_t, cpu::kStateSize> out{};
  if (!truth.empty()) {
    std::vector<Symbol> prefix(truth.begin(), truth.begin() + cpu::kStateSize - 1);
    const Mat<float> logits = model_.byte_logits(f, prefix);
    for (std::size_t j = 0; j < cpu::kStateSize; ++j) {
      const std::size_t top = argmax_symbol(logits, static_cast<Eigen::Index>(j), kVocabSize);
      // An end-of-patch guess is never a correct byte.
      out[j] = top == kEndOfPatch ? static_cast<std::uint8_t>(truth[j] ^ 1u)
                                  : static_cast<std::uint8_t>(top);
    }
    return out;
  }
  std::vector<Symbol> prefix;
  for (std::size_t j = 0; j < cpu::kStateSize; ++j) {
    const Mat<float> logits = model_.byte_logits(f, prefix);
    out[j] = static_cast<std::uint8_t>(argmax_symbol(logits, static_cast<Eigen::Index>(j), 256));
    prefix.push_back(out[j]);
  }
  return out;
}

std::array<std::uint8_t, cpu::kStateSize> OraclePredictor::predict_state(
    std::span<const std::uint8_t> context, std::span<const std::uint8_t>) {
  constexpr std::size_t head = cpu::kMemorySize + cpu::kStateSize;
  if (context.size() < head || (context.size() - cpu::kMemorySize) % cpu::kStateSize != 0) {
    throw FormatError("oracle: malformed context");
  }
  cpu::Memory memory{};
  std::copy_n(context.begin(), cpu::kMemorySize, memory.begin());
  const auto init = cpu::CpuState::deserialize(
      context.subspan(cpu::kMemorySize).first<cpu::kStateSize>());
  const auto inst = cpu::run_program(memory, init.acc, init.regs);
  const std::size_t k = (context.size() - cpu::kMemorySize) / cpu::kStateSize;
  if (k >= inst.trace.size()) throw Error("oracle: program already halted");
  return inst.trace[k].serialize();
}

std::array<std::uint8_t, cpu::kStateSize> UniformPredictor::predict_state(
    std::span<const std::uint8_t>, std::span<const std::uint8_t>) {
  std::uniform_int_distribution<int> byte(0, 255);
  std::array<std::uint8_t, cpu::kStateSize> out{};
  for (auto& b : out) b = static_cast<std::uint8_t>(byte(rng_));
  return out;
}

CpuAccuracy eval_cpu_accuracy(StatePredictor& predictor,
                              std::span<const cpu::CpuInstance> instances, Feedback feedback) {
  constexpr std::size_t head = cpu::kMemorySize + cpu::kStateSize;
  CpuAccuracy acc;
  for (const auto& inst : instances) {
    const Bytes bytes = cpu::serialize_instance(inst);
    if (bytes.size() < head) throw FormatError("eval_cpu_accuracy: malformed instance");
    Bytes context(bytes.begin(), bytes.begin() + head);
    for (std::size_t k = 1; k < inst.trace.size(); ++k) {
      const std::span<const std::uint8_t> truth(bytes.data() + cpu::kMemorySize + k * cpu::kStateSize,
                                                cpu::kStateSize);
      const auto pred = predictor.predict_state(
          context, feedback == Feedback::kGroundTruth ? truth : std::span<const std::uint8_t>{});
      for (std::size_t j = 0; j < cpu::kStateSize; ++j) acc.correct += pred[j] == truth[j] ? 1 : 0;
      acc.total += cpu::kStateSize;
      if (feedback == Feedback::kGroundTruth) {
        context.insert(context.end(), truth.begin(), truth.end());
      } else {
        context.insert(context.end(), pred.begin(), pred.end());
      }
    }
  }
  return acc;
}

CpuAccuracy eval_cpu_accuracy(const Model<float>& model,
                              std::span<const cpu::CpuInstance> instances, Feedback feedback) {
  if (feedback == Feedback::kPredicted) {
    ModelPredictor predictor(model);
    return eval_cpu_accuracy(predictor, instances, feedback);
  }
  CpuAccuracy acc;
  for (const auto& inst : instances) {
    const Item it = make_cpu_item(inst, model.config(), LossRegion::kStates);
    const LossStats s = model.score(it.seq, it.eval_mask);
    acc.correct += s.correct;
    acc.total += s.count;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Conversion

ConversionOutput convert(const Model<float>& model, std::span<const std::uint8_t> input,
                         std::optional<std::size_t> max_bytes) {
  const auto& cfg = model.config();
  if (input.empty()) throw Error("convert: empty input");
  if (patch_count(input.size(), cfg.patch_size) + 1 >= cfg.max_patches) {
    throw CapacityError("convert: input of " + std::to_string(input.size()) +
                        " bytes leaves no room for output");
  }
  PatchSequence prefix = segment(input, cfg.patch_size, cfg.max_patches);
  prefix.symbols.insert(prefix.symbols.end(), cfg.patch_size, kEndOfPatch);
  const std::size_t budget = max_bytes.value_or(cfg.max_bytes());
  ConversionOutput out;
  if (budget == 0) {
    out.warning = "empty generation budget";
    return out;
  }
  GenerationResult r =
      model.continue_stream(std::move(prefix.symbols), {}, budget, SamplingMode::greedy());
  out.bytes = std::move(r.bytes);
  out.terminated = r.terminated;
  if (!r.terminated) {
    out.warning = r.hit_capacity ? "capacity reached before an end-of-patch symbol"
                                 : "generation budget exhausted before an end-of-patch symbol";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Data

std::vector<cpu::CpuInstance> load_cpu_dir(const fs::path& dir) {
  std::vector<cpu::CpuInstance> out;
  for (const auto& f : corpus::list_files(dir, ".bin")) {
    try {
      out.push_back(cpu::deserialize_instance(read_file(f)));
    } catch (const FormatError& e) {
      throw FormatError(f.string() + ": " + e.what());
    }
  }
  if (out.empty()) throw Error("no .bin instances under " + dir.string());
  return out;
}

std::vector<cpu::CpuInstance> generate_cpu_instances(std::size_t count, std::uint64_t seed,
                                                     std::size_t max_instructions,
                                                     std::size_t first_index) {
  std::vector<cpu::CpuInstance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto rng = cpu::instance_rng(seed, first_index + i);
    out.push_back(cpu::generate_instance(rng, max_instructions));
  }
  return out;
}

namespace {

corpus::DatasetManifest id_manifest(std::size_t n, const std::string& prefix) {
  corpus::DatasetManifest m;
  for (std::size_t i = 0; i < n; ++i) {
    m.entries.push_back({prefix + std::to_string(i), 0, std::nullopt, corpus::Split::kTrain, ""});
  }
  return m;
}

}  // namespace

namespace {

// Every item of the dataset, each tagged with the manifest entry it came from.
struct LoadedItems {
  std::vector<Item> items;
  std::vector<std::size_t> entry;
  corpus::DatasetManifest manifest;
};

LoadedItems load_unsplit(const TrainConfig& config, bool labelled) {
  if (config.data.empty()) throw Error("no dataset given");
  const auto& model = config.model;
  LoadedItems out;
  auto add = [&](Item it, std::size_t entry) {
    out.items.push_back(std::move(it));
    out.entry.push_back(entry);
  };

  if (labelled || config.task == Task::kLm) {
    const auto mode = labelled ? corpus::LabelMode::kBySubdirectory : corpus::LabelMode::kFlat;
    auto ds = corpus::ingest_directory(config.data, mode, model.max_bytes());
    if (labelled && ds.manifest.label_names.size() < 2) {
      throw Error("classification needs at least 2 classes, found " +
                  std::to_string(ds.manifest.label_names.size()));
    }
    for (std::size_t i = 0; i < ds.examples.size(); ++i) {
      add(make_lm_item(ds.examples[i].bytes, model, ds.examples[i].label), i);
    }
    out.manifest = std::move(ds.manifest);
    return out;
  }

  if (config.task == Task::kCpu) {
    const auto instances = load_cpu_dir(config.data);
    for (std::size_t i = 0; i < instances.size(); ++i) {
      add(make_cpu_item(instances[i], model, config.loss_region), i);
    }
    out.manifest = id_manifest(instances.size(), "cpu_");
    return out;
  }

  if (config.pair_data.empty()) throw Error("conversion task needs --pair-data");
  const auto ds = corpus::build_pair_dataset(config.data, config.pair_data, model.patch_size,
                                             model.max_patches);
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    const auto& p = ds.pairs[i];
    out.manifest.entries.push_back({p.source_id, p.side_a.size() + p.side_b.size(),
                                    std::nullopt, corpus::Split::kTrain, ""});
    for (auto& it : pair_items(std::span(ds.pairs).subspan(i, 1), model, config.direction)) {
      add(std::move(it), i);
    }
  }
  return out;
}

}  // namespace

ItemSplit load_items(const TrainConfig& config, bool labelled) {
  LoadedItems all = load_unsplit(config, labelled);
  ItemSplit out;
  out.manifest = corpus::split(std::move(all.manifest), config.eval_fraction, config.seed);
  for (std::size_t i = 0; i < all.items.size(); ++i) {
    const bool eval = out.manifest.entries[all.entry[i]].split == corpus::Split::kEval;
    (eval ? out.eval : out.train).push_back(std::move(all.items[i]));
  }
  return out;
}

std::vector<Item> load_all_items(const TrainConfig& config, bool labelled) {
  return load_unsplit(config, labelled).items;
}

namespace {

std::optional<fs::path> out_path(const TrainConfig& config) {
  if (config.out.empty()) return std::nullopt;
  return fs::path(config.out);
}

void write_run_header(const TrainConfig& config, const corpus::DatasetManifest& manifest) {
  if (config.out.empty()) return;
  fs::create_directories(config.out);
  const std::string cfg = json(config).dump(2) + "\n";
  write_file(fs::path(config.out) / "train_config.json",
             std::span(reinterpret_cast<const std::uint8_t*>(cfg.data()), cfg.size()));
  const std::string m = corpus::manifest_to_jsonl(manifest);
  write_file(fs::path(config.out) / "manifest.jsonl",
             std::span(reinterpret_cast<const std::uint8_t*>(m.data()), m.size()));
}

}  // namespace

TrainResult pretrain(const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  const ItemSplit data = load_items(config);
  write_run_header(config, data.manifest);
  ModelParams<float> params(config.model);
  params.init(config.seed);
  Model<float> model(std::move(params));
  return train_generative(model, config, data.train, data.eval, out_path(config), hooks);
}

TrainResult finetune_generative(const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (config.checkpoint.empty()) throw Error("finetune: no checkpoint given");
  Model<float> model(load_checkpoint(config.checkpoint, config.model));
  const ItemSplit data = load_items(config);
  write_run_header(config, data.manifest);
  return train_generative(model, config, data.train, data.eval, out_path(config), hooks);
}

TrainResult finetune_classifier(const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (config.checkpoint.empty()) throw Error("finetune: no checkpoint given");
  auto params = load_checkpoint(config.checkpoint, config.model);
  const ItemSplit data = load_items(config, true);
  const std::size_t k = data.manifest.label_names.size();
  if (params.config.class_count != k) params.add_classifier(k, config.seed);
  write_run_header(config, data.manifest);
  Model<float> model(std::move(params));
  return train_classifier(model, config, data.train, data.eval, out_path(config), hooks);
}

// ---------------------------------------------------------------------------
// Scaling

std::string ScalingResult::table_markdown() const {
  std::ostringstream out;
  out << "| scale | eval_bpb | eval_accuracy | seconds |\n|---:|---:|---:|---:|\n";
  for (const auto& r : rows) {
    out << "| " << r.scale << " | " << r.eval_bpb << " | " << r.eval_accuracy << " | "
        << r.seconds << " |\n";
  }
  return out.str();
}

ScalingResult run_scaling_experiment(Task task, std::span<const std::size_t> scales,
                                     const TrainConfig& base, std::size_t eval_count,
                                     const std::optional<fs::path>& out_dir,
                                     const TrainHooks& hooks) {
  base.validate();
  if (scales.empty()) throw Error("scaling: no scales given");
  if (eval_count == 0) throw Error("scaling: eval set must be non-empty");
  const std::size_t max_scale = *std::max_element(scales.begin(), scales.end());
  if (max_scale == 0) throw Error("scaling: scales must be positive");
  const std::size_t needed = max_scale + eval_count;

  std::vector<Item> pool;
  std::vector<Item> eval;
  std::optional<SymbolMask> final_mask;
  if (task == Task::kCpu) {
    std::vector<cpu::CpuInstance> instances =
        base.data.empty() ? generate_cpu_instances(needed, base.seed, base.max_instructions)
                          : load_cpu_dir(base.data);
    if (instances.size() < needed) {
      throw Error("scaling: scale " + std::to_string(max_scale) + " plus " +
                  std::to_string(eval_count) + " eval instances exceeds the " +
                  std::to_string(instances.size()) + " available");
    }
    for (std::size_t i = 0; i < needed; ++i) {
      (i < max_scale ? pool : eval)
          .push_back(make_cpu_item(instances[i], base.model, base.loss_region));
    }
  } else if (task == Task::kConversion) {
    std::vector<corpus::PairExample> pairs;
    if (base.data.empty()) {
      pairs = corpus::synthetic_pairs(needed, base.seed);
    } else {
      if (base.pair_data.empty()) throw Error("scaling: conversion data needs pair_data");
      pairs = corpus::build_pair_dataset(base.data, base.pair_data, base.model.patch_size,
                                         base.model.max_patches)
                  .pairs;
    }
    if (pairs.size() < needed) {
      throw Error("scaling: scale " + std::to_string(max_scale) + " plus " +
                  std::to_string(eval_count) + " eval pairs exceeds the " +
                  std::to_string(pairs.size()) + " available");
    }
    const Direction dir = base.direction == Direction::kBoth ? Direction::kAtoB : base.direction;
    for (std::size_t i = 0; i < needed; ++i) {
      (i < max_scale ? pool : eval).push_back(make_pair_item(pairs[i], base.model, dir));
    }
    final_mask = SymbolMask::kFileB;
  } else {
    throw Error("scaling: task must be cpu or conversion");
  }

  ScalingResult result;
  for (const std::size_t scale : scales) {
    const auto t0 = std::chrono::steady_clock::now();
    ModelParams<float> params(base.model);
    params.init(base.seed);
    Model<float> model(std::move(params));
    std::optional<fs::path> dir;
    if (out_dir) dir = *out_dir / ("scale_" + std::to_string(scale));
    TrainResult tr = train_generative(model, base, std::span(pool).first(scale), eval, dir, hooks);
    const LossStats s = evaluate(model, eval, final_mask);
    ScalingRow row;
    row.scale = scale;
    row.eval_bpb = s.bpb();
    row.eval_accuracy = s.accuracy();
    row.seconds = seconds_since(t0);
    row.records = std::move(tr.records);
    result.rows.push_back(std::move(row));
  }
  if (out_dir) {
    const std::string table = result.table_markdown();
    write_file(*out_dir / "scaling.md",
               std::span(reinterpret_cast<const std::uint8_t*>(table.data()), table.size()));
  }
  return result;
}

}  // namespace bgpt::harness
