#pragma once

// Training, evaluation and experiment drivers shared by the CLI and the
// acceptance suite.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bgpt/corpus.hpp"
#include "bgpt/cpu.hpp"
#include "bgpt/model.hpp"

namespace bgpt::harness {

enum class Task { kLm, kCpu, kConversion };
enum class Objective { kGenerative, kClassification };

/// Symbols a generative loss covers. kStates restricts CPU instances to the
/// predicted states (1..n), skipping the program and the initial state.
enum class LossRegion { kAll, kStates };

enum class Direction { kAtoB, kBtoA, kBoth };

struct TrainConfig {
  ModelConfig model = ModelConfig::desk();
  Task task = Task::kLm;
  Objective objective = Objective::kGenerative;
  double lr = 1e-4;
  std::size_t batch_size = 16;
  std::size_t epochs = 32;
  std::uint64_t seed = 0;
  double eval_fraction = 0.01;
  LossRegion loss_region = LossRegion::kAll;
  Direction direction = Direction::kAtoB;
  std::size_t max_steps = 0;         // 0 = no cap
  std::size_t max_instructions = 256;  // cpu task: program length cap for generated data
  std::size_t eval_limit = 0;        // 0 = evaluate every held-out item
  std::string data;
  std::string pair_data;
  std::string out;
  std::string checkpoint;

  /// Pre-training defaults: LR 1e-4, batch 16, 32 epochs.
  static TrainConfig pretrain_defaults();
  /// Fine-tuning defaults: LR 1e-5, batch 1, 32 epochs.
  static TrainConfig finetune_defaults();
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep the values already in `c`.
void from_json(const nlohmann::json& j, TrainConfig& c);
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base);

struct MetricsRecord {
  std::size_t epoch = 0;
  std::string split;  // "train" or "eval"
  double bpb = 0.0;
  double accuracy = 0.0;
  double loss = 0.0;
  double seconds = 0.0;
};
nlohmann::json to_json(const MetricsRecord& r);

/// One training or evaluation unit with its loss and metric masks.
struct Item {
  PatchSequence seq;
  std::vector<std::uint8_t> loss_mask;  // symbols trained on
  std::vector<std::uint8_t> eval_mask;  // symbols that count towards BPB
  std::optional<std::size_t> label;
};

Item make_lm_item(std::span<const std::uint8_t> bytes, const ModelConfig& model,
                  std::optional<std::size_t> label = {});
Item make_cpu_item(const cpu::CpuInstance& inst, const ModelConfig& model, LossRegion region);
/// Pair item in the given order; kBoth is not accepted here.
Item make_pair_item(const corpus::PairExample& pair, const ModelConfig& model, Direction dir);

/// Mask over the bytes of states 1..n of a serialized CPU instance.
std::vector<std::uint8_t> cpu_state_mask(const PatchSequence& seq);

struct TrainHooks {
  std::function<void(const MetricsRecord&)> on_record;
  std::function<void(std::size_t step, const LossStats&)> on_step;
  /// Checked before every step; returning true ends training early.
  std::function<bool()> stop;
};

struct TrainResult {
  std::vector<MetricsRecord> records;
  std::size_t steps = 0;
  double best_eval_bpb = 0.0;
  std::size_t best_epoch = 0;
};

/// Minimizes next-symbol cross-entropy over `train` with Adam, evaluating on
/// `eval` after every epoch. When `out_dir` is set, writes metrics.jsonl,
/// curve.csv, last.ckpt and best.ckpt there.
TrainResult train_generative(Model<float>& model, const TrainConfig& config,
                             std::span<const Item> train, std::span<const Item> eval,
                             const std::optional<std::filesystem::path>& out_dir = {},
                             const TrainHooks& hooks = {});

/// Fine-tunes the whole model on a labelled set with the classification loss.
TrainResult train_classifier(Model<float>& model, const TrainConfig& config,
                             std::span<const Item> train, std::span<const Item> eval,
                             const std::optional<std::filesystem::path>& out_dir = {},
                             const TrainHooks& hooks = {});

/// Teacher-forced bits and argmax hits over each item's eval mask, or over
/// `mask` when given.
LossStats evaluate(const Model<float>& model, std::span<const Item> items,
                   std::optional<SymbolMask> mask = {});

struct ClassifyStats {
  double accuracy = 0.0;
  double loss = 0.0;  // mean -ln p(label)
  std::size_t count = 0;
};
ClassifyStats evaluate_classifier(const Model<float>& model, std::span<const Item> items);

enum class Feedback { kPredicted, kGroundTruth };

/// Predicts the next 16-byte CPU state from the bytes so far.
class StatePredictor {
 public:
  virtual ~StatePredictor() = default;
  /// `context` holds memory plus complete states. When `truth` is non-empty,
  /// byte j may be predicted from truth[0..j).
  virtual std::array<std::uint8_t, cpu::kStateSize> predict_state(
      std::span<const std::uint8_t> context, std::span<const std::uint8_t> truth) = 0;
};

/// Greedy byte-level decoding with the model.
class ModelPredictor : public StatePredictor {
 public:
  explicit ModelPredictor(const Model<float>& model) : model_(model) {}
  std::array<std::uint8_t, cpu::kStateSize> predict_state(
      std::span<const std::uint8_t> context, std::span<const std::uint8_t> truth) override;

 private:
  const Model<float>& model_;
};

/// Re-executes the program from the initial state: always right.
class OraclePredictor : public StatePredictor {
 public:
  std::array<std::uint8_t, cpu::kStateSize> predict_state(
      std::span<const std::uint8_t> context, std::span<const std::uint8_t> truth) override;
};

/// Uniformly random bytes.
class UniformPredictor : public StatePredictor {
 public:
  explicit UniformPredictor(std::uint64_t seed) : rng_(seed) {}
  std::array<std::uint8_t, cpu::kStateSize> predict_state(
      std::span<const std::uint8_t> context, std::span<const std::uint8_t> truth) override;

 private:
  std::mt19937_64 rng_;
};

struct CpuAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const {
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  }
};

/// Conditions on memory and the initial state, then predicts states 1..n and
/// compares them byte-wise with the recorded trace.
CpuAccuracy eval_cpu_accuracy(StatePredictor& predictor,
                              std::span<const cpu::CpuInstance> instances, Feedback feedback);

/// Model path; ground-truth feedback uses a single teacher-forced pass.
CpuAccuracy eval_cpu_accuracy(const Model<float>& model,
                              std::span<const cpu::CpuInstance> instances, Feedback feedback);

struct ConversionOutput {
  Bytes bytes;
  bool terminated = false;
  std::string warning;
};

/// Generates the paired file for `input` greedily: [input, separator] is the
/// prompt and decoding stops at the first end-of-patch symbol.
ConversionOutput convert(const Model<float>& model, std::span<const std::uint8_t> input,
                         std::optional<std::size_t> max_bytes = {});

struct ScalingRow {
  std::size_t scale = 0;
  double eval_bpb = 0.0;
  double eval_accuracy = 0.0;
  double seconds = 0.0;
  std::vector<MetricsRecord> records;
};

struct ScalingResult {
  std::vector<ScalingRow> rows;
  std::string table_markdown() const;
};

/// Trains one freshly initialized model per scale on the first `scale` items
/// of a shared pool and evaluates each on the same held-out set. For the CPU
/// task the accuracy column is ground-truth-feedback byte accuracy; for the
/// conversion task BPB covers the generated (B) side only.
ScalingResult run_scaling_experiment(Task task, std::span<const std::size_t> scales,
                                     const TrainConfig& base, std::size_t eval_count,
                                     const std::optional<std::filesystem::path>& out_dir = {},
                                     const TrainHooks& hooks = {});

/// Train/eval items for `config.task` read from `config.data` (and
/// `config.pair_data` for conversion), split with config.eval_fraction.
struct ItemSplit {
  std::vector<Item> train;
  std::vector<Item> eval;
  corpus::DatasetManifest manifest;
};
ItemSplit load_items(const TrainConfig& config, bool labelled = false);
/// Every item of the dataset, unsplit, in manifest order.
std::vector<Item> load_all_items(const TrainConfig& config, bool labelled = false);

/// Fresh model from config.model and config.seed; writes to config.out.
TrainResult pretrain(const TrainConfig& config, const TrainHooks& hooks = {});
/// Same loop initialized from config.checkpoint. The checkpoint must match
/// config.model.
TrainResult finetune_generative(const TrainConfig& config, const TrainHooks& hooks = {});
/// Loads config.checkpoint, attaches a K-way head (K from the subdirectory
/// labels of config.data) and trains with the classification loss.
TrainResult finetune_classifier(const TrainConfig& config, const TrainHooks& hooks = {});

/// Data loaders.
std::vector<cpu::CpuInstance> load_cpu_dir(const std::filesystem::path& dir);
std::vector<cpu::CpuInstance> generate_cpu_instances(std::size_t count, std::uint64_t seed,
                                                     std::size_t max_instructions,
                                                     std::size_t first_index = 0);

std::string task_name(Task t);
Task parse_task(const std::string& s);
Direction parse_direction(const std::string& s);
std::string direction_name(Direction d);

}  // namespace bgpt::harness
