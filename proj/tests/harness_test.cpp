#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "bgpt/checkpoint.hpp"
#include "bgpt/harness.hpp"

namespace bgpt::harness {
namespace {

namespace fs = std::filesystem;

const double kUniformBits = std::log2(257.0);

ModelConfig tiny(std::size_t patch_size = 4) {
  ModelConfig c;
  c.patch_size = patch_size;
  c.max_patches = 32;
  c.patch_layers = 1;
  c.byte_layers = 1;
  c.hidden = 16;
  c.patch_heads = 2;
  c.byte_heads = 2;
  return c;
}

Model<float> fresh(const ModelConfig& c, std::uint64_t seed = 1) {
  ModelParams<float> p(c);
  p.init(seed);
  return Model<float>(std::move(p));
}

Model<float> zero_head(const ModelConfig& c) {
  auto m = fresh(c);
  m.params().head_w.value.fill(0.0f);
  m.params().head_b.value.fill(0.0f);
  return m;
}

Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes b(n);
  for (auto& v : b) v = static_cast<std::uint8_t>(rng() & 0xFF);
  return b;
}

std::vector<Item> lm_items(const ModelConfig& c, std::size_t count, std::size_t len,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Item> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(make_lm_item(random_bytes(rng, len), c));
  return out;
}

TrainConfig quick(std::size_t epochs, double lr) {
  TrainConfig t;
  t.model = tiny();
  t.epochs = epochs;
  t.lr = lr;
  t.batch_size = 4;
  return t;
}

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

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

TEST(Config, Defaults) {
  const auto pre = TrainConfig::pretrain_defaults();
  EXPECT_DOUBLE_EQ(pre.lr, 1e-4);
  EXPECT_EQ(pre.batch_size, 16u);
  EXPECT_EQ(pre.epochs, 32u);
  const auto ft = TrainConfig::finetune_defaults();
  EXPECT_DOUBLE_EQ(ft.lr, 1e-5);
  EXPECT_EQ(ft.batch_size, 1u);
  EXPECT_EQ(pre.model, ModelConfig::desk());
}

TEST(Config, JsonRoundTrip) {
  TrainConfig c = quick(3, 2e-3);
  c.task = Task::kCpu;
  c.loss_region = LossRegion::kStates;
  c.direction = Direction::kBoth;
  c.data = "x/y";
  const nlohmann::json j = c;
  TrainConfig back;
  from_json(j, back);
  EXPECT_EQ(nlohmann::json(back), j);
}

TEST(Config, PartialJsonKeepsBase) {
  TrainConfig c = TrainConfig::finetune_defaults();
  from_json(nlohmann::json::parse(R"({"epochs": 2, "model": {"hidden": 64}})"), c);
  EXPECT_EQ(c.epochs, 2u);
  EXPECT_DOUBLE_EQ(c.lr, 1e-5);
  EXPECT_EQ(c.model.hidden, 64u);
  EXPECT_EQ(c.model.patch_size, ModelConfig::desk().patch_size);
}

TEST(Config, RejectsBadValues) {
  TrainConfig c;
  EXPECT_THROW(from_json(nlohmann::json::parse(R"({"learning_rate": 1})"), c), FormatError);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.lr = -1.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.eval_fraction = 1.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Config, Names) {
  EXPECT_EQ(parse_task("cpu"), Task::kCpu);
  EXPECT_EQ(task_name(Task::kConversion), "conversion");
  EXPECT_EQ(parse_direction("b2a"), Direction::kBtoA);
  EXPECT_EQ(direction_name(Direction::kAtoB), "a2b");
  EXPECT_THROW(parse_task("vision"), Error);
}

TEST(Evaluate, UniformModelGivesLog2Vocab) {
  const auto c = tiny();
  const auto model = zero_head(c);
  const auto items = lm_items(c, 5, 37, 2);
  EXPECT_NEAR(evaluate(model, items).bpb(), kUniformBits, 1e-6);
}

TEST(Evaluate, FreshModelNearUniform) {
  const auto c = tiny();
  const auto items = lm_items(c, 5, 50, 3);
  EXPECT_NEAR(evaluate(fresh(c), items).bpb(), kUniformBits, 0.1);
}

TEST(Evaluate, SegmentsAreConsistent) {
  const auto c = tiny();
  const auto model = fresh(c);
  std::vector<Item> items;
  for (const auto& p : corpus::synthetic_pairs(6, 1, 8, 30)) {
    items.push_back(make_pair_item(p, c, Direction::kAtoB));
  }
  const auto all = evaluate(model, items, SymbolMask::kContent);
  const auto a = evaluate(model, items, SymbolMask::kFileA);
  const auto b = evaluate(model, items, SymbolMask::kFileB);
  EXPECT_EQ(all.count, a.count + b.count);
  EXPECT_NEAR(all.bpb(), (a.bits + b.bits) / static_cast<double>(a.count + b.count), 1e-9);
  EXPECT_GE(all.bpb(), std::min(a.bpb(), b.bpb()));
  EXPECT_LE(all.bpb(), std::max(a.bpb(), b.bpb()));
}

TEST(Evaluate, EmptyMaskIsAnError) {
  const auto c = tiny();
  auto items = lm_items(c, 1, 10, 1);
  std::fill(items[0].eval_mask.begin(), items[0].eval_mask.end(), 0);
  EXPECT_THROW(evaluate(fresh(c), items), Error);
}

TEST(Items, CpuStateMaskCoversStates) {
  auto rng = cpu::instance_rng(1, 0);
  const auto inst = cpu::generate_instance(rng, 10);
  const auto c = ModelConfig::desk();
  const auto all = make_cpu_item(inst, c, LossRegion::kAll);
  const auto states = make_cpu_item(inst, c, LossRegion::kStates);
  const std::size_t n = inst.trace.size() - 1;
  EXPECT_EQ(std::count(all.eval_mask.begin(), all.eval_mask.end(), 1),
            static_cast<long>(16 * n));
  EXPECT_EQ(all.eval_mask, states.eval_mask);
  EXPECT_EQ(states.loss_mask, states.eval_mask);
  EXPECT_EQ(std::count(all.loss_mask.begin(), all.loss_mask.end(), 1),
            static_cast<long>(all.seq.symbols.size()));
  for (std::size_t i = 0; i < 1040; ++i) EXPECT_EQ(all.eval_mask[i], 0);
}

TEST(Items, PairDirections) {
  const auto p = corpus::synthetic_pairs(1, 3, 10, 10)[0];
  const auto c = tiny();
  const auto ab = make_pair_item(p, c, Direction::kAtoB);
  const auto ba = make_pair_item(p, c, Direction::kBtoA);
  EXPECT_EQ(reassemble_segment(ab.seq, SegmentTag::kFileB), p.side_b);
  EXPECT_EQ(reassemble_segment(ba.seq, SegmentTag::kFileB), p.side_a);
  EXPECT_THROW(make_pair_item(p, c, Direction::kBoth), Error);
}

TEST(Train, ZeroLearningRateKeepsEvalBpb) {
  const auto c = tiny();
  auto model = fresh(c);
  const auto items = lm_items(c, 1, 40, 4);
  const double before = evaluate(model, items).bpb();
  auto cfg = quick(1, 0.0);
  cfg.batch_size = 1;
  train_generative(model, cfg, items, items);
  EXPECT_EQ(evaluate(model, items).bpb(), before);
}

TEST(Train, ReproducibleRecords) {
  const auto c = tiny();
  const auto train = lm_items(c, 8, 30, 5);
  const auto eval = lm_items(c, 2, 30, 6);
  auto run = [&] {
    auto m = fresh(c, 7);
    return train_generative(m, quick(2, 1e-3), train, eval).records;
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].split, b[i].split);
    EXPECT_EQ(a[i].bpb, b[i].bpb);
    EXPECT_EQ(a[i].accuracy, b[i].accuracy);
  }
}

TEST(Train, LossDecreasesAndStaysBounded) {
  const auto c = tiny();
  auto m = fresh(c);
  const auto train = lm_items(c, 8, 30, 8);
  const auto r = train_generative(m, quick(3, 3e-3), train, {});
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_LT(r.records.back().bpb, r.records.front().bpb);
  EXPECT_LE(evaluate(m, train).bpb(), kUniformBits + 0.2);
  for (const auto& rec : r.records) {
    EXPECT_GE(rec.bpb, 0.0);
    EXPECT_GE(rec.accuracy, 0.0);
    EXPECT_LE(rec.accuracy, 1.0);
  }
}

TEST(Train, WritesCurveAndCheckpoints) {
  TempDir dir("bgpt_train_out");
  const auto c = tiny();
  auto m = fresh(c);
  train_generative(m, quick(3, 1e-3), lm_items(c, 4, 20, 1), lm_items(c, 2, 20, 2), dir.path());
  EXPECT_EQ(line_count(dir.path() / "curve.csv"), 1u + 3u);
  EXPECT_EQ(line_count(dir.path() / "metrics.jsonl"), 6u);
  EXPECT_TRUE(fs::exists(dir.path() / "best.ckpt"));
  const auto last = load_checkpoint(dir.path() / "last.ckpt", c);
  EXPECT_EQ(serialize_checkpoint(last), serialize_checkpoint(m.params()));
}

TEST(Train, MaxStepsCapsTraining) {
  const auto c = tiny();
  auto m = fresh(c);
  auto cfg = quick(5, 1e-3);
  cfg.batch_size = 1;
  cfg.max_steps = 3;
  EXPECT_EQ(train_generative(m, cfg, lm_items(c, 4, 20, 1), {}).steps, 3u);
}

TEST(Train, EmptyDatasetIsAnError) {
  const auto c = tiny();
  auto m = fresh(c);
  EXPECT_THROW(train_generative(m, quick(1, 1e-3), {}, {}), Error);
}

TEST(Train, DivergenceIsReported) {
  const auto c = tiny();
  auto m = fresh(c);
  m.params().head_b.value.data()[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(train_generative(m, quick(1, 1e-3), lm_items(c, 2, 10, 1), {}), NumericError);
}

class FinetuneTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::make_unique<TempDir>("bgpt_finetune");
    std::mt19937_64 rng(3);
    for (int i = 0; i < 6; ++i) {
      const auto b = random_bytes(rng, 24);
      write_file(dir_->path() / "data" / ("f" + std::to_string(i) + ".bin"), b);
      write_file(dir_->path() / "labelled" / (i % 2 ? "odd" : "even") /
                     ("f" + std::to_string(i) + ".bin"),
                 b);
    }
    ModelParams<float> p(tiny());
    p.init(5);
    save_checkpoint(ckpt(), p);
  }
  fs::path ckpt() const { return dir_->path() / "in.ckpt"; }
  TrainConfig config(std::size_t epochs) const {
    TrainConfig t = TrainConfig::finetune_defaults();
    t.model = tiny();
    t.epochs = epochs;
    t.eval_fraction = 0.3;
    t.checkpoint = ckpt().string();
    t.data = (dir_->path() / "data").string();
    t.out = (dir_->path() / "out").string();
    return t;
  }
  std::unique_ptr<TempDir> dir_;
};

TEST_F(FinetuneTest, ZeroEpochsKeepsCheckpointBytes) {
  finetune_generative(config(0));
  EXPECT_EQ(read_file(dir_->path() / "out" / "last.ckpt"), read_file(ckpt()));
  EXPECT_EQ(read_file(dir_->path() / "out" / "best.ckpt"), read_file(ckpt()));
}

TEST_F(FinetuneTest, MismatchedHiddenSize) {
  auto cfg = config(1);
  cfg.model.hidden = 32;
  EXPECT_THROW(finetune_generative(cfg), FormatError);
  EXPECT_FALSE(fs::exists(dir_->path() / "out" / "last.ckpt"));
}

TEST_F(FinetuneTest, WritesRunHeader) {
  finetune_generative(config(1));
  EXPECT_TRUE(fs::exists(dir_->path() / "out" / "train_config.json"));
  EXPECT_EQ(line_count(dir_->path() / "out" / "manifest.jsonl"), 6u);
}

TEST_F(FinetuneTest, ClassifierNeedsTwoClasses) {
  auto cfg = config(1);
  cfg.data = (dir_->path() / "labelled").string();
  const auto r = finetune_classifier(cfg);
  EXPECT_EQ(r.records.size(), 2u);
  fs::remove_all(dir_->path() / "labelled" / "odd");
  EXPECT_THROW(finetune_classifier(cfg), Error);
}

std::vector<Item> labelled_items(const ModelConfig& c, std::size_t count, std::uint64_t seed,
                                 bool random_labels) {
  std::mt19937_64 rng(seed);
  std::vector<Item> out;
  for (std::size_t i = 0; i < count; ++i) {
    const Bytes b = random_bytes(rng, 4);
    const std::size_t label = random_labels ? (rng() & 1) : (b[0] < 128 ? 0 : 1);
    out.push_back(make_lm_item(b, c, label));
  }
  return out;
}

TEST(Classifier, UntrainedHeadIsNearChance) {
  auto c = tiny();
  c.class_count = 4;
  const auto model = fresh(c, 11);
  std::mt19937_64 rng(1);
  std::vector<Item> items;
  for (std::size_t i = 0; i < 400; ++i) items.push_back(make_lm_item(random_bytes(rng, 12), c, rng() % 4));
  const auto s = evaluate_classifier(model, items);
  EXPECT_NEAR(s.accuracy, 0.25, 0.1);
  EXPECT_NEAR(s.loss, std::log(4.0), 0.1);
}

TEST(Classifier, SeparableTaskIsLearned) {
  auto c = tiny();
  c.class_count = 2;
  auto model = fresh(c, 2);
  // One-hot patch inputs do not generalize across byte values, so every first
  // byte appears in training.
  std::mt19937_64 rng(1);
  std::vector<Item> train;
  for (int rep = 0; rep < 32; ++rep) {
    for (int v = 0; v < 256; ++v) {
      Bytes b = random_bytes(rng, 4);
      b[0] = static_cast<std::uint8_t>(v);
      train.push_back(make_lm_item(b, c, v < 128 ? 0 : 1));
    }
  }
  const auto eval = labelled_items(c, 200, 2, false);
  auto cfg = quick(3, 3e-3);
  cfg.batch_size = 16;
  train_classifier(model, cfg, train, {});
  EXPECT_GE(evaluate_classifier(model, eval).accuracy, 0.99);
}

TEST(Classifier, RandomLabelsStayAtChance) {
  auto c = tiny();
  c.class_count = 2;
  auto model = fresh(c, 2);
  const auto train = labelled_items(c, 128, 3, true);
  const auto eval = labelled_items(c, 200, 4, true);
  auto cfg = quick(4, 3e-3);
  cfg.batch_size = 8;
  train_classifier(model, cfg, train, {});
  EXPECT_NEAR(evaluate_classifier(model, eval).accuracy, 0.5, 0.1);
}

TEST(Classifier, NeedsHead) {
  const auto c = tiny();
  auto m = fresh(c);
  EXPECT_THROW(train_classifier(m, quick(1, 1e-3), labelled_items(c, 2, 1, false), {}), Error);
}

TEST(CpuAccuracy, OracleIsPerfect) {
  const auto instances = generate_cpu_instances(30, 4, 32);
  OraclePredictor oracle;
  for (auto fb : {Feedback::kPredicted, Feedback::kGroundTruth}) {
    const auto acc = eval_cpu_accuracy(oracle, instances, fb);
    EXPECT_EQ(acc.accuracy(), 1.0);
    std::size_t states = 0;
    for (const auto& inst : instances) states += inst.trace.size() - 1;
    EXPECT_EQ(acc.total, 16 * states);
  }
}

TEST(CpuAccuracy, UniformIsOneIn256) {
  const auto instances = generate_cpu_instances(200, 5, 256);
  UniformPredictor uniform(9);
  const auto acc = eval_cpu_accuracy(uniform, instances, Feedback::kPredicted);
  EXPECT_GT(acc.total, 100'000u);
  EXPECT_NEAR(acc.accuracy(), 1.0 / 256.0, 0.001);
}

TEST(CpuAccuracy, ModelModesAgreeOnUntrainedCounts) {
  auto c = tiny(16);
  c.max_patches = 96;
  const auto model = fresh(c);
  const auto instances = generate_cpu_instances(2, 6, 4);
  const auto gt = eval_cpu_accuracy(model, instances, Feedback::kGroundTruth);
  const auto pred = eval_cpu_accuracy(model, instances, Feedback::kPredicted);
  EXPECT_EQ(gt.total, pred.total);
  EXPECT_LE(gt.correct, gt.total);
}

TEST(CpuAccuracy, ModelGroundTruthMatchesPredictor) {
  auto c = tiny(16);
  c.max_patches = 96;
  const auto model = fresh(c, 3);
  const auto instances = generate_cpu_instances(3, 7, 6);
  ModelPredictor predictor(model);
  const auto a = eval_cpu_accuracy(model, instances, Feedback::kGroundTruth);
  const auto b = eval_cpu_accuracy(predictor, instances, Feedback::kGroundTruth);
  EXPECT_EQ(a.correct, b.correct);
  EXPECT_EQ(a.total, b.total);
}

TEST(Convert, EmptyBudgetWarns) {
  const auto model = fresh(tiny());
  const Bytes in = {1, 2, 3};
  const auto out = convert(model, in, 0);
  EXPECT_TRUE(out.bytes.empty());
  EXPECT_FALSE(out.terminated);
  EXPECT_FALSE(out.warning.empty());
}

TEST(Convert, DeterministicAndBounded) {
  const auto model = fresh(tiny());
  const Bytes in = {10, 20, 30, 40, 50};
  const auto a = convert(model, in, 20);
  const auto b = convert(model, in, 20);
  EXPECT_EQ(a.bytes, b.bytes);
  EXPECT_LE(a.bytes.size(), 20u);
  if (!a.terminated) EXPECT_FALSE(a.warning.empty());
}

TEST(Convert, CapacityError) {
  const auto model = fresh(tiny());
  EXPECT_THROW(convert(model, Bytes(4 * 31, 1)), CapacityError);
  EXPECT_THROW(convert(model, Bytes{}), Error);
}

TEST(Scaling, ScaleBeyondDataIsAnError) {
  TempDir dir("bgpt_scaling_small");
  cpu::write_dataset(dir.path(), 5, 1, 4);
  TrainConfig base = quick(1, 1e-3);
  base.data = dir.path().string();
  const std::vector<std::size_t> scales = {3, 10};
  EXPECT_THROW(run_scaling_experiment(Task::kCpu, scales, base, 2), Error);
  EXPECT_THROW(run_scaling_experiment(Task::kLm, std::vector<std::size_t>{1}, base, 1), Error);
  EXPECT_THROW(run_scaling_experiment(Task::kCpu, std::vector<std::size_t>{}, base, 1), Error);
}

TEST(Scaling, ConversionTableAndCurves) {
  TempDir dir("bgpt_scaling_conv");
  TrainConfig base = quick(2, 1e-3);
  base.model.max_patches = 400;
  const std::vector<std::size_t> scales = {2, 4};
  const auto r = run_scaling_experiment(Task::kConversion, scales, base, 2, dir.path());
  ASSERT_EQ(r.rows.size(), 2u);
  for (const auto& row : r.rows) {
    EXPECT_GT(row.eval_bpb, 0.0);
    EXPECT_EQ(line_count(dir.path() / ("scale_" + std::to_string(row.scale)) / "curve.csv"), 3u);
  }
  EXPECT_TRUE(fs::exists(dir.path() / "scaling.md"));
  EXPECT_NE(r.table_markdown().find("| 4 |"), std::string::npos);
}

TEST(Loaders, CpuDirRoundTrip) {
  TempDir dir("bgpt_cpu_loader");
  cpu::write_dataset(dir.path(), 4, 2, 8);
  const auto loaded = load_cpu_dir(dir.path());
  const auto generated = generate_cpu_instances(4, 2, 8);
  ASSERT_EQ(loaded.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(loaded[i].trace, generated[i].trace);
}

TEST(Loaders, MalformedInstance) {
  TempDir dir("bgpt_cpu_bad");
  write_file(dir.path() / "cpu_0000000.bin", Bytes(1030));
  EXPECT_THROW(load_cpu_dir(dir.path()), FormatError);
}

}  // namespace
}  // namespace bgpt::harness
