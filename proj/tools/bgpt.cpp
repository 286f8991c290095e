// bgpt: command-line front end for the byte model, the CPU simulator and the
// experiment harness.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "bgpt/checkpoint.hpp"
#include "bgpt/corpus.hpp"
#include "bgpt/cpu.hpp"
#include "bgpt/harness.hpp"

namespace fs = std::filesystem;
using namespace bgpt;
using namespace bgpt::harness;

namespace {

struct TrainFlags {
  std::string config_file;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_steps;
  std::optional<double> eval_fraction;
  std::string loss_region;
  std::string direction;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--config", f.config_file, "JSON file with TrainConfig fields")
      ->check(CLI::ExistingFile);
  cmd->add_option("--epochs", f.epochs, "Training epochs");
  cmd->add_option("--lr", f.lr, "Adam learning rate");
  cmd->add_option("--batch", f.batch, "Batch size");
  cmd->add_option("--seed", f.seed, "Seed for init, shuffling and splits");
  cmd->add_option("--max-steps", f.max_steps, "Stop after this many optimizer steps");
  cmd->add_option("--eval-fraction", f.eval_fraction, "Held-out fraction");
  cmd->add_option("--loss-region", f.loss_region, "all or states (cpu task)")
      ->check(CLI::IsMember({"all", "states"}));
  cmd->add_option("--direction", f.direction, "a2b, b2a or both (conversion task)")
      ->check(CLI::IsMember({"a2b", "b2a", "both"}));
}

TrainConfig resolve(TrainConfig base, const TrainFlags& f) {
  if (!f.config_file.empty()) base = load_train_config(f.config_file, base);
  if (f.epochs) base.epochs = *f.epochs;
  if (f.lr) base.lr = *f.lr;
  if (f.batch) base.batch_size = *f.batch;
  if (f.seed) base.seed = *f.seed;
  if (f.max_steps) base.max_steps = *f.max_steps;
  if (f.eval_fraction) base.eval_fraction = *f.eval_fraction;
  if (!f.loss_region.empty()) {
    base.loss_region = f.loss_region == "states" ? LossRegion::kStates : LossRegion::kAll;
  }
  if (!f.direction.empty()) base.direction = parse_direction(f.direction);
  base.validate();
  return base;
}

TrainHooks console_hooks() {
  TrainHooks h;
  h.on_record = [](const MetricsRecord& r) {
    std::printf("epoch %zu %-5s bpb %.4f acc %.4f loss %.4f (%.1fs)\n", r.epoch, r.split.c_str(),
                r.bpb, r.accuracy, r.loss, r.seconds);
    std::fflush(stdout);
  };
  return h;
}

void print_result(const TrainResult& r) {
  std::printf("steps %zu, best epoch %zu (loss %.4f)\n", r.steps, r.best_epoch, r.best_eval_bpb);
}

std::array<std::uint8_t, cpu::kRegisterCount> parse_regs(const std::string& text) {
  std::array<std::uint8_t, cpu::kRegisterCount> regs{};
  std::stringstream ss(text);
  std::string tok;
  std::size_t i = 0;
  while (std::getline(ss, tok, ',')) {
    if (i >= regs.size()) throw Error("--regs takes at most 10 values");
    const int v = std::stoi(tok);
    if (v < 0 || v > 255) throw Error("register value out of range: " + tok);
    regs[i++] = static_cast<std::uint8_t>(v);
  }
  return regs;
}

std::vector<std::string> split_program(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ';')) {
    const auto b = tok.find_first_not_of(' ');
    if (b == std::string::npos) continue;
    out.push_back(tok.substr(b, tok.find_last_not_of(' ') - b + 1));
  }
  return out;
}

std::vector<std::size_t> parse_scales(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(static_cast<std::size_t>(std::stod(tok)));
  return out;
}

SymbolMask parse_segment(const std::string& s) {
  if (s == "a") return SymbolMask::kFileA;
  if (s == "b") return SymbolMask::kFileB;
  return SymbolMask::kContent;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bgpt: byte-level model training, evaluation and CPU-state experiments"};
  app.require_subcommand(1);

  // cpu ---------------------------------------------------------------------
  auto* cpu_cmd = app.add_subcommand("cpu", "CPU simulator utilities");
  cpu_cmd->require_subcommand(1);

  auto* gen = cpu_cmd->add_subcommand("gen", "Write random program instances");
  std::size_t gen_count = 0;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  std::size_t gen_max = cpu::kMaxInstructions;
  gen->add_option("--count", gen_count, "Number of instances")->required();
  gen->add_option("--seed", gen_seed, "Dataset seed");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--max-instructions", gen_max, "Program length cap")
      ->check(CLI::Range(1, 256));

  auto* trace = cpu_cmd->add_subcommand("trace", "Print the state trace of an instance");
  std::string trace_file;
  std::string trace_program;
  int trace_acc = 0;
  std::string trace_regs;
  auto* file_opt = trace->add_option("--file", trace_file, "Serialized instance")
                       ->check(CLI::ExistingFile);
  auto* prog_opt =
      trace->add_option("--program", trace_program, "Instructions separated by ';'");
  trace->add_option("--acc", trace_acc, "Initial ACC")->check(CLI::Range(0, 255));
  trace->add_option("--regs", trace_regs, "Initial A..J, comma separated");
  file_opt->excludes(prog_opt);

  // train -------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train a fresh model");
  std::string train_task = "lm";
  std::string train_data;
  std::string train_pairs;
  std::string train_out;
  TrainFlags train_flags;
  train->add_option("--task", train_task, "lm, cpu or conversion")
      ->check(CLI::IsMember({"lm", "cpu", "conversion"}));
  train->add_option("--data", train_data, "Dataset directory (side A for conversion)")
      ->required();
  train->add_option("--pair-data", train_pairs, "Side B directory for conversion");
  train->add_option("--out", train_out, "Run directory")->required();
  add_train_flags(train, train_flags);

  // finetune ----------------------------------------------------------------
  auto* finetune = app.add_subcommand("finetune", "Continue training from a checkpoint");
  finetune->require_subcommand(1);
  struct FinetuneArgs {
    std::string ckpt, data, pairs, out, task = "lm";
    TrainFlags flags;
  };
  FinetuneArgs ft_lm, ft_cls;
  auto* ft_lm_cmd = finetune->add_subcommand("lm", "Next-byte fine-tuning");
  auto* ft_cls_cmd = finetune->add_subcommand("classify", "Classification fine-tuning");
  for (auto [cmd, args] : {std::pair{ft_lm_cmd, &ft_lm}, std::pair{ft_cls_cmd, &ft_cls}}) {
    cmd->add_option("--ckpt", args->ckpt, "Input checkpoint")->required()->check(
        CLI::ExistingFile);
    cmd->add_option("--data", args->data, "Dataset directory")->required();
    cmd->add_option("--out", args->out, "Run directory")->required();
    add_train_flags(cmd, args->flags);
  }
  ft_lm_cmd->add_option("--task", ft_lm.task, "lm, cpu or conversion")
      ->check(CLI::IsMember({"lm", "cpu", "conversion"}));
  ft_lm_cmd->add_option("--pair-data", ft_lm.pairs, "Side B directory for conversion");

  // eval --------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->require_subcommand(1);
  std::string ev_ckpt;
  std::string ev_data;
  std::string ev_pairs;
  std::string ev_task = "lm";
  std::string ev_segment = "all";
  std::string ev_feedback = "pred";
  std::size_t ev_limit = 0;
  auto* ev_bpb = eval->add_subcommand("bpb", "Teacher-forced bits per byte");
  auto* ev_cpu = eval->add_subcommand("cpu", "Greedy CPU state byte accuracy");
  auto* ev_cls = eval->add_subcommand("classify", "Classification accuracy");
  for (auto* cmd : {ev_bpb, ev_cpu, ev_cls}) {
    cmd->add_option("--ckpt", ev_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("--data", ev_data, "Dataset directory")->required();
  }
  ev_bpb->add_option("--task", ev_task, "lm, cpu or conversion")
      ->check(CLI::IsMember({"lm", "cpu", "conversion"}));
  ev_bpb->add_option("--pair-data", ev_pairs, "Side B directory for conversion");
  ev_bpb->add_option("--segment", ev_segment, "all, a or b")
      ->check(CLI::IsMember({"all", "a", "b"}));
  ev_cpu->add_option("--feedback", ev_feedback, "pred or gt")
      ->check(CLI::IsMember({"pred", "gt"}));
  ev_cpu->add_option("--limit", ev_limit, "Evaluate only the first N instances");

  // convert -----------------------------------------------------------------
  auto* conv = app.add_subcommand("convert", "Generate the paired file for an input");
  std::string cv_ckpt;
  std::string cv_in;
  std::string cv_dir = "a2b";
  std::string cv_out;
  std::optional<std::size_t> cv_max;
  conv->add_option("--ckpt", cv_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  conv->add_option("--in", cv_in, "Input file")->required()->check(CLI::ExistingFile);
  conv->add_option("--dir", cv_dir, "Direction the checkpoint was trained for")
      ->check(CLI::IsMember({"a2b", "b2a"}));
  conv->add_option("--out", cv_out, "Output file (stdout when omitted)");
  conv->add_option("--max-bytes", cv_max, "Generation budget");

  // scaling -----------------------------------------------------------------
  auto* scaling = app.add_subcommand("scaling", "Train one model per data scale");
  std::string sc_task = "cpu";
  std::string sc_scales = "1000,3000,10000";
  std::size_t sc_eval = 300;
  std::string sc_out;
  std::string sc_data;
  std::string sc_pairs;
  std::size_t sc_max_instr = 16;
  TrainFlags sc_flags;
  scaling->add_option("--task", sc_task, "cpu or conversion")
      ->check(CLI::IsMember({"cpu", "conversion"}));
  scaling->add_option("--scales", sc_scales, "Comma-separated training set sizes");
  scaling->add_option("--eval-count", sc_eval, "Shared held-out set size");
  scaling->add_option("--out", sc_out, "Output directory")->required();
  scaling->add_option("--data", sc_data, "Dataset directory (generated when omitted)");
  scaling->add_option("--pair-data", sc_pairs, "Side B directory for conversion");
  scaling->add_option("--max-instructions", sc_max_instr, "Program length cap for generated data")
      ->check(CLI::Range(1, 256));
  add_train_flags(scaling, sc_flags);

  // corpus / config ---------------------------------------------------------
  auto* corpus_cmd = app.add_subcommand("corpus", "Dataset utilities");
  corpus_cmd->require_subcommand(1);
  auto* synth = corpus_cmd->add_subcommand("synth", "Write synthetic run-length pairs");
  std::size_t sy_count = 0;
  std::uint64_t sy_seed = 0;
  std::string sy_out;
  synth->add_option("--count", sy_count, "Number of pairs")->required();
  synth->add_option("--seed", sy_seed, "Seed");
  synth->add_option("--out", sy_out, "Output directory (gets a/ and b/)")->required();
  auto* manifest = corpus_cmd->add_subcommand("manifest", "Print the manifest of a directory");
  std::string mf_dir;
  bool mf_labels = false;
  manifest->add_option("dir", mf_dir, "Directory")->required();
  manifest->add_flag("--labels", mf_labels, "Label by subdirectory");

  auto* config_cmd = app.add_subcommand("config", "Print default training configs as JSON");
  bool cfg_finetune = false;
  bool cfg_paper = false;
  config_cmd->add_flag("--finetune", cfg_finetune, "Fine-tuning defaults");
  config_cmd->add_flag("--paper", cfg_paper, "Full-size model instead of the desk model");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto paths = cpu::write_dataset(gen_out, gen_count, gen_seed, gen_max);
      std::printf("wrote %zu instances to %s\n", paths.size(), gen_out.c_str());
    } else if (trace->parsed()) {
      cpu::CpuInstance inst;
      if (!trace_file.empty()) {
        inst = cpu::deserialize_instance(read_file(trace_file));
      } else if (!trace_program.empty()) {
        const auto program = split_program(trace_program);
        inst = cpu::run_program(cpu::assemble(program), static_cast<std::uint8_t>(trace_acc),
                                parse_regs(trace_regs));
      } else {
        throw CLI::RequiredError("--file or --program");
      }
      std::cout << cpu::dump_trace(inst);
      if (inst.diagnostic) std::cerr << "warning: " << *inst.diagnostic << '\n';
    } else if (train->parsed()) {
      TrainConfig c = resolve(TrainConfig::pretrain_defaults(), train_flags);
      c.task = parse_task(train_task);
      c.data = train_data;
      c.pair_data = train_pairs;
      c.out = train_out;
      print_result(pretrain(c, console_hooks()));
    } else if (ft_lm_cmd->parsed()) {
      TrainConfig c = resolve(TrainConfig::finetune_defaults(), ft_lm.flags);
      c.model = load_checkpoint(ft_lm.ckpt).config;
      c.task = parse_task(ft_lm.task);
      c.checkpoint = ft_lm.ckpt;
      c.data = ft_lm.data;
      c.pair_data = ft_lm.pairs;
      c.out = ft_lm.out;
      print_result(finetune_generative(c, console_hooks()));
    } else if (ft_cls_cmd->parsed()) {
      TrainConfig c = resolve(TrainConfig::finetune_defaults(), ft_cls.flags);
      c.model = load_checkpoint(ft_cls.ckpt).config;
      c.model.class_count = 0;
      c.objective = Objective::kClassification;
      c.checkpoint = ft_cls.ckpt;
      c.data = ft_cls.data;
      c.out = ft_cls.out;
      print_result(finetune_classifier(c, console_hooks()));
    } else if (ev_bpb->parsed() || ev_cls->parsed()) {
      Model<float> model(load_checkpoint(ev_ckpt));
      TrainConfig c;
      c.model = model.config();
      c.data = ev_data;
      if (ev_bpb->parsed()) {
        c.task = parse_task(ev_task);
        c.pair_data = ev_pairs;
        c.loss_region = LossRegion::kStates;
        const auto items = load_all_items(c);
        std::optional<SymbolMask> mask;
        if (c.task == Task::kConversion) mask = parse_segment(ev_segment);
        const LossStats s = evaluate(model, items, mask);
        std::printf("bpb %.6f accuracy %.6f bytes %zu items %zu\n", s.bpb(), s.accuracy(),
                    s.count, items.size());
      } else {
        const auto items = load_all_items(c, true);
        const ClassifyStats s = evaluate_classifier(model, items);
        std::printf("accuracy %.6f loss %.6f items %zu\n", s.accuracy, s.loss, s.count);
      }
    } else if (ev_cpu->parsed()) {
      Model<float> model(load_checkpoint(ev_ckpt));
      auto instances = load_cpu_dir(ev_data);
      if (ev_limit != 0 && ev_limit < instances.size()) instances.resize(ev_limit);
      const auto fb = ev_feedback == "gt" ? Feedback::kGroundTruth : Feedback::kPredicted;
      const CpuAccuracy acc = eval_cpu_accuracy(model, instances, fb);
      std::printf("accuracy %.6f (%zu/%zu state bytes, %zu instances, feedback %s)\n",
                  acc.accuracy(), acc.correct, acc.total, instances.size(), ev_feedback.c_str());
    } else if (conv->parsed()) {
      Model<float> model(load_checkpoint(cv_ckpt));
      const Bytes input = read_file(cv_in);
      const ConversionOutput out = convert(model, input, cv_max);
      if (!out.warning.empty()) std::cerr << "warning: " << out.warning << '\n';
      if (cv_out.empty()) {
        std::cout.write(reinterpret_cast<const char*>(out.bytes.data()),
                        static_cast<std::streamsize>(out.bytes.size()));
      } else {
        write_file(cv_out, out.bytes);
        std::fprintf(stderr, "%s: %zu bytes -> %s\n", cv_dir.c_str(), out.bytes.size(),
                     cv_out.c_str());
      }
      return out.terminated ? 0 : 3;
    } else if (scaling->parsed()) {
      TrainConfig c = resolve(TrainConfig::pretrain_defaults(), sc_flags);
      c.task = parse_task(sc_task);
      c.data = sc_data;
      c.pair_data = sc_pairs;
      c.max_instructions = sc_max_instr;
      if (c.task == Task::kCpu && sc_flags.loss_region.empty()) c.loss_region = LossRegion::kStates;
      const auto scales = parse_scales(sc_scales);
      TrainHooks hooks = console_hooks();
      const auto r = run_scaling_experiment(c.task, scales, c, sc_eval, fs::path(sc_out), hooks);
      std::cout << r.table_markdown();
    } else if (synth->parsed()) {
      corpus::write_pairs(sy_out, corpus::synthetic_pairs(sy_count, sy_seed));
      std::printf("wrote %zu pairs to %s\n", sy_count, sy_out.c_str());
    } else if (manifest->parsed()) {
      const auto ds = corpus::ingest_directory(
          mf_dir, mf_labels ? corpus::LabelMode::kBySubdirectory : corpus::LabelMode::kFlat);
      std::cout << corpus::manifest_to_jsonl(ds.manifest);
      for (const auto& f : ds.report.oversize) std::cerr << "skipped (oversize): " << f << '\n';
      for (const auto& f : ds.report.duplicates) std::cerr << "skipped (duplicate): " << f << '\n';
    } else if (config_cmd->parsed()) {
      TrainConfig c = cfg_finetune ? TrainConfig::finetune_defaults()
                                   : TrainConfig::pretrain_defaults();
      if (cfg_paper) c.model = ModelConfig::paper();
      std::cout << nlohmann::json(c).dump(2) << '\n';
      std::fprintf(stderr, "parameters: %zu\n", param_count(c.model));
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const CapacityError& e) {
    std::cerr << "capacity error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
