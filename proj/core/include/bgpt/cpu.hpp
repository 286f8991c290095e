#pragma once

// A toy accumulator CPU used to generate the CPU-states dataset.
//
// Memory is 1KB holding up to 256 four-byte instructions OP ADDR1 ADDR2 ADDR3.
// The machine state is 16 bytes: PC, ACC, IR[4], registers A..J. There are no
// jumps, so every program runs straight through to its HLT.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bgpt/patch.hpp"
#include "bgpt/tensor.hpp"

namespace bgpt::cpu {

inline constexpr std::size_t kMemorySize = 1024;
inline constexpr std::size_t kStateSize = 16;
inline constexpr std::size_t kRegisterCount = 10;
inline constexpr std::size_t kMaxInstructions = 256;
inline constexpr std::size_t kInstructionSize = 4;

enum class Opcode : std::uint8_t {
  kHlt = 0x00,
  kClr = 0x01,
  kInc = 0x02,
  kDec = 0x03,
  kShl = 0x04,
  kShr = 0x05,
  kRol = 0x06,
  kRor = 0x07,
  kNot = 0x08,
  kPush = 0x09,
  kPop = 0x0A,
  kLoadi = 0x0B,
  kSwap = 0x0C,
  kAdd = 0x0D,
  kSub = 0x0E,
  kMul = 0x0F,
  kDiv = 0x10,
  kAnd = 0x11,
  kOr = 0x12,
  kXor = 0x13,
  kMov = 0x14,
};
inline constexpr std::uint8_t kMaxOpcode = 0x14;

/// Raised for opcodes above 0x14, register codes above 10, or operand
/// patterns that match no row of the instruction table.
class InvalidInstruction : public Error {
 public:
  using Error::Error;
};

/// One (mnemonic, arity) variant of the instruction set.
struct IsaRow {
  std::string_view mnemonic;
  Opcode op;
  int arity;
  std::string_view semantics;
};

/// All 44 variant rows, HLT first, then table order.
std::span<const IsaRow> isa_table();

struct Census {
  std::size_t types = 0;
  std::size_t variants = 0;
};
Census variant_census(std::span<const IsaRow> table);
Census variant_census();

struct Instruction {
  Opcode op = Opcode::kHlt;
  std::uint8_t addr1 = 0;
  std::uint8_t addr2 = 0;
  std::uint8_t addr3 = 0;
  int arity = 0;

  std::array<std::uint8_t, 4> bytes() const {
    return {static_cast<std::uint8_t>(op), addr1, addr2, addr3};
  }
  std::string_view mnemonic() const;
  /// Assembly text, e.g. "MUL E D", "LOADI 86", "HLT".
  std::string render() const;

  friend bool operator==(const Instruction&, const Instruction&) = default;
};

Instruction decode_instruction(std::span<const std::uint8_t, 4> bytes);
std::array<std::uint8_t, 4> encode_instruction(std::string_view text);

/// Assembly rendering for raw IR bytes; invalid encodings render as "??".
std::string render_ir(const std::array<std::uint8_t, 4>& ir);

struct CpuState {
  std::uint8_t pc = 0;
  std::uint8_t acc = 0;
  std::array<std::uint8_t, 4> ir{};
  std::array<std::uint8_t, kRegisterCount> regs{};

  std::array<std::uint8_t, kStateSize> serialize() const;
  static CpuState deserialize(std::span<const std::uint8_t, kStateSize> bytes);

  friend bool operator==(const CpuState&, const CpuState&) = default;
};

using Memory = std::array<std::uint8_t, kMemorySize>;

/// Internal push/pop stack; not part of the 16-byte state.
using Stack = std::vector<std::uint8_t>;

struct StepResult {
  bool halted = false;
  std::optional<std::string> diagnostic;  // set for invalid instructions
};

/// Loads the instruction at PC into IR and increments PC.
void fetch(CpuState& state, const Memory& memory);

/// Applies the instruction held in IR.
StepResult execute(CpuState& state, Stack& stack);

/// fetch() followed by execute().
StepResult execute_step(CpuState& state, Stack& stack, const Memory& memory);

struct CpuInstance {
  Memory memory{};
  std::vector<CpuState> trace;  // initial state, then one per fetch up to HLT
  std::optional<std::string> diagnostic;

  /// Number of instructions executed, counting the final HLT.
  std::size_t instruction_count() const { return trace.empty() ? 0 : trace.size() - 1; }
  friend bool operator==(const CpuInstance&, const CpuInstance&) = default;
};

/// Records the initial state, then after every fetch records the state (new
/// IR, incremented PC, effects of earlier instructions) and executes. Stops
/// after recording the HLT fetch.
CpuInstance run_program(const Memory& memory, std::uint8_t acc,
                        const std::array<std::uint8_t, kRegisterCount>& regs);

/// Assembles a list of instruction texts into a memory block.
Memory assemble(std::span<const std::string> program);

/// n-1 random non-HLT instructions followed by HLT; the rest is zero.
Memory random_program(std::size_t n, std::mt19937_64& rng);

/// Random length in [1, max_instructions], random ACC/registers, executed.
CpuInstance generate_instance(std::mt19937_64& rng,
                              std::size_t max_instructions = kMaxInstructions);

/// Independent generator for instance `index` of a dataset with `seed`.
std::mt19937_64 instance_rng(std::uint64_t seed, std::uint64_t index);

Bytes serialize_instance(const CpuInstance& inst);
CpuInstance deserialize_instance(std::span<const std::uint8_t> bytes);

/// Human-readable trace in the listing style used for golden-trace diffs.
std::string dump_trace(const CpuInstance& inst);

/// Writes `count` instances as <dir>/cpu_XXXXXXX.bin. Returns the paths.
std::vector<std::filesystem::path> write_dataset(const std::filesystem::path& dir,
                                                 std::size_t count, std::uint64_t seed,
                                                 std::size_t max_instructions = kMaxInstructions);

}  // namespace bgpt::cpu
