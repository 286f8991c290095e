#include "bgpt/cpu.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>
#include <sstream>

#include "bgpt/checkpoint.hpp"

namespace bgpt::cpu {

namespace {

constexpr IsaRow kTable[] = {
    {"HLT", Opcode::kHlt, 0, "halt"},
    {"CLR", Opcode::kClr, 0, "ACC := 0"},
    {"CLR", Opcode::kClr, 1, "R := 0"},
    {"INC", Opcode::kInc, 0, "ACC := sat(ACC + 1)"},
    {"INC", Opcode::kInc, 1, "R := sat(R + 1)"},
    {"DEC", Opcode::kDec, 0, "ACC := sat(ACC - 1)"},
    {"DEC", Opcode::kDec, 1, "R := sat(R - 1)"},
    {"SHL", Opcode::kShl, 0, "ACC := ACC << 1"},
    {"SHL", Opcode::kShl, 1, "R := R << 1"},
    {"SHR", Opcode::kShr, 0, "ACC := ACC >> 1"},
    {"SHR", Opcode::kShr, 1, "R := R >> 1"},
    {"ROL", Opcode::kRol, 0, "ACC := rotl(ACC)"},
    {"ROL", Opcode::kRol, 1, "R := rotl(R)"},
    {"ROR", Opcode::kRor, 0, "ACC := rotr(ACC)"},
    {"ROR", Opcode::kRor, 1, "R := rotr(R)"},
    {"NOT", Opcode::kNot, 0, "ACC := ~ACC"},
    {"NOT", Opcode::kNot, 1, "R := ~R"},
    {"PUSH", Opcode::kPush, 1, "push R"},
    {"POP", Opcode::kPop, 1, "R := pop (ACC when empty)"},
    {"LOADI", Opcode::kLoadi, 1, "ACC := imm"},
    {"SWAP", Opcode::kSwap, 1, "ACC <-> R"},
    {"SWAP", Opcode::kSwap, 2, "R1 <-> R2"},
    {"ADD", Opcode::kAdd, 1, "ACC := sat(ACC + R)"},
    {"ADD", Opcode::kAdd, 2, "R1 := sat(R1 + R2)"},
    {"ADD", Opcode::kAdd, 3, "R1 := sat(R2 + R3)"},
    {"SUB", Opcode::kSub, 1, "ACC := sat(ACC - R)"},
    {"SUB", Opcode::kSub, 2, "R1 := sat(R1 - R2)"},
    {"SUB", Opcode::kSub, 3, "R1 := sat(R2 - R3)"},
    {"MUL", Opcode::kMul, 1, "ACC := sat(ACC * R)"},
    {"MUL", Opcode::kMul, 2, "R1 := sat(R1 * R2)"},
    {"MUL", Opcode::kMul, 3, "R1 := sat(R2 * R3)"},
    {"DIV", Opcode::kDiv, 1, "ACC := ACC / R"},
    {"DIV", Opcode::kDiv, 2, "R1 := R1 / R2"},
    {"DIV", Opcode::kDiv, 3, "R1 := R2 / R3"},
    {"AND", Opcode::kAnd, 1, "ACC := ACC & R"},
    {"AND", Opcode::kAnd, 2, "R1 := R1 & R2"},
    {"AND", Opcode::kAnd, 3, "R1 := R2 & R3"},
    {"OR", Opcode::kOr, 1, "ACC := ACC | R"},
    {"OR", Opcode::kOr, 2, "R1 := R1 | R2"},
    {"OR", Opcode::kOr, 3, "R1 := R2 | R3"},
    {"XOR", Opcode::kXor, 1, "ACC := ACC ^ R"},
    {"XOR", Opcode::kXor, 2, "R1 := R1 ^ R2"},
    {"XOR", Opcode::kXor, 3, "R1 := R2 ^ R3"},
    {"MOV", Opcode::kMov, 2, "R1 := R2"},
};

const IsaRow* find_row(Opcode op, int arity) {
  for (const auto& row : kTable) {
    if (row.op == op && row.arity == arity) return &row;
  }
  return nullptr;
}

std::string_view mnemonic_of(Opcode op) {
  for (const auto& row : kTable) {
    if (row.op == op) return row.mnemonic;
  }
  return "??";
}

char register_letter(std::uint8_t code) { return static_cast<char>('A' + code - 1); }

std::uint8_t sat(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

std::uint8_t& reg(CpuState& s, std::uint8_t code) { return s.regs[code - 1u]; }

// Binary operation; nullopt leaves the destination unchanged.
std::optional<std::uint8_t> binary(Opcode op, std::uint8_t a, std::uint8_t b) {
  switch (op) {
    case Opcode::kAdd:
      return sat(int{a} + int{b});
    case Opcode::kSub:
      return sat(int{a} - int{b});
    case Opcode::kMul:
      return sat(int{a} * int{b});
    case Opcode::kDiv:
      if (b == 0) return std::nullopt;
      return static_cast<std::uint8_t>(a / b);
    case Opcode::kAnd:
      return static_cast<std::uint8_t>(a & b);
    case Opcode::kOr:
      return static_cast<std::uint8_t>(a | b);
    case Opcode::kXor:
      return static_cast<std::uint8_t>(a ^ b);
    default:
      return std::nullopt;
  }
}

std::uint8_t unary(Opcode op, std::uint8_t v) {
  switch (op) {
    case Opcode::kClr:
      return 0;
    case Opcode::kInc:
      return sat(int{v} + 1);
    case Opcode::kDec:
      return sat(int{v} - 1);
    case Opcode::kShl:
      return static_cast<std::uint8_t>(v << 1);
    case Opcode::kShr:
      return static_cast<std::uint8_t>(v >> 1);
    case Opcode::kRol:
      return static_cast<std::uint8_t>((v << 1) | (v >> 7));
    case Opcode::kRor:
      return static_cast<std::uint8_t>((v >> 1) | (v << 7));
    case Opcode::kNot:
      return static_cast<std::uint8_t>(~v);
    default:
      return v;
  }
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::span<const IsaRow> isa_table() { return kTable; }

Census variant_census(std::span<const IsaRow> table) {
  std::set<std::string_view> types;
  std::set<std::pair<std::string_view, int>> variants;
  for (const auto& row : table) {
    types.insert(row.mnemonic);
    variants.emplace(row.mnemonic, row.arity);
  }
  return {types.size(), variants.size()};
}

Census variant_census() { return variant_census(isa_table()); }

std::string_view Instruction::mnemonic() const { return mnemonic_of(op); }

std::string Instruction::render() const {
  std::string out(mnemonic());
  if (op == Opcode::kLoadi) return out + " " + std::to_string(addr1);
  const std::uint8_t addrs[3] = {addr1, addr2, addr3};
  for (int i = 0; i < arity; ++i) {
    out += ' ';
    out += register_letter(addrs[i]);
  }
  return out;
}

Instruction decode_instruction(std::span<const std::uint8_t, 4> b) {
  if (b[0] > kMaxOpcode) {
    throw InvalidInstruction("invalid opcode 0x" + [&] {
      std::ostringstream os;
      os << std::hex << int{b[0]};
      return os.str();
    }());
  }
  Instruction ins{static_cast<Opcode>(b[0]), b[1], b[2], b[3], 0};
  if (ins.op == Opcode::kLoadi) {
    ins.arity = 1;
    return ins;
  }
  while (ins.arity < 3 && b[1 + ins.arity] != 0) ++ins.arity;
  for (int i = 0; i < ins.arity; ++i) {
    if (b[1 + i] > kRegisterCount) {
      throw InvalidInstruction("register code " + std::to_string(b[1 + i]) + " out of range");
    }
  }
  if (!find_row(ins.op, ins.arity)) {
    throw InvalidInstruction("undefined variant " + std::string(ins.mnemonic()) + "/" +
                             std::to_string(ins.arity));
  }
  return ins;
}

std::array<std::uint8_t, 4> encode_instruction(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string word;
  if (!(in >> word)) throw Error("encode_instruction: empty text");
  const std::string name = upper(word);
  const IsaRow* first = nullptr;
  for (const auto& row : kTable) {
    if (row.mnemonic == name) {
      first = &row;
      break;
    }
  }
  if (!first) throw Error("encode_instruction: unknown mnemonic '" + word + "'");
  std::vector<std::string> operands;
  while (in >> word) operands.push_back(word);

  std::array<std::uint8_t, 4> out{static_cast<std::uint8_t>(first->op), 0, 0, 0};
  if (first->op == Opcode::kLoadi) {
    if (operands.size() != 1) throw Error("encode_instruction: LOADI takes one immediate");
    int v = -1;
    const auto& s = operands[0];
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || v < 0 || v > 255) {
      throw Error("encode_instruction: immediate '" + s + "' out of 0..255");
    }
    out[1] = static_cast<std::uint8_t>(v);
    return out;
  }
  if (!find_row(first->op, static_cast<int>(operands.size()))) {
    throw Error("encode_instruction: " + name + " has no " + std::to_string(operands.size()) +
                "-address form");
  }
  for (std::size_t i = 0; i < operands.size(); ++i) {
    const std::string r = upper(operands[i]);
    if (r.size() != 1 || r[0] < 'A' || r[0] > 'J') {
      throw Error("encode_instruction: bad register '" + operands[i] + "'");
    }
    out[1 + i] = static_cast<std::uint8_t>(r[0] - 'A' + 1);
  }
  return out;
}

std::string render_ir(const std::array<std::uint8_t, 4>& ir) {
  try {
    return decode_instruction(ir).render();
  } catch (const InvalidInstruction&) {
    return "??";
  }
}

std::array<std::uint8_t, kStateSize> CpuState::serialize() const {
  std::array<std::uint8_t, kStateSize> out{};
  out[0] = pc;
  out[1] = acc;
  std::copy(ir.begin(), ir.end(), out.begin() + 2);
  std::copy(regs.begin(), regs.end(), out.begin() + 6);
  return out;
}

CpuState CpuState::deserialize(std::span<const std::uint8_t, kStateSize> b) {
  CpuState s;
  s.pc = b[0];
  s.acc = b[1];
  std::copy(b.begin() + 2, b.begin() + 6, s.ir.begin());
  std::copy(b.begin() + 6, b.end(), s.regs.begin());
  return s;
}

void fetch(CpuState& state, const Memory& memory) {
  const std::size_t at = std::size_t{state.pc} * kInstructionSize;
  std::copy_n(memory.begin() + static_cast<std::ptrdiff_t>(at), kInstructionSize,
              state.ir.begin());
  state.pc = static_cast<std::uint8_t>(state.pc + 1);
}

StepResult execute(CpuState& s, Stack& stack) {
  Instruction ins;
  try {
    ins = decode_instruction(s.ir);
  } catch (const InvalidInstruction& e) {
    return {true, std::string(e.what())};
  }
  switch (ins.op) {
    case Opcode::kHlt:
      return {true, std::nullopt};
    case Opcode::kClr:
    case Opcode::kInc:
    case Opcode::kDec:
    case Opcode::kShl:
    case Opcode::kShr:
    case Opcode::kRol:
    case Opcode::kRor:
    case Opcode::kNot: {
      std::uint8_t& target = ins.arity == 0 ? s.acc : reg(s, ins.addr1);
      target = unary(ins.op, target);
      break;
    }
    case Opcode::kPush:
      stack.push_back(reg(s, ins.addr1));
      break;
    case Opcode::kPop:
      if (stack.empty()) {
        reg(s, ins.addr1) = s.acc;
      } else {
        reg(s, ins.addr1) = stack.back();
        stack.pop_back();
      }
      break;
    case Opcode::kLoadi:
      s.acc = ins.addr1;
      break;
    case Opcode::kSwap:
      if (ins.arity == 1) {
        std::swap(s.acc, reg(s, ins.addr1));
      } else {
        std::swap(reg(s, ins.addr1), reg(s, ins.addr2));
      }
      break;
    case Opcode::kMov:
      reg(s, ins.addr1) = reg(s, ins.addr2);
      break;
    default: {
      std::uint8_t* dst = nullptr;
      std::uint8_t a = 0;
      std::uint8_t b = 0;
      if (ins.arity == 1) {
        dst = &s.acc;
        a = s.acc;
        b = reg(s, ins.addr1);
      } else if (ins.arity == 2) {
        dst = &reg(s, ins.addr1);
        a = *dst;
        b = reg(s, ins.addr2);
      } else {
        dst = &reg(s, ins.addr1);
        a = reg(s, ins.addr2);
        b = reg(s, ins.addr3);
      }
      if (auto r = binary(ins.op, a, b)) *dst = *r;
      break;
    }
  }
  return {false, std::nullopt};
}

StepResult execute_step(CpuState& state, Stack& stack, const Memory& memory) {
  fetch(state, memory);
  return execute(state, stack);
}

CpuInstance run_program(const Memory& memory, std::uint8_t acc,
                        const std::array<std::uint8_t, kRegisterCount>& regs) {
  CpuInstance inst;
  inst.memory = memory;
  CpuState state;
  state.acc = acc;
  state.regs = regs;
  inst.trace.push_back(state);
  Stack stack;
  for (std::size_t fetches = 0; fetches < kMaxInstructions; ++fetches) {
    fetch(state, memory);
    inst.trace.push_back(state);
    StepResult r = execute(state, stack);
    if (r.halted) {
      inst.diagnostic = std::move(r.diagnostic);
      return inst;
    }
  }
  throw Error("run_program: no HLT within 256 instructions");
}

Memory assemble(std::span<const std::string> program) {
  if (program.size() > kMaxInstructions) throw Error("assemble: program longer than 256");
  Memory mem{};
  for (std::size_t i = 0; i < program.size(); ++i) {
    const auto bytes = encode_instruction(program[i]);
    std::copy(bytes.begin(), bytes.end(), mem.begin() + static_cast<std::ptrdiff_t>(i * 4));
  }
  return mem;
}

Memory random_program(std::size_t n, std::mt19937_64& rng) {
  if (n < 1 || n > kMaxInstructions) {
    throw Error("random_program: length " + std::to_string(n) + " outside 1..256");
  }
  const auto table = isa_table().subspan(1);  // every row but HLT
  std::uniform_int_distribution<std::size_t> pick_row(0, table.size() - 1);
  std::uniform_int_distribution<int> pick_reg(1, static_cast<int>(kRegisterCount));
  std::uniform_int_distribution<int> pick_imm(0, 255);
  Memory mem{};
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const IsaRow& row = table[pick_row(rng)];
    std::array<std::uint8_t, 4> b{static_cast<std::uint8_t>(row.op), 0, 0, 0};
    if (row.op == Opcode::kLoadi) {
      b[1] = static_cast<std::uint8_t>(pick_imm(rng));
    } else {
      for (int a = 0; a < row.arity; ++a) b[1 + a] = static_cast<std::uint8_t>(pick_reg(rng));
      const bool distinct = row.arity == 2 && (row.op == Opcode::kSwap || row.op == Opcode::kMov);
      while (distinct && b[2] == b[1]) b[2] = static_cast<std::uint8_t>(pick_reg(rng));
    }
    std::copy(b.begin(), b.end(), mem.begin() + static_cast<std::ptrdiff_t>(i * 4));
  }
  return mem;  // instruction n-1 and everything after it is already HLT (zero)
}

CpuInstance generate_instance(std::mt19937_64& rng, std::size_t max_instructions) {
  if (max_instructions < 1 || max_instructions > kMaxInstructions) {
    throw Error("generate_instance: max_instructions outside 1..256");
  }
  std::uniform_int_distribution<std::size_t> pick_len(1, max_instructions);
  std::uniform_int_distribution<int> pick_byte(0, 255);
  const std::size_t n = pick_len(rng);
  const auto acc = static_cast<std::uint8_t>(pick_byte(rng));
  std::array<std::uint8_t, kRegisterCount> regs{};
  for (auto& r : regs) r = static_cast<std::uint8_t>(pick_byte(rng));
  return run_program(random_program(n, rng), acc, regs);
}

std::mt19937_64 instance_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

Bytes serialize_instance(const CpuInstance& inst) {
  Bytes out(inst.memory.begin(), inst.memory.end());
  out.reserve(kMemorySize + inst.trace.size() * kStateSize);
  for (const auto& s : inst.trace) {
    const auto b = s.serialize();
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

CpuInstance deserialize_instance(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMemorySize + 2 * kStateSize ||
      (bytes.size() - kMemorySize) % kStateSize != 0) {
    throw FormatError("instance length " + std::to_string(bytes.size()) +
                      " is not 1024 + 16k with k >= 2");
  }
  CpuInstance inst;
  std::copy_n(bytes.begin(), kMemorySize, inst.memory.begin());
  for (std::size_t at = kMemorySize; at < bytes.size(); at += kStateSize) {
    inst.trace.push_back(CpuState::deserialize(bytes.subspan(at).first<kStateSize>()));
  }
  return inst;
}

std::string dump_trace(const CpuInstance& inst) {
  std::ostringstream os;
  os << "Program: [";
  for (std::size_t i = 0; i < kMaxInstructions; ++i) {
    std::array<std::uint8_t, 4> ir{};
    std::copy_n(inst.memory.begin() + static_cast<std::ptrdiff_t>(i * 4), 4, ir.begin());
    os << (i ? ", " : "") << '\'' << render_ir(ir) << '\'';
    if (ir[0] == 0 || ir[0] > kMaxOpcode) break;
  }
  os << "]\n";
  for (std::size_t step = 0; step < inst.trace.size(); ++step) {
    const CpuState& s = inst.trace[step];
    os << "\nState at step " << step << ":\n";
    os << "PC: " << int{s.pc} << "\n";
    os << "ACC: " << int{s.acc} << "\n";
    os << "IR: " << render_ir(s.ir) << "\n";
    os << "Registers: {";
    for (std::size_t r = 0; r < kRegisterCount; ++r) {
      os << (r ? ", " : "") << '\'' << static_cast<char>('A' + r) << "': " << int{s.regs[r]};
    }
    os << "}\n";
  }
  return os.str();
}

std::vector<std::filesystem::path> write_dataset(const std::filesystem::path& dir,
                                                 std::size_t count, std::uint64_t seed,
                                                 std::size_t max_instructions) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  paths.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto rng = instance_rng(seed, i);
    const CpuInstance inst = generate_instance(rng, max_instructions);
    char name[32];
    std::snprintf(name, sizeof(name), "cpu_%07zu.bin", i);
    paths.push_back(dir / name);
    write_file(paths.back(), serialize_instance(inst));
  }
  return paths;
}

}  // namespace bgpt::cpu
