#include "enclsim/reference_interpreter.h"

#include <csignal>
#include <cstring>

namespace enclsim {

namespace {

class FlatMemory {
 public:
  FlatMemory(const std::vector<std::uint8_t>& code, std::vector<std::uint8_t> data, std::uint64_t data_size)
      : code_(code), data_(std::move(data)) {
    data_.resize(page_ceil(data_size), 0);
  }

  bool load(Addr a, std::uint64_t& out) const {
    if (a >= layout::kCodeBase && a + 8 <= layout::kCodeBase + code_span() && a + 8 > a) {
      out = read(code_.data() + (a - layout::kCodeBase));
      return true;
    }
    if (in_data(a)) {
      out = read(data_.data() + (a - layout::kDataBase));
      return true;
    }
    return false;
  }

  bool store(Addr a, std::uint64_t v) {
    if (!in_data(a)) return false;
    std::uint8_t* p = data_.data() + (a - layout::kDataBase);
    for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
    return true;
  }

  std::vector<std::uint8_t> take_data() { return std::move(data_); }

 private:
  // The code mapping is page-granular, so loads may read the zero tail.
  std::uint64_t code_span() const { return page_ceil(code_.size() == 0 ? 1 : code_.size()); }
  bool in_data(Addr a) const {
    return a >= layout::kDataBase && a + 8 > a && a + 8 <= layout::kDataBase + data_.size();
  }
  std::uint64_t read(const std::uint8_t* p) const {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }

  std::vector<std::uint8_t> code_;
  std::vector<std::uint8_t> data_;
};

}  // namespace

ReferenceResult interpret_reference(const GuestProgram& program, const ReferenceInputs& inputs) {
  for (const Instruction& in : program.instructions) {
    if (is_enclave_illegal(in.op)) {
      throw SimError("reference interpreter cannot run " + std::string(opcode_name(in.op)));
    }
  }
  std::vector<std::uint8_t> image = program.image(layout::kCodeBase);
  std::vector<std::uint8_t> padded = image;
  padded.resize(page_ceil(image.empty() ? 1 : image.size()), 0);
  FlatMemory mem(padded, inputs.data, inputs.data_size);

  ReferenceResult res;
  GuestContext& c = res.ctx;
  c.regs = inputs.regs;
  c.pc = layout::kCodeBase + program.entry * kInsnSize;

  auto fault = [&](int sig) { res.fault = sig; };
  const std::size_t n = program.instructions.size();
  // An empty program halts immediately.
  if (n == 0) {
    res.data = mem.take_data();
    return res;
  }

  while (true) {
    if (res.retired >= inputs.max_steps) {
      res.step_limit = true;
      break;
    }
    if (c.pc < layout::kCodeBase || (c.pc - layout::kCodeBase) % kInsnSize != 0 ||
        (c.pc - layout::kCodeBase) / kInsnSize >= n) {
      // Zero padding past the program decodes to nothing valid.
      fault(c.pc >= layout::kCodeBase && c.pc < layout::kCodeBase + padded.size() ? SIGILL : SIGSEGV);
      break;
    }
    // Relocated form of the instruction at pc.
    Instruction in = program.instructions[(c.pc - layout::kCodeBase) / kInsnSize];
    for (auto& o : in.operands) {
      if (o.label) o.imm += static_cast<std::int64_t>(layout::kCodeBase);
    }
    auto val = [&](const Operand& o) -> std::uint64_t {
      return o.kind == OperandKind::kReg ? c.regs[o.reg] : static_cast<std::uint64_t>(o.imm);
    };
    Addr next = c.pc + kInsnSize;
    bool halted = false;
    switch (in.op) {
      case Opcode::kMov:
        c.regs[in.operands[0].reg] = val(in.operands[1]);
        break;
      case Opcode::kAdd:
      case Opcode::kSub:
      case Opcode::kMul:
      case Opcode::kDiv: {
        std::uint64_t a, b;
        if (in.operand_count == 2) {
          a = c.regs[in.operands[0].reg];
          b = val(in.operands[1]);
        } else {
          a = val(in.operands[1]);
          b = val(in.operands[2]);
        }
        std::uint64_t r;
        if (in.op == Opcode::kAdd) {
          r = a + b;
        } else if (in.op == Opcode::kSub) {
          r = a - b;
        } else if (in.op == Opcode::kMul) {
          r = a * b;
        } else {
          if (b == 0) {
            fault(SIGFPE);
            break;
          }
          r = a / b;
        }
        c.regs[in.operands[0].reg] = r;
        c.zero = r == 0;
        break;
      }
      case Opcode::kLoad: {
        Addr a = c.regs[in.operands[1].reg] + static_cast<std::uint64_t>(in.operands[1].imm);
        std::uint64_t v;
        if (!mem.load(a, v)) {
          fault(SIGSEGV);
          break;
        }
        c.regs[in.operands[0].reg] = v;
        break;
      }
      case Opcode::kStore: {
        Addr a = c.regs[in.operands[0].reg] + static_cast<std::uint64_t>(in.operands[0].imm);
        if (!mem.store(a, val(in.operands[1]))) fault(SIGSEGV);
        break;
      }
      case Opcode::kJmp:
        next = val(in.operands[0]);
        break;
      case Opcode::kJz:
        if (c.zero) next = val(in.operands[0]);
        break;
      case Opcode::kJnz:
        if (!c.zero) next = val(in.operands[0]);
        break;
      case Opcode::kHlt:
        halted = true;
        break;
      case Opcode::kSyscall:
      case Opcode::kCpuid:
      case Opcode::kRdtsc:
        break;
    }
    if (res.fault) break;
    ++res.retired;
    if (halted) break;
    c.pc = next;
  }
  res.data = mem.take_data();
  return res;
}

}  // namespace enclsim
