#include "enclsim/isa.h"

#include <cstring>
#include <sstream>

namespace enclsim {

namespace {

constexpr std::array<const char*, 15> kNames = {
    "?",     "MOV", "ADD", "SUB", "MUL",     "DIV",   "LOAD",  "STORE",
    "JMP",   "JZ",  "JNZ", "SYSCALL", "CPUID", "RDTSC", "HLT"};

void put64(std::uint8_t* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
std::uint64_t get64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

// Operand shape each opcode accepts; checked by decode so that arbitrary
// bytes either form a well-typed instruction or fault.
bool operands_valid(const Instruction& in) {
  auto kind = [&](int i) { return in.operands[i].kind; };
  auto value = [&](int i) { return kind(i) == OperandKind::kReg || kind(i) == OperandKind::kImm; };
  switch (in.op) {
    case Opcode::kMov:
      return in.operand_count == 2 && kind(0) == OperandKind::kReg && value(1);
    case Opcode::kAdd:
    case Opcode::kSub:
    case Opcode::kMul:
    case Opcode::kDiv:
      if (kind(0) != OperandKind::kReg) return false;
      if (in.operand_count == 2) return value(1);
      if (in.operand_count == 3) {
        return value(1) && value(2) &&
               !(kind(1) == OperandKind::kImm && kind(2) == OperandKind::kImm);
      }
      return false;
    case Opcode::kLoad:
      return in.operand_count == 2 && kind(0) == OperandKind::kReg && kind(1) == OperandKind::kMem;
    case Opcode::kStore:
      return in.operand_count == 2 && kind(0) == OperandKind::kMem && value(1);
    case Opcode::kJmp:
    case Opcode::kJz:
    case Opcode::kJnz:
      return in.operand_count == 1 && value(0);
    case Opcode::kSyscall:
    case Opcode::kCpuid:
    case Opcode::kRdtsc:
    case Opcode::kHlt:
      return in.operand_count == 0;
  }
  return false;
}

}  // namespace

const char* opcode_name(Opcode op) {
  auto i = static_cast<std::size_t>(op);
  return i < kNames.size() ? kNames[i] : "?";
}

std::optional<Opcode> opcode_from_name(std::string_view name) {
  for (std::size_t i = 1; i < kNames.size(); ++i) {
    if (name == kNames[i]) return static_cast<Opcode>(i);
  }
  return std::nullopt;
}

std::string to_string(const Instruction& insn) {
  std::ostringstream os;
  os << opcode_name(insn.op);
  for (int i = 0; i < insn.operand_count; ++i) {
    const Operand& o = insn.operands[i];
    os << (i == 0 ? " " : ", ");
    switch (o.kind) {
      case OperandKind::kReg:
        os << 'r' << int(o.reg);
        break;
      case OperandKind::kImm:
        os << o.imm;
        break;
      case OperandKind::kMem:
        os << "[r" << int(o.reg) << (o.imm < 0 ? "-" : "+")
           << (o.imm < 0 ? -o.imm : o.imm) << ']';
        break;
      case OperandKind::kNone:
        break;
    }
  }
  return os.str();
}

InsnBytes encode(const Instruction& insn) {
  InsnBytes b{};
  b[0] = static_cast<std::uint8_t>(insn.op);
  for (int i = 0; i < insn.operand_count; ++i) {
    const Operand& o = insn.operands[i];
    b[1 + i] = static_cast<std::uint8_t>((static_cast<int>(o.kind) << 4) | (o.reg & 0x7));
    if (o.kind == OperandKind::kMem) {
      auto disp = static_cast<std::int32_t>(o.imm);
      std::memcpy(&b[4], &disp, 4);
    } else if (o.kind == OperandKind::kImm) {
      put64(&b[8], static_cast<std::uint64_t>(o.imm));
    }
  }
  return b;
}

std::optional<Instruction> decode(std::span<const std::uint8_t, kInsnSize> bytes) {
  if (bytes[0] < static_cast<std::uint8_t>(Opcode::kMov) ||
      bytes[0] > static_cast<std::uint8_t>(Opcode::kHlt)) {
    return std::nullopt;
  }
  Instruction in;
  in.op = static_cast<Opcode>(bytes[0]);
  int count = 0;
  int imms = 0;
  int mems = 0;
  for (int i = 0; i < 3; ++i) {
    std::uint8_t d = bytes[1 + i];
    auto kind = static_cast<OperandKind>(d >> 4);
    if ((d >> 4) > 3 || (d & 0x8) != 0) return std::nullopt;
    if (kind == OperandKind::kNone) {
      if (d != 0) return std::nullopt;
      // Operands are packed; a gap means garbage.
      for (int j = i + 1; j < 3; ++j) {
        if (bytes[1 + j] != 0) return std::nullopt;
      }
      break;
    }
    Operand& o = in.operands[i];
    o.kind = kind;
    o.reg = d & 0x7;
    if (kind == OperandKind::kImm) {
      o.reg = 0;
      if ((d & 0x7) != 0) return std::nullopt;
      o.imm = static_cast<std::int64_t>(get64(&bytes[8]));
      ++imms;
    } else if (kind == OperandKind::kMem) {
      std::int32_t disp;
      std::memcpy(&disp, &bytes[4], 4);
      o.imm = disp;
      ++mems;
    }
    ++count;
  }
  if (imms > 1 || mems > 1) return std::nullopt;
  in.operand_count = count;
  if (!operands_valid(in)) return std::nullopt;
  // Unused displacement/immediate bytes must be zero so encode(decode(b)) == b.
  if (mems == 0) {
    for (int i = 4; i < 8; ++i) {
      if (bytes[i] != 0) return std::nullopt;
    }
  }
  if (imms == 0) {
    for (int i = 8; i < 16; ++i) {
      if (bytes[i] != 0) return std::nullopt;
    }
  }
  return in;
}

std::string to_string(const GuestContext& ctx) {
  std::ostringstream os;
  os << std::hex;
  for (int i = 0; i < kNumRegs; ++i) os << 'r' << i << "=0x" << ctx.regs[i] << ' ';
  os << "pc=0x" << ctx.pc << " zf=" << ctx.zero << " fs=0x" << ctx.tls_base_guest;
  return os.str();
}

std::vector<std::uint8_t> GuestProgram::image(Addr origin) const {
  std::vector<std::uint8_t> out;
  out.reserve(byte_size());
  for (Instruction insn : instructions) {
    for (int i = 0; i < insn.operand_count; ++i) {
      Operand& o = insn.operands[i];
      if (o.label) {
        o.imm += static_cast<std::int64_t>(origin);
        o.label = false;
      }
    }
    InsnBytes b = encode(insn);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

Addr GuestProgram::label_address(const std::string& name, Addr origin) const {
  auto it = labels.find(name);
  if (it == labels.end()) throw SimError("no such label: " + name);
  return origin + it->second * kInsnSize;
}

std::string perms_string(Perms p) {
  std::string s = "---";
  if (p & kPermRead) s[0] = 'r';
  if (p & kPermWrite) s[1] = 'w';
  if (p & kPermExec) s[2] = 'x';
  return s;
}

const char* actor_name(Actor a) {
  switch (a) {
    case Actor::kHostOs:
      return "host_os";
    case Actor::kEnclave:
      return "enclave";
    case Actor::kGuest:
      return "guest";
  }
  return "?";
}

}  // namespace enclsim
