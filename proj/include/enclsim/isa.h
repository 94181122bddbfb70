#ifndef ENCLSIM_ISA_H_
#define ENCLSIM_ISA_H_

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "enclsim/types.h"

namespace enclsim {

// Guest ISA.
//
//   MOV  rd, src            rd = src
//   ADD  rd, a [, b]        rd = rd + a   or   rd = a + b   (also SUB, MUL, DIV)
//   LOAD rd, [rb+disp]      rd = mem64[rb + disp]
//   STORE [rb+disp], src    mem64[rb + disp] = src
//   JMP/JZ/JNZ target       target is a label/immediate or a register
//   SYSCALL CPUID RDTSC HLT
//
// Arithmetic sets the zero flag; MOV/LOAD/STORE leave it alone. DIV is
// unsigned and faults (SIGFPE) on a zero divisor. Every instruction encodes
// to a fixed 16-byte slot, so pc advances by kInsnSize.
enum class Opcode : std::uint8_t {
  kMov = 1,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kLoad,
  kStore,
  kJmp,
  kJz,
  kJnz,
  kSyscall,
  kCpuid,
  kRdtsc,
  kHlt,
};

inline constexpr std::uint64_t kInsnSize = 16;
inline constexpr int kNumRegs = 8;

const char* opcode_name(Opcode op);
std::optional<Opcode> opcode_from_name(std::string_view name);

// SYSCALL/CPUID/RDTSC may never execute raw inside the enclave.
constexpr bool is_enclave_illegal(Opcode op) {
  return op == Opcode::kSyscall || op == Opcode::kCpuid || op == Opcode::kRdtsc;
}
constexpr bool is_branch(Opcode op) {
  return op == Opcode::kJmp || op == Opcode::kJz || op == Opcode::kJnz;
}

enum class OperandKind : std::uint8_t { kNone = 0, kReg, kImm, kMem };

struct Operand {
  OperandKind kind = OperandKind::kNone;
  std::uint8_t reg = 0;
  // Immediate value, or displacement for kMem.
  std::int64_t imm = 0;
  // Immediate is a program-relative label offset, relocated at load time.
  bool label = false;

  static Operand none() { return {}; }
  static Operand r(int reg) { return {OperandKind::kReg, static_cast<std::uint8_t>(reg), 0, false}; }
  static Operand i(std::int64_t v) { return {OperandKind::kImm, 0, v, false}; }
  static Operand m(int reg, std::int64_t disp) {
    return {OperandKind::kMem, static_cast<std::uint8_t>(reg), disp, false};
  }
  friend bool operator==(const Operand&, const Operand&) = default;
};

struct Instruction {
  Opcode op = Opcode::kHlt;
  std::array<Operand, 3> operands{};
  int operand_count = 0;

  friend bool operator==(const Instruction&, const Instruction&) = default;
};

std::string to_string(const Instruction& insn);

using InsnBytes = std::array<std::uint8_t, kInsnSize>;

// Relocated label immediates must already be absolute here.
InsnBytes encode(const Instruction& insn);
// nullopt for bytes that do not form a valid instruction (guest SIGILL).
std::optional<Instruction> decode(std::span<const std::uint8_t, kInsnSize> bytes);

struct GuestContext {
  std::array<std::uint64_t, kNumRegs> regs{};
  Addr pc = 0;
  bool zero = false;
  Addr tls_base_guest = 0;

  friend bool operator==(const GuestContext&, const GuestContext&) = default;
};

std::string to_string(const GuestContext& ctx);

struct GuestProgram {
  std::vector<Instruction> instructions;
  // Label name -> instruction index.
  std::map<std::string, std::size_t> labels;
  std::size_t entry = 0;

  std::uint64_t byte_size() const { return instructions.size() * kInsnSize; }
  // Encodes the program as loaded at `origin`, relocating label immediates.
  std::vector<std::uint8_t> image(Addr origin) const;
  Addr label_address(const std::string& name, Addr origin) const;
};

// CPUID result record exposed to guests (r0..r3).
inline constexpr std::array<std::uint64_t, 4> kCpuidRecord = {
    0x0000000d, 0x756e6547, 0x6c65746e, 0x49656e69};

}  // namespace enclsim

#endif  // ENCLSIM_ISA_H_
