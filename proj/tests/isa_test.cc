#include <gtest/gtest.h>

#include "enclsim/assembler.h"
#include "enclsim/isa.h"
#include "enclsim/reference_interpreter.h"
#include "test_util.h"

using namespace enclsim;

TEST(Isa, EncodeDecodeRoundTrip) {
  const GuestProgram p = assemble(R"(
    MOV r1, 0x1234
    ADD r2, r1, -5
    SUB r3, 7
    LOAD r4, [r6+16]
    STORE [r6-8], r4
    STORE [r6], 99
    JNZ r5
    SYSCALL
    HLT)");
  for (const Instruction& in : p.instructions) {
    const InsnBytes b = encode(in);
    auto back = decode(b);
    ASSERT_TRUE(back.has_value()) << to_string(in);
    EXPECT_EQ(*back, in) << to_string(in);
  }
}

TEST(Isa, DecodeRejectsGarbage) {
  InsnBytes b{};
  EXPECT_FALSE(decode(b).has_value());
  b[0] = 0xff;
  EXPECT_FALSE(decode(b).has_value());
  b[0] = static_cast<std::uint8_t>(Opcode::kMov);  // MOV with no operands
  EXPECT_FALSE(decode(b).has_value());
}

TEST(Assembler, LabelsCommentsAndImmediates) {
  const GuestProgram p = assemble("start: MOV r0, 0x10 ; hex\n  JMP start\n");
  ASSERT_EQ(p.instructions.size(), 2u);
  EXPECT_EQ(p.instructions[0].operands[1].imm, 16);
  EXPECT_EQ(p.label_address("start", layout::kCodeBase), layout::kCodeBase);
  EXPECT_TRUE(p.instructions[1].operands[0].label);
}

TEST(Assembler, FibWorkloadShape) {
  const GuestProgram p = assemble_file(testutil::workload("fib.gasm"));
  EXPECT_EQ(p.instructions.size(), 12u);
  EXPECT_TRUE(p.labels.count("loop"));
  EXPECT_TRUE(p.labels.count("done"));
}

TEST(Assembler, Errors) {
  EXPECT_THROW(assemble("FROB r1, 2"), ParseError);
  EXPECT_THROW(assemble("MOV r9, 1"), ParseError);
  EXPECT_THROW(assemble("JMP nowhere"), UndefinedLabel);
  try {
    assemble("MOV r0, 1\nMOV r0, 1\nBAD");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
}

TEST(Reference, FibMatchesClosedForm) {
  const GuestProgram p = assemble_file(testutil::workload("fib.gasm"));
  ReferenceResult r = interpret_reference(p, {});
  // Iterative oracle, independent of the guest code.
  std::uint64_t a = 0, b = 1;
  for (int i = 0; i < 10; ++i) {
    const std::uint64_t t = a + b;
    a = b;
    b = t;
  }
  EXPECT_EQ(r.ctx.regs[0], a);
  EXPECT_EQ(r.ctx.regs[0], 55u);
  EXPECT_FALSE(r.fault);
}

TEST(Reference, RefusesIllegalInstructions) {
  EXPECT_THROW(interpret_reference(assemble("SYSCALL"), {}), SimError);
  EXPECT_THROW(interpret_reference(assemble("RDTSC"), {}), SimError);
}

TEST(Reference, DivideByZeroFaults) {
  ReferenceResult r = interpret_reference(assemble("MOV r1, 3\nDIV r2, r1, 0\nHLT"), {});
  ASSERT_TRUE(r.fault);
  EXPECT_EQ(*r.fault, 8);
  EXPECT_EQ(r.ctx.pc, layout::kCodeBase + kInsnSize);
}
