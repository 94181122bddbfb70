#include <gtest/gtest.h>

#include "enclsim/syscall_mediator.h"
#include "test_util.h"

using namespace enclsim;

namespace {

RunOutcome run_named(const std::string& name, const std::string& adversary = "") {
  WorkloadManifest m = load_manifest(testutil::workload(name + ".yaml"));
  RunOptions o;
  o.trace = false;
  if (!adversary.empty()) o.adversary = AdversarySchedule::parse(adversary);
  return run_workload(m, o);
}

}  // namespace

TEST(Mediator, EveryCallIsDispatched) {
  for (const char* w : {"hello", "file_io", "writev", "gettime", "mmap_file", "tls", "brk"}) {
    RunOutcome r = run_named(w);
    EXPECT_EQ(r.verdict, Verdict::kPass) << w;
    EXPECT_GT(r.stats.syscalls_retired, 0u) << w;
    EXPECT_EQ(r.stats.syscalls_retired, r.stats.mediator_dispatches) << w;
    EXPECT_EQ(r.stats.syscalls_retired, r.stats.syscalls_delegate + r.stats.syscalls_emulate +
                                            r.stats.syscalls_partial + r.stats.syscalls_unsupported)
        << w;
  }
}

TEST(Mediator, LargeBuffersAreChunked) {
  RunOutcome r = run_named("chunked_io");
  EXPECT_EQ(r.verdict, Verdict::kPass);
  EXPECT_GE(r.stats.ocalls_delegate, 2u);
  EXPECT_EQ(r.stats.bytes_copied_in, 100000u);  // staged for the host, by argument direction
}

TEST(Mediator, OverlongReadResultIsIago) {
  RunOutcome r = run_named("file_io", "when after_ocall read do lie_result value 100000 once\n");
  EXPECT_EQ(r.stats.iago_violations, 1u);
  ASSERT_EQ(r.violations.size(), 0u);  // Iago results are rejected, not enclave-rule violations
  // The read failed, so nothing was echoed.
  EXPECT_NE(r.result.main_ctx.regs[0], 100000u);
}

TEST(Mediator, LyingWriteCountIsIago) {
  RunOutcome r = run_named("hello", "when after_ocall write do lie_result delta 7\n");
  EXPECT_GE(r.stats.iago_violations, 1u);
}

TEST(Mediator, BadGuestPointerNeverReachesTheHost) {
  auto vm = testutil::make_vm(R"(
        MOV r0, 1
        MOV r1, 1
        MOV r2, 0x10
        MOV r3, 5
        SYSCALL
        HLT)");
  RunResult r = vm->run();
  EXPECT_EQ(static_cast<std::int64_t>(r.main_ctx.regs[0]), err::kEFAULT);
  EXPECT_EQ(vm->stats().ocalls_delegate, 0u);
}

TEST(Mediator, UnknownSyscallIsEnosys) {
  auto vm = testutil::make_vm("MOV r0, 333\nSYSCALL\nHLT");
  RunResult r = vm->run();
  EXPECT_EQ(static_cast<std::int64_t>(r.main_ctx.regs[0]), err::kENOSYS);
  EXPECT_EQ(vm->stats().syscalls_unsupported, 1u);
  EXPECT_EQ(vm->stats().mediator_dispatches, 1u);
}

TEST(Mediator, CpuidAndRdtscAreEmulated) {
  auto vm = testutil::make_vm("CPUID\nMOV r4, r1\nRDTSC\nMOV r5, r0\nRDTSC\nHLT");
  RunResult r = vm->run();
  EXPECT_EQ(r.main_ctx.regs[4], 0x756e6547u);
  EXPECT_GT(r.main_ctx.regs[0], r.main_ctx.regs[5]);
  EXPECT_EQ(vm->stats().ocalls_delegate, 0u);
}
