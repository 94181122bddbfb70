#include <gtest/gtest.h>

#include "enclsim/lock_manager.h"
#include "test_util.h"

using namespace enclsim;

namespace {

std::int64_t futex_result(Addr uaddr, std::int64_t op, std::uint64_t val) {
  const std::string src = "MOV r0, 202\nMOV r1, " + std::to_string(uaddr) + "\nMOV r2, " + std::to_string(op) +
                          "\nMOV r3, " + std::to_string(val) + "\nSYSCALL\nHLT";
  auto vm = testutil::make_vm(src);
  return static_cast<std::int64_t>(vm->run().main_ctx.regs[0]);
}

WorkloadManifest mutex_manifest(std::uint64_t threads) {
  WorkloadManifest m = load_manifest(testutil::workload("mutex.yaml"));
  m.regs[1] = threads;
  m.expect.regs.clear();
  return m;
}

}  // namespace

TEST(Futex, WaitOnChangedValueIsEagain) { EXPECT_EQ(futex_result(0x600000, futex_op::kWait, 5), err::kEAGAIN); }

TEST(Futex, BadAddressIsEfault) {
  EXPECT_EQ(futex_result(0x10, futex_op::kWait, 0), err::kEFAULT);
  EXPECT_EQ(futex_result(0x600003, futex_op::kWait, 0), err::kEINVAL);  // misaligned
}

TEST(Futex, WakeWithoutWaiters) { EXPECT_EQ(futex_result(0x600000, futex_op::kWake, 10), 0); }

TEST(Futex, UnlockNotOwnedIsEperm) { EXPECT_EQ(futex_result(0x600000, futex_op::kUnlockPi, 0), err::kEPERM); }

TEST(Futex, NeverLeavesTheEnclave) {
  auto vm = testutil::make_vm("MOV r0, 202\nMOV r1, 0x600000\nMOV r2, 1\nMOV r3, 1\nSYSCALL\nHLT");
  vm->run();
  EXPECT_EQ(vm->stats().futex_ocalls, 0u);
  EXPECT_EQ(vm->stats().syscalls_retired, vm->stats().mediator_dispatches);
}

TEST(Mutex, CounterIsExactAcrossSeeds) {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    RunOptions o;
    o.trace = false;
    o.seed = seed;
    RunOutcome r = run_workload(mutex_manifest(4), o);
    ASSERT_EQ(r.result.main_ctx.regs[0], 20u) << "seed " << seed;
    ASSERT_EQ(r.stats.futex_ocalls, 0u);
  }
}

// Same program with the lock calls removed: some schedule must lose an update,
// otherwise the mutex test above proves nothing.
TEST(Mutex, UnlockedControlLosesUpdates) {
  std::string src = testutil::str(testutil::bytes(read_text_file(testutil::workload("mutex.gasm"))));
  for (const char* op : {"MOV r2, 6            ; FUTEX_LOCK_PI", "MOV r2, 7            ; FUTEX_UNLOCK_PI"}) {
    const std::string from = std::string(op) + "\n        SYSCALL";
    const auto at = src.find(from);
    ASSERT_NE(at, std::string::npos);
    src.replace(at, from.size(), "MOV r2, 0\n        MOV r0, 0");
  }
  WorkloadManifest m = mutex_manifest(4);
  m.program = assemble(src);
  bool lost = false;
  for (std::uint64_t seed = 1; seed <= 40 && !lost; ++seed) {
    RunOptions o;
    o.trace = false;
    o.seed = seed;
    lost = run_workload(m, o).result.main_ctx.regs[0] < 20;
  }
  EXPECT_TRUE(lost);
}

TEST(TwoCopyDemo, NaiveDesignHasAWitness) {
  InconsistencyReport r = naive_two_copy_demo(1);
  EXPECT_TRUE(r.found);
  EXPECT_LE(r.interleavings_tried, 1000u);
  EXPECT_FALSE(r.schedule.empty());
  EXPECT_TRUE(r.kind == "mutual-exclusion" || r.kind == "lost-wakeup") << r.kind;
}

TEST(TwoCopyDemo, InEnclaveLocksHaveNone) {
  NaiveDemoOptions o;
  o.real_lock_manager = true;
  o.max_interleavings = 300;
  InconsistencyReport r = naive_two_copy_demo(1, o);
  EXPECT_FALSE(r.found) << r.kind;
  EXPECT_EQ(r.interleavings_tried, 300u);
}
