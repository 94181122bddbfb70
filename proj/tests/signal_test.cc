#include <gtest/gtest.h>

#include "enclsim/signal_subsystem.h"
#include "test_util.h"

using namespace enclsim;

TEST(Signals, RegistrationOutcomes) {
  auto vm = testutil::make_vm("HLT");
  ThreadRecord& t = vm->main_thread();
  int ok = 0, unsupported = 0, invalid = 0;
  for (int s = 1; s <= 32; ++s) {
    switch (vm->signals().register_handler(t, s, layout::kCodeBase, 0, 0)) {
      case RegisterStatus::kOk: ++ok; break;
      case RegisterStatus::kUnsupported: ++unsupported; break;
      case RegisterStatus::kInvalid: ++invalid; break;
    }
  }
  EXPECT_EQ(ok, 29);
  EXPECT_EQ(unsupported, 1);  // SIGPROF
  EXPECT_EQ(invalid, 2);      // SIGKILL, SIGSTOP
  EXPECT_EQ(vm->signals().register_handler(t, 27, layout::kCodeBase, 0, 0), RegisterStatus::kUnsupported);
  EXPECT_EQ(vm->signals().register_handler(t, 0, layout::kCodeBase, 0, 0), RegisterStatus::kInvalid);
  EXPECT_EQ(vm->signals().register_handler(t, 33, layout::kCodeBase, 0, 0), RegisterStatus::kInvalid);
}

TEST(Signals, GuestRegistrationMatches) {
  RunOptions o;
  o.trace = false;
  RunOutcome r = run_workload(load_manifest(testutil::workload("sigreg.yaml")), o);
  EXPECT_EQ(r.result.main_ctx.regs[4], 29u);
  EXPECT_EQ(r.result.main_ctx.regs[5], 1u);
  EXPECT_EQ(r.result.main_ctx.regs[6], 2u);
}

TEST(Signals, UnhandledFaultTerminates) {
  auto vm = testutil::make_vm("MOV r1, 1\nDIV r1, r1, 0\nHLT");
  RunResult r = vm->run();
  ASSERT_TRUE(r.term_signal);
  EXPECT_EQ(*r.term_signal, 8);
  EXPECT_EQ(r.exit_status, 136);
  EXPECT_EQ(r.main_ctx.pc, layout::kCodeBase + kInsnSize);
}

TEST(Signals, IgnoredByDefault) {
  EXPECT_TRUE(SignalSubsystem::default_ignored(17));  // SIGCHLD
  EXPECT_FALSE(SignalSubsystem::default_ignored(8));
}

TEST(Signals, NestingBoundedByNssa) {
  RunOptions o;
  o.trace = false;
  RunOutcome r = run_workload(load_manifest(testutil::workload("signest.yaml")), o);
  EXPECT_EQ(r.verdict, Verdict::kPass);
  EXPECT_EQ(r.stats.signals_delivered, 4u);
  EXPECT_EQ(r.stats.signals_queued, 1u);
}

TEST(Signals, HostSignalTakesDefaultAction) {
  auto vm = testutil::make_vm("MOV r1, 50\nloop: SUB r1, r1, 1\nJNZ loop\nHLT");
  vm->host().raise_async_signal(vm->main_thread().tid, 10, 3, true);
  RunResult r = vm->run();
  ASSERT_TRUE(r.term_signal.has_value());
  EXPECT_EQ(*r.term_signal, 10);
  EXPECT_EQ(vm->stats().violations, 0u);
}

TEST(Signals, OutOfRangeSignalIsRefused) {
  auto vm = testutil::make_vm("MOV r1, 50\nloop: SUB r1, r1, 1\nJNZ loop\nHLT");
  vm->host().raise_async_signal(vm->main_thread().tid, 99, 3, true);
  RunResult r = vm->run();
  EXPECT_FALSE(r.term_signal.has_value());
  EXPECT_EQ(vm->stats().signals_dropped, 1u);
  EXPECT_EQ(vm->violations().count(ViolationCode::kR5Entry), 1u);
}
