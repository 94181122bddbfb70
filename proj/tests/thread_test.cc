#include <gtest/gtest.h>

#include "enclsim/thread_manager.h"
#include "test_util.h"

using namespace enclsim;

namespace {

constexpr const char* kCloneOnce = R"(
        MOV r0, 56
        MOV r1, 0x100
        MOV r2, 0
        MOV r3, 0
        MOV r4, 0
        MOV r5, 0
        SYSCALL
        ADD r0, r0, 0
        JZ child
        MOV r4, r0
        HLT
child:  MOV r0, 60
        MOV r1, 0
        SYSCALL)";

WorkloadManifest threads_manifest(std::uint64_t n) {
  WorkloadManifest m = load_manifest(testutil::workload("threads.yaml"));
  m.regs[1] = n;
  m.expect.regs.clear();
  return m;
}

}  // namespace

TEST(Threads, CloneReturnsChildTid) {
  auto vm = testutil::make_vm(kCloneOnce);
  RunResult r = vm->run();
  EXPECT_EQ(r.main_ctx.regs[4], 1001u);
  EXPECT_EQ(vm->stats().clones, 1u);
}

TEST(Threads, FullPoolTimesOutWithEagain) {
  VmConfig c;
  c.enclave.tcs_count = 1;
  c.pool_wait_bound = 25;
  auto vm = testutil::make_vm(kCloneOnce, c);
  RunResult r = vm->run();
  EXPECT_EQ(static_cast<std::int64_t>(r.main_ctx.regs[4]), err::kEAGAIN);
  EXPECT_EQ(vm->stats().pool_wait_steps, 25u);
  EXPECT_EQ(vm->stats().clones, 0u);
}

TEST(Threads, ChildrenFindThePrimaryTls) {
  WorkloadManifest m = threads_manifest(3);
  Vm vm(m.vm);
  vm.load(m.program, m.data);
  vm.main_thread().ctx.regs[1] = 3;
  bool checked = false;
  while (vm.step_once()) {
    EXPECT_EQ(vm.threads().primary_count(), 1);
    for (auto& [tid, t] : vm.thread_table()) {
      if (tid == vm.main_thread().tid || t.tls_segment == 0 || t.state == ThreadState::kExited) continue;
      auto [addr, hops] = vm.threads().resolve_primary_tls(t);
      EXPECT_EQ(addr, vm.main_thread().tls_segment);
      EXPECT_GE(hops, 1);
      EXPECT_NE(vm.threads().guest_fs(t), t.tls_views.runtime_base);
      checked = true;
    }
  }
  EXPECT_TRUE(checked);
  auto [addr, hops] = vm.threads().resolve_primary_tls(vm.main_thread());
  EXPECT_EQ(hops, 0);
}

TEST(Threads, TlsSwitchOrdering) {
  auto vm = testutil::make_vm("HLT");
  ThreadRecord& t = vm->main_thread();
  const TlsCounters before = vm->threads().tls_counters();
  vm->threads().tls_switch(t, TlsView::kRuntime);
  vm->threads().tls_switch(t, TlsView::kRuntime);
  vm->threads().tls_switch(t, TlsView::kGuest);
  EXPECT_THROW(vm->threads().tls_switch(t, TlsView::kPlatform), SimError);
  vm->threads().tls_switch(t, TlsView::kRuntime);
  vm->threads().tls_switch(t, TlsView::kPlatform);
  const TlsCounters& c = vm->threads().tls_counters();
  EXPECT_GE(c.noops, before.noops + 1);
  EXPECT_GE(c.exits, before.exits + 1);
  EXPECT_EQ(t.active_fs, t.tls_views.platform_base);
}

TEST(Threads, WorkersSumAndJoin) {
  for (std::uint64_t n : {1, 3, 6}) {
    RunOptions o;
    o.trace = false;
    RunOutcome r = run_workload(threads_manifest(n), o);
    EXPECT_EQ(r.result.exit_status, 0);
    EXPECT_EQ(r.stats.clones, n);
    std::uint64_t want = 0;
    for (std::uint64_t i = 1; i <= n; ++i) want += 10 * i;  // worker i contributes 10*i
    EXPECT_EQ(r.result.main_ctx.regs[0], want) << n;
  }
}
