#include <gtest/gtest.h>

#include "enclsim/dbt.h"
#include "enclsim/lock_manager.h"
#include "test_util.h"

using namespace enclsim;

TEST(Dbt, BlocksEndAtBranchesAndStubs) {
  auto vm = testutil::make_vm(R"(
        MOV r1, 1
        ADD r1, r1, 2
        CPUID
        MOV r2, 3
        JMP end
end:    RDTSC
        SYSCALL
        HLT)");
  TranslatedBlock a = vm->dbt().translate_block(layout::kCodeBase);
  EXPECT_EQ(a.source.size(), 3u);
  EXPECT_EQ(a.terminator, Terminator::kStub);
  EXPECT_EQ(a.translated.back().stub, StubKind::kCpuid);
  EXPECT_FALSE(a.raw_illegal());

  TranslatedBlock b = vm->dbt().translate_block(a.end_pc());
  EXPECT_EQ(b.terminator, Terminator::kBranch);
  EXPECT_EQ(b.source.size(), 2u);

  TranslatedBlock c = vm->dbt().translate_block(b.end_pc());
  EXPECT_EQ(c.translated.back().stub, StubKind::kRdtsc);
  TranslatedBlock d = vm->dbt().translate_block(c.end_pc());
  EXPECT_EQ(d.translated.back().stub, StubKind::kSyscall);
  TranslatedBlock e = vm->dbt().translate_block(d.end_pc());
  EXPECT_EQ(e.terminator, Terminator::kHalt);
}

TEST(Dbt, UnmappedAndInvalidFetch) {
  auto vm = testutil::make_vm("HLT");
  EXPECT_EQ(vm->dbt().translate_block(0x10).fault, FetchFault::kUnmapped);
  // Data segment is not executable.
  EXPECT_EQ(vm->dbt().translate_block(layout::kDataBase).fault, FetchFault::kUnmapped);
}

TEST(Dbt, FutexCallsAreRewritten) {
  auto vm = testutil::make_vm(R"(
        MOV r0, 202
        MOV r1, 0x600000
        MOV r2, 6
        SYSCALL
        MOV r0, 39
        SYSCALL
        HLT)");
  TranslatedBlock a = vm->dbt().translate_block(layout::kCodeBase);
  EXPECT_EQ(a.translated.back().stub, StubKind::kFutex);
  TranslatedBlock b = vm->dbt().translate_block(a.end_pc());
  EXPECT_EQ(b.translated.back().stub, StubKind::kSyscall);
  // Rewriting is idempotent.
  EXPECT_EQ(LockManager::rewrite_sync_calls(a), 0);
}

TEST(Dbt, CacheHitsOnLoops) {
  auto vm = testutil::make_vm(R"(
        MOV r1, 10
loop:   SUB r1, r1, 1
        JNZ loop
        HLT)");
  vm->run();
  // The entry block runs through the first JNZ, so the block at `loop`
  // is entered 9 times: one miss then 8 hits. Plus one miss each for
  // the entry and the HLT block.
  EXPECT_EQ(vm->stats().cache_misses, 3u);
  EXPECT_EQ(vm->stats().cache_hits, 8u);
  EXPECT_EQ(vm->dbt().illegal_executed(), 0u);
}

TEST(CodeCache, InvalidateOverlap) {
  CodeCache c;
  TranslatedBlock b;
  b.start_pc = 0x1000;
  b.source.resize(2);
  c.insert(b);
  b.start_pc = 0x2000;
  c.insert(b);
  EXPECT_EQ(c.invalidate(0x1010, 0x1011), 1u);
  EXPECT_EQ(c.size(), 1u);
  EXPECT_EQ(c.lookup(0x1000), nullptr);
  EXPECT_NE(c.lookup(0x2000), nullptr);
  EXPECT_EQ(c.invalidate(0x3000, 0x4000), 0u);
}

TEST(Dbt, SelfModifyingCodeRetranslates) {
  WorkloadManifest m = load_manifest(testutil::workload("selfmod.yaml"));
  RunOptions o;
  o.trace = false;
  RunOutcome r = run_workload(m, o);
  EXPECT_EQ(r.verdict, Verdict::kPass);
  EXPECT_EQ(r.result.main_ctx.regs[0], 85u);
  EXPECT_GE(r.stats.cache_invalidations, 1u);
}
