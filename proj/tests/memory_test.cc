#include <gtest/gtest.h>

#include "enclsim/memory_manager.h"
#include "test_util.h"

using namespace enclsim;

namespace {

constexpr const char* kMapTwoPages = R"(
        MOV r0, 9
        MOV r1, 0
        MOV r2, 8192
        MOV r3, 3
        MOV r4, 0x22
        MOV r5, -1
        MOV r6, 0
        SYSCALL
        MOV r6, r0
        STORE [r6+8], 77
        HLT)";

}  // namespace

TEST(Memory, AnonymousMappingLivesInPrivateMemory) {
  auto vm = testutil::make_vm(kMapTwoPages);
  RunResult r = vm->run();
  const Addr g = r.main_ctx.regs[6];
  ASSERT_EQ(g % kPageSize, 0u);
  const MappingRecord* rec = vm->memory().find(g);
  ASSERT_NE(rec, nullptr);
  EXPECT_EQ(rec->len, 8192u);
  EXPECT_EQ(rec->kind, MappingKind::kMmap);
  EXPECT_FALSE(rec->public_twin().has_value());
  auto p = vm->memory().translate_address(g + 8, AccessMode::kWrite, 8);
  ASSERT_TRUE(p.has_value());
  EXPECT_TRUE(vm->enclave().is_private(*p));
  std::uint64_t v = 0;
  EXPECT_TRUE(vm->memory().load64(g + 8, v));
  EXPECT_EQ(v, 77u);
  EXPECT_EQ(vm->stats().violations, 0u);
}

TEST(Memory, TranslateRespectsPermissions) {
  auto vm = testutil::make_vm("HLT");
  vm->run();
  EXPECT_TRUE(vm->memory().translate_address(layout::kCodeBase, AccessMode::kExecute).has_value());
  EXPECT_FALSE(vm->memory().translate_address(layout::kCodeBase, AccessMode::kWrite).has_value());
  EXPECT_TRUE(vm->memory().translate_address(layout::kDataBase, AccessMode::kWrite, 8).has_value());
  EXPECT_FALSE(vm->memory().translate_address(0x10, AccessMode::kRead).has_value());
}

TEST(Memory, ValidateLayoutRejectsOverlap) {
  auto vm = testutil::make_vm("HLT");
  MappingRecord m;
  m.guest_start = layout::kDataBase;
  m.len = kPageSize;
  m.perms = kPermRead;
  EXPECT_TRUE(vm->memory().validate_layout(m).has_value());
  m.guest_start = layout::kDataBase + 3;  // also unaligned
  EXPECT_TRUE(vm->memory().validate_layout(m).has_value());
}

TEST(Memory, UnalignedMunmapIsInvalid) {
  auto vm = testutil::make_vm(R"(
        MOV r0, 11
        MOV r1, 0x600001
        MOV r2, 4096
        SYSCALL
        HLT)");
  EXPECT_EQ(static_cast<std::int64_t>(vm->run().main_ctx.regs[0]), err::kEINVAL);
}

TEST(Memory, UnmappedStoreIsSegv) {
  auto vm = testutil::make_vm("MOV r1, 0x10\nSTORE [r1], 1\nHLT");
  RunResult r = vm->run();
  ASSERT_TRUE(r.term_signal.has_value());
  EXPECT_EQ(*r.term_signal, 11);
  EXPECT_EQ(r.exit_status, 128 + 11);
}

TEST(Memory, BrkGrowsAndQueries) {
  auto vm = testutil::make_vm(R"(
        MOV r0, 12
        MOV r1, 0
        SYSCALL
        MOV r4, r0
        ADD r1, r0, 8192
        MOV r0, 12
        SYSCALL
        MOV r5, r0
        STORE [r4+8000], 5
        LOAD r6, [r4+8000]
        HLT)");
  RunResult r = vm->run();
  EXPECT_EQ(r.main_ctx.regs[4], layout::kBrkBase);
  EXPECT_EQ(r.main_ctx.regs[5], layout::kBrkBase + 8192);
  EXPECT_EQ(r.main_ctx.regs[6], 5u);
}

TEST(PoolAllocator, FirstFitAndCoalesce) {
  PoolAllocator p(0x1000, 4 * kPageSize);
  auto a = p.allocate(kPageSize);
  auto b = p.allocate(2 * kPageSize);
  ASSERT_TRUE(a && b);
  EXPECT_EQ(*a, 0x1000u);
  EXPECT_EQ(p.free_bytes(), kPageSize);
  EXPECT_FALSE(p.allocate(2 * kPageSize).has_value());
  p.release(*a, kPageSize);
  p.release(*b, 2 * kPageSize);
  EXPECT_EQ(p.largest_free(), 4 * kPageSize);
}
