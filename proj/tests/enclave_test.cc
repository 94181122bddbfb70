#include <gtest/gtest.h>

#include "enclsim/enclave.h"

using namespace enclsim;

namespace {

struct Fixture {
  std::shared_ptr<FrameRegistry> frames = std::make_shared<FrameRegistry>();
  ViolationLog log;
  std::unique_ptr<EnclaveState> e;
  explicit Fixture(EnclaveConfig c = {}) { e = EnclaveState::create(c, frames, {}, &log); }
};

}  // namespace

TEST(Enclave, CreateRejectsBadConfigs) {
  auto frames = std::make_shared<FrameRegistry>();
  ViolationLog log;
  EnclaveConfig zero;
  zero.size = 0;
  EXPECT_THROW(EnclaveState::create(zero, frames, {}, &log), EnclaveError);
  EnclaveConfig c;
  const AddrRange overlap{c.base + 4096, 4096};
  EXPECT_THROW(EnclaveState::create(c, frames, std::span(&overlap, 1), &log), EnclaveError);
}

TEST(Enclave, HostCannotTouchPrivateMemory) {
  Fixture f;
  const Addr heap = f.e->region(RegionRole::kHeap).start;
  std::array<std::uint8_t, 8> buf{};
  EXPECT_EQ(f.e->read(Actor::kHostOs, heap, buf), AccessVerdict::kR1Violation);
  EXPECT_EQ(f.e->write(Actor::kHostOs, heap, buf), AccessVerdict::kR1Violation);
  EXPECT_EQ(f.log.count(ViolationCode::kR1Access), 2u);
  EXPECT_EQ(f.e->read(Actor::kEnclave, heap, buf), AccessVerdict::kAllowed);
}

TEST(Enclave, LayoutIsFrozen) {
  Fixture f;
  const MemoryRegion& rt = f.e->region(RegionRole::kRuntime);
  f.e->reject_mutation(rt, kPermRead | kPermWrite | kPermExec, Actor::kHostOs);
  EXPECT_EQ(f.log.count(ViolationCode::kR2Mutate), 1u);
}

TEST(Enclave, FrameAliasAndShare) {
  Fixture a;
  const Addr heap = a.e->region(RegionRole::kHeap).start;
  const FrameId fr = a.e->frame_of(heap);
  EXPECT_FALSE(a.e->map_private(heap + kPageSize, kPageSize, kPermRead | kPermWrite, fr, Actor::kHostOs));
  EXPECT_EQ(a.log.count(ViolationCode::kR4Alias), 1u);

  EnclaveConfig pc;
  pc.base = a.e->limit() + 0x10000000;
  pc.size = 1 << 20;
  pc.heap_size = 64 * 1024;
  pc.tcs_count = 1;
  auto peer = EnclaveState::create(pc, a.frames, {}, &a.log);
  EXPECT_FALSE(peer->map_private(peer->region(RegionRole::kHeap).start, kPageSize, kPermRead, fr, Actor::kHostOs));
  EXPECT_EQ(a.log.count(ViolationCode::kR3Share), 1u);
}

TEST(Enclave, EntryOnlyThroughDeclaredPoints) {
  Fixture f;
  EXPECT_EQ(f.e->ecall(kEntryMain, 0, 1, 0), EnclaveStatus::kOk);
  EXPECT_NE(f.e->ecall(77, 1, 2, 0), EnclaveStatus::kOk);
  EXPECT_EQ(f.log.count(ViolationCode::kR5Entry), 1u);
}

TEST(Enclave, SsaStackBoundedByNssa) {
  EnclaveConfig c;
  c.nssa = 3;
  Fixture f(c);
  ASSERT_EQ(f.e->ecall(kEntryMain, 0, 1, 0), EnclaveStatus::kOk);
  GuestContext ctx;
  for (int i = 0; i < 3; ++i) {
    ctx.regs[0] = static_cast<std::uint64_t>(i);
    ASSERT_EQ(f.e->aex(0, ctx), EnclaveStatus::kOk) << i;
    ASSERT_EQ(f.e->ecall(kEntrySignal, 0, 1, 0), EnclaveStatus::kOk);
  }
  EXPECT_EQ(f.e->aex(0, ctx), EnclaveStatus::kSsaExhausted);
  // Frames come back in LIFO order.
  for (int i = 2; i >= 0; --i) {
    f.e->eexit(0);
    GuestContext out;
    ASSERT_EQ(f.e->eresume(0, out), EnclaveStatus::kOk);
    EXPECT_EQ(out.regs[0], static_cast<std::uint64_t>(i));
  }
}

TEST(Enclave, TamperedResumeIsRefused) {
  Fixture f;
  ASSERT_EQ(f.e->ecall(kEntryMain, 0, 1, 0), EnclaveStatus::kOk);
  GuestContext ctx;
  ctx.pc = 0x400000;
  ASSERT_EQ(f.e->aex(0, ctx), EnclaveStatus::kOk);
  GuestContext forged = ctx;
  forged.pc += 16;
  GuestContext out;
  EXPECT_NE(f.e->eresume(0, out, forged), EnclaveStatus::kOk);
  EXPECT_EQ(f.log.count(ViolationCode::kR5Entry), 1u);
  ASSERT_EQ(f.e->eresume(0, out), EnclaveStatus::kOk);
  EXPECT_EQ(out, ctx);
}

TEST(Enclave, AbortPolicyThrows) {
  auto frames = std::make_shared<FrameRegistry>();
  ViolationLog log(ViolationPolicy::kAbort);
  auto e = EnclaveState::create({}, frames, {}, &log);
  std::array<std::uint8_t, 8> buf{};
  EXPECT_THROW(e->read(Actor::kHostOs, e->region(RegionRole::kHeap).start, buf), ViolationAbort);
}
