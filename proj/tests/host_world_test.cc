#include <gtest/gtest.h>

#include "enclsim/host_world.h"
#include "test_util.h"

using namespace enclsim;

TEST(Adversary, ParsesSchedule) {
  const AdversarySchedule s = AdversarySchedule::parse(
      "# comment\n"
      "seed 9\n"
      "when step 5 do mutate_perms runtime\n"
      "when after_ocall write do read_private heap once\n"
      "when after_copyout * do mutate_public arena 0 random:64\n");
  EXPECT_EQ(s.seed, 9u);
  ASSERT_EQ(s.triggers.size(), 3u);
  EXPECT_EQ(s.triggers[0].event, AdvEvent::kStep);
  EXPECT_EQ(s.triggers[0].filter, "5");
  EXPECT_EQ(s.triggers[1].action, AdvAction::kReadPrivate);
  EXPECT_TRUE(s.triggers[1].once);
  EXPECT_EQ(s.triggers[2].args.size(), 3u);
  EXPECT_EQ(s.triggers[2].line, 5);
}

TEST(Adversary, RejectsUnknownWords) {
  EXPECT_THROW(AdversarySchedule::parse("when sometime do read_private heap\n"), ConfigError);
  EXPECT_THROW(AdversarySchedule::parse("when step 1 do explode\n"), ConfigError);
  EXPECT_THROW(AdversarySchedule::parse("whenever\n"), ConfigError);
}

TEST(PublicMemory, MapReadWriteUnmap) {
  PublicMemory pm;
  const Addr a = pm.map(2 * kPageSize);
  EXPECT_TRUE(pm.mapped(a, 2 * kPageSize));
  const std::vector<std::uint8_t> in{1, 2, 3};
  EXPECT_TRUE(pm.write(a + kPageSize - 1, in));  // crosses a page boundary
  std::vector<std::uint8_t> out(3);
  EXPECT_TRUE(pm.read(a + kPageSize - 1, out));
  EXPECT_EQ(out, in);
  pm.unmap(a, kPageSize);
  EXPECT_FALSE(pm.mapped(a, 1));
  EXPECT_FALSE(pm.read(a, out));
}

TEST(HostWorld, PrivateMemoryIsOffLimits) {
  auto vm = testutil::make_vm("HLT");
  const Addr heap = vm->enclave().region(RegionRole::kHeap).start;
  std::array<std::uint8_t, 4> buf{};
  EXPECT_FALSE(vm->host().host_read(heap, buf));
  EXPECT_FALSE(vm->host().host_write(heap, buf));
  EXPECT_EQ(vm->host().private_access_attempts(), 2u);
  EXPECT_EQ(vm->violations().count(ViolationCode::kR1Access), 2u);
}

TEST(HostWorld, KernelFiles) {
  HostWorld h;
  h.add_file("a.txt", testutil::bytes("hi"));
  ASSERT_NE(h.file("a.txt"), nullptr);
  EXPECT_EQ(testutil::str(*h.file("a.txt")), "hi");
  EXPECT_EQ(h.file("b.txt"), nullptr);
  EXPECT_EQ(h.kernel().pid, 1000);
}
