#include <gtest/gtest.h>

#include <set>

#include "enclsim/syscall_spec.h"
#include "enclsim/types.h"

using namespace enclsim;

TEST(SyscallTable, BuiltinHasOneStrategyPerSyscall) {
  const SyscallTable& t = SyscallTable::builtin();
  ASSERT_FALSE(t.specs().empty());
  std::set<std::string> names;
  for (const auto& [nr, s] : t.specs()) {
    EXPECT_EQ(nr, s.number);
    EXPECT_TRUE(names.insert(s.name).second) << s.name;
    const int n = (s.strategy == Strategy::kDelegate) + (s.strategy == Strategy::kEmulate) +
                  (s.strategy == Strategy::kPartialEmulate);
    EXPECT_EQ(n, 1) << s.name;
  }
  ASSERT_NE(t.find(1), nullptr);
  EXPECT_EQ(t.find(1)->name, "write");
  EXPECT_EQ(t.find(9999), nullptr);
  EXPECT_NE(t.find_struct("iovec"), nullptr);
}

TEST(SyscallTable, ParsesShapes) {
  const SyscallTable t = SyscallTable::parse(
      "struct pair 16 0:scalar 8:buf(field@0)\n"
      "syscall 7 frob delegate in:scalar out:buf(arg0) inout:array(pair,arg0) -> len(arg0)\n");
  const SyscallSpec* s = t.find(7);
  ASSERT_NE(s, nullptr);
  EXPECT_EQ(s->strategy, Strategy::kDelegate);
  ASSERT_EQ(s->args.size(), 3u);
  EXPECT_EQ(s->args[1].direction, Direction::kOut);
  EXPECT_EQ(s->args[1].shape, ShapeKind::kBuffer);
  EXPECT_EQ(s->args[2].shape, ShapeKind::kArray);
  EXPECT_EQ(s->args[2].struct_name, "pair");
  EXPECT_EQ(s->ret.kind, ResultSchema::Kind::kLenArg);
}

TEST(SyscallTable, RejectsMalformedLines) {
  const char* bad[] = {
      "syscall 1 write sometimes in:scalar -> scalar\n",
      "syscall x write delegate -> scalar\n",
      "syscall 1 write delegate in:buf(arg9) -> scalar\n",
      "syscall 1 write delegate in:struct(nope) -> scalar\n",
      "syscall 1 a delegate -> scalar\nsyscall 1 b delegate -> scalar\n",
      "frobnicate\n",
  };
  for (const char* text : bad) EXPECT_THROW(SyscallTable::parse(text), ConfigError) << text;
}

TEST(SyscallTable, ErrorNamesTheLine) {
  try {
    SyscallTable::parse("# c\n\nsyscall 1 w delegate -> bogus\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos) << e.what();
  }
}
