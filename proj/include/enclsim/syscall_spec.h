#ifndef ENCLSIM_SYSCALL_SPEC_H_
#define ENCLSIM_SYSCALL_SPEC_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "enclsim/types.h"

namespace enclsim {

enum class Strategy : std::uint8_t { kDelegate, kEmulate, kPartialEmulate };

const char* strategy_name(Strategy s);

enum class Direction : std::uint8_t { kIn, kOut, kInOut };

enum class ShapeKind : std::uint8_t { kScalar, kBuffer, kCString, kStruct, kArray };

// Where a buffer length comes from.
struct LenSource {
  enum class Kind : std::uint8_t { kArg, kConst, kField } kind = Kind::kConst;
  std::uint64_t value = 0;  // arg index, constant, or field offset
};

struct FieldSchema {
  std::uint64_t offset = 0;
  ShapeKind shape = ShapeKind::kScalar;  // kScalar, kBuffer or kStruct (pointer)
  LenSource len;
  std::string struct_name;
};

struct StructSchema {
  std::string name;
  std::uint64_t size = 0;
  std::vector<FieldSchema> fields;
};

struct ArgSchema {
  Direction direction = Direction::kIn;
  ShapeKind shape = ShapeKind::kScalar;
  LenSource len;            // kBuffer: byte length; kArray: element count
  std::string struct_name;  // kStruct / kArray
};

struct ResultSchema {
  enum class Kind : std::uint8_t { kScalar, kId, kStatus, kFd, kAddr, kLenArg, kLenIn } kind = Kind::kScalar;
  int arg = 0;
};

struct SyscallSpec {
  std::int64_t number = -1;
  std::string name;
  Strategy strategy = Strategy::kDelegate;
  std::vector<ArgSchema> args;
  ResultSchema ret;
};

class SyscallTable {
 public:
  // Parses the declarative manifest; throws ConfigError with a line number.
  static SyscallTable parse(const std::string& text);
  static SyscallTable load(const std::string& path);
  // The manifest shipped with the runtime (data/syscalls.manifest).
  static const SyscallTable& builtin();
  static const std::string& builtin_text();

  const SyscallSpec* find(std::int64_t nr) const;
  const StructSchema* find_struct(const std::string& name) const;
  const std::map<std::int64_t, SyscallSpec>& specs() const { return specs_; }

 private:
  std::map<std::int64_t, SyscallSpec> specs_;
  std::map<std::string, StructSchema> structs_;
};

}  // namespace enclsim

#endif  // ENCLSIM_SYSCALL_SPEC_H_
