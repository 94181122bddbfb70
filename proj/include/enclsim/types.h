#ifndef ENCLSIM_TYPES_H_
#define ENCLSIM_TYPES_H_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace enclsim {

using Addr = std::uint64_t;
using Tid = std::int64_t;

inline constexpr std::uint64_t kPageSize = 4096;

constexpr Addr page_floor(Addr a) { return a & ~(kPageSize - 1); }
constexpr Addr page_ceil(Addr a) { return (a + kPageSize - 1) & ~(kPageSize - 1); }
constexpr bool page_aligned(Addr a) { return (a & (kPageSize - 1)) == 0; }

// Permission bits; values follow PROT_READ/PROT_WRITE/PROT_EXEC.
enum Perm : std::uint8_t {
  kPermNone = 0,
  kPermRead = 1,
  kPermWrite = 2,
  kPermExec = 4,
};
using Perms = std::uint8_t;

std::string perms_string(Perms p);

enum class AccessMode : std::uint8_t { kRead, kWrite, kExecute };

enum class Actor : std::uint8_t { kHostOs, kEnclave, kGuest };

const char* actor_name(Actor a);

// Negative errno values as returned to guest code.
namespace err {
inline constexpr std::int64_t kEPERM = -1;
inline constexpr std::int64_t kENOENT = -2;
inline constexpr std::int64_t kEINTR = -4;
inline constexpr std::int64_t kEIO = -5;
inline constexpr std::int64_t kEBADF = -9;
inline constexpr std::int64_t kEAGAIN = -11;
inline constexpr std::int64_t kENOMEM = -12;
inline constexpr std::int64_t kEFAULT = -14;
inline constexpr std::int64_t kEINVAL = -22;
inline constexpr std::int64_t kEDEADLK = -35;
inline constexpr std::int64_t kENOSYS = -38;
inline constexpr std::int64_t kEOPNOTSUPP = -95;
inline constexpr std::int64_t kMaxErrno = 4095;
}  // namespace err

constexpr bool is_error_result(std::int64_t r) { return r < 0 && r >= -err::kMaxErrno; }

// Configuration or API misuse detected before/outside guest execution.
class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public SimError {
 public:
  using SimError::SimError;
};

// Guest address-space layout shared by the loader, memory manager and the
// reference interpreter.
namespace layout {
inline constexpr Addr kCodeBase = 0x400000;
inline constexpr Addr kDataBase = 0x600000;
inline constexpr Addr kBrkBase = 0x1000000;
inline constexpr Addr kMmapBase = 0x7f0000000000;
inline constexpr Addr kMmapLimit = 0x7f8000000000;
inline constexpr Addr kSigStackBase = 0x7fe000000000;
inline constexpr Addr kStackTop = 0x7ff000000000;
inline constexpr std::uint64_t kMainStackSize = 64 * 1024;
// Guest range owned by the runtime (code cache, bookkeeping); never mappable.
inline constexpr Addr kRuntimeReservedBase = 0x7ff800000000;
inline constexpr Addr kRuntimeReservedEnd = 0x800000000000;
// Host public window: OCALL arenas, public twins, clone argument blocks.
inline constexpr Addr kPublicBase = 0x500000000000;
inline constexpr Addr kPublicLimit = 0x600000000000;
}  // namespace layout

}  // namespace enclsim

#endif  // ENCLSIM_TYPES_H_
