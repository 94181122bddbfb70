#ifndef ENCLSIM_SYSCALL_MEDIATOR_H_
#define ENCLSIM_SYSCALL_MEDIATOR_H_

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "enclsim/syscall_spec.h"
#include "enclsim/types.h"

namespace enclsim {

class Vm;
struct ThreadRecord;

using SyscallArgs = std::array<std::uint64_t, 6>;

struct PublicSlot {
  Addr addr = 0;
  std::uint64_t len = 0;
};

struct CopyOp {
  Addr guest = 0;   // private side, as a guest address
  Addr pub = 0;     // public arena side
  std::uint64_t len = 0;
  bool is_struct = false;
  // Argument index the op belongs to, used to clamp length-returning calls.
  int arg = -1;
};

struct MarshalPlan {
  std::vector<PublicSlot> public_slots;
  std::vector<CopyOp> copy_in_ops;
  std::vector<CopyOp> copy_out_ops;
  SyscallArgs host_args{};
  std::uint64_t bytes_in = 0;
  // Bytes the schema says may come back (sum of out/inout slot sizes).
  std::uint64_t out_capacity = 0;
  Addr arena_used_end = 0;
  // Public address of each rewritten pointer field -> original guest value.
  std::vector<std::pair<Addr, std::uint64_t>> restore;
};

enum class MarshalStatus : std::uint8_t { kOk, kBadGuestPointer, kTooLarge };

struct MarshalResult {
  MarshalStatus status = MarshalStatus::kOk;
  MarshalPlan plan;
};

struct CopyOutResult {
  std::uint64_t bytes_out = 0;
  bool overlong = false;
  bool fault = false;
};

enum class IagoKind : std::uint8_t { kLength, kAlignment, kRange, kOverlongWrite };

const char* iago_name(IagoKind k);

// Continuation of a delegated syscall whose OCALL is still outstanding.
struct PendingOcall {
  const SyscallSpec* spec = nullptr;
  SyscallArgs args{};
  MarshalPlan plan;
  std::int64_t raw_result = 0;
  std::uint64_t done_step = 0;
  std::size_t signal_depth = 0;
};

class SyscallMediator {
 public:
  SyscallMediator(Vm& vm, const SyscallTable& table);

  // Handles a guest syscall at a stub; writes r0 unless the thread blocks
  // or the call does not return (sigreturn, exit).
  void dispatch_syscall(ThreadRecord& t, std::int64_t nr, const SyscallArgs& args);
  // CPUID / RDTSC stubs.
  void emulate_cpuid(ThreadRecord& t);
  void emulate_rdtsc(ThreadRecord& t);
  // Finishes an outstanding delegated OCALL.
  void complete_ocall(ThreadRecord& t);

  MarshalResult marshal_in(ThreadRecord& t, const SyscallSpec& spec, const SyscallArgs& args);
  CopyOutResult marshal_out(ThreadRecord& t, const MarshalPlan& plan, const SyscallSpec& spec,
                            std::int64_t result);
  std::optional<IagoKind> sanitize(const SyscallSpec& spec, const SyscallArgs& args, std::int64_t result,
                                   const MarshalPlan& plan, const CopyOutResult& copied) const;
  // Records an Iago violation and returns EIO.
  std::int64_t reject(ThreadRecord& t, const SyscallSpec& spec, IagoKind kind, std::int64_t raw);

  const SyscallTable& table() const { return table_; }
  const std::map<std::int64_t, std::uint64_t>& unsupported() const { return unsupported_; }
  std::uint64_t iago_count() const { return iago_; }

 private:
  void delegate(ThreadRecord& t, const SyscallSpec& spec, const SyscallArgs& args);
  void delegate_chunked(ThreadRecord& t, const SyscallSpec& spec, const SyscallArgs& args);
  std::int64_t finish_delegate(ThreadRecord& t, const SyscallSpec& spec, const SyscallArgs& args,
                               const MarshalPlan& plan, std::int64_t raw);
  void emulate(ThreadRecord& t, const SyscallSpec& spec, const SyscallArgs& args);
  void partial(ThreadRecord& t, const SyscallSpec& spec, const SyscallArgs& args);
  std::int64_t sys_rt_sigaction(ThreadRecord& t, const SyscallArgs& args);
  std::int64_t sys_arch_prctl(ThreadRecord& t, const SyscallArgs& args);
  void set_result(ThreadRecord& t, std::int64_t r);

  Vm& vm_;
  const SyscallTable& table_;
  std::map<std::int64_t, std::uint64_t> unsupported_;
  std::uint64_t iago_ = 0;
};

}  // namespace enclsim

#endif  // ENCLSIM_SYSCALL_MEDIATOR_H_
