#ifndef ENCLSIM_SIGNAL_SUBSYSTEM_H_
#define ENCLSIM_SIGNAL_SUBSYSTEM_H_

#include <array>
#include <cstdint>
#include <optional>

#include "enclsim/thread_manager.h"
#include "enclsim/types.h"

namespace enclsim {

class Vm;

inline constexpr int kNumSignals = 32;

namespace sig {
inline constexpr int kSIGILL = 4;
inline constexpr int kSIGTRAP = 5;
inline constexpr int kSIGFPE = 8;
inline constexpr int kSIGKILL = 9;
inline constexpr int kSIGUSR1 = 10;
inline constexpr int kSIGSEGV = 11;
inline constexpr int kSIGUSR2 = 12;
inline constexpr int kSIGALRM = 14;
inline constexpr int kSIGCHLD = 17;
inline constexpr int kSIGCONT = 18;
inline constexpr int kSIGSTOP = 19;
inline constexpr int kSIGURG = 23;
inline constexpr int kSIGPROF = 27;
inline constexpr int kSIGWINCH = 28;
// siginfo codes
inline constexpr int kFpeIntDiv = 1;
inline constexpr int kSegvMapErr = 1;
inline constexpr int kSegvAccErr = 2;
inline constexpr int kIllOpc = 1;
inline constexpr int kSiUser = 0;
inline constexpr int kSiTimer = -2;
}  // namespace sig

inline constexpr Addr kSigDfl = 0;
inline constexpr Addr kSigIgn = 1;

// Guest layout of a signal frame on the per-slot signal stack: siginfo
// {signo, code, addr} as three 64-bit words.
inline constexpr std::uint64_t kSiginfoSize = 24;
inline constexpr std::uint64_t kSignalFrameSize = 256;

struct HandlerEntry {
  Addr handler = kSigDfl;
  std::uint64_t flags = 0;
  std::uint64_t mask = 0;
};

enum class RegisterStatus : std::uint8_t { kOk, kInvalid, kUnsupported };

class SignalSubsystem {
 public:
  explicit SignalSubsystem(Vm& vm);

  // Registers the single primary handler with the enclave.
  void install_primary();
  RegisterStatus register_handler(ThreadRecord& t, int signum, Addr handler, std::uint64_t flags,
                                  std::uint64_t mask = 0);
  const HandlerEntry& handler(int signum) const;

  // Synchronous fault. t.ctx already points past the faulting instruction
  // (the handler returns there); fault_ctx is kept for default termination.
  void raise_sync(ThreadRecord& t, const SignalInfo& info, const GuestContext& fault_ctx);
  // Host-originated signal; routed by thread location.
  void raise_async(Tid tid, int signum, bool forged);
  // Block-boundary delivery of queued signals.
  bool deliver_pending(ThreadRecord& t);
  bool deliver_in_enclave(ThreadRecord& t, const SignalInfo& info);
  bool deliver_out_of_enclave(ThreadRecord& t, const SignalInfo& info);
  void handle_sigreturn(ThreadRecord& t);

  static bool default_ignored(int signum);

 private:
  // Primary-handler routing after entry; returns true if a handler runs.
  bool route(ThreadRecord& t, const SignalInfo& info, bool out_of_enclave);
  // Leaves the signal entry and resumes the context saved at interruption.
  void resume_interrupted(ThreadRecord& t, bool out_of_enclave);

  Vm& vm_;
  // Context reported if a synchronous fault ends the process.
  std::optional<GuestContext> fault_ctx_;
  std::array<HandlerEntry, kNumSignals + 1> table_{};
};

}  // namespace enclsim

#endif  // ENCLSIM_SIGNAL_SUBSYSTEM_H_
