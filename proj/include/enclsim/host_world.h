#ifndef ENCLSIM_HOST_WORLD_H_
#define ENCLSIM_HOST_WORLD_H_

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "enclsim/enclave.h"
#include "enclsim/types.h"

namespace enclsim {

// Untrusted memory, page-granular and sparse.
class PublicMemory {
 public:
  // Reserves `len` bytes (page rounded) in the public window.
  Addr map(std::uint64_t len);
  void unmap(Addr start, std::uint64_t len);
  bool mapped(Addr a, std::uint64_t len) const;
  bool read(Addr a, std::span<std::uint8_t> out) const;
  bool write(Addr a, std::span<const std::uint8_t> in);
  std::vector<AddrRange> ranges() const;

 private:
  std::map<Addr, std::vector<std::uint8_t>> pages_;
  Addr next_ = layout::kPublicBase;
};

struct OpenFile {
  std::string path;
  std::uint64_t offset = 0;
  std::int64_t flags = 0;
};

struct HostMapping {
  Addr start = 0;
  std::uint64_t len = 0;
  std::optional<std::string> path;
  std::uint64_t offset = 0;
  bool shared = false;
};

struct KernelState {
  std::map<std::string, std::vector<std::uint8_t>> files;
  std::map<std::int64_t, OpenFile> fds;
  std::int64_t next_fd = 3;
  Tid pid = 1000;
  Tid next_tid = 1001;
  std::set<Tid> threads;
  std::uint64_t clock = 0;
  std::map<Addr, HostMapping> mappings;
};

inline constexpr const char* kStdoutPath = "<stdout>";
inline constexpr const char* kStderrPath = "<stderr>";
inline constexpr const char* kStdinPath = "<stdin>";

// Linux open(2) flag bits the host kernel understands.
namespace oflag {
inline constexpr std::int64_t kAccMode = 3;
inline constexpr std::int64_t kCreat = 0x40;
inline constexpr std::int64_t kTrunc = 0x200;
inline constexpr std::int64_t kAppend = 0x400;
}  // namespace oflag

namespace mflag {
inline constexpr std::int64_t kShared = 0x01;
inline constexpr std::int64_t kPrivate = 0x02;
inline constexpr std::int64_t kFixed = 0x10;
inline constexpr std::int64_t kAnonymous = 0x20;
}  // namespace mflag

enum class OcallKind : std::uint8_t {
  kSyscall,       // delegated syscall, `nr` is the Linux number
  kThreadCreate,  // args[0] = public address of the clone argument block
  kThreadExit,    // args[0] = tid
  kMmap,          // host side of a file/shared mmap
  kMunmap,
  kMsync,
  kMprotect,
  kSignalEcall,   // host wakes the enclave to deliver a signal
};

const char* ocall_kind_name(OcallKind k);

struct OcallRequest {
  OcallKind kind = OcallKind::kSyscall;
  std::int64_t nr = -1;
  std::array<std::uint64_t, 6> args{};
  Tid tid = 0;
};

// ---------------------------------------------------------------------------
// Adversary schedule. Line format:
//
//   seed <n>
//   when <event> [<filter>] do <action> [args...] [once]
//
// events:  step <n> | before_ocall <name|*> | after_ocall <name|*>
//          | after_copyout <name|*> | thread_create
// actions: mutate_public <arena|slotN|cloneargs|0xADDR> <offset> <hex|random:N>
//          lie_result <delta|value> <n>
//          flip_lock_word <0xADDR>
//          forge_signal <signum> [tid]
//          spurious_wake <0xKEY>
//          tamper_ssa
//          bad_ecall <entry>
//          read_private <heap|0xADDR>
//          mutate_perms <role>
//          alias_frame
//          share_frame

enum class AdvEvent : std::uint8_t { kStep, kBeforeOcall, kAfterOcall, kAfterCopyout, kThreadCreate };
enum class AdvAction : std::uint8_t {
  kMutatePublic,
  kLieResult,
  kFlipLockWord,
  kForgeSignal,
  kSpuriousWake,
  kTamperSsa,
  kBadEcall,
  kReadPrivate,
  kMutatePerms,
  kAliasFrame,
  kShareFrame,
};

const char* adv_event_name(AdvEvent e);
const char* adv_action_name(AdvAction a);

struct AdvTrigger {
  AdvEvent event = AdvEvent::kStep;
  std::string filter = "*";
  AdvAction action = AdvAction::kMutatePublic;
  std::vector<std::string> args;
  bool once = false;
  int fired = 0;
  int line = 0;
};

struct AdversarySchedule {
  std::vector<AdvTrigger> triggers;
  std::uint64_t seed = 0;

  static AdversarySchedule parse(const std::string& text);
  static AdversarySchedule load(const std::string& path);
  bool empty() const { return triggers.empty(); }
};

struct AdversaryLogEntry {
  std::uint64_t step;
  std::string event;
  std::string action;
  std::string detail;
};

// The untrusted side: public memory, a tiny kernel and the adversary.
class HostWorld {
 public:
  HostWorld();

  PublicMemory& public_memory() { return public_; }
  const PublicMemory& public_memory() const { return public_; }
  KernelState& kernel() { return kernel_; }
  const KernelState& kernel() const { return kernel_; }

  void attach_enclave(EnclaveState* e) { enclave_ = e; }
  void set_adversary(AdversarySchedule s);
  const AdversarySchedule& adversary() const { return adversary_; }

  // Every host access to memory passes the enclave's check; touching a
  // private byte is an R1 violation and the access is refused.
  bool host_read(Addr a, std::span<std::uint8_t> out);
  bool host_write(Addr a, std::span<const std::uint8_t> in);
  std::uint64_t private_access_attempts() const { return private_access_attempts_; }

  std::int64_t ocall_execute(const OcallRequest& req);

  // Triggers matching `event`/`name`, marking them fired.
  std::vector<AdvTrigger> adversary_step(AdvEvent event, const std::string& name, std::uint64_t step);
  void log_adversary(std::uint64_t step, const AdvTrigger& t, std::string detail);
  const std::vector<AdversaryLogEntry>& adversary_log() const { return adversary_log_; }
  std::mt19937_64& adversary_rng() { return adv_rng_; }

  struct AsyncSignal {
    Tid tid;
    int signum;
    std::uint64_t at_step;
    bool forged = false;
  };
  void raise_async_signal(Tid tid, int signum, std::uint64_t at_step, bool forged = false);
  std::vector<AsyncSignal> take_due_signals(std::uint64_t step);

  void add_file(const std::string& path, std::vector<std::uint8_t> bytes);
  const std::vector<std::uint8_t>* file(const std::string& path) const;
  // Writes the file store into a real directory for inspection.
  void export_files(const std::string& dir) const;

  Tid allocate_tid() { return kernel_.next_tid++; }

 private:
  std::int64_t sys_read(std::int64_t fd, Addr buf, std::uint64_t len);
  std::int64_t sys_write(std::int64_t fd, Addr buf, std::uint64_t len);
  std::int64_t sys_writev(std::int64_t fd, Addr iov, std::uint64_t cnt);
  std::int64_t sys_open(Addr path, std::int64_t flags);
  std::int64_t sys_close(std::int64_t fd);
  std::int64_t sys_gettimeofday(Addr tv);
  std::int64_t host_mmap(std::uint64_t len, std::int64_t flags, std::int64_t fd, std::uint64_t off);
  std::int64_t host_munmap(Addr a, std::uint64_t len);
  std::int64_t host_msync(Addr a, std::uint64_t len);

  PublicMemory public_;
  KernelState kernel_;
  EnclaveState* enclave_ = nullptr;
  AdversarySchedule adversary_;
  std::vector<AdversaryLogEntry> adversary_log_;
  std::mt19937_64 adv_rng_;
  std::vector<AsyncSignal> pending_signals_;
  std::uint64_t private_access_attempts_ = 0;
};

}  // namespace enclsim

#endif  // ENCLSIM_HOST_WORLD_H_
