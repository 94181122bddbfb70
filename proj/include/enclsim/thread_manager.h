#ifndef ENCLSIM_THREAD_MANAGER_H_
#define ENCLSIM_THREAD_MANAGER_H_

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "enclsim/isa.h"
#include "enclsim/syscall_mediator.h"
#include "enclsim/types.h"

namespace enclsim {

class Vm;

enum class ThreadState : std::uint8_t { kSpawning, kRunnable, kPoolWait, kBlocked, kInOcall, kExited };

const char* thread_state_name(ThreadState s);

enum class TlsView : std::uint8_t { kPlatform, kRuntime, kGuest };

const char* tls_view_name(TlsView v);

struct TlsViews {
  Addr runtime_base = 0;
  Addr guest_base = 0;
  Addr platform_base = 0;
};

struct SignalInfo {
  int signum = 0;
  int code = 0;
  Addr fault_addr = 0;
  // Already counted as held back for lack of an SSA frame.
  bool queued = false;
};

struct SignalFrame {
  GuestContext interrupted;
  SignalInfo info;
  Addr frame_guest = 0;
  // Delivered while the thread was outside (mid-OCALL).
  bool out_of_enclave = false;
};

struct CloneRequest {
  std::uint64_t flags = 0;
  Addr child_stack = 0;
  Addr ptid = 0;
  Addr ctid = 0;
  Addr tls = 0;
  std::uint64_t waited = 0;
};

// Argument block handed to the host for thread creation; the enclave keeps
// a private copy and compares on child entry.
struct CloneArgBlock {
  Addr entry_pc = 0;
  Addr stack = 0;
  Addr ctid = 0;
  Addr tls = 0;
  std::uint64_t parent = 0;

  std::array<std::uint8_t, 40> bytes() const;
  friend bool operator==(const CloneArgBlock&, const CloneArgBlock&) = default;
};

struct ThreadRecord {
  Tid tid = 0;
  int tcs = -1;
  GuestContext ctx;
  ThreadState state = ThreadState::kRunnable;
  TlsViews tls_views;
  Addr tls_segment = 0;
  bool is_primary_tls = false;
  TlsView active_view = TlsView::kPlatform;
  Addr active_fs = 0;
  Addr active_gs = 0;
  std::optional<Addr> ctid_addr;
  Addr futex_key = 0;
  // Contended LOCK_PI retried on each turn.
  std::optional<Addr> pending_lock;
  std::uint64_t lock_spins = 0;
  Addr arena = 0;
  std::uint64_t arena_size = 0;
  std::optional<CloneRequest> pending_clone;
  Tid parent = 0;
  Addr clone_args_public = 0;
  CloneArgBlock clone_args_private;
  std::optional<PendingOcall> pending_ocall;
  std::vector<SignalFrame> signal_frames;
  std::deque<SignalInfo> pending_signals;
  std::uint64_t blocks = 0;
  int exit_code = 0;
  bool aborted = false;
};

struct TlsCounters {
  std::uint64_t switches = 0;
  std::uint64_t noops = 0;
  std::uint64_t entries = 0;  // platform -> runtime
  std::uint64_t exits = 0;    // runtime -> platform
  std::uint64_t guest_in = 0;
  std::uint64_t guest_out = 0;
};

class ThreadManager {
 public:
  explicit ThreadManager(Vm& vm);

  ThreadRecord& create_main_thread(Addr entry_pc, Addr stack_top);
  void handle_clone(ThreadRecord& parent, const CloneRequest& req);
  void retry_clone(ThreadRecord& parent);
  // First scheduling of a spawned child: nested ECALL and argument check.
  void child_entry(ThreadRecord& child);
  void handle_exit(ThreadRecord& t, int code, bool is_group);
  // Retires one thread (used by exit, exit_group and process termination).
  void retire(ThreadRecord& t, int code, bool clear_ctid);

  void tls_switch(ThreadRecord& t, TlsView view);
  // Follows TLS links to the primary segment. Returns (address, hops).
  std::pair<Addr, int> resolve_primary_tls(const ThreadRecord& t) const;
  // Guest-visible fs base; never a runtime or platform base.
  Addr guest_fs(const ThreadRecord& t) const;

  const TlsCounters& tls_counters() const { return tls_; }
  int primary_count() const;
  int live_in_enclave() const;

 private:
  Addr allocate_tls(Tid tid, Addr link, bool primary);
  void free_tls(ThreadRecord& t);
  void spawn(ThreadRecord& parent, const CloneRequest& req, int slot);
  Addr platform_base(int slot) const;

  Vm& vm_;
  std::vector<Addr> tls_free_;
  Addr tls_next_ = 0;
  TlsCounters tls_;
};

}  // namespace enclsim

#endif  // ENCLSIM_THREAD_MANAGER_H_
