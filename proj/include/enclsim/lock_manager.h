#ifndef ENCLSIM_LOCK_MANAGER_H_
#define ENCLSIM_LOCK_MANAGER_H_

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "enclsim/types.h"

namespace enclsim {

class Vm;
struct ThreadRecord;
struct TranslatedBlock;

namespace futex_op {
inline constexpr std::int64_t kWait = 0;
inline constexpr std::int64_t kWake = 1;
inline constexpr std::int64_t kLockPi = 6;
inline constexpr std::int64_t kUnlockPi = 7;
inline constexpr std::int64_t kTrylockPi = 8;
inline constexpr std::int64_t kPrivateFlag = 128;
}  // namespace futex_op

inline constexpr std::int64_t kSysFutex = 202;

// Test-and-set flag in private memory. Contention shows up as spins.
class SpinLock {
 public:
  SpinLock() = default;
  SpinLock(Vm* vm, Addr word) : vm_(vm), word_(word) {}

  bool try_acquire(Tid tid);
  void release(Tid tid);
  std::optional<Tid> owner() const { return owner_; }
  std::uint64_t spins() const { return spins_; }

 private:
  Vm* vm_ = nullptr;
  Addr word_ = 0;
  std::optional<Tid> owner_;
  std::uint64_t spins_ = 0;
};

struct LockStats {
  std::uint64_t waits = 0;
  std::uint64_t waits_returned_zero = 0;
  std::uint64_t wake_calls = 0;
  std::uint64_t woken = 0;
  std::uint64_t spin_steps = 0;
  std::uint64_t lock_acquires = 0;
  std::uint64_t mutual_exclusion_failures = 0;
};

// In-enclave replacement for kernel futexes.
class LockManager {
 public:
  explicit LockManager(Vm& vm);

  // Entry from the mediator for syscall 202. Writes r0 unless the thread
  // blocks or spins.
  void handle_futex(ThreadRecord& t, Addr uaddr, std::int64_t op, std::uint64_t val);
  std::int64_t futex_wait(ThreadRecord& t, Addr key, std::uint32_t expected);
  std::int64_t futex_wake(ThreadRecord& t, Addr key, std::uint64_t n);
  void lock_pi(ThreadRecord& t, Addr key);
  std::int64_t unlock_pi(ThreadRecord& t, Addr key);
  // Next scheduler turn of a thread spinning on a contended lock.
  void retry_lock(ThreadRecord& t);
  // Removes a thread from every wait queue (thread killed by exit_group).
  void forget(Tid tid);

  // Binds SYSCALL stubs preceded by `MOV r0, 202` to the lock manager.
  static int rewrite_sync_calls(TranslatedBlock& block);

  const LockStats& stats() const { return stats_; }
  std::size_t waiters(Addr key) const;
  const SpinLock& table_lock() const { return table_lock_; }
  void set_spin_limit(int n) { spin_limit_ = n; }

 private:
  void block(ThreadRecord& t, Addr key);

  Vm& vm_;
  SpinLock table_lock_;
  std::map<Addr, std::deque<Tid>> queues_;
  // Threads that gave up spinning on a contended LOCK_PI.
  std::map<Addr, std::deque<Tid>> pi_queues_;
  std::map<Addr, Tid> owners_;
  int spin_limit_ = 4;
  LockStats stats_;
};

// ---------------------------------------------------------------------------
// Model of the rejected design: the futex word lives in public memory and is
// mirrored into a private copy by racy synchronization, with host-side waits.

struct InconsistencyReport {
  bool found = false;
  std::string kind;  // "mutual-exclusion" or "lost-wakeup"
  std::uint64_t seed = 0;
  std::uint64_t interleavings_tried = 0;
  std::vector<std::string> schedule;
};

struct NaiveDemoOptions {
  int threads = 2;
  int iterations = 2;
  bool adversary = true;
  // Use the in-enclave lock manager model instead of the two-copy design.
  bool real_lock_manager = false;
  std::uint64_t max_interleavings = 1000;
  std::uint64_t max_steps = 400;
};

// Runs one seeded interleaving; returns a report with found set on a witness.
InconsistencyReport run_two_copy_interleaving(std::uint64_t seed, const NaiveDemoOptions& opts);
// Searches seeds [seed, seed + max_interleavings).
InconsistencyReport naive_two_copy_demo(std::uint64_t seed, const NaiveDemoOptions& opts = {});

}  // namespace enclsim

#endif  // ENCLSIM_LOCK_MANAGER_H_
