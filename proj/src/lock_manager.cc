#include "enclsim/lock_manager.h"

#include <algorithm>
#include <cstring>
#include <deque>
#include <optional>
#include <random>

#include "enclsim/dbt.h"
#include "enclsim/vm.h"

namespace enclsim {

namespace {

constexpr std::int64_t kBlocked = 1;
constexpr std::uint32_t kTidMask = 0x3fffffff;

}  // namespace

bool SpinLock::try_acquire(Tid tid) {
  if (owner_ && *owner_ != tid) {
    ++spins_;
    return false;
  }
  owner_ = tid;
  if (vm_ != nullptr) {
    std::uint64_t v = static_cast<std::uint64_t>(tid);
    std::array<std::uint8_t, 8> b{};
    std::memcpy(b.data(), &v, 8);
    vm_->enclave().write(Actor::kEnclave, word_, b);
  }
  return true;
}

void SpinLock::release(Tid tid) {
  if (!owner_ || *owner_ != tid) throw SimError("spinlock released by a non-owner");
  owner_.reset();
  if (vm_ != nullptr) vm_->enclave().zero(word_, 8);
}

LockManager::LockManager(Vm& vm) : vm_(vm) {
  table_lock_ = SpinLock(&vm, vm.enclave().region(RegionRole::kRuntime).start);
  spin_limit_ = vm.config().lock_spin_limit;
}

std::size_t LockManager::waiters(Addr key) const {
  std::size_t n = 0;
  if (auto it = queues_.find(key); it != queues_.end()) n += it->second.size();
  if (auto it = pi_queues_.find(key); it != pi_queues_.end()) n += it->second.size();
  return n;
}

void LockManager::block(ThreadRecord& t, Addr key) {
  t.state = ThreadState::kBlocked;
  t.futex_key = key;
  vm_.record("futex_block", t.tid, {{"key", hex_value(key)}});
}

std::int64_t LockManager::futex_wait(ThreadRecord& t, Addr key, std::uint32_t expected) {
  std::array<std::uint8_t, 4> w{};
  if (!vm_.memory().read_guest(key, w)) return err::kEFAULT;
  std::uint32_t cur;
  std::memcpy(&cur, w.data(), 4);
  ++stats_.waits;
  ++vm_.stats().futex_waits;
  if (cur != expected) return err::kEAGAIN;
  table_lock_.try_acquire(t.tid);
  queues_[key].push_back(t.tid);
  table_lock_.release(t.tid);
  block(t, key);
  return kBlocked;
}

std::int64_t LockManager::futex_wake(ThreadRecord& t, Addr key, std::uint64_t n) {
  ++stats_.wake_calls;
  ++vm_.stats().futex_wakes;
  table_lock_.try_acquire(t.tid);
  std::int64_t woken = 0;
  auto it = queues_.find(key);
  while (it != queues_.end() && !it->second.empty() && static_cast<std::uint64_t>(woken) < n) {
    const Tid w = it->second.front();
    it->second.pop_front();
    ThreadRecord* wt = vm_.thread(w);
    if (wt == nullptr || wt->state != ThreadState::kBlocked) continue;
    wt->state = ThreadState::kRunnable;
    wt->ctx.regs[0] = 0;
    ++stats_.waits_returned_zero;
    ++woken;
    vm_.record("futex_wake", wt->tid, {{"key", hex_value(key)}, {"by", std::to_string(t.tid)}});
  }
  if (it != queues_.end() && it->second.empty()) queues_.erase(it);
  table_lock_.release(t.tid);
  stats_.woken += static_cast<std::uint64_t>(woken);
  return woken;
}

void LockManager::lock_pi(ThreadRecord& t, Addr key) {
  std::array<std::uint8_t, 4> w{};
  if (!vm_.memory().read_guest(key, w)) {
    t.pending_lock.reset();
    t.ctx.regs[0] = static_cast<std::uint64_t>(err::kEFAULT);
    vm_.record("sysret", t.tid, {{"nr", "202"}, {"result", std::to_string(err::kEFAULT)}});
    return;
  }
  std::uint32_t cur;
  std::memcpy(&cur, w.data(), 4);
  if (cur == 0) {
    auto o = owners_.find(key);
    if (o != owners_.end() && o->second != t.tid) {
      // The lock word says free while another thread is inside.
      ++stats_.mutual_exclusion_failures;
      vm_.record("mutex_failure", t.tid, {{"key", hex_value(key)}, {"holder", std::to_string(o->second)}});
    }
    const std::uint32_t v = static_cast<std::uint32_t>(t.tid) & kTidMask;
    std::memcpy(w.data(), &v, 4);
    vm_.memory().write_guest(key, w);
    owners_[key] = t.tid;
    ++stats_.lock_acquires;
    t.pending_lock.reset();
    t.lock_spins = 0;
    t.ctx.regs[0] = 0;
    vm_.record("lock_acquire", t.tid, {{"key", hex_value(key)}});
    vm_.record("sysret", t.tid, {{"nr", "202"}, {"result", "0"}});
    return;
  }
  if ((cur & kTidMask) == (static_cast<std::uint32_t>(t.tid) & kTidMask)) {
    t.pending_lock.reset();
    t.ctx.regs[0] = static_cast<std::uint64_t>(err::kEDEADLK);
    vm_.record("sysret", t.tid, {{"nr", "202"}, {"result", std::to_string(err::kEDEADLK)}});
    return;
  }
  if (!t.pending_lock) {
    t.pending_lock = key;
    t.lock_spins = 0;
    return;
  }
  if (t.lock_spins >= static_cast<std::uint64_t>(spin_limit_)) {
    table_lock_.try_acquire(t.tid);
    pi_queues_[key].push_back(t.tid);
    table_lock_.release(t.tid);
    block(t, key);
  }
}

void LockManager::retry_lock(ThreadRecord& t) {
  ++t.lock_spins;
  ++stats_.spin_steps;
  ++vm_.stats().spin_steps;
  lock_pi(t, *t.pending_lock);
}

std::int64_t LockManager::unlock_pi(ThreadRecord& t, Addr key) {
  std::array<std::uint8_t, 4> w{};
  if (!vm_.memory().read_guest(key, w)) return err::kEFAULT;
  std::uint32_t cur;
  std::memcpy(&cur, w.data(), 4);
  if ((cur & kTidMask) != (static_cast<std::uint32_t>(t.tid) & kTidMask)) return err::kEPERM;
  w.fill(0);
  vm_.memory().write_guest(key, w);
  owners_.erase(key);
  table_lock_.try_acquire(t.tid);
  auto it = pi_queues_.find(key);
  while (it != pi_queues_.end() && !it->second.empty()) {
    ThreadRecord* wt = vm_.thread(it->second.front());
    it->second.pop_front();
    if (wt == nullptr || wt->state != ThreadState::kBlocked) continue;
    // The waiter retries the acquire on its next turn.
    wt->state = ThreadState::kRunnable;
    wt->lock_spins = 0;
    vm_.record("lock_handoff", wt->tid, {{"key", hex_value(key)}});
    break;
  }
  if (it != pi_queues_.end() && it->second.empty()) pi_queues_.erase(it);
  table_lock_.release(t.tid);
  vm_.record("lock_release", t.tid, {{"key", hex_value(key)}});
  return 0;
}

void LockManager::handle_futex(ThreadRecord& t, Addr uaddr, std::int64_t op, std::uint64_t val) {
  const std::int64_t base = op & ~futex_op::kPrivateFlag;
  std::int64_t r = 0;
  if (uaddr % 4 != 0) {
    t.ctx.regs[0] = static_cast<std::uint64_t>(err::kEINVAL);
    vm_.record("sysret", t.tid, {{"nr", "202"}, {"result", std::to_string(err::kEINVAL)}});
    return;
  }
  switch (base) {
    case futex_op::kWait:
      r = futex_wait(t, uaddr, static_cast<std::uint32_t>(val));
      if (r == kBlocked) return;
      break;
    case futex_op::kWake:
      r = futex_wake(t, uaddr, val);
      break;
    case futex_op::kLockPi:
      t.pending_lock.reset();
      lock_pi(t, uaddr);
      return;
    case futex_op::kTrylockPi: {
      std::array<std::uint8_t, 4> w{};
      if (!vm_.memory().read_guest(uaddr, w)) {
        r = err::kEFAULT;
        break;
      }
      std::uint32_t cur;
      std::memcpy(&cur, w.data(), 4);
      if (cur != 0) {
        r = (cur & kTidMask) == (static_cast<std::uint32_t>(t.tid) & kTidMask) ? err::kEDEADLK : err::kEAGAIN;
        break;
      }
      lock_pi(t, uaddr);
      return;
    }
    case futex_op::kUnlockPi:
      r = unlock_pi(t, uaddr);
      break;
    default:
      r = err::kENOSYS;
      break;
  }
  t.ctx.regs[0] = static_cast<std::uint64_t>(r);
  vm_.record("sysret", t.tid, {{"nr", "202"}, {"result", std::to_string(r)}});
}

void LockManager::forget(Tid tid) {
  for (auto* qs : {&queues_, &pi_queues_}) {
    for (auto it = qs->begin(); it != qs->end();) {
      auto& q = it->second;
      q.erase(std::remove(q.begin(), q.end(), tid), q.end());
      it = q.empty() ? qs->erase(it) : std::next(it);
    }
  }
}

int LockManager::rewrite_sync_calls(TranslatedBlock& block) {
  int n = 0;
  for (std::size_t i = 1; i < block.translated.size(); ++i) {
    TranslatedInsn& ti = block.translated[i];
    if (ti.stub != StubKind::kSyscall) continue;
    // The syscall number is statically known if the last write to r0 in
    // this block is an immediate move.
    for (std::size_t j = i; j-- > 0;) {
      const Instruction& w = block.translated[j].insn;
      const bool writes_r0 = w.op != Opcode::kStore && !is_branch(w.op) && w.operand_count > 0 &&
                             w.operands[0].kind == OperandKind::kReg && w.operands[0].reg == 0;
      if (!writes_r0) continue;
      if (w.op == Opcode::kMov && w.operands[1].kind == OperandKind::kImm && w.operands[1].imm == kSysFutex) {
        ti.stub = StubKind::kFutex;
        ++n;
      }
      break;
    }
  }
  return n;
}

// ---------------------------------------------------------------------------

namespace {

enum class Micro {
  kAcqCas,
  kAcqMark,
  kAcqSync,
  kAcqWait,
  kAcqRefresh,
  kAcqCas2,
  kCsEnter,
  kCsExit,
  kRelXchg,
  kRelSync,
  kRelWake,
  kDoneIter,
  kFinished,
  // Lock-manager model.
  kLock,
  kUnlock,
};

const char* micro_name(Micro m) {
  switch (m) {
    case Micro::kAcqCas: return "ACQ_CAS";
    case Micro::kAcqMark: return "ACQ_MARK";
    case Micro::kAcqSync: return "ACQ_SYNC";
    case Micro::kAcqWait: return "ACQ_WAIT";
    case Micro::kAcqRefresh: return "ACQ_REFRESH";
    case Micro::kAcqCas2: return "ACQ_CAS2";
    case Micro::kCsEnter: return "CS_ENTER";
    case Micro::kCsExit: return "CS_EXIT";
    case Micro::kRelXchg: return "REL_XCHG";
    case Micro::kRelSync: return "REL_SYNC";
    case Micro::kRelWake: return "REL_WAKE";
    case Micro::kDoneIter: return "DONE_ITER";
    case Micro::kFinished: return "FINISHED";
    case Micro::kLock: return "LOCK";
    case Micro::kUnlock: return "UNLOCK";
  }
  return "?";
}

struct DemoThread {
  Micro at = Micro::kAcqCas;
  std::uint32_t local = 0;
  std::uint32_t old = 0;
  int iters_left = 0;
  bool asleep = false;
};

}  // namespace

InconsistencyReport run_two_copy_interleaving(std::uint64_t seed, const NaiveDemoOptions& opts) {
  InconsistencyReport rep;
  rep.seed = seed;
  rep.interleavings_tried = 1;
  std::mt19937_64 rng(seed);
  std::vector<DemoThread> th(static_cast<std::size_t>(opts.threads));
  for (auto& d : th) {
    d.iters_left = opts.iterations;
    d.at = opts.real_lock_manager ? Micro::kLock : Micro::kAcqCas;
  }
  std::uint32_t pub = 0;   // public futex word
  std::uint32_t priv = 0;  // enclave copy
  int in_cs = 0;
  std::deque<std::size_t> host_waiters;
  // Lock-manager model state.
  std::optional<std::size_t> owner;
  std::deque<std::size_t> lm_queue;

  auto witness = [&](const char* kind) {
    rep.found = true;
    rep.kind = kind;
  };

  for (std::uint64_t step = 0; step < opts.max_steps && !rep.found; ++step) {
    if (opts.adversary && rng() % 8 == 0) {
      // The host rewrites the public word; only the two-copy design reads it.
      pub = 0;
      rep.schedule.push_back("adv:flip_lock_word");
    }
    std::vector<std::size_t> ready;
    bool all_done = true;
    for (std::size_t i = 0; i < th.size(); ++i) {
      if (th[i].at != Micro::kFinished) all_done = false;
      if (th[i].at != Micro::kFinished && !th[i].asleep) ready.push_back(i);
    }
    if (all_done) break;
    if (ready.empty()) {
      witness("lost-wakeup");
      break;
    }
    const std::size_t i = ready[rng() % ready.size()];
    DemoThread& d = th[i];
    rep.schedule.push_back("t" + std::to_string(i) + ":" + micro_name(d.at));
    switch (d.at) {
      case Micro::kAcqCas:
        if (priv == 0) {
          priv = 1;
          d.at = Micro::kCsEnter;
        } else {
          d.at = Micro::kAcqMark;
        }
        break;
      case Micro::kAcqMark:
        priv = 2;
        d.local = 2;
        d.at = Micro::kAcqSync;
        break;
      case Micro::kAcqSync:
        pub = d.local;
        d.at = Micro::kAcqWait;
        break;
      case Micro::kAcqWait:
        if (pub == 2) {
          d.asleep = true;
          host_waiters.push_back(i);
        }
        d.at = Micro::kAcqRefresh;
        break;
      case Micro::kAcqRefresh:
        priv = pub;
        d.at = Micro::kAcqCas2;
        break;
      case Micro::kAcqCas2:
        if (priv == 0) {
          priv = 2;
          d.at = Micro::kCsEnter;
        } else {
          d.at = Micro::kAcqMark;
        }
        break;
      case Micro::kCsEnter:
        if (++in_cs > 1) witness("mutual-exclusion");
        d.at = Micro::kCsExit;
        break;
      case Micro::kCsExit:
        --in_cs;
        d.at = opts.real_lock_manager ? Micro::kUnlock : Micro::kRelXchg;
        break;
      case Micro::kRelXchg:
        d.old = priv;
        priv = 0;
        d.at = d.old == 2 ? Micro::kRelSync : Micro::kDoneIter;
        break;
      case Micro::kRelSync:
        pub = 0;
        d.at = Micro::kRelWake;
        break;
      case Micro::kRelWake:
        if (!host_waiters.empty()) {
          th[host_waiters.front()].asleep = false;
          host_waiters.pop_front();
        }
        d.at = Micro::kDoneIter;
        break;
      case Micro::kDoneIter:
        if (--d.iters_left > 0) {
          d.at = opts.real_lock_manager ? Micro::kLock : Micro::kAcqCas;
        } else {
          d.at = Micro::kFinished;
        }
        break;
      case Micro::kLock:
        // Atomic inside the enclave; the owner hands the lock over on release.
        if (!owner) {
          owner = i;
          d.at = Micro::kCsEnter;
        } else {
          lm_queue.push_back(i);
          d.asleep = true;
          d.at = Micro::kCsEnter;
        }
        break;
      case Micro::kUnlock:
        owner.reset();
        if (!lm_queue.empty()) {
          owner = lm_queue.front();
          th[*owner].asleep = false;
          lm_queue.pop_front();
        }
        d.at = Micro::kDoneIter;
        break;
      case Micro::kFinished:
        break;
    }
  }
  return rep;
}

InconsistencyReport naive_two_copy_demo(std::uint64_t seed, const NaiveDemoOptions& opts) {
  InconsistencyReport last;
  for (std::uint64_t k = 0; k < opts.max_interleavings; ++k) {
    InconsistencyReport r = run_two_copy_interleaving(seed + k, opts);
    if (r.found) {
      r.interleavings_tried = k + 1;
      return r;
    }
    last = std::move(r);
  }
  last.found = false;
  last.interleavings_tried = opts.max_interleavings;
  last.schedule.clear();
  return last;
}

}  // namespace enclsim
