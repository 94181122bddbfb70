#include "enclsim/signal_subsystem.h"

#include <cstring>

#include "enclsim/vm.h"

namespace enclsim {

namespace {

std::array<std::uint8_t, kSiginfoSize> encode_siginfo(const SignalInfo& info) {
  std::array<std::uint8_t, kSiginfoSize> b{};
  const std::uint64_t w[3] = {static_cast<std::uint64_t>(info.signum), static_cast<std::uint64_t>(info.code),
                              info.fault_addr};
  std::memcpy(b.data(), w, sizeof w);
  return b;
}

}  // namespace

SignalSubsystem::SignalSubsystem(Vm& vm) : vm_(vm) {}

void SignalSubsystem::install_primary() {
  if (!vm_.enclave().register_primary_handler(kEntrySignal)) throw SimError("primary signal handler refused");
}

bool SignalSubsystem::default_ignored(int signum) {
  return signum == sig::kSIGCHLD || signum == sig::kSIGURG || signum == sig::kSIGWINCH || signum == sig::kSIGCONT;
}

const HandlerEntry& SignalSubsystem::handler(int signum) const {
  if (signum < 1 || signum > kNumSignals) throw SimError("signal number out of range");
  return table_[static_cast<std::size_t>(signum)];
}

RegisterStatus SignalSubsystem::register_handler(ThreadRecord& t, int signum, Addr handler, std::uint64_t flags,
                                                 std::uint64_t mask) {
  if (signum < 1 || signum > kNumSignals || signum == sig::kSIGKILL || signum == sig::kSIGSTOP) {
    return RegisterStatus::kInvalid;
  }
  // Profiling timers are not available inside the enclave.
  if (signum == sig::kSIGPROF) return RegisterStatus::kUnsupported;
  table_[static_cast<std::size_t>(signum)] = {handler, flags, mask};
  vm_.record("sigaction", t.tid, {{"sig", std::to_string(signum)}, {"handler", hex_value(handler)}});
  return RegisterStatus::kOk;
}

void SignalSubsystem::raise_sync(ThreadRecord& t, const SignalInfo& info, const GuestContext& fault_ctx) {
  ++vm_.stats().signals_raised;
  vm_.record("signal_raised", t.tid,
             {{"sig", std::to_string(info.signum)}, {"sync", "1"}, {"addr", hex_value(info.fault_addr)}});
  fault_ctx_ = fault_ctx;
  const bool ok = deliver_in_enclave(t, info);
  fault_ctx_.reset();
  if (!ok && !vm_.terminated()) {
    // No SSA frame left for a synchronous fault: nothing can run the handler.
    t.ctx = fault_ctx;
    vm_.record("signal_fatal", t.tid, {{"sig", std::to_string(info.signum)}, {"reason", "ssa-exhausted"}});
    vm_.terminate(128 + info.signum, info.signum);
  }
}

void SignalSubsystem::raise_async(Tid tid, int signum, bool forged) {
  ++vm_.stats().signals_raised;
  ThreadRecord* t = vm_.thread(tid);
  if (signum < 1 || signum > kNumSignals) {
    vm_.enclave().log().emit({ViolationCode::kR5Entry, Actor::kHostOs,
                              "signal entry with invalid signal number " + std::to_string(signum)});
    ++vm_.stats().signals_dropped;
    vm_.record("signal_drop", tid, {{"sig", std::to_string(signum)}, {"reason", "invalid"}});
    return;
  }
  if (t == nullptr || t->state == ThreadState::kExited || t->tcs < 0) {
    ++vm_.stats().signals_dropped;
    vm_.record("signal_drop", tid, {{"sig", std::to_string(signum)}, {"reason", "no-thread"}});
    return;
  }
  vm_.record("signal_raised", tid, {{"sig", std::to_string(signum)}, {"sync", "0"}, {"forged", forged ? "1" : "0"}});
  SignalInfo info{signum, forged ? sig::kSiUser : sig::kSiTimer, 0};
  if (t->state == ThreadState::kInOcall) {
    deliver_out_of_enclave(*t, info);
    return;
  }
  t->pending_signals.push_back(info);
}

bool SignalSubsystem::deliver_pending(ThreadRecord& t) {
  if (t.pending_signals.empty() || t.tcs < 0) return false;
  const TcsSlot& s = vm_.enclave().slots()[static_cast<std::size_t>(t.tcs)];
  if (static_cast<int>(s.ssa_stack.size()) >= vm_.enclave().config().nssa) {
    SignalInfo& front = t.pending_signals.front();
    if (!front.queued) {
      front.queued = true;
      ++vm_.stats().signals_queued;
      vm_.record("signal_queue", t.tid, {{"sig", std::to_string(front.signum)}, {"reason", "ssa-exhausted"}});
    }
    return false;
  }
  SignalInfo info = t.pending_signals.front();
  t.pending_signals.pop_front();
  return deliver_in_enclave(t, info);
}

bool SignalSubsystem::deliver_in_enclave(ThreadRecord& t, const SignalInfo& info) {
  EnclaveState& e = vm_.enclave();
  const ExitReason why = fault_ctx_ ? ExitReason::kFault : ExitReason::kAex;
  if (e.aex(t.tcs, t.ctx, why, info.code) != EnclaveStatus::kOk) {
    ++vm_.stats().ssa_exhausted;
    if (!fault_ctx_) {
      SignalInfo held = info;
      if (!held.queued) {
        held.queued = true;
        ++vm_.stats().signals_queued;
        vm_.record("signal_queue", t.tid, {{"sig", std::to_string(info.signum)}, {"reason", "ssa-exhausted"}});
      }
      t.pending_signals.push_front(held);
    }
    return false;
  }
  ThreadManager& tm = vm_.threads();
  if (t.active_view == TlsView::kGuest) tm.tls_switch(t, TlsView::kRuntime);
  tm.tls_switch(t, TlsView::kPlatform);
  vm_.record("aex", t.tid, {{"tcs", std::to_string(t.tcs)}, {"depth", std::to_string(e.slots()[t.tcs].ssa_stack.size())}});
  const EnclaveStatus st = e.ecall(kEntrySignal, t.tcs, t.tid, 0);
  if (st != EnclaveStatus::kOk) {
    GuestContext back;
    e.eresume(t.tcs, back);
    tm.tls_switch(t, TlsView::kRuntime);
    ++vm_.stats().signals_dropped;
    return false;
  }
  tm.tls_switch(t, TlsView::kRuntime);
  vm_.record("primary_entered", t.tid, {{"sig", std::to_string(info.signum)}});
  return route(t, info, false);
}

bool SignalSubsystem::deliver_out_of_enclave(ThreadRecord& t, const SignalInfo& info) {
  EnclaveState& e = vm_.enclave();
  HostWorld& host = vm_.host();
  if (e.aex(t.tcs, t.ctx, ExitReason::kOcall, 0) != EnclaveStatus::kOk) {
    ++vm_.stats().ssa_exhausted;
    ++vm_.stats().signals_queued;
    SignalInfo held = info;
    held.queued = true;
    t.pending_signals.push_back(held);
    return false;
  }
  // The host stages siginfo in public memory and enters on the signal entry.
  const Addr pub = host.public_memory().map(kPageSize);
  auto staged = encode_siginfo(info);
  host.host_write(pub, staged);
  const EnclaveStatus st = e.ecall(kEntrySignal, t.tcs, t.tid, pub);
  if (st != EnclaveStatus::kOk) {
    GuestContext back;
    e.eresume(t.tcs, back);
    e.ocall_exit(t.tcs);
    host.public_memory().unmap(pub, kPageSize);
    ++vm_.stats().signals_dropped;
    return false;
  }
  vm_.threads().tls_switch(t, TlsView::kRuntime);
  std::array<std::uint8_t, kSiginfoSize> in{};
  vm_.read_public(pub, in);
  host.public_memory().unmap(pub, kPageSize);
  std::uint64_t signo = 0;
  std::memcpy(&signo, in.data(), 8);
  SignalInfo checked = info;
  if (signo < 1 || signo > static_cast<std::uint64_t>(kNumSignals)) {
    e.log().emit({ViolationCode::kR5Entry, Actor::kHostOs,
                  "staged siginfo carries invalid signal number " + std::to_string(signo)});
    ++vm_.stats().signals_dropped;
    vm_.record("signal_drop", t.tid, {{"sig", std::to_string(signo)}, {"reason", "invalid"}});
    resume_interrupted(t, true);
    return false;
  }
  if (signo != static_cast<std::uint64_t>(info.signum)) {
    // The staged copy was altered; the enclave trusts only its own record.
    vm_.record("signal_siginfo_mismatch", t.tid, {{"staged", std::to_string(signo)}});
  }
  t.state = ThreadState::kRunnable;
  vm_.record("primary_entered", t.tid, {{"sig", std::to_string(info.signum)}, {"outside", "1"}});
  return route(t, checked, true);
}

void SignalSubsystem::resume_interrupted(ThreadRecord& t, bool out_of_enclave) {
  EnclaveState& e = vm_.enclave();
  ThreadManager& tm = vm_.threads();
  tm.tls_switch(t, TlsView::kPlatform);
  e.eexit(t.tcs);
  GuestContext out;
  if (e.eresume(t.tcs, out) != EnclaveStatus::kOk) throw SimError("eresume failed after signal entry");
  t.ctx = out;
  tm.tls_switch(t, TlsView::kRuntime);
  if (out_of_enclave && t.pending_ocall) {
    e.ocall_exit(t.tcs);
    tm.tls_switch(t, TlsView::kPlatform);
    t.state = ThreadState::kInOcall;
  }
}

bool SignalSubsystem::route(ThreadRecord& t, const SignalInfo& info, bool out_of_enclave) {
  const HandlerEntry& h = table_[static_cast<std::size_t>(info.signum)];
  const bool ignore = h.handler == kSigIgn || (h.handler == kSigDfl && default_ignored(info.signum));
  if (ignore) {
    ++vm_.stats().signals_dropped;
    vm_.record("signal_ignore", t.tid, {{"sig", std::to_string(info.signum)}});
    resume_interrupted(t, out_of_enclave);
    return false;
  }
  if (h.handler == kSigDfl) {
    if (fault_ctx_) t.ctx = *fault_ctx_;
    vm_.record("signal_default", t.tid, {{"sig", std::to_string(info.signum)}, {"pc", hex_value(t.ctx.pc)}});
    vm_.terminate(128 + info.signum, info.signum);
    return false;
  }
  const std::size_t depth = t.signal_frames.size();
  const Addr frame = vm_.memory().sigstack_top(t.tcs) - (depth + 1) * kSignalFrameSize;
  if (!vm_.memory().write_guest(frame, encode_siginfo(info))) throw SimError("signal stack not writable");
  SignalFrame f;
  f.interrupted = t.ctx;
  f.info = info;
  f.frame_guest = frame;
  f.out_of_enclave = out_of_enclave;
  t.signal_frames.push_back(f);
  t.ctx.pc = h.handler;
  t.ctx.regs[1] = static_cast<std::uint64_t>(info.signum);
  t.ctx.regs[2] = frame;
  t.ctx.regs[7] = frame;
  ++vm_.stats().signals_delivered;
  vm_.record("secondary_entered", t.tid,
             {{"sig", std::to_string(info.signum)}, {"depth", std::to_string(depth + 1)}, {"frame", hex_value(frame)}});
  return true;
}

void SignalSubsystem::handle_sigreturn(ThreadRecord& t) {
  if (t.signal_frames.empty()) {
    vm_.record("sigreturn", t.tid, {{"error", "no-frame"}});
    vm_.terminate(128 + sig::kSIGSEGV, sig::kSIGSEGV);
    return;
  }
  SignalFrame f = t.signal_frames.back();
  t.signal_frames.pop_back();
  EnclaveState& e = vm_.enclave();
  ThreadManager& tm = vm_.threads();
  tm.tls_switch(t, TlsView::kPlatform);
  e.eexit(t.tcs);
  GuestContext out;
  if (e.eresume(t.tcs, out) != EnclaveStatus::kOk) {
    vm_.record("sigreturn", t.tid, {{"error", "eresume"}});
    vm_.terminate(128 + sig::kSIGSEGV, sig::kSIGSEGV);
    return;
  }
  tm.tls_switch(t, TlsView::kRuntime);
  if (!(out == f.interrupted)) throw SimError("resumed context differs from the interrupted one");
  t.ctx = out;
  vm_.record("sigreturn", t.tid, {{"sig", std::to_string(f.info.signum)}, {"pc", hex_value(t.ctx.pc)}});
  if (t.pending_ocall && t.pending_ocall->signal_depth == t.signal_frames.size()) {
    e.ocall_exit(t.tcs);
    tm.tls_switch(t, TlsView::kPlatform);
    t.state = ThreadState::kInOcall;
  }
}

}  // namespace enclsim
