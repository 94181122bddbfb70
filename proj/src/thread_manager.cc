#include "enclsim/thread_manager.h"

#include <climits>
#include <cstring>

#include "enclsim/vm.h"

namespace enclsim {

namespace {

constexpr std::uint64_t kCloneVm = 0x100;
constexpr std::uint64_t kCloneSetTls = 0x80000;
constexpr std::uint64_t kCloneParentSetTid = 0x100000;
constexpr std::uint64_t kCloneChildClearTid = 0x200000;

// TLS segment fields.
constexpr std::uint64_t kTlsIsPrimary = 0;
constexpr std::uint64_t kTlsLink = 8;
constexpr std::uint64_t kTlsSavedFs = 16;
constexpr std::uint64_t kTlsSavedGs = 24;
constexpr std::uint64_t kTlsTid = 32;
constexpr std::uint64_t kTlsSize = 64;
// The first runtime page holds runtime globals (lock table word).
constexpr std::uint64_t kTlsAreaOffset = kPageSize;

}  // namespace

const char* thread_state_name(ThreadState s) {
  switch (s) {
    case ThreadState::kSpawning:
      return "spawning";
    case ThreadState::kRunnable:
      return "runnable";
    case ThreadState::kPoolWait:
      return "pool-wait";
    case ThreadState::kBlocked:
      return "blocked";
    case ThreadState::kInOcall:
      return "in-ocall";
    case ThreadState::kExited:
      return "exited";
  }
  return "?";
}

const char* tls_view_name(TlsView v) {
  switch (v) {
    case TlsView::kPlatform:
      return "platform";
    case TlsView::kRuntime:
      return "runtime";
    case TlsView::kGuest:
      return "guest";
  }
  return "?";
}

std::array<std::uint8_t, 40> CloneArgBlock::bytes() const {
  std::array<std::uint8_t, 40> b{};
  const std::uint64_t v[5] = {entry_pc, stack, ctid, tls, parent};
  std::memcpy(b.data(), v, sizeof v);
  return b;
}

ThreadManager::ThreadManager(Vm& vm) : vm_(vm) {}

Addr ThreadManager::platform_base(int slot) const {
  return vm_.enclave().region(RegionRole::kTcs).start + static_cast<std::uint64_t>(slot) * kPageSize;
}

Addr ThreadManager::allocate_tls(Tid tid, Addr link, bool primary) {
  EnclaveState& e = vm_.enclave();
  const MemoryRegion& rt = e.region(RegionRole::kRuntime);
  if (tls_next_ == 0) tls_next_ = rt.start + kTlsAreaOffset;
  Addr a;
  if (!tls_free_.empty()) {
    a = tls_free_.back();
    tls_free_.pop_back();
  } else {
    if (tls_next_ + kTlsSize > rt.end()) throw SimError("runtime area out of TLS segments");
    a = tls_next_;
    tls_next_ += kTlsSize;
  }
  std::array<std::uint64_t, kTlsSize / 8> f{};
  f[kTlsIsPrimary / 8] = primary ? 1 : 0;
  f[kTlsLink / 8] = link;
  f[kTlsTid / 8] = static_cast<std::uint64_t>(tid);
  std::array<std::uint8_t, kTlsSize> b{};
  std::memcpy(b.data(), f.data(), kTlsSize);
  e.write(Actor::kEnclave, a, b);
  return a;
}

namespace {

std::uint64_t read_field(EnclaveState& e, Addr seg, std::uint64_t off) {
  std::uint64_t v = 0;
  auto s = e.view(seg + off, 8);
  std::memcpy(&v, s.data(), 8);
  return v;
}

void write_field(EnclaveState& e, Addr seg, std::uint64_t off, std::uint64_t v) {
  std::array<std::uint8_t, 8> b{};
  std::memcpy(b.data(), &v, 8);
  e.write(Actor::kEnclave, seg + off, b);
}

}  // namespace

void ThreadManager::free_tls(ThreadRecord& t) {
  if (t.tls_segment == 0) return;
  EnclaveState& e = vm_.enclave();
  // The primary segment belongs to the enclave and outlives its thread.
  if (t.is_primary_tls) return;
  const Addr link = read_field(e, t.tls_segment, kTlsLink);
  for (auto& [tid, other] : vm_.thread_table()) {
    if (other.tls_segment == 0 || &other == &t || other.state == ThreadState::kExited) continue;
    if (read_field(e, other.tls_segment, kTlsLink) == t.tls_segment) write_field(e, other.tls_segment, kTlsLink, link);
  }
  e.zero(t.tls_segment, kTlsSize);
  tls_free_.push_back(t.tls_segment);
  t.tls_segment = 0;
}

std::pair<Addr, int> ThreadManager::resolve_primary_tls(const ThreadRecord& t) const {
  if (t.tls_segment == 0) throw SimError("NoPrimary: thread has not entered the enclave");
  EnclaveState& e = vm_.enclave();
  Addr a = t.tls_segment;
  int hops = 0;
  while (read_field(e, a, kTlsIsPrimary) == 0) {
    a = read_field(e, a, kTlsLink);
    ++hops;
    if (a == 0 || hops > 100000) throw SimError("NoPrimary: TLS chain ends without a primary segment");
  }
  return {a, hops};
}

int ThreadManager::primary_count() const {
  int n = 0;
  for (const auto& [tid, t] : vm_.thread_table()) n += t.is_primary_tls ? 1 : 0;
  return n;
}

int ThreadManager::live_in_enclave() const {
  int n = 0;
  for (const auto& [tid, t] : vm_.thread_table()) n += (t.tcs >= 0 && t.state != ThreadState::kExited) ? 1 : 0;
  return n;
}

Addr ThreadManager::guest_fs(const ThreadRecord& t) const {
  const Addr fs = t.tls_views.guest_base;
  if (fs != 0 && (fs == t.tls_views.runtime_base || fs == t.tls_views.platform_base)) {
    throw SimError("guest fs base aliases a runtime base");
  }
  return fs;
}

void ThreadManager::tls_switch(ThreadRecord& t, TlsView view) {
  if (view == t.active_view) {
    ++tls_.noops;
    return;
  }
  // Guest view is only reachable from the runtime view, and left back to it.
  if ((view == TlsView::kGuest && t.active_view != TlsView::kRuntime) ||
      (t.active_view == TlsView::kGuest && view != TlsView::kRuntime)) {
    throw SimError(std::string("UnbalancedSwitch ") + tls_view_name(t.active_view) + "->" + tls_view_name(view));
  }
  if (t.tls_segment != 0) {
    EnclaveState& e = vm_.enclave();
    write_field(e, t.tls_segment, kTlsSavedFs, t.active_fs);
    write_field(e, t.tls_segment, kTlsSavedGs, t.active_gs);
  }
  if (t.active_view == TlsView::kPlatform && view == TlsView::kRuntime) ++tls_.entries;
  if (t.active_view == TlsView::kRuntime && view == TlsView::kPlatform) ++tls_.exits;
  if (view == TlsView::kGuest) ++tls_.guest_in;
  if (t.active_view == TlsView::kGuest) ++tls_.guest_out;
  switch (view) {
    case TlsView::kPlatform:
      t.active_fs = t.tls_views.platform_base;
      t.active_gs = t.tls_views.platform_base;
      break;
    case TlsView::kRuntime:
      t.active_fs = t.tls_views.guest_base;
      t.active_gs = t.tls_views.runtime_base;
      break;
    case TlsView::kGuest:
      t.active_fs = t.tls_views.guest_base;
      t.active_gs = 0;
      break;
  }
  t.active_view = view;
  ++tls_.switches;
  ++vm_.stats().tls_switches;
}

ThreadRecord& ThreadManager::create_main_thread(Addr entry_pc, Addr stack_top) {
  HostWorld& host = vm_.host();
  EnclaveState& e = vm_.enclave();
  ThreadRecord t;
  t.tid = host.kernel().pid;
  host.kernel().threads.insert(t.tid);
  t.ctx.pc = entry_pc;
  t.ctx.regs[7] = stack_top;
  t.arena_size = vm_.config().arena_size;
  t.arena = host.public_memory().map(t.arena_size);
  auto slot = e.free_slot();
  if (!slot) throw SimError("no TCS slot for the main thread");
  if (e.ecall(kEntryMain, *slot, t.tid, 0) != EnclaveStatus::kOk) throw SimError("main entry refused");
  t.tcs = *slot;
  // The first TLS created inside the enclave is the primary one.
  t.tls_segment = allocate_tls(t.tid, 0, true);
  t.is_primary_tls = true;
  t.tls_views.runtime_base = t.tls_segment;
  t.tls_views.platform_base = platform_base(t.tcs);
  t.state = ThreadState::kRunnable;
  auto [it, ok] = vm_.thread_table().emplace(t.tid, std::move(t));
  ThreadRecord& m = it->second;
  tls_switch(m, TlsView::kRuntime);
  vm_.record("ecall", m.tid, {{"entry", "main"}, {"tcs", std::to_string(m.tcs)}});
  return m;
}

void ThreadManager::handle_clone(ThreadRecord& parent, const CloneRequest& req) {
  if (!(req.flags & kCloneVm)) {
    // New processes are not supported.
    parent.ctx.regs[0] = static_cast<std::uint64_t>(err::kENOSYS);
    vm_.record("sysret", parent.tid, {{"nr", "56"}, {"result", std::to_string(err::kENOSYS)}});
    return;
  }
  auto slot = vm_.enclave().free_slot();
  if (!slot) {
    parent.pending_clone = req;
    parent.state = ThreadState::kPoolWait;
    vm_.record("pool_wait", parent.tid, {{"busy", std::to_string(vm_.enclave().busy_slots())}});
    return;
  }
  spawn(parent, req, *slot);
}

void ThreadManager::retry_clone(ThreadRecord& parent) {
  CloneRequest& req = *parent.pending_clone;
  ++req.waited;
  ++vm_.stats().pool_wait_steps;
  if (auto slot = vm_.enclave().free_slot()) {
    CloneRequest r = req;
    parent.pending_clone.reset();
    parent.state = ThreadState::kRunnable;
    spawn(parent, r, *slot);
    return;
  }
  if (req.waited >= vm_.config().pool_wait_bound) {
    parent.pending_clone.reset();
    parent.state = ThreadState::kRunnable;
    parent.ctx.regs[0] = static_cast<std::uint64_t>(err::kEAGAIN);
    vm_.record("pool_wait_bound", parent.tid, {{"waited", std::to_string(vm_.config().pool_wait_bound)}});
    vm_.record("sysret", parent.tid, {{"nr", "56"}, {"result", std::to_string(err::kEAGAIN)}});
  }
}

void ThreadManager::spawn(ThreadRecord& parent, const CloneRequest& req, int slot) {
  HostWorld& host = vm_.host();
  CloneArgBlock blk;
  blk.entry_pc = parent.ctx.pc;
  blk.stack = req.child_stack;
  blk.ctid = req.ctid;
  blk.tls = req.tls;
  blk.parent = static_cast<std::uint64_t>(parent.tid);
  const Addr pub = host.public_memory().map(kPageSize);
  vm_.write_public(pub, blk.bytes());

  OcallRequest oc;
  oc.kind = OcallKind::kThreadCreate;
  oc.args[0] = pub;
  oc.tid = parent.tid;
  const std::int64_t r = vm_.ocall(parent, oc, "partial", "clone");
  const SyscallSpec* spec = vm_.mediator().table().find(56);
  if (r <= 0 || vm_.thread_table().count(static_cast<Tid>(r))) {
    host.public_memory().unmap(pub, kPageSize);
    const std::int64_t res = r < 0 && is_error_result(r) ? r : vm_.mediator().reject(parent, *spec, IagoKind::kRange, r);
    parent.ctx.regs[0] = static_cast<std::uint64_t>(res);
    vm_.record("sysret", parent.tid, {{"nr", "56"}, {"result", std::to_string(res)}});
    return;
  }
  const Tid tid = static_cast<Tid>(r);
  ++vm_.stats().clones;

  // The slot is reserved for the child until it exits.
  TcsSlot& s = vm_.enclave().slots()[static_cast<std::size_t>(slot)];
  s.busy = true;
  s.bound_thread = tid;

  ThreadRecord c;
  c.tid = tid;
  c.tcs = slot;
  c.ctx = parent.ctx;
  c.ctx.regs[0] = 0;
  if (req.child_stack != 0) c.ctx.regs[7] = req.child_stack;
  c.tls_views.guest_base = parent.tls_views.guest_base;
  if (req.flags & kCloneSetTls) {
    c.ctx.tls_base_guest = req.tls;
    c.tls_views.guest_base = req.tls;
  }
  if (req.flags & kCloneChildClearTid) c.ctid_addr = req.ctid;
  c.parent = parent.tid;
  c.clone_args_public = pub;
  c.clone_args_private = blk;
  c.state = ThreadState::kSpawning;
  c.arena_size = vm_.config().arena_size;
  c.arena = host.public_memory().map(c.arena_size);
  auto [it, ok] = vm_.thread_table().emplace(tid, std::move(c));
  ThreadRecord& child = it->second;
  vm_.record("clone", parent.tid, {{"child", std::to_string(tid)}, {"tcs", std::to_string(slot)}});
  vm_.fire_adversary(AdvEvent::kThreadCreate, "clone", &child, nullptr, nullptr);

  if (req.flags & kCloneParentSetTid) {
    std::array<std::uint8_t, 8> b{};
    std::uint64_t v = static_cast<std::uint64_t>(tid);
    std::memcpy(b.data(), &v, 8);
    vm_.memory().write_guest(req.ptid, b);
  }
  parent.ctx.regs[0] = static_cast<std::uint64_t>(tid);
  vm_.record("sysret", parent.tid, {{"nr", "56"}, {"result", std::to_string(tid)}});
}

void ThreadManager::child_entry(ThreadRecord& child) {
  EnclaveState& e = vm_.enclave();
  // Nested entry through the trampoline on the reserved slot.
  EnclaveStatus st = e.ecall(kEntryChild, child.tcs, child.tid, child.clone_args_public);
  vm_.record("ecall", child.tid, {{"entry", "child"}, {"tcs", std::to_string(child.tcs)}, {"status", status_name(st)}});
  if (st != EnclaveStatus::kOk) {
    child.aborted = true;
    retire(child, 0, true);
    return;
  }
  tls_switch(child, TlsView::kRuntime);
  std::array<std::uint8_t, 40> outside{};
  vm_.read_public(child.clone_args_public, outside);
  std::array<std::uint8_t, 40> zeros{};
  vm_.write_public(child.clone_args_public, zeros);
  vm_.host().public_memory().unmap(child.clone_args_public, kPageSize);
  if (outside != child.clone_args_private.bytes()) {
    e.log().emit({ViolationCode::kR5Entry, Actor::kHostOs,
                  "thread arguments changed outside the enclave for tid " + std::to_string(child.tid)});
    child.aborted = true;
    vm_.record("thread_abort", child.tid, {{"reason", "clone-args-mismatch"}});
    retire(child, 0, true);
    return;
  }
  const ThreadRecord* parent = vm_.thread(child.parent);
  Addr link = parent != nullptr && parent->tls_segment != 0 ? parent->tls_segment : 0;
  if (link == 0) {
    for (const auto& [tid, t] : vm_.thread_table()) {
      if (t.is_primary_tls) link = t.tls_segment;
    }
  }
  child.tls_segment = allocate_tls(child.tid, link, false);
  child.tls_views.runtime_base = child.tls_segment;
  child.tls_views.platform_base = platform_base(child.tcs);
  child.state = ThreadState::kRunnable;
  // First dispatch goes straight to the code-cache entry for the clone return point.
  vm_.record("thread_start", child.tid, {{"pc", hex_value(child.ctx.pc)}});
}

void ThreadManager::handle_exit(ThreadRecord& t, int code, bool is_group) {
  vm_.record("exit", t.tid, {{"code", std::to_string(code)}, {"group", is_group ? "1" : "0"}});
  if (is_group) {
    for (auto& [tid, other] : vm_.thread_table()) {
      if (&other != &t) retire(other, code, true);
    }
    retire(t, code, true);
    vm_.terminate(code, std::nullopt);
    return;
  }
  retire(t, code, true);
}

void ThreadManager::retire(ThreadRecord& t, int code, bool clear_ctid) {
  if (t.state == ThreadState::kExited) return;
  if (clear_ctid && t.ctid_addr) {
    std::array<std::uint8_t, 8> zero{};
    vm_.memory().write_guest(*t.ctid_addr, zero);
    vm_.locks().futex_wake(t, *t.ctid_addr, INT_MAX);
  }
  vm_.locks().forget(t.tid);
  t.pending_ocall.reset();
  t.pending_lock.reset();
  t.pending_clone.reset();
  free_tls(t);
  if (t.tcs >= 0) {
    if (t.active_view == TlsView::kGuest) tls_switch(t, TlsView::kRuntime);
    OcallRequest req;
    req.kind = OcallKind::kThreadExit;
    req.args[0] = static_cast<std::uint64_t>(t.tid);
    req.tid = t.tid;
    vm_.ocall(t, req, "partial", "thread_exit");
    if (t.active_view == TlsView::kRuntime) tls_switch(t, TlsView::kPlatform);
    vm_.enclave().release_tcs(t.tcs);
    t.tcs = -1;
  }
  if (t.arena != 0) {
    std::vector<std::uint8_t> zeros(t.arena_size, 0);
    vm_.write_public(t.arena, zeros);
    vm_.host().public_memory().unmap(t.arena, t.arena_size);
    t.arena = 0;
  }
  t.state = ThreadState::kExited;
  t.exit_code = code;
  vm_.record("thread_exit", t.tid, {{"code", std::to_string(code)}});
  bool any_live = false;
  for (const auto& [tid, o] : vm_.thread_table()) any_live = any_live || o.state != ThreadState::kExited;
  if (!any_live) vm_.set_exit_status(code);
}

}  // namespace enclsim
