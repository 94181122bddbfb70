#include "enclsim/vm.h"

#include <algorithm>
#include <cstring>

namespace enclsim {

namespace {

std::vector<std::uint8_t> parse_bytes(const std::string& spec, std::mt19937_64& rng) {
  std::vector<std::uint8_t> out;
  if (spec.rfind("random:", 0) == 0) {
    const std::uint64_t n = std::stoull(spec.substr(7), nullptr, 0);
    for (std::uint64_t i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(rng()));
    return out;
  }
  std::string h = spec.rfind("0x", 0) == 0 ? spec.substr(2) : spec;
  if (h.size() % 2 != 0) throw ConfigError("odd-length hex bytes '" + spec + "'");
  for (std::size_t i = 0; i < h.size(); i += 2) {
    out.push_back(static_cast<std::uint8_t>(std::stoul(h.substr(i, 2), nullptr, 16)));
  }
  return out;
}

}  // namespace

Vm::Vm(VmConfig config)
    : config_(std::move(config)),
      frames_(std::make_shared<FrameRegistry>()),
      log_(config_.policy),
      trace_(config_.trace),
      rng_(config_.seed) {
  log_.set_listener([this](const ViolationEvent& ev) {
    ++stats_.violations;
    record("violation", last_tid_,
           {{"code", violation_name(ev.code)}, {"actor", actor_name(ev.actor)}, {"detail", ev.detail}});
  });
  auto pub = host_.public_memory().ranges();
  enclave_ = EnclaveState::create(config_.enclave, frames_, pub, &log_);
  host_.attach_enclave(enclave_.get());
  memory_ = std::make_unique<MemoryManager>(*this);
  threads_ = std::make_unique<ThreadManager>(*this);
  locks_ = std::make_unique<LockManager>(*this);
  signals_ = std::make_unique<SignalSubsystem>(*this);
  mediator_ = std::make_unique<SyscallMediator>(*this, config_.table ? *config_.table : SyscallTable::builtin());
  dbt_ = std::make_unique<DbtEngine>(*this);
}

Vm::~Vm() = default;

ThreadRecord* Vm::thread(Tid tid) {
  auto it = threads_table_.find(tid);
  return it == threads_table_.end() ? nullptr : &it->second;
}

ThreadRecord& Vm::main_thread() {
  ThreadRecord* t = thread(main_tid_);
  if (t == nullptr) throw SimError("no main thread");
  return *t;
}

void Vm::record(std::string_view kind, Tid tid, std::initializer_list<TraceField> fields) {
  trace_.record(step_, kind, tid, fields);
}

void Vm::load(const GuestProgram& program, std::span<const std::uint8_t> data) {
  if (loaded_) throw SimError("program already loaded");
  const EnclaveConfig& ec = config_.enclave;
  record("config", 0,
         {{"seed", std::to_string(config_.seed)},
          {"tcs", std::to_string(ec.tcs_count)},
          {"nssa", std::to_string(ec.nssa)},
          {"enclave_size", std::to_string(ec.size)},
          {"ocall_latency", std::to_string(config_.ocall_latency)}});
  memory_->initialize();
  memory_->load_code(program.image(layout::kCodeBase));
  memory_->load_data(data, config_.data_pages * kPageSize);
  const Addr sp = memory_->map_main_stack();
  signals_->install_primary();
  ThreadRecord& m = threads_->create_main_thread(layout::kCodeBase + program.entry * kInsnSize, sp);
  main_tid_ = m.tid;
  last_tid_ = m.tid;
  loaded_ = true;
  if (program.instructions.empty()) threads_->retire(m, 0, false);
}

void Vm::set_initial_regs(const std::array<std::uint64_t, kNumRegs>& regs) { main_thread().ctx.regs = regs; }

bool Vm::schedulable(const ThreadRecord& t) const {
  return t.state != ThreadState::kExited && t.state != ThreadState::kBlocked;
}

RunResult Vm::run() {
  if (!loaded_) throw SimError("run before load");
  try {
    while (step_once()) {
    }
  } catch (const ViolationAbort& e) {
    result_.error = e.what();
    record("abort", last_tid_, {{"reason", "violation"}});
    terminated_ = true;
  }
  finish_stats();
  return result_;
}

bool Vm::step_once() {
  if (terminated_ || finished_) return false;
  if (step_ >= config_.max_steps) {
    result_.step_limit = true;
    finished_ = true;
    record("step_limit", 0, {{"steps", std::to_string(step_)}});
    return false;
  }
  ++step_;
  host_.kernel().clock = step_;
  if (!host_.adversary().empty()) {
    for (const AdvTrigger& trig : host_.adversary_step(AdvEvent::kStep, "", step_)) {
      apply_action(trig, AdvEvent::kStep, nullptr, nullptr, nullptr);
    }
  }
  for (const auto& s : host_.take_due_signals(step_)) signals_->raise_async(s.tid, s.signum, s.forged);
  if (terminated_) return false;

  std::vector<ThreadRecord*> ready;
  bool any_live = false;
  for (auto& [tid, t] : threads_table_) {
    if (t.state != ThreadState::kExited) any_live = true;
    if (schedulable(t)) ready.push_back(&t);
  }
  if (ready.empty()) {
    finished_ = true;
    if (any_live) {
      result_.deadlock = true;
      record("deadlock", 0);
    }
    return false;
  }
  ThreadRecord& t = *ready[rng_() % ready.size()];
  ++rng_draws_;
  if (t.tid != last_tid_) {
    ++stats_.context_switches;
    last_tid_ = t.tid;
  }
  run_turn(t);

  const int busy = enclave_->busy_slots();
  if (busy != threads_->live_in_enclave() || busy > enclave_->config().tcs_count) {
    throw SimError("TCS accounting broken: busy=" + std::to_string(busy) +
                   " live=" + std::to_string(threads_->live_in_enclave()));
  }
  stats_.max_in_enclave = std::max<std::uint64_t>(stats_.max_in_enclave, static_cast<std::uint64_t>(busy));
  return !terminated_ && !finished_;
}

void Vm::run_turn(ThreadRecord& t) {
  switch (t.state) {
    case ThreadState::kSpawning:
      threads_->child_entry(t);
      return;
    case ThreadState::kPoolWait:
      threads_->retry_clone(t);
      return;
    case ThreadState::kInOcall:
      if (t.pending_ocall && step_ >= t.pending_ocall->done_step) mediator_->complete_ocall(t);
      return;
    case ThreadState::kRunnable:
      if (t.pending_lock) {
        locks_->retry_lock(t);
        return;
      }
      signals_->deliver_pending(t);
      if (terminated_ || t.state != ThreadState::kRunnable) return;
      dbt_->execute_block(t);
      return;
    case ThreadState::kBlocked:
    case ThreadState::kExited:
      return;
  }
}

std::int64_t Vm::ocall(ThreadRecord& t, const OcallRequest& req, std::string_view cause, const std::string& name,
                       const MarshalPlan* plan) {
  const std::int64_t raw = ocall_begin(t, req, cause, name, plan);
  return ocall_end(t, req, name, plan, raw);
}

std::int64_t Vm::ocall_begin(ThreadRecord& t, const OcallRequest& req, std::string_view cause,
                             const std::string& name, const MarshalPlan* plan) {
  fire_adversary(AdvEvent::kBeforeOcall, name, &t, plan, nullptr);
  if (t.tcs >= 0) {
    if (t.active_view == TlsView::kGuest) threads_->tls_switch(t, TlsView::kRuntime);
    threads_->tls_switch(t, TlsView::kPlatform);
    enclave_->ocall_exit(t.tcs);
  }
  ++stats_.ocalls;
  if (cause == "delegate") ++stats_.ocalls_delegate;
  const std::int64_t raw = host_.ocall_execute(req);
  record("ocall", t.tid,
         {{"type", ocall_kind_name(req.kind)},
          {"name", name},
          {"cause", std::string(cause)},
          {"raw", std::to_string(raw)}});
  return raw;
}

std::int64_t Vm::ocall_end(ThreadRecord& t, const OcallRequest&, const std::string& name, const MarshalPlan* plan,
                           std::int64_t raw) {
  fire_adversary(AdvEvent::kAfterOcall, name, &t, plan, &raw);
  if (t.tcs >= 0) {
    enclave_->ocall_return(t.tcs);
    threads_->tls_switch(t, TlsView::kRuntime);
  }
  return raw;
}

void Vm::fire_adversary(AdvEvent event, const std::string& name, ThreadRecord* t, const MarshalPlan* plan,
                        std::int64_t* result) {
  if (host_.adversary().empty()) return;
  for (const AdvTrigger& trig : host_.adversary_step(event, name, step_)) apply_action(trig, event, t, plan, result);
}

bool Vm::write_public(Addr a, std::span<const std::uint8_t> in) {
  if (enclave_->touches_private(a, in.size())) throw SimError("public write into private memory at " + hex_value(a));
  return host_.public_memory().write(a, in);
}

bool Vm::read_public(Addr a, std::span<std::uint8_t> out) {
  if (enclave_->touches_private(a, out.size())) throw SimError("public read of private memory at " + hex_value(a));
  return host_.public_memory().read(a, out);
}

void Vm::terminate(int status, std::optional<int> signal) {
  if (terminated_) return;
  terminated_ = true;
  result_.exit_status = status;
  result_.term_signal = signal;
  record("terminate", last_tid_,
         {{"status", std::to_string(status)}, {"signal", signal ? std::to_string(*signal) : std::string("none")}});
}

void Vm::apply_action(const AdvTrigger& trig, AdvEvent event, ThreadRecord* t, const MarshalPlan* plan,
                      std::int64_t* result) {
  ++stats_.adversary_actions;
  std::string detail;
  const auto& a = trig.args;
  ThreadRecord* target = t != nullptr ? t : thread(main_tid_);
  auto addr_arg = [](const std::string& s) { return static_cast<Addr>(std::stoull(s, nullptr, 0)); };
  const MemoryRegion& heap = enclave_->region(RegionRole::kHeap);

  switch (trig.action) {
    case AdvAction::kMutatePublic: {
      Addr base = 0;
      if (a[0] == "arena") {
        base = target != nullptr ? target->arena : 0;
      } else if (a[0] == "cloneargs") {
        base = target != nullptr ? target->clone_args_public : 0;
      } else if (a[0].rfind("slot", 0) == 0) {
        const std::size_t n = std::stoul(a[0].substr(4));
        if (plan != nullptr && n < plan->public_slots.size()) base = plan->public_slots[n].addr;
      } else {
        base = addr_arg(a[0]);
      }
      if (base == 0) {
        detail = "no-target " + a[0];
        break;
      }
      const Addr at = base + std::stoull(a[1], nullptr, 0);
      auto bytes = parse_bytes(a[2], host_.adversary_rng());
      const bool ok = host_.host_write(at, bytes);
      detail = "write " + hex_value(at) + " len=" + std::to_string(bytes.size()) + (ok ? " ok" : " refused");
      break;
    }
    case AdvAction::kLieResult: {
      if (result == nullptr) {
        detail = "no-result";
        break;
      }
      const std::int64_t n = std::stoll(a[1], nullptr, 0);
      const std::int64_t before = *result;
      *result = a[0] == "delta" ? *result + n : n;
      detail = std::to_string(before) + "->" + std::to_string(*result);
      break;
    }
    case AdvAction::kFlipLockWord: {
      // The host can only name the enclave address backing the word.
      const Addr g = addr_arg(a[0]);
      const Addr e = memory_->translate_address(g).value_or(g);
      std::array<std::uint8_t, 4> zero{};
      const bool ok = host_.host_write(e, zero);
      detail = "lock word " + hex_value(g) + (ok ? " written" : " refused");
      break;
    }
    case AdvAction::kForgeSignal: {
      const int signum = std::stoi(a[0], nullptr, 0);
      const Tid tid = a.size() > 1 ? std::stoll(a[1], nullptr, 0) : main_tid_;
      host_.raise_async_signal(tid, signum, step_, true);
      detail = "sig " + std::to_string(signum) + " tid " + std::to_string(tid);
      break;
    }
    case AdvAction::kSpuriousWake:
      // Waiters sit in enclave queues; the host has nothing to wake.
      detail = "key " + a[0] + " no-effect waiters=" + std::to_string(locks_->waiters(addr_arg(a[0])));
      break;
    case AdvAction::kTamperSsa: {
      if (target == nullptr || target->tcs < 0) {
        detail = "no-thread";
        break;
      }
      TcsSlot& s = enclave_->slots()[static_cast<std::size_t>(target->tcs)];
      const bool was_inside = s.inside;
      const bool forced = s.ssa_stack.empty();
      // With no saved frame, interrupt the thread first.
      if (forced) enclave_->aex(target->tcs, target->ctx);
      GuestContext forged = s.ssa_stack.back().saved_context;
      forged.pc += kInsnSize;
      forged.regs[0] ^= 0x41;
      GuestContext out;
      const EnclaveStatus st = enclave_->eresume(target->tcs, out, forged);
      if (forced) enclave_->eresume(target->tcs, out);
      s.inside = was_inside;
      detail = std::string("eresume ") + status_name(st);
      break;
    }
    case AdvAction::kBadEcall: {
      const auto entry = static_cast<EntryId>(std::stoul(a[0], nullptr, 0));
      const EnclaveStatus st = enclave_->ecall(entry, 0, host_.allocate_tid(), 0);
      detail = "entry " + a[0] + " " + status_name(st);
      break;
    }
    case AdvAction::kReadPrivate: {
      const Addr at = a[0] == "heap" ? heap.start : addr_arg(a[0]);
      std::array<std::uint8_t, 8> buf{};
      const bool ok = host_.host_read(at, buf);
      detail = "read " + hex_value(at) + (ok ? " ok" : " refused");
      break;
    }
    case AdvAction::kMutatePerms: {
      const MemoryRegion* r = nullptr;
      for (const MemoryRegion& reg : enclave_->regions()) {
        if (a[0] == role_name(reg.role)) r = &reg;
      }
      if (r == nullptr) {
        detail = "no-region " + a[0];
        break;
      }
      enclave_->reject_mutation(*r, kPermRead | kPermWrite | kPermExec, Actor::kHostOs);
      detail = std::string("region ") + role_name(r->role);
      break;
    }
    case AdvAction::kAliasFrame: {
      const FrameId f = enclave_->frame_of(heap.start);
      auto r = enclave_->map_private(heap.start + kPageSize, kPageSize, kPermRead | kPermWrite, f, Actor::kHostOs);
      detail = "frame " + hex_value(f) + (r ? " mapped" : " refused");
      break;
    }
    case AdvAction::kShareFrame: {
      if (!peer_enclave_) {
        EnclaveConfig pc;
        pc.base = enclave_->limit() + 0x10000000;
        pc.size = 1024 * 1024;
        pc.heap_size = 64 * 1024;
        pc.tcs_count = 1;
        peer_enclave_ = EnclaveState::create(pc, frames_, {}, &log_);
      }
      const FrameId f = enclave_->frame_of(heap.start);
      const Addr at = peer_enclave_->region(RegionRole::kHeap).start;
      auto r = peer_enclave_->map_private(at, kPageSize, kPermRead | kPermWrite, f, Actor::kHostOs);
      detail = "frame " + hex_value(f) + (r ? " shared" : " refused");
      break;
    }
  }
  host_.log_adversary(step_, trig, detail);
  record("adversary", target != nullptr ? target->tid : 0,
         {{"event", adv_event_name(event)}, {"action", adv_action_name(trig.action)}, {"detail", detail}});
}

void Vm::finish_stats() {
  if (finished_stats_) return;
  finished_stats_ = true;
  stats_.steps = step_;
  stats_.ecalls = enclave_->diagnostics().ecalls;
  stats_.cache_hits = dbt_->cache().hits();
  stats_.cache_misses = dbt_->cache().misses();
  stats_.cache_invalidations = dbt_->cache().invalidations();
  const MemoryStats& ms = memory_->stats();
  stats_.mappings_created = ms.mappings_created;
  stats_.mappings_destroyed = ms.mappings_destroyed;
  stats_.writeback_pages = ms.writeback_pages;
  stats_.mapping_bytes_in = ms.bytes_copied_in;
  stats_.mapping_bytes_out = ms.bytes_copied_out;
  stats_.host_private_accesses = host_.private_access_attempts();
  if (ThreadRecord* m = thread(main_tid_)) result_.main_ctx = m->ctx;
  std::vector<std::pair<std::string, std::string>> kv;
  for (const auto& [k, v] : stats_.counters()) kv.emplace_back(k, std::to_string(v));
  std::vector<TraceField> fields;
  fields.reserve(kv.size());
  for (const auto& [k, v] : kv) fields.push_back({k, v});
  trace_.record(step_, "stats", 0, fields);
  record("end", 0,
         {{"status", std::to_string(result_.exit_status)},
          {"signal", result_.term_signal ? std::to_string(*result_.term_signal) : std::string("none")},
          {"deadlock", result_.deadlock ? "1" : "0"},
          {"step_limit", result_.step_limit ? "1" : "0"}});
}

}  // namespace enclsim
