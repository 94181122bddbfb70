#include "enclsim/dbt.h"

#include "enclsim/vm.h"

namespace enclsim {

const char* stub_name(StubKind k) {
  switch (k) {
    case StubKind::kNone:
      return "none";
    case StubKind::kSyscall:
      return "syscall";
    case StubKind::kFutex:
      return "futex";
    case StubKind::kCpuid:
      return "cpuid";
    case StubKind::kRdtsc:
      return "rdtsc";
  }
  return "?";
}

bool TranslatedBlock::raw_illegal() const {
  for (const TranslatedInsn& ti : translated) {
    if (is_enclave_illegal(ti.insn.op) && ti.stub == StubKind::kNone) return true;
  }
  return false;
}

std::shared_ptr<const TranslatedBlock> CodeCache::lookup(Addr pc) {
  auto it = blocks_.find(pc);
  if (it == blocks_.end()) {
    ++misses_;
    return nullptr;
  }
  ++hits_;
  return it->second;
}

std::shared_ptr<const TranslatedBlock> CodeCache::insert(TranslatedBlock b) {
  auto p = std::make_shared<const TranslatedBlock>(std::move(b));
  blocks_[p->start_pc] = p;
  return p;
}

std::size_t CodeCache::invalidate(Addr lo, Addr hi) {
  std::size_t n = 0;
  // Blocks are at most kMaxBlockInsns long, so only starts in this window can overlap.
  const Addr span = kMaxBlockInsns * kInsnSize;
  auto it = blocks_.lower_bound(lo > span ? lo - span : 0);
  while (it != blocks_.end() && it->first < hi) {
    const TranslatedBlock& b = *it->second;
    const Addr end = std::max(b.end_pc(), b.start_pc + kInsnSize);
    if (b.start_pc < hi && end > lo) {
      it = blocks_.erase(it);
      ++n;
    } else {
      ++it;
    }
  }
  invalidations_ += n;
  return n;
}

DbtEngine::DbtEngine(Vm& vm) : vm_(vm) {}

void DbtEngine::invalidate(Addr lo, Addr hi) {
  cache_.invalidate(lo, hi);
  if (lo < running_hi_ && hi > running_lo_) current_invalidated_ = true;
}

namespace {

StubKind stub_for(Opcode op) {
  switch (op) {
    case Opcode::kSyscall:
      return StubKind::kSyscall;
    case Opcode::kCpuid:
      return StubKind::kCpuid;
    case Opcode::kRdtsc:
      return StubKind::kRdtsc;
    default:
      return StubKind::kNone;
  }
}

}  // namespace

TranslatedBlock DbtEngine::translate_block(Addr pc) {
  MemoryManager& mm = vm_.memory();
  TranslatedBlock b;
  b.start_pc = pc;
  Addr a = pc;
  bool ended = false;
  while (b.source.size() < kMaxBlockInsns) {
    InsnBytes raw{};
    if (!mm.fetch(a, raw)) {
      if (b.source.empty()) b.fault = FetchFault::kUnmapped;
      break;
    }
    auto in = decode(raw);
    if (!in) {
      if (b.source.empty()) b.fault = FetchFault::kInvalid;
      break;
    }
    b.source.push_back(*in);
    b.source_bytes.insert(b.source_bytes.end(), raw.begin(), raw.end());
    b.translated.push_back({*in, a, stub_for(in->op)});
    a += kInsnSize;
    if (b.translated.back().stub != StubKind::kNone) {
      b.terminator = Terminator::kStub;
      ended = true;
    } else if (is_branch(in->op)) {
      b.terminator = Terminator::kBranch;
      ended = true;
    } else if (in->op == Opcode::kHlt) {
      b.terminator = Terminator::kHalt;
      ended = true;
    }
    if (ended) break;
  }
  if (!ended) b.terminator = Terminator::kFallthrough;
  LockManager::rewrite_sync_calls(b);
  return b;
}

void DbtEngine::execute_block(ThreadRecord& t) {
  RunStats& st = vm_.stats();
  ThreadManager& tm = vm_.threads();
  MemoryManager& mm = vm_.memory();
  std::shared_ptr<const TranslatedBlock> blk = cache_.lookup(t.ctx.pc);
  if (!blk) {
    blk = cache_.insert(translate_block(t.ctx.pc));
    vm_.record("translate", t.tid, {{"pc", hex_value(blk->start_pc)}, {"insns", std::to_string(blk->source.size())}});
  }
  ++st.blocks;
  ++t.blocks;
  vm_.record("block", t.tid, {{"pc", hex_value(blk->start_pc)}});

  auto fault = [&](Addr pc, int signum, int code, Addr addr) {
    GuestContext at = t.ctx;
    at.pc = pc;
    // The handler, if any, returns past the faulting instruction.
    t.ctx.pc = pc + kInsnSize;
    if (t.active_view == TlsView::kGuest) tm.tls_switch(t, TlsView::kRuntime);
    vm_.signals().raise_sync(t, SignalInfo{signum, code, addr}, at);
  };

  if (blk->fault != FetchFault::kNone) {
    const Addr pc = t.ctx.pc;
    if (blk->fault == FetchFault::kUnmapped) {
      fault(pc, sig::kSIGSEGV, mm.find(pc) ? sig::kSegvAccErr : sig::kSegvMapErr, pc);
    } else {
      fault(pc, sig::kSIGILL, sig::kIllOpc, pc);
    }
    return;
  }

  running_lo_ = blk->start_pc;
  running_hi_ = blk->end_pc();
  current_invalidated_ = false;
  tm.tls_switch(t, TlsView::kGuest);
  auto finish = [&] {
    running_lo_ = running_hi_ = 0;
    if (t.active_view == TlsView::kGuest) tm.tls_switch(t, TlsView::kRuntime);
  };

  for (const TranslatedInsn& ti : blk->translated) {
    const Instruction& in = ti.insn;
    if (is_enclave_illegal(in.op) && ti.stub == StubKind::kNone) {
      ++illegal_executed_;
      throw SimError("untranslated " + std::string(opcode_name(in.op)) + " at " + hex_value(ti.pc));
    }
    GuestContext& c = t.ctx;
    if (ti.stub != StubKind::kNone) {
      finish();
      c.pc = ti.pc + kInsnSize;
      ++st.insns_retired;
      const SyscallArgs args{c.regs[1], c.regs[2], c.regs[3], c.regs[4], c.regs[5], c.regs[6]};
      switch (ti.stub) {
        case StubKind::kSyscall:
          ++st.syscalls_retired;
          vm_.mediator().dispatch_syscall(t, static_cast<std::int64_t>(c.regs[0]), args);
          break;
        case StubKind::kFutex:
          // Bound at translation time; no trip through the generic dispatcher.
          ++st.syscalls_retired;
          ++st.mediator_dispatches;
          ++st.syscalls_emulate;
          ++st.syscall_histogram[kSysFutex];
          vm_.record("syscall", t.tid, {{"nr", "202"}, {"name", "futex"}, {"strategy", "emulate"}});
          vm_.locks().handle_futex(t, args[0], static_cast<std::int64_t>(args[1]), args[2]);
          break;
        case StubKind::kCpuid:
          vm_.mediator().emulate_cpuid(t);
          break;
        case StubKind::kRdtsc:
          vm_.mediator().emulate_rdtsc(t);
          break;
        case StubKind::kNone:
          break;
      }
      return;
    }

    auto val = [&](const Operand& o) -> std::uint64_t {
      return o.kind == OperandKind::kReg ? c.regs[o.reg] : static_cast<std::uint64_t>(o.imm);
    };
    Addr next = ti.pc + kInsnSize;
    switch (in.op) {
      case Opcode::kMov:
        c.regs[in.operands[0].reg] = val(in.operands[1]);
        break;
      case Opcode::kAdd:
      case Opcode::kSub:
      case Opcode::kMul:
      case Opcode::kDiv: {
        std::uint64_t a, b;
        if (in.operand_count == 2) {
          a = c.regs[in.operands[0].reg];
          b = val(in.operands[1]);
        } else {
          a = val(in.operands[1]);
          b = val(in.operands[2]);
        }
        std::uint64_t r;
        if (in.op == Opcode::kAdd) {
          r = a + b;
        } else if (in.op == Opcode::kSub) {
          r = a - b;
        } else if (in.op == Opcode::kMul) {
          r = a * b;
        } else {
          if (b == 0) {
            fault(ti.pc, sig::kSIGFPE, sig::kFpeIntDiv, ti.pc);
            return;
          }
          r = a / b;
        }
        c.regs[in.operands[0].reg] = r;
        c.zero = r == 0;
        break;
      }
      case Opcode::kLoad: {
        const Addr a = c.regs[in.operands[1].reg] + static_cast<std::uint64_t>(in.operands[1].imm);
        std::uint64_t v = 0;
        if (!mm.load64(a, v)) {
          fault(ti.pc, sig::kSIGSEGV, mm.find(a) ? sig::kSegvAccErr : sig::kSegvMapErr, a);
          return;
        }
        c.regs[in.operands[0].reg] = v;
        break;
      }
      case Opcode::kStore: {
        const Addr a = c.regs[in.operands[0].reg] + static_cast<std::uint64_t>(in.operands[0].imm);
        bool code_written = false;
        if (!mm.store64(a, val(in.operands[1]), code_written)) {
          fault(ti.pc, sig::kSIGSEGV, mm.find(a) ? sig::kSegvAccErr : sig::kSegvMapErr, a);
          return;
        }
        break;
      }
      case Opcode::kJmp:
        next = val(in.operands[0]);
        break;
      case Opcode::kJz:
        if (c.zero) next = val(in.operands[0]);
        break;
      case Opcode::kJnz:
        if (!c.zero) next = val(in.operands[0]);
        break;
      case Opcode::kHlt:
        ++st.insns_retired;
        finish();
        tm.handle_exit(t, 0, false);
        return;
      default:
        break;
    }
    ++st.insns_retired;
    c.pc = next;
    // A store rewrote this very block: retranslate from the next pc.
    if (current_invalidated_) break;
  }
  finish();
}

}  // namespace enclsim
