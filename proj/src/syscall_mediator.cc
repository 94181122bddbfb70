#include "enclsim/syscall_mediator.h"

#include <algorithm>
#include <cstring>
#include <functional>

#include "enclsim/vm.h"

namespace enclsim {

namespace {

constexpr std::uint64_t kGuard = 16;
constexpr std::uint64_t kMaxCString = 4096;

std::uint64_t align16(std::uint64_t v) { return (v + 15) & ~std::uint64_t{15}; }

std::uint64_t get_u64(const std::vector<std::uint8_t>& b, std::uint64_t off) {
  std::uint64_t v = 0;
  if (off + 8 <= b.size()) std::memcpy(&v, b.data() + off, 8);
  return v;
}

void put_u64(std::vector<std::uint8_t>& b, std::uint64_t off, std::uint64_t v) {
  if (off + 8 <= b.size()) std::memcpy(b.data() + off, &v, 8);
}

// Syscalls whose single buffer can be split into several OCALLs.
std::optional<int> chunk_arg(const SyscallSpec& spec) {
  if (spec.ret.kind != ResultSchema::Kind::kLenArg) return std::nullopt;
  int buf = -1;
  for (std::size_t i = 0; i < spec.args.size(); ++i) {
    const ArgSchema& a = spec.args[i];
    if (a.shape == ShapeKind::kScalar) continue;
    if (a.shape != ShapeKind::kBuffer || buf >= 0 || a.len.kind != LenSource::Kind::kArg) return std::nullopt;
    buf = static_cast<int>(i);
  }
  if (buf < 0 || static_cast<int>(spec.args[static_cast<std::size_t>(buf)].len.value) != spec.ret.arg) {
    return std::nullopt;
  }
  return buf;
}

}  // namespace

const char* iago_name(IagoKind k) {
  switch (k) {
    case IagoKind::kLength:
      return "length";
    case IagoKind::kAlignment:
      return "alignment";
    case IagoKind::kRange:
      return "range";
    case IagoKind::kOverlongWrite:
      return "overlong-write";
  }
  return "?";
}

SyscallMediator::SyscallMediator(Vm& vm, const SyscallTable& table) : vm_(vm), table_(table) {}

void SyscallMediator::set_result(ThreadRecord& t, std::int64_t r) {
  t.ctx.regs[0] = static_cast<std::uint64_t>(r);
}

void SyscallMediator::dispatch_syscall(ThreadRecord& t, std::int64_t nr, const SyscallArgs& args) {
  RunStats& st = vm_.stats();
  ++st.mediator_dispatches;
  ++st.syscall_histogram[nr];
  const SyscallSpec* spec = table_.find(nr);
  if (spec == nullptr) {
    ++st.syscalls_unsupported;
    ++unsupported_[nr];
    vm_.record("syscall", t.tid, {{"nr", std::to_string(nr)}, {"name", "?"}, {"strategy", "unsupported"}});
    set_result(t, err::kENOSYS);
    vm_.record("sysret", t.tid, {{"nr", std::to_string(nr)}, {"result", std::to_string(err::kENOSYS)}});
    return;
  }
  vm_.record("syscall", t.tid,
             {{"nr", std::to_string(nr)}, {"name", spec->name}, {"strategy", strategy_name(spec->strategy)}});
  switch (spec->strategy) {
    case Strategy::kDelegate:
      ++st.syscalls_delegate;
      delegate(t, *spec, args);
      break;
    case Strategy::kEmulate:
      ++st.syscalls_emulate;
      emulate(t, *spec, args);
      break;
    case Strategy::kPartialEmulate:
      ++st.syscalls_partial;
      partial(t, *spec, args);
      break;
  }
}

void SyscallMediator::emulate_cpuid(ThreadRecord& t) {
  for (int i = 0; i < 4; ++i) t.ctx.regs[static_cast<std::size_t>(i)] = kCpuidRecord[static_cast<std::size_t>(i)];
  vm_.record("cpuid", t.tid);
}

void SyscallMediator::emulate_rdtsc(ThreadRecord& t) {
  t.ctx.regs[0] = vm_.step();
  vm_.record("rdtsc", t.tid, {{"value", std::to_string(vm_.step())}});
}

MarshalResult SyscallMediator::marshal_in(ThreadRecord& t, const SyscallSpec& spec, const SyscallArgs& args) {
  MarshalResult res;
  MarshalPlan& plan = res.plan;
  plan.host_args = args;
  MemoryManager& mm = vm_.memory();
  Addr cursor = t.arena;
  const Addr arena_end = t.arena + t.arena_size;
  bool too_large = false;
  bool bad = false;

  struct Pending {
    Addr guest;
    Addr pub;
    std::uint64_t len;
    Direction dir;
    bool is_struct;
    int arg;
    std::vector<std::uint8_t> bytes;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> keep;
  };
  std::vector<Pending> structs;
  std::vector<Pending> leaves;

  auto alloc = [&](std::uint64_t len) -> Addr {
    const std::uint64_t need = align16(len) + kGuard;
    if (cursor + need > arena_end) {
      too_large = true;
      return 0;
    }
    Addr a = cursor;
    cursor += need;
    plan.public_slots.push_back({a, len});
    return a;
  };
  // Checked before anything is allocated: a length taken from a guest
  // register can be any 64-bit value.
  auto mapped = [&](Addr g, std::uint64_t len, Perms need) {
    if (g + len < g) return false;
    Addr a = g;
    while (a < g + len) {
      const MappingRecord* r = mm.find(a);
      if (r == nullptr || (r->perms & need) != need) return false;
      a = r->guest_end();
    }
    return true;
  };
  auto readable = [&](Addr g, std::uint64_t len, std::vector<std::uint8_t>& out) {
    if (!mapped(g, len, kPermRead)) return false;
    out.assign(len, 0);
    return mm.read_guest(g, out);
  };
  auto writable = [&](Addr g, std::uint64_t len) { return mapped(g, len, kPermWrite); };
  auto leaf = [&](Addr g, std::uint64_t len, Direction dir, int arg) -> Addr {
    Pending p{g, 0, len, dir, false, arg, {}, {}};
    if (dir != Direction::kOut && !readable(g, len, p.bytes)) bad = true;
    if (dir != Direction::kIn && !writable(g, len)) bad = true;
    if (bad) return 0;
    p.pub = alloc(len);
    if (too_large) return 0;
    leaves.push_back(std::move(p));
    return leaves.back().pub;
  };

  // Outside-in: a struct slot is laid out and recorded before the buffers
  // its pointer fields lead to.
  std::function<void(Addr, const StructSchema&, Direction, int, Addr)> walk =
      [&](Addr g, const StructSchema& s, Direction dir, int arg, Addr pub) {
        Pending p{g, pub, s.size, dir, true, arg, {}, {}};
        if (!readable(g, s.size, p.bytes)) {
          bad = true;
          return;
        }
        if (dir != Direction::kIn && !writable(g, s.size)) {
          bad = true;
          return;
        }
        const std::size_t idx = structs.size();
        structs.push_back(p);
        for (const FieldSchema& f : s.fields) {
          if (f.shape == ShapeKind::kScalar) continue;
          const Addr ptr = get_u64(structs[idx].bytes, f.offset);
          structs[idx].keep.push_back({f.offset, ptr});
          if (ptr == 0) continue;
          Addr sub = 0;
          if (f.shape == ShapeKind::kBuffer) {
            std::uint64_t len = f.len.kind == LenSource::Kind::kField ? get_u64(structs[idx].bytes, f.len.value)
                                                                       : f.len.value;
            if (len == 0) {
              put_u64(structs[idx].bytes, f.offset, 0);
              continue;
            }
            sub = leaf(ptr, len, dir, arg);
          } else {
            const StructSchema* inner = table_.find_struct(f.struct_name);
            sub = alloc(inner->size);
            if (!too_large) walk(ptr, *inner, dir, arg, sub);
          }
          if (bad || too_large) return;
          put_u64(structs[idx].bytes, f.offset, sub);
        }
      };

  auto resolve = [&](const LenSource& l) -> std::uint64_t {
    return l.kind == LenSource::Kind::kArg ? args[l.value] : l.value;
  };

  for (std::size_t i = 0; i < spec.args.size() && !bad && !too_large; ++i) {
    const ArgSchema& a = spec.args[i];
    const Addr ptr = args[i];
    const int ai = static_cast<int>(i);
    switch (a.shape) {
      case ShapeKind::kScalar:
        break;
      case ShapeKind::kBuffer: {
        const std::uint64_t len = resolve(a.len);
        if (len == 0) {
          plan.host_args[i] = 0;
          break;
        }
        if (ptr == 0) {
          bad = true;
          break;
        }
        plan.host_args[i] = leaf(ptr, len, a.direction, ai);
        break;
      }
      case ShapeKind::kCString: {
        if (ptr == 0) {
          bad = true;
          break;
        }
        std::uint64_t len = 0;
        std::uint8_t c = 1;
        while (len < kMaxCString) {
          if (!mm.read_guest(ptr + len, std::span(&c, 1))) break;
          ++len;
          if (c == 0) break;
        }
        if (c != 0) {
          bad = true;
          break;
        }
        plan.host_args[i] = leaf(ptr, len, Direction::kIn, ai);
        break;
      }
      case ShapeKind::kStruct: {
        if (ptr == 0) {
          plan.host_args[i] = 0;
          break;
        }
        const StructSchema* s = table_.find_struct(a.struct_name);
        const Addr pub = alloc(s->size);
        if (too_large) break;
        walk(ptr, *s, a.direction, ai, pub);
        plan.host_args[i] = pub;
        break;
      }
      case ShapeKind::kArray: {
        const std::uint64_t count = resolve(a.len);
        const StructSchema* s = table_.find_struct(a.struct_name);
        if (count == 0) {
          plan.host_args[i] = 0;
          break;
        }
        if (ptr == 0 || count > 1024) {
          bad = true;
          break;
        }
        const Addr pub = alloc(count * s->size);
        if (too_large) break;
        for (std::uint64_t k = 0; k < count && !bad && !too_large; ++k) {
          walk(ptr + k * s->size, *s, a.direction, ai, pub + k * s->size);
        }
        plan.host_args[i] = pub;
        break;
      }
    }
  }
  if (bad) {
    res.status = MarshalStatus::kBadGuestPointer;
    return res;
  }
  if (too_large) {
    res.status = MarshalStatus::kTooLarge;
    return res;
  }

  plan.arena_used_end = cursor;
  // Clear whatever the host left in the arena, guards included.
  if (cursor > t.arena) {
    std::vector<std::uint8_t> zeros(cursor - t.arena, 0);
    vm_.write_public(t.arena, zeros);
  }
  auto emit = [&](const Pending& p) {
    CopyOp op{p.guest, p.pub, p.len, p.is_struct, p.arg};
    if (p.dir != Direction::kOut) {
      vm_.write_public(p.pub, p.bytes);
      plan.copy_in_ops.push_back(op);
      plan.bytes_in += p.len;
    } else if (p.is_struct) {
      // Out-only structs still carry their rewritten pointers to the host.
      std::vector<std::uint8_t> ptrs(p.len, 0);
      for (const auto& [off, v] : p.keep) put_u64(ptrs, off, get_u64(p.bytes, off));
      vm_.write_public(p.pub, ptrs);
    }
    if (p.dir != Direction::kIn) {
      plan.copy_out_ops.push_back(op);
      plan.out_capacity += p.len;
    }
  };
  for (const Pending& p : structs) emit(p);
  for (const Pending& p : leaves) emit(p);
  // Pointer fields to restore when a struct is copied back.
  for (const Pending& p : structs) {
    for (const auto& [off, v] : p.keep) plan.restore.push_back({p.pub + off, v});
  }
  return res;
}

CopyOutResult SyscallMediator::marshal_out(ThreadRecord& t, const MarshalPlan& plan, const SyscallSpec& spec,
                                           std::int64_t result) {
  CopyOutResult out;
  for (const PublicSlot& s : plan.public_slots) {
    const std::uint64_t tail = align16(s.len) - s.len + kGuard;
    std::vector<std::uint8_t> g(tail, 0);
    vm_.read_public(s.addr + s.len, g);
    if (std::any_of(g.begin(), g.end(), [](std::uint8_t b) { return b != 0; })) out.overlong = true;
  }
  if (result >= 0) {
    for (const CopyOp& op : plan.copy_out_ops) {
      std::uint64_t n = op.len;
      if (!op.is_struct && spec.ret.kind == ResultSchema::Kind::kLenArg && op.arg == spec.ret.arg) {
        n = std::min<std::uint64_t>(static_cast<std::uint64_t>(result), op.len);
      }
      if (n == 0) continue;
      std::vector<std::uint8_t> bytes(n, 0);
      vm_.read_public(op.pub, bytes);
      if (op.is_struct) {
        for (const auto& [pub, v] : plan.restore) {
          if (pub >= op.pub && pub + 8 <= op.pub + n) put_u64(bytes, pub - op.pub, v);
        }
      }
      if (!vm_.memory().write_guest(op.guest, bytes)) out.fault = true;
      out.bytes_out += n;
    }
  }
  // Nothing stays behind in public memory once the results are in.
  if (plan.arena_used_end > t.arena) {
    std::vector<std::uint8_t> zeros(plan.arena_used_end - t.arena, 0);
    vm_.write_public(t.arena, zeros);
  }
  return out;
}

std::optional<IagoKind> SyscallMediator::sanitize(const SyscallSpec& spec, const SyscallArgs& args,
                                                  std::int64_t result, const MarshalPlan& plan,
                                                  const CopyOutResult& copied) const {
  if (copied.overlong) return IagoKind::kOverlongWrite;
  if (result < 0) {
    if (result < -err::kMaxErrno) return IagoKind::kRange;
    return std::nullopt;
  }
  switch (spec.ret.kind) {
    case ResultSchema::Kind::kScalar:
      break;
    case ResultSchema::Kind::kId:
      if (result == 0 || result > (std::int64_t{1} << 31)) return IagoKind::kRange;
      break;
    case ResultSchema::Kind::kStatus:
      if (result != 0) return IagoKind::kRange;
      break;
    case ResultSchema::Kind::kFd:
      if (result > (std::int64_t{1} << 20)) return IagoKind::kRange;
      break;
    case ResultSchema::Kind::kAddr: {
      const Addr a = static_cast<Addr>(result);
      if (!page_aligned(a)) return IagoKind::kAlignment;
      if (a < layout::kPublicBase || a >= layout::kPublicLimit) return IagoKind::kRange;
      break;
    }
    case ResultSchema::Kind::kLenArg:
      if (static_cast<std::uint64_t>(result) > args[static_cast<std::size_t>(spec.ret.arg)]) return IagoKind::kLength;
      break;
    case ResultSchema::Kind::kLenIn: {
      std::uint64_t leaf = 0;
      for (const CopyOp& op : plan.copy_in_ops) {
        if (!op.is_struct) leaf += op.len;
      }
      if (static_cast<std::uint64_t>(result) > leaf) return IagoKind::kLength;
      break;
    }
  }
  return std::nullopt;
}

std::int64_t SyscallMediator::reject(ThreadRecord& t, const SyscallSpec& spec, IagoKind kind, std::int64_t raw) {
  ++iago_;
  ++vm_.stats().iago_violations;
  vm_.record("iago", t.tid, {{"nr", std::to_string(spec.number)}, {"rule", iago_name(kind)}, {"raw", std::to_string(raw)}});
  return err::kEIO;
}

std::int64_t SyscallMediator::finish_delegate(ThreadRecord& t, const SyscallSpec& spec, const SyscallArgs& args,
                                              const MarshalPlan& plan, std::int64_t raw) {
  CopyOutResult copied = marshal_out(t, plan, spec, raw);
  vm_.fire_adversary(AdvEvent::kAfterCopyout, spec.name, &t, &plan, nullptr);
  RunStats& st = vm_.stats();
  st.bytes_copied_in += plan.bytes_in;
  st.bytes_copied_out += copied.bytes_out;
  std::int64_t r = raw;
  if (auto bad = sanitize(spec, args, raw, plan, copied)) r = reject(t, spec, *bad, raw);
  else if (copied.fault) r = err::kEFAULT;
  vm_.record("sysret", t.tid,
             {{"nr", std::to_string(spec.number)},
              {"result", std::to_string(r)},
              {"in", std::to_string(plan.bytes_in)},
              {"out", std::to_string(copied.bytes_out)}});
  return r;
}

void SyscallMediator::delegate(ThreadRecord& t, const SyscallSpec& spec, const SyscallArgs& args) {
  MarshalResult mr = marshal_in(t, spec, args);
  if (mr.status == MarshalStatus::kBadGuestPointer) {
    set_result(t, err::kEFAULT);
    vm_.record("sysret", t.tid,
               {{"nr", std::to_string(spec.number)}, {"result", std::to_string(err::kEFAULT)}, {"in", "0"}, {"out", "0"}});
    return;
  }
  if (mr.status == MarshalStatus::kTooLarge) {
    if (chunk_arg(spec)) {
      delegate_chunked(t, spec, args);
    } else {
      set_result(t, err::kENOMEM);
      vm_.record("sysret", t.tid,
                 {{"nr", std::to_string(spec.number)}, {"result", std::to_string(err::kENOMEM)}, {"in", "0"}, {"out", "0"}});
    }
    return;
  }
  OcallRequest req;
  req.kind = OcallKind::kSyscall;
  req.nr = spec.number;
  req.args = mr.plan.host_args;
  req.tid = t.tid;
  std::int64_t raw = vm_.ocall_begin(t, req, "delegate", spec.name, &mr.plan);
  if (vm_.config().ocall_latency > 0) {
    PendingOcall p;
    p.spec = &spec;
    p.args = args;
    p.plan = std::move(mr.plan);
    p.raw_result = raw;
    p.done_step = vm_.step() + vm_.config().ocall_latency;
    p.signal_depth = t.signal_frames.size();
    t.pending_ocall = std::move(p);
    t.state = ThreadState::kInOcall;
    return;
  }
  raw = vm_.ocall_end(t, req, spec.name, &mr.plan, raw);
  set_result(t, finish_delegate(t, spec, args, mr.plan, raw));
}

void SyscallMediator::complete_ocall(ThreadRecord& t) {
  PendingOcall p = std::move(*t.pending_ocall);
  t.pending_ocall.reset();
  t.state = ThreadState::kRunnable;
  OcallRequest req;
  req.kind = OcallKind::kSyscall;
  req.nr = p.spec->number;
  req.args = p.plan.host_args;
  req.tid = t.tid;
  std::int64_t raw = vm_.ocall_end(t, req, p.spec->name, &p.plan, p.raw_result);
  set_result(t, finish_delegate(t, *p.spec, p.args, p.plan, raw));
}

void SyscallMediator::delegate_chunked(ThreadRecord& t, const SyscallSpec& spec, const SyscallArgs& args) {
  const int buf = *chunk_arg(spec);
  const std::size_t len_arg = static_cast<std::size_t>(spec.ret.arg);
  // Largest buffer that fits one arena slot plus its guard.
  const std::uint64_t chunk = (t.arena_size - kGuard) & ~std::uint64_t{15};
  const std::uint64_t total = args[len_arg];
  std::uint64_t done = 0;
  std::int64_t result = 0;
  while (done < total) {
    SyscallArgs a = args;
    const std::uint64_t n = std::min(chunk, total - done);
    a[static_cast<std::size_t>(buf)] = args[static_cast<std::size_t>(buf)] + done;
    a[len_arg] = n;
    MarshalResult mr = marshal_in(t, spec, a);
    if (mr.status != MarshalStatus::kOk) {
      if (done == 0) result = err::kEFAULT;
      break;
    }
    OcallRequest req;
    req.kind = OcallKind::kSyscall;
    req.nr = spec.number;
    req.args = mr.plan.host_args;
    req.tid = t.tid;
    std::int64_t raw = vm_.ocall_begin(t, req, "delegate", spec.name, &mr.plan);
    raw = vm_.ocall_end(t, req, spec.name, &mr.plan, raw);
    std::int64_t r = finish_delegate(t, spec, a, mr.plan, raw);
    if (r < 0) {
      if (done == 0) result = r;
      break;
    }
    done += static_cast<std::uint64_t>(r);
    result = static_cast<std::int64_t>(done);
    if (static_cast<std::uint64_t>(r) < n) break;
  }
  set_result(t, result);
}

std::int64_t SyscallMediator::sys_rt_sigaction(ThreadRecord& t, const SyscallArgs& args) {
  const int signum = static_cast<int>(args[0]);
  if (signum < 1 || signum > kNumSignals) return err::kEINVAL;
  MemoryManager& mm = vm_.memory();
  std::array<std::uint8_t, 32> act{};
  if (args[1] != 0 && !mm.read_guest(args[1], act)) return err::kEFAULT;
  if (args[2] != 0) {
    const HandlerEntry& old = vm_.signals().handler(signum);
    std::array<std::uint8_t, 32> o{};
    std::memcpy(o.data(), &old.handler, 8);
    std::memcpy(o.data() + 8, &old.flags, 8);
    std::memcpy(o.data() + 24, &old.mask, 8);
    if (!mm.write_guest(args[2], o)) return err::kEFAULT;
  }
  if (args[1] == 0) return 0;
  std::uint64_t handler, flags, mask;
  std::memcpy(&handler, act.data(), 8);
  std::memcpy(&flags, act.data() + 8, 8);
  std::memcpy(&mask, act.data() + 24, 8);
  switch (vm_.signals().register_handler(t, signum, handler, flags, mask)) {
    case RegisterStatus::kOk:
      return 0;
    case RegisterStatus::kInvalid:
      return err::kEINVAL;
    case RegisterStatus::kUnsupported:
      return err::kEOPNOTSUPP;
  }
  return err::kEINVAL;
}

std::int64_t SyscallMediator::sys_arch_prctl(ThreadRecord& t, const SyscallArgs& args) {
  constexpr std::uint64_t kSetFs = 0x1002;
  constexpr std::uint64_t kGetFs = 0x1003;
  if (args[0] == kSetFs) {
    t.ctx.tls_base_guest = args[1];
    t.tls_views.guest_base = args[1];
    return 0;
  }
  if (args[0] == kGetFs) {
    // Served from the enclave-held copy; the host is not consulted.
    std::uint64_t v = vm_.threads().guest_fs(t);
    std::array<std::uint8_t, 8> b{};
    std::memcpy(b.data(), &v, 8);
    return vm_.memory().write_guest(args[1], b) ? 0 : err::kEFAULT;
  }
  return err::kEINVAL;
}

void SyscallMediator::emulate(ThreadRecord& t, const SyscallSpec& spec, const SyscallArgs& args) {
  std::int64_t r = 0;
  switch (spec.number) {
    case 13:
      r = sys_rt_sigaction(t, args);
      break;
    case 15:
      vm_.signals().handle_sigreturn(t);
      return;
    case 158:
      r = sys_arch_prctl(t, args);
      break;
    case kSysFutex:
      vm_.locks().handle_futex(t, args[0], static_cast<std::int64_t>(args[1]), args[2]);
      return;
    default:
      r = err::kENOSYS;
      break;
  }
  set_result(t, r);
  vm_.record("sysret", t.tid, {{"nr", std::to_string(spec.number)}, {"result", std::to_string(r)}});
}

void SyscallMediator::partial(ThreadRecord& t, const SyscallSpec& spec, const SyscallArgs& args) {
  MemoryManager& mm = vm_.memory();
  std::int64_t r = 0;
  switch (spec.number) {
    case 9:
      r = (args[2] & ~std::uint64_t{7})
              ? err::kEINVAL
              : mm.handle_mmap(t, args[0], args[1], static_cast<Perms>(args[2]), static_cast<std::int64_t>(args[3]),
                               static_cast<std::int64_t>(args[4]), args[5]);
      break;
    case 10:
      r = (args[2] & ~std::uint64_t{7}) ? err::kEINVAL
                                        : mm.handle_mprotect(t, args[0], args[1], static_cast<Perms>(args[2]));
      break;
    case 11:
      r = mm.handle_munmap(t, args[0], args[1]);
      break;
    case 12:
      r = static_cast<std::int64_t>(mm.handle_brk(t, args[0]));
      break;
    case 26:
      r = mm.handle_msync(t, args[0], args[1]);
      break;
    case 56: {
      CloneRequest req;
      req.flags = args[0];
      req.child_stack = args[1];
      req.ptid = args[2];
      req.ctid = args[3];
      req.tls = args[4];
      vm_.threads().handle_clone(t, req);
      return;
    }
    case 60:
      vm_.threads().handle_exit(t, static_cast<int>(args[0]), false);
      return;
    case 231:
      vm_.threads().handle_exit(t, static_cast<int>(args[0]), true);
      return;
    default:
      r = err::kENOSYS;
      break;
  }
  set_result(t, r);
  vm_.record("sysret", t.tid, {{"nr", std::to_string(spec.number)}, {"result", std::to_string(r)}});
}

}  // namespace enclsim
