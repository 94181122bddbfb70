#include "enclsim/enclave.h"

#include <algorithm>
#include <cstring>
#include <sstream>

namespace enclsim {

namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

Perms pool_perms(RegionRole role) {
  switch (role) {
    case RegionRole::kPoolRx:
      return kPermRead | kPermExec;
    case RegionRole::kPoolR:
      return kPermRead;
    case RegionRole::kPoolRwx:
      return kPermRead | kPermWrite | kPermExec;
    default:
      return kPermRead | kPermWrite;
  }
}

bool is_pool(RegionRole r) {
  return r == RegionRole::kPoolRx || r == RegionRole::kPoolRw || r == RegionRole::kPoolR ||
         r == RegionRole::kPoolRwx;
}

}  // namespace

const char* violation_name(ViolationCode c) {
  switch (c) {
    case ViolationCode::kR1Access:
      return "R1_ACCESS";
    case ViolationCode::kR2Mutate:
      return "R2_MUTATE";
    case ViolationCode::kR3Share:
      return "R3_SHARE";
    case ViolationCode::kR4Alias:
      return "R4_ALIAS";
    case ViolationCode::kR5Entry:
      return "R5_ENTRY";
  }
  return "?";
}

const char* role_name(RegionRole r) {
  switch (r) {
    case RegionRole::kRuntime:
      return "runtime";
    case RegionRole::kTcs:
      return "tcs";
    case RegionRole::kStacks:
      return "stacks";
    case RegionRole::kHeap:
      return "heap";
    case RegionRole::kPoolRx:
      return "pool_rx";
    case RegionRole::kPoolRw:
      return "pool_rw";
    case RegionRole::kPoolR:
      return "pool_r";
    case RegionRole::kPoolRwx:
      return "pool_rwx";
    case RegionRole::kCarve:
      return "carve";
  }
  return "?";
}

const char* status_name(EnclaveStatus s) {
  switch (s) {
    case EnclaveStatus::kOk:
      return "ok";
    case EnclaveStatus::kTcsBusy:
      return "TcsBusy";
    case EnclaveStatus::kSsaExhausted:
      return "SsaExhausted";
    case EnclaveStatus::kEmptySsa:
      return "EmptySsa";
    case EnclaveStatus::kViolation:
      return "Violation";
    case EnclaveStatus::kBadSlot:
      return "BadSlot";
  }
  return "?";
}

void ViolationLog::emit(ViolationEvent ev) {
  events_.push_back(ev);
  if (listener_) listener_(ev);
  if (policy_ == ViolationPolicy::kAbort) throw ViolationAbort(std::move(ev));
}

std::size_t ViolationLog::count(ViolationCode code) const {
  return static_cast<std::size_t>(
      std::count_if(events_.begin(), events_.end(), [&](const ViolationEvent& e) { return e.code == code; }));
}

FrameId FrameRegistry::allocate(EnclaveId owner, std::uint64_t count) {
  FrameId first = next_;
  next_ += count;
  ranges_.push_back({first, count, owner});
  return first;
}

std::optional<EnclaveId> FrameRegistry::owner(FrameId f) const {
  for (const Range& r : ranges_) {
    if (f >= r.first && f < r.first + r.count) return r.owner;
  }
  return std::nullopt;
}

std::unique_ptr<EnclaveState> EnclaveState::create(const EnclaveConfig& config,
                                                   std::shared_ptr<FrameRegistry> frames,
                                                   std::span<const AddrRange> public_mappings,
                                                   ViolationLog* log) {
  if (config.size == 0) throw EnclaveError(EnclaveError::Kind::kZeroSize, "enclave size is zero");
  if (config.tcs_count < 1 || config.nssa < 1) {
    throw EnclaveError(EnclaveError::Kind::kBadConfig, "tcs_count and nssa must be positive");
  }
  if (!page_aligned(config.base) || !page_aligned(config.size)) {
    throw EnclaveError(EnclaveError::Kind::kBadConfig, "enclave base/size must be page aligned");
  }
  for (const AddrRange& r : public_mappings) {
    if (r.start < config.base + config.size && config.base < r.start + r.len) {
      throw EnclaveError(EnclaveError::Kind::kOverlapWithPublic,
                         "enclave range overlaps public mapping at " + hex(r.start));
    }
  }

  auto e = std::unique_ptr<EnclaveState>(new EnclaveState());
  e->config_ = config;
  e->frames_ = std::move(frames);
  e->log_ = log;
  e->id_ = e->frames_->next_enclave_id();
  e->first_frame_ = e->frames_->allocate(e->id_, config.size / kPageSize);
  e->bytes_.assign(config.size, 0);

  const std::uint64_t runtime = 16 * kPageSize;
  const std::uint64_t tcs = static_cast<std::uint64_t>(config.tcs_count) * kPageSize;
  const std::uint64_t stacks = static_cast<std::uint64_t>(config.tcs_count) * page_ceil(config.stack_size_per_thread);
  const std::uint64_t heap = page_ceil(config.heap_size);
  const std::uint64_t fixed = runtime + tcs + stacks + heap;
  if (fixed + 8 * kPageSize > config.size) {
    throw EnclaveError(EnclaveError::Kind::kTooSmall, "enclave too small for its layout");
  }
  const std::uint64_t rest = config.size - fixed;
  const std::uint64_t rx = std::max<std::uint64_t>(kPageSize, page_floor(rest / 8));
  const std::uint64_t r = std::max<std::uint64_t>(kPageSize, page_floor(rest / 16));
  const std::uint64_t rwx = std::max<std::uint64_t>(kPageSize, page_floor(rest / 16));
  const std::uint64_t rw = rest - rx - r - rwx;

  Addr cur = config.base;
  auto add = [&](RegionRole role, std::uint64_t len, Perms perms) {
    e->regions_.push_back({cur, len, perms, RegionKind::kPrivate, e->frame_of(cur), role});
    cur += len;
  };
  add(RegionRole::kRuntime, runtime, kPermRead | kPermWrite);
  add(RegionRole::kTcs, tcs, kPermRead | kPermWrite);
  add(RegionRole::kStacks, stacks, kPermRead | kPermWrite);
  add(RegionRole::kHeap, heap, kPermRead | kPermWrite);
  add(RegionRole::kPoolRx, rx, pool_perms(RegionRole::kPoolRx));
  add(RegionRole::kPoolRw, rw, pool_perms(RegionRole::kPoolRw));
  add(RegionRole::kPoolR, r, pool_perms(RegionRole::kPoolR));
  add(RegionRole::kPoolRwx, rwx, pool_perms(RegionRole::kPoolRwx));

  e->slots_.resize(static_cast<std::size_t>(config.tcs_count));
  for (int i = 0; i < config.tcs_count; ++i) e->slots_[static_cast<std::size_t>(i)].slot_id = i;
  e->frozen_ = true;
  return e;
}

void EnclaveState::violate(ViolationCode code, Actor actor, std::string detail) {
  log_->emit({code, actor, std::move(detail)});
}

bool EnclaveState::touches_private(Addr a, std::uint64_t len) const {
  if (len == 0) return false;
  Addr end = a + len;
  if (end < a) return true;  // wraps the address space
  return a < limit() && base() < end;
}

EnclaveStatus EnclaveState::ecall(EntryId entry, int slot, Tid tid, Addr args) {
  if (std::find(config_.entry_points.begin(), config_.entry_points.end(), entry) ==
      config_.entry_points.end()) {
    violate(ViolationCode::kR5Entry, Actor::kHostOs,
            "ecall to unregistered entry " + std::to_string(entry) + " tcs=" + std::to_string(slot));
    return EnclaveStatus::kViolation;
  }
  if (slot < 0 || slot >= static_cast<int>(slots_.size())) return EnclaveStatus::kBadSlot;
  // ECALL arguments live in public memory only.
  if (args != 0 && touches_private(args, 1)) {
    violate(ViolationCode::kR1Access, Actor::kHostOs, "ecall argument points into private memory " + hex(args));
    return EnclaveStatus::kViolation;
  }
  TcsSlot& s = slots_[static_cast<std::size_t>(slot)];
  if (s.busy && s.bound_thread != tid) return EnclaveStatus::kTcsBusy;
  s.busy = true;
  s.bound_thread = tid;
  s.inside = true;
  ++s.entry_depth;
  ++diag_.ecalls;
  return EnclaveStatus::kOk;
}

void EnclaveState::eexit(int slot) {
  TcsSlot& s = slots_.at(static_cast<std::size_t>(slot));
  s.inside = false;
  if (s.entry_depth > 0) --s.entry_depth;
  ++diag_.eexits;
}

void EnclaveState::ocall_exit(int slot) {
  slots_.at(static_cast<std::size_t>(slot)).inside = false;
  ++diag_.ocalls;
}

void EnclaveState::ocall_return(int slot) { slots_.at(static_cast<std::size_t>(slot)).inside = true; }

void EnclaveState::release_tcs(int slot) {
  TcsSlot& s = slots_.at(static_cast<std::size_t>(slot));
  s.busy = false;
  s.bound_thread.reset();
  s.inside = false;
  s.entry_depth = 0;
  s.ssa_stack.clear();
}

std::optional<int> EnclaveState::free_slot() const {
  for (const TcsSlot& s : slots_) {
    if (!s.busy) return s.slot_id;
  }
  return std::nullopt;
}

int EnclaveState::busy_slots() const {
  return static_cast<int>(std::count_if(slots_.begin(), slots_.end(), [](const TcsSlot& s) { return s.busy; }));
}

EnclaveStatus EnclaveState::aex(int slot, const GuestContext& live, ExitReason reason, int fault_code) {
  if (slot < 0 || slot >= static_cast<int>(slots_.size())) return EnclaveStatus::kBadSlot;
  TcsSlot& s = slots_[static_cast<std::size_t>(slot)];
  if (static_cast<int>(s.ssa_stack.size()) >= config_.nssa) {
    ++diag_.ssa_exhausted;
    return EnclaveStatus::kSsaExhausted;
  }
  s.ssa_stack.push_back({live, reason, fault_code});
  s.inside = false;
  ++diag_.aexs;
  return EnclaveStatus::kOk;
}

EnclaveStatus EnclaveState::eresume(int slot, GuestContext& out, const std::optional<GuestContext>& presented) {
  if (slot < 0 || slot >= static_cast<int>(slots_.size())) return EnclaveStatus::kBadSlot;
  TcsSlot& s = slots_[static_cast<std::size_t>(slot)];
  if (s.ssa_stack.empty()) return EnclaveStatus::kEmptySsa;
  if (presented && !(*presented == s.ssa_stack.back().saved_context)) {
    violate(ViolationCode::kR5Entry, Actor::kHostOs,
            "eresume with modified context tcs=" + std::to_string(slot));
    return EnclaveStatus::kViolation;
  }
  out = s.ssa_stack.back().saved_context;
  s.ssa_stack.pop_back();
  s.inside = true;
  ++diag_.eresumes;
  return EnclaveStatus::kOk;
}

bool EnclaveState::register_primary_handler(EntryId entry) {
  if (primary_handler_ && *primary_handler_ != entry) return false;
  if (std::find(config_.entry_points.begin(), config_.entry_points.end(), entry) == config_.entry_points.end()) {
    return false;
  }
  primary_handler_ = entry;
  return true;
}

const MemoryRegion* EnclaveState::region_at(Addr a) const {
  auto it = std::upper_bound(regions_.begin(), regions_.end(), a,
                             [](Addr v, const MemoryRegion& r) { return v < r.start; });
  if (it == regions_.begin()) return nullptr;
  --it;
  return it->contains(a) ? &*it : nullptr;
}

const MemoryRegion& EnclaveState::region(RegionRole role) const {
  for (const MemoryRegion& r : regions_) {
    if (r.role == role) return r;
  }
  throw SimError(std::string("no region with role ") + role_name(role));
}

AccessVerdict EnclaveState::check_access(Actor actor, Addr addr, std::uint64_t len, AccessMode mode) {
  if (!touches_private(addr, len)) return AccessVerdict::kAllowed;
  if (actor == Actor::kHostOs) {
    violate(ViolationCode::kR1Access, actor,
            "host access to private " + hex(addr) + " len=" + std::to_string(len));
    return AccessVerdict::kR1Violation;
  }
  if (addr < base() || addr + len > limit()) return AccessVerdict::kUnmapped;
  Perms need = mode == AccessMode::kRead ? kPermRead : mode == AccessMode::kWrite ? kPermWrite : kPermExec;
  Addr a = addr;
  const Addr end = addr + len;
  while (a < end) {
    const MemoryRegion* r = region_at(a);
    if (r == nullptr) return AccessVerdict::kUnmapped;
    if ((r->perms & need) != need) {
      ++diag_.perm_denied;
      return AccessVerdict::kPermDenied;
    }
    a = r->end();
  }
  return AccessVerdict::kAllowed;
}

AccessVerdict EnclaveState::read(Actor actor, Addr addr, std::span<std::uint8_t> out) {
  AccessVerdict v = check_access(actor, addr, out.size(), AccessMode::kRead);
  if (v != AccessVerdict::kAllowed) return v;
  if (!is_private(addr)) return AccessVerdict::kUnmapped;
  std::memcpy(out.data(), bytes_.data() + (addr - base()), out.size());
  return v;
}

AccessVerdict EnclaveState::write(Actor actor, Addr addr, std::span<const std::uint8_t> in) {
  AccessVerdict v = check_access(actor, addr, in.size(), AccessMode::kWrite);
  if (v != AccessVerdict::kAllowed) return v;
  if (!is_private(addr)) return AccessVerdict::kUnmapped;
  std::memcpy(bytes_.data() + (addr - base()), in.data(), in.size());
  return v;
}

void EnclaveState::place(Addr addr, std::span<const std::uint8_t> bytes) {
  if (addr < base() || addr + bytes.size() > limit()) throw SimError("place outside enclave at " + hex(addr));
  std::memcpy(bytes_.data() + (addr - base()), bytes.data(), bytes.size());
}

void EnclaveState::zero(Addr addr, std::uint64_t len) {
  if (addr < base() || addr + len > limit()) throw SimError("zero outside enclave at " + hex(addr));
  std::memset(bytes_.data() + (addr - base()), 0, len);
}

std::span<const std::uint8_t> EnclaveState::view(Addr addr, std::uint64_t len) const {
  if (addr < base() || addr + len > limit()) throw SimError("view outside enclave at " + hex(addr));
  return {bytes_.data() + (addr - base()), len};
}

std::optional<MemoryRegion> EnclaveState::map_private(Addr start, std::uint64_t len, Perms perms,
                                                      std::optional<FrameId> frame, Actor actor) {
  if (frame) {
    auto owner = frames_->owner(*frame);
    if (owner && *owner != id_) {
      violate(ViolationCode::kR3Share, actor,
              "enclave " + std::to_string(id_) + " maps frame " + hex(*frame) + " of enclave " +
                  std::to_string(*owner));
      return std::nullopt;
    }
    if (owner) {
      Addr identity = base() + (*frame - first_frame_) * kPageSize;
      auto rm = remapped_.find(*frame);
      Addr current = rm == remapped_.end() ? identity : rm->second;
      if (current != start) {
        violate(ViolationCode::kR4Alias, actor,
                "frame " + hex(*frame) + " already mapped at " + hex(current) + ", requested " + hex(start));
        return std::nullopt;
      }
    }
  }
  if (!frozen_) {
    MemoryRegion r{start, len, perms, RegionKind::kPrivate, frame.value_or(frame_of(start)), RegionRole::kCarve};
    regions_.push_back(r);
    std::sort(regions_.begin(), regions_.end(), [](auto& a, auto& b) { return a.start < b.start; });
    return r;
  }
  const MemoryRegion* pool = region_at(start);
  bool ok = pool != nullptr && is_pool(pool->role) && start + len <= pool->end() && pool->perms == perms &&
            len > 0 && page_aligned(start) && page_aligned(len);
  if (ok) {
    auto next = carves_.lower_bound(start);
    if (next != carves_.end() && next->first < start + len) ok = false;
    if (next != carves_.begin()) {
      auto prev = std::prev(next);
      if (prev->second.end() > start) ok = false;
    }
  }
  if (!ok) {
    violate(ViolationCode::kR2Mutate, actor,
            "post-freeze private mapping " + hex(start) + " len=" + std::to_string(len) + " perms=" +
                perms_string(perms) + " outside a matching pool");
    return std::nullopt;
  }
  MemoryRegion carve{start, len, perms, RegionKind::kPrivate, frame_of(start), RegionRole::kCarve};
  carves_[start] = carve;
  return carve;
}

void EnclaveState::unmap_private(Addr start) { carves_.erase(start); }

ViolationEvent EnclaveState::reject_mutation(const MemoryRegion& region, Perms new_perms, Actor actor) {
  ViolationEvent ev{ViolationCode::kR2Mutate, actor,
                    "perms change " + perms_string(region.perms) + "->" + perms_string(new_perms) + " on " +
                        role_name(region.role) + " at " + hex(region.start)};
  log_->emit(ev);
  return ev;
}

}  // namespace enclsim
