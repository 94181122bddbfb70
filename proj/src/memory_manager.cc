#include "enclsim/memory_manager.h"

#include <algorithm>
#include <cstring>

#include "enclsim/vm.h"

namespace enclsim {

bool MappingRecord::dirty() const {
  return std::find(dirty_pages.begin(), dirty_pages.end(), true) != dirty_pages.end();
}

PoolAllocator::PoolAllocator(Addr start, std::uint64_t len) {
  if (len > 0) free_[start] = len;
}

std::optional<Addr> PoolAllocator::allocate(std::uint64_t len) {
  for (auto it = free_.begin(); it != free_.end(); ++it) {
    if (it->second < len) continue;
    Addr a = it->first;
    std::uint64_t rest = it->second - len;
    free_.erase(it);
    if (rest > 0) free_[a + len] = rest;
    return a;
  }
  return std::nullopt;
}

void PoolAllocator::release(Addr start, std::uint64_t len) {
  if (len == 0) return;
  auto next = free_.lower_bound(start);
  if (next != free_.end() && start + len == next->first) {
    len += next->second;
    next = free_.erase(next);
  }
  if (next != free_.begin()) {
    auto prev = std::prev(next);
    if (prev->first + prev->second == start) {
      prev->second += len;
      return;
    }
  }
  free_[start] = len;
}

std::uint64_t PoolAllocator::free_bytes() const {
  std::uint64_t n = 0;
  for (const auto& [a, l] : free_) n += l;
  return n;
}

std::uint64_t PoolAllocator::largest_free() const {
  std::uint64_t n = 0;
  for (const auto& [a, l] : free_) n = std::max(n, l);
  return n;
}

MemoryManager::MemoryManager(Vm& vm) : vm_(vm) {}

RegionRole MemoryManager::pool_for(Perms p) {
  if (p & kPermExec) return (p & kPermWrite) ? RegionRole::kPoolRwx : RegionRole::kPoolRx;
  if (p & kPermWrite) return RegionRole::kPoolRw;
  return RegionRole::kPoolR;
}

void MemoryManager::initialize() {
  EnclaveState& e = vm_.enclave();
  for (RegionRole r : {RegionRole::kPoolRx, RegionRole::kPoolRw, RegionRole::kPoolR, RegionRole::kPoolRwx}) {
    const MemoryRegion& reg = e.region(r);
    pools_[r] = PoolAllocator(reg.start, reg.len);
  }
  // One signal stack per TCS slot, carved from the per-thread stack area.
  const MemoryRegion& stacks = e.region(RegionRole::kStacks);
  const std::uint64_t per = e.config().stack_size_per_thread;
  for (int i = 0; i < e.config().tcs_count; ++i) {
    MappingRecord rec;
    rec.guest_start = layout::kSigStackBase + static_cast<std::uint64_t>(i) * per;
    rec.len = per;
    rec.perms = kPermRead | kPermWrite;
    rec.kind = MappingKind::kSigStack;
    rec.private_addr = stacks.start + static_cast<std::uint64_t>(i) * per;
    rec.pool = RegionRole::kStacks;
    insert(std::move(rec));
  }
}

Addr MemoryManager::sigstack_top(int slot) const {
  const std::uint64_t per = vm_.config().enclave.stack_size_per_thread;
  return layout::kSigStackBase + static_cast<std::uint64_t>(slot + 1) * per;
}

std::optional<Addr> MemoryManager::carve(RegionRole pool, std::uint64_t len) {
  auto a = pools_[pool].allocate(len);
  if (!a) return std::nullopt;
  Perms perms = vm_.enclave().region(pool).perms;
  // Carves are registered page by page so partial unmaps stay exact.
  for (Addr p = *a; p < *a + len; p += kPageSize) {
    if (!vm_.enclave().map_private(p, kPageSize, perms)) throw SimError("pool carve rejected at " + hex_value(p));
  }
  vm_.enclave().zero(*a, len);
  stats_.pool_bytes_in_use += len;
  return a;
}

void MemoryManager::release(RegionRole pool, Addr addr, std::uint64_t len) {
  if (!pools_.count(pool)) return;  // heap, signal stacks: not pool backed
  for (Addr p = addr; p < addr + len; p += kPageSize) vm_.enclave().unmap_private(p);
  vm_.enclave().zero(addr, len);
  pools_[pool].release(addr, len);
  stats_.pool_bytes_in_use -= len;
}

std::uint64_t MemoryManager::pool_free(RegionRole pool) const {
  auto it = pools_.find(pool);
  return it == pools_.end() ? 0 : it->second.free_bytes();
}

void MemoryManager::insert(MappingRecord rec) {
  rec.dirty_pages.assign(rec.len / kPageSize, false);
  Addr k = rec.guest_start;
  map_[k] = std::move(rec);
}

Addr MemoryManager::load_code(std::span<const std::uint8_t> image) {
  const std::uint64_t len = page_ceil(std::max<std::uint64_t>(image.size(), 1));
  auto a = carve(RegionRole::kPoolRx, len);
  if (!a) throw ConfigError("program does not fit the code pool");
  vm_.enclave().place(*a, image);
  MappingRecord rec;
  rec.guest_start = layout::kCodeBase;
  rec.len = len;
  rec.perms = kPermRead | kPermExec;
  rec.kind = MappingKind::kCode;
  rec.private_addr = *a;
  rec.pool = RegionRole::kPoolRx;
  insert(std::move(rec));
  ++stats_.mappings_created;
  return layout::kCodeBase;
}

Addr MemoryManager::load_data(std::span<const std::uint8_t> bytes, std::uint64_t size) {
  const std::uint64_t len = page_ceil(std::max<std::uint64_t>(size, bytes.size()));
  if (len == 0) return 0;
  auto a = carve(RegionRole::kPoolRw, len);
  if (!a) throw ConfigError("data segment does not fit the data pool");
  vm_.enclave().place(*a, bytes);
  MappingRecord rec;
  rec.guest_start = layout::kDataBase;
  rec.len = len;
  rec.perms = kPermRead | kPermWrite;
  rec.kind = MappingKind::kData;
  rec.private_addr = *a;
  rec.pool = RegionRole::kPoolRw;
  insert(std::move(rec));
  ++stats_.mappings_created;
  return layout::kDataBase;
}

Addr MemoryManager::map_main_stack() {
  auto a = carve(RegionRole::kPoolRw, layout::kMainStackSize);
  if (!a) throw ConfigError("main stack does not fit the data pool");
  MappingRecord rec;
  rec.guest_start = layout::kStackTop - layout::kMainStackSize;
  rec.len = layout::kMainStackSize;
  rec.perms = kPermRead | kPermWrite;
  rec.kind = MappingKind::kStack;
  rec.private_addr = *a;
  rec.pool = RegionRole::kPoolRw;
  insert(std::move(rec));
  ++stats_.mappings_created;
  return layout::kStackTop;
}

const MappingRecord* MemoryManager::find(Addr guest) const {
  auto it = map_.upper_bound(guest);
  if (it == map_.begin()) return nullptr;
  --it;
  return guest < it->second.guest_end() ? &it->second : nullptr;
}

MappingRecord* MemoryManager::find_mut(Addr guest) { return const_cast<MappingRecord*>(find(guest)); }

std::optional<Addr> MemoryManager::translate_address(Addr guest, AccessMode mode, std::uint64_t len) const {
  const MappingRecord* r = find(guest);
  if (r == nullptr || len == 0 || guest + len > r->guest_end() || guest + len < guest) return std::nullopt;
  Perms need = mode == AccessMode::kRead ? kPermRead : mode == AccessMode::kWrite ? kPermWrite : kPermExec;
  if ((r->perms & need) != need) return std::nullopt;
  return r->private_addr + (guest - r->guest_start);
}

std::optional<std::string> MemoryManager::validate_layout(const MappingRecord& p) const {
  if (p.len == 0) return "empty";
  if (!page_aligned(p.guest_start) || !page_aligned(p.len)) return "unaligned";
  const Addr end = p.guest_start + p.len;
  if (end < p.guest_start) return "out-of-range";
  if (p.guest_start < kPageSize) return "zero-page";
  if (end > layout::kRuntimeReservedBase) return "runtime-reserved";
  auto it = map_.lower_bound(end);
  if (it != map_.begin()) {
    --it;
    if (it->second.guest_end() > p.guest_start) return "overlap";
  }
  return std::nullopt;
}

Addr MemoryManager::choose_mmap_address(std::uint64_t len) const {
  Addr cand = layout::kMmapBase;
  for (auto it = map_.lower_bound(layout::kMmapBase); it != map_.end(); ++it) {
    if (it->first >= layout::kMmapLimit) break;
    if (it->first >= cand + len) break;
    cand = std::max(cand, it->second.guest_end());
  }
  return cand + len <= layout::kMmapLimit ? cand : 0;
}

void MemoryManager::split_at(Addr at) {
  MappingRecord* r = find_mut(at);
  if (r == nullptr || r->guest_start == at) return;
  const std::uint64_t off = at - r->guest_start;
  MappingRecord hi = *r;
  hi.guest_start = at;
  hi.len = r->len - off;
  hi.private_addr = r->private_addr + off;
  if (hi.host_addr) hi.host_addr = *hi.host_addr + off;
  hi.file_offset = r->file_offset + off;
  hi.dirty_pages.assign(r->dirty_pages.begin() + static_cast<std::ptrdiff_t>(off / kPageSize),
                        r->dirty_pages.end());
  r->len = off;
  r->dirty_pages.resize(off / kPageSize);
  map_[at] = std::move(hi);
}

bool MemoryManager::range_fully_mapped(Addr start, std::uint64_t len) const {
  Addr a = start;
  while (a < start + len) {
    const MappingRecord* r = find(a);
    if (r == nullptr) return false;
    a = r->guest_end();
  }
  return true;
}

void MemoryManager::mark_dirty(MappingRecord& rec, Addr guest, std::uint64_t len) {
  if (!rec.twinned || len == 0) return;
  for (Addr p = page_floor(guest); p < guest + len; p += kPageSize) {
    rec.dirty_pages[(p - rec.guest_start) / kPageSize] = true;
  }
}

bool MemoryManager::read_guest(Addr guest, std::span<std::uint8_t> out) {
  std::uint64_t done = 0;
  while (done < out.size()) {
    const Addr a = guest + done;
    const MappingRecord* r = find(a);
    if (r == nullptr || !(r->perms & kPermRead)) return false;
    const std::uint64_t n = std::min<std::uint64_t>(out.size() - done, r->guest_end() - a);
    const Addr p = r->private_addr + (a - r->guest_start);
    if (vm_.enclave().read(Actor::kGuest, p, out.subspan(done, n)) != AccessVerdict::kAllowed) return false;
    done += n;
  }
  return true;
}

bool MemoryManager::write_guest(Addr guest, std::span<const std::uint8_t> in) {
  // Check the whole range first so a faulting write has no effect.
  std::uint64_t done = 0;
  while (done < in.size()) {
    const MappingRecord* r = find(guest + done);
    if (r == nullptr || !(r->perms & kPermWrite)) return false;
    done += std::min<std::uint64_t>(in.size() - done, r->guest_end() - (guest + done));
  }
  done = 0;
  while (done < in.size()) {
    const Addr a = guest + done;
    MappingRecord* r = find_mut(a);
    const std::uint64_t n = std::min<std::uint64_t>(in.size() - done, r->guest_end() - a);
    const Addr p = r->private_addr + (a - r->guest_start);
    if (vm_.enclave().write(Actor::kGuest, p, in.subspan(done, n)) != AccessVerdict::kAllowed) return false;
    mark_dirty(*r, a, n);
    if (r->perms & kPermExec) vm_.dbt().invalidate(a, a + n);
    done += n;
  }
  return true;
}

bool MemoryManager::fetch(Addr pc, std::span<std::uint8_t> out) {
  std::uint64_t done = 0;
  while (done < out.size()) {
    const Addr a = pc + done;
    const MappingRecord* r = find(a);
    if (r == nullptr || !(r->perms & kPermExec)) return false;
    const std::uint64_t n = std::min<std::uint64_t>(out.size() - done, r->guest_end() - a);
    const Addr p = r->private_addr + (a - r->guest_start);
    if (vm_.enclave().check_access(Actor::kGuest, p, n, AccessMode::kExecute) != AccessVerdict::kAllowed) {
      return false;
    }
    auto v = vm_.enclave().view(p, n);
    std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(done));
    done += n;
  }
  return true;
}

bool MemoryManager::load64(Addr guest, std::uint64_t& out) {
  std::uint8_t b[8];
  if (!read_guest(guest, b)) return false;
  std::memcpy(&out, b, 8);
  return true;
}

bool MemoryManager::store64(Addr guest, std::uint64_t value, bool& code_written) {
  std::uint8_t b[8];
  std::memcpy(b, &value, 8);
  const MappingRecord* r = find(guest);
  code_written = r != nullptr && (r->perms & kPermExec);
  return write_guest(guest, b);
}

std::int64_t MemoryManager::handle_mmap(ThreadRecord& t, Addr hint, std::uint64_t len, Perms prot,
                                        std::int64_t flags, std::int64_t fd, std::uint64_t offset) {
  if (len == 0 || (prot & ~(kPermRead | kPermWrite | kPermExec)) != 0) return err::kEINVAL;
  len = page_ceil(len);
  const bool anon = (flags & mflag::kAnonymous) != 0;
  const bool shared = (flags & mflag::kShared) != 0;
  if (!anon && fd < 0) return err::kEBADF;
  if (!page_aligned(offset)) return err::kEINVAL;

  MappingRecord rec;
  rec.len = len;
  rec.perms = prot;
  rec.kind = MappingKind::kMmap;
  rec.shared = shared;
  if (flags & mflag::kFixed) {
    rec.guest_start = hint;
    if (validate_layout(rec)) return err::kEINVAL;
  } else {
    rec.guest_start = hint;
    if (hint == 0 || !page_aligned(hint) || validate_layout(rec)) {
      rec.guest_start = choose_mmap_address(len);
      if (rec.guest_start == 0) return err::kENOMEM;
    }
  }
  rec.pool = pool_for(prot);
  auto priv = carve(rec.pool, len);
  if (!priv) return err::kENOMEM;
  rec.private_addr = *priv;

  // The host mapping holds the file content; the guest only sees the copy.
  OcallRequest req;
  req.kind = OcallKind::kMmap;
  req.args = {0, len, prot, static_cast<std::uint64_t>(flags), static_cast<std::uint64_t>(fd), offset};
  req.tid = t.tid;
  ++stats_.ocalls;
  std::int64_t host = vm_.ocall(t, req, "partial", "mmap");
  const SyscallSpec* spec = vm_.mediator().table().find(9);
  if (is_error_result(host)) {
    release(rec.pool, *priv, len);
    return host;
  }
  const Addr pub = static_cast<Addr>(host);
  std::optional<IagoKind> bad;
  if (host < 0) {
    bad = IagoKind::kRange;
  } else if (!page_aligned(pub)) {
    bad = IagoKind::kAlignment;
  } else if (pub < layout::kPublicBase || pub + len > layout::kPublicLimit ||
             !vm_.host().public_memory().mapped(pub, len)) {
    bad = IagoKind::kRange;
  }
  if (bad) {
    release(rec.pool, *priv, len);
    return vm_.mediator().reject(t, *spec, *bad, host);
  }
  rec.host_addr = pub;
  if (!anon) {
    rec.file = vm_.host().kernel().fds.count(fd) ? vm_.host().kernel().fds.at(fd).path : std::string();
    rec.fd = fd;
    rec.file_offset = offset;
    rec.twinned = true;
    std::vector<std::uint8_t> buf(len);
    if (!vm_.read_public(pub, buf)) {
      release(rec.pool, *priv, len);
      return vm_.mediator().reject(t, *spec, IagoKind::kRange, host);
    }
    vm_.enclave().place(*priv, buf);
    stats_.bytes_copied_in += len;
  }
  const Addr g = rec.guest_start;
  insert(std::move(rec));
  ++stats_.mappings_created;
  vm_.dbt().invalidate(g, g + len);
  return static_cast<std::int64_t>(g);
}

std::int64_t MemoryManager::write_back(ThreadRecord& t, MappingRecord& rec, Addr lo, Addr hi) {
  if (!rec.twinned || !rec.shared || !rec.host_addr) return 0;
  std::int64_t status = 0;
  Addr p = page_floor(lo);
  while (p < hi) {
    if (!rec.dirty_pages[(p - rec.guest_start) / kPageSize]) {
      p += kPageSize;
      continue;
    }
    Addr run_end = p;
    while (run_end < hi && rec.dirty_pages[(run_end - rec.guest_start) / kPageSize]) run_end += kPageSize;
    const std::uint64_t n = run_end - p;
    const Addr pub = *rec.host_addr + (p - rec.guest_start);
    auto bytes = vm_.enclave().view(rec.private_addr + (p - rec.guest_start), n);
    vm_.write_public(pub, bytes);
    stats_.bytes_copied_out += n;
    stats_.writeback_pages += n / kPageSize;
    OcallRequest req;
    req.kind = OcallKind::kMsync;
    req.args = {pub, n, 0, 0, 0, 0};
    req.tid = t.tid;
    ++stats_.ocalls;
    std::int64_t r = vm_.ocall(t, req, "partial", "msync");
    if (r != 0 && status == 0) status = is_error_result(r) ? r : err::kEIO;
    for (Addr q = p; q < run_end; q += kPageSize) rec.dirty_pages[(q - rec.guest_start) / kPageSize] = false;
    p = run_end;
  }
  return status;
}

std::int64_t MemoryManager::handle_munmap(ThreadRecord& t, Addr start, std::uint64_t len) {
  if (!page_aligned(start) || len == 0) return err::kEINVAL;
  const Addr end = start + page_ceil(len);
  if (end < start) return err::kEINVAL;
  std::vector<Addr> hit;
  for (auto it = map_.begin(); it != map_.end(); ++it) {
    if (it->first < end && it->second.guest_end() > start) {
      const MappingKind k = it->second.kind;
      if (k == MappingKind::kSigStack || k == MappingKind::kHeap) return err::kEINVAL;
      hit.push_back(it->first);
    }
  }
  if (hit.empty()) return err::kEINVAL;
  split_at(start);
  split_at(end);
  std::int64_t status = 0;
  for (auto it = map_.lower_bound(start); it != map_.end() && it->first < end;) {
    MappingRecord& rec = it->second;
    if (rec.dirty()) {
      std::int64_t r = write_back(t, rec, rec.guest_start, rec.guest_end());
      if (r != 0 && status == 0) status = r;
    }
    if (rec.host_addr) {
      OcallRequest req;
      req.kind = OcallKind::kMunmap;
      req.args = {*rec.host_addr, rec.len, 0, 0, 0, 0};
      req.tid = t.tid;
      ++stats_.ocalls;
      vm_.ocall(t, req, "partial", "munmap");
    }
    release(rec.pool, rec.private_addr, rec.len);
    vm_.dbt().invalidate(rec.guest_start, rec.guest_end());
    ++stats_.mappings_destroyed;
    it = map_.erase(it);
  }
  return status;
}

std::int64_t MemoryManager::handle_msync(ThreadRecord& t, Addr start, std::uint64_t len) {
  if (!page_aligned(start)) return err::kEINVAL;
  const Addr end = start + page_ceil(len);
  if (end < start || !range_fully_mapped(start, end - start)) return err::kEINVAL;
  std::int64_t status = 0;
  for (auto it = map_.begin(); it != map_.end(); ++it) {
    MappingRecord& rec = it->second;
    if (rec.guest_start >= end || rec.guest_end() <= start) continue;
    std::int64_t r = write_back(t, rec, std::max(start, rec.guest_start), std::min(end, rec.guest_end()));
    if (r != 0 && status == 0) status = r;
  }
  return status;
}

std::int64_t MemoryManager::handle_mprotect(ThreadRecord& t, Addr start, std::uint64_t len, Perms perms) {
  (void)t;
  if (!page_aligned(start) || (perms & ~(kPermRead | kPermWrite | kPermExec)) != 0) return err::kEINVAL;
  const Addr end = start + page_ceil(len);
  if (end < start) return err::kEINVAL;
  if (end == start) return 0;
  if (!range_fully_mapped(start, end - start)) return err::kEINVAL;
  bool changes = false;
  for (auto it = map_.begin(); it != map_.end(); ++it) {
    const MappingRecord& rec = it->second;
    if (rec.guest_start >= end || rec.guest_end() <= start || rec.perms == perms) continue;
    // Heap and signal stacks are not pool backed and cannot move.
    if ((rec.kind == MappingKind::kHeap || rec.kind == MappingKind::kSigStack) &&
        pool_for(perms) != RegionRole::kPoolRw) {
      return err::kEINVAL;
    }
    changes = true;
  }
  if (!changes) return 0;

  split_at(start);
  split_at(end);
  for (auto it = map_.lower_bound(start); it != map_.end() && it->first < end; ++it) {
    MappingRecord& rec = it->second;
    if (rec.perms == perms) continue;
    const RegionRole target = pool_for(perms);
    if (rec.kind == MappingKind::kHeap || rec.kind == MappingKind::kSigStack || target == rec.pool) {
      rec.perms = perms;
      continue;
    }
    // Private page perms cannot change: move the content to a pool that
    // already has the requested perms.
    auto fresh = carve(target, rec.len);
    if (!fresh) return err::kENOMEM;
    auto old = vm_.enclave().view(rec.private_addr, rec.len);
    std::vector<std::uint8_t> copy(old.begin(), old.end());
    vm_.enclave().place(*fresh, copy);
    release(rec.pool, rec.private_addr, rec.len);
    rec.private_addr = *fresh;
    rec.pool = target;
    rec.perms = perms;
  }
  vm_.dbt().invalidate(start, end);
  return 0;
}

Addr MemoryManager::handle_brk(ThreadRecord& t, Addr new_brk) {
  (void)t;
  const MemoryRegion& heap = vm_.enclave().region(RegionRole::kHeap);
  if (new_brk < layout::kBrkBase || new_brk > layout::kBrkBase + heap.len) return brk_;
  const Addr old_end = page_ceil(brk_);
  const Addr new_end = page_ceil(new_brk);
  if (new_end < old_end) {
    vm_.enclave().zero(heap.start + (new_end - layout::kBrkBase), old_end - new_end);
  }
  brk_ = new_brk;
  map_.erase(layout::kBrkBase);
  if (new_end > layout::kBrkBase) {
    MappingRecord rec;
    rec.guest_start = layout::kBrkBase;
    rec.len = new_end - layout::kBrkBase;
    rec.perms = kPermRead | kPermWrite;
    rec.kind = MappingKind::kHeap;
    rec.private_addr = heap.start;
    rec.pool = RegionRole::kHeap;
    insert(std::move(rec));
  }
  return brk_;
}

}  // namespace enclsim
