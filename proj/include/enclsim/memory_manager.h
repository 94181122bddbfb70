#ifndef ENCLSIM_MEMORY_MANAGER_H_
#define ENCLSIM_MEMORY_MANAGER_H_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "enclsim/enclave.h"
#include "enclsim/types.h"

namespace enclsim {

class Vm;
struct ThreadRecord;

enum class MappingKind : std::uint8_t { kCode, kData, kStack, kHeap, kMmap, kSigStack };

struct MappingRecord {
  Addr guest_start = 0;
  std::uint64_t len = 0;
  Perms perms = kPermNone;
  MappingKind kind = MappingKind::kMmap;
  // File backing; nullopt for anonymous memory.
  std::optional<std::string> file;
  std::int64_t fd = -1;
  std::uint64_t file_offset = 0;
  bool shared = false;
  Addr private_addr = 0;
  RegionRole pool = RegionRole::kPoolRw;
  // Host-side reservation made by the mmap OCALL.
  std::optional<Addr> host_addr;
  // Set for file mappings: host_addr holds the synchronized public copy.
  bool twinned = false;
  std::vector<bool> dirty_pages;

  Addr guest_end() const { return guest_start + len; }
  bool dirty() const;
  std::optional<Addr> public_twin() const {
    return twinned ? host_addr : std::nullopt;
  }
};

// First-fit allocator over one pre-typed pool region.
class PoolAllocator {
 public:
  PoolAllocator() = default;
  PoolAllocator(Addr start, std::uint64_t len);
  std::optional<Addr> allocate(std::uint64_t len);
  void release(Addr start, std::uint64_t len);
  std::uint64_t free_bytes() const;
  std::uint64_t largest_free() const;

 private:
  std::map<Addr, std::uint64_t> free_;
};

struct MemoryStats {
  std::uint64_t mappings_created = 0;
  std::uint64_t mappings_destroyed = 0;
  std::uint64_t bytes_copied_in = 0;   // public -> private
  std::uint64_t bytes_copied_out = 0;  // private -> public
  std::uint64_t writeback_pages = 0;
  std::uint64_t pool_bytes_in_use = 0;
  std::uint64_t ocalls = 0;
};

// Enclave-private, authoritative view of guest virtual memory.
class MemoryManager {
 public:
  explicit MemoryManager(Vm& vm);

  // Startup: pools, the program image, data segment, main stack and the
  // per-slot signal stacks.
  void initialize();
  Addr load_code(std::span<const std::uint8_t> image);
  Addr load_data(std::span<const std::uint8_t> bytes, std::uint64_t size);
  Addr map_main_stack();
  Addr sigstack_top(int slot) const;

  std::int64_t handle_mmap(ThreadRecord& t, Addr hint, std::uint64_t len, Perms prot, std::int64_t flags,
                           std::int64_t fd, std::uint64_t offset);
  std::int64_t handle_munmap(ThreadRecord& t, Addr start, std::uint64_t len);
  std::int64_t handle_msync(ThreadRecord& t, Addr start, std::uint64_t len);
  std::int64_t handle_mprotect(ThreadRecord& t, Addr start, std::uint64_t len, Perms perms);
  Addr handle_brk(ThreadRecord& t, Addr new_brk);

  // Guest address -> enclave address; nullopt is a guest SIGSEGV.
  std::optional<Addr> translate_address(Addr guest, AccessMode mode = AccessMode::kRead,
                                        std::uint64_t len = 1) const;
  // nullopt when acceptable, otherwise the rejection reason.
  std::optional<std::string> validate_layout(const MappingRecord& proposal) const;

  // Guest-permission-checked copies through the shadow map.
  bool read_guest(Addr guest, std::span<std::uint8_t> out);
  bool write_guest(Addr guest, std::span<const std::uint8_t> in);
  bool fetch(Addr pc, std::span<std::uint8_t> out);
  bool load64(Addr guest, std::uint64_t& out);
  // Returns false on fault; `code_written` reports a store into executable memory.
  bool store64(Addr guest, std::uint64_t value, bool& code_written);

  const std::map<Addr, MappingRecord>& shadow_map() const { return map_; }
  const MappingRecord* find(Addr guest) const;
  Addr brk() const { return brk_; }
  Addr brk_start() const { return layout::kBrkBase; }
  const MemoryStats& stats() const { return stats_; }
  std::uint64_t pool_free(RegionRole pool) const;

 private:
  static RegionRole pool_for(Perms p);
  MappingRecord* find_mut(Addr guest);
  // Splits records so that `at` becomes a record boundary.
  void split_at(Addr at);
  bool range_fully_mapped(Addr start, std::uint64_t len) const;
  std::optional<Addr> carve(RegionRole pool, std::uint64_t len);
  void release(RegionRole pool, Addr addr, std::uint64_t len);
  Addr choose_mmap_address(std::uint64_t len) const;
  void insert(MappingRecord rec);
  std::int64_t write_back(ThreadRecord& t, MappingRecord& rec, Addr lo, Addr hi);
  void mark_dirty(MappingRecord& rec, Addr guest, std::uint64_t len);

  Vm& vm_;
  std::map<Addr, MappingRecord> map_;
  std::map<RegionRole, PoolAllocator> pools_;
  Addr brk_ = layout::kBrkBase;
  MemoryStats stats_;
};

}  // namespace enclsim

#endif  // ENCLSIM_MEMORY_MANAGER_H_
