#ifndef ENCLSIM_ENCLAVE_H_
#define ENCLSIM_ENCLAVE_H_

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "enclsim/isa.h"
#include "enclsim/types.h"

namespace enclsim {

// ---------------------------------------------------------------------------
// Violations of the five hardware restrictions.

enum class ViolationCode : std::uint8_t { kR1Access, kR2Mutate, kR3Share, kR4Alias, kR5Entry };

const char* violation_name(ViolationCode c);

struct ViolationEvent {
  ViolationCode code;
  Actor actor;
  std::string detail;
};

enum class ViolationPolicy : std::uint8_t { kRecord, kAbort };

class ViolationAbort : public SimError {
 public:
  explicit ViolationAbort(ViolationEvent ev)
      : SimError(std::string("violation ") + violation_name(ev.code) + ": " + ev.detail),
        event_(std::move(ev)) {}
  const ViolationEvent& event() const { return event_; }

 private:
  ViolationEvent event_;
};

// Shared by every enclave of one simulation. Each offending action calls
// emit() exactly once.
class ViolationLog {
 public:
  using Listener = std::function<void(const ViolationEvent&)>;

  explicit ViolationLog(ViolationPolicy policy = ViolationPolicy::kRecord) : policy_(policy) {}

  void emit(ViolationEvent ev);
  void set_listener(Listener l) { listener_ = std::move(l); }
  void set_policy(ViolationPolicy p) { policy_ = p; }

  const std::vector<ViolationEvent>& events() const { return events_; }
  std::size_t count(ViolationCode code) const;
  bool empty() const { return events_.empty(); }

 private:
  ViolationPolicy policy_;
  Listener listener_;
  std::vector<ViolationEvent> events_;
};

// ---------------------------------------------------------------------------
// Physical frames. Simulated as integer ids; every enclave page owns one.

using FrameId = std::uint64_t;
using EnclaveId = std::uint32_t;

class FrameRegistry {
 public:
  FrameId allocate(EnclaveId owner, std::uint64_t count);
  std::optional<EnclaveId> owner(FrameId f) const;
  EnclaveId next_enclave_id() { return next_enclave_++; }

 private:
  struct Range {
    FrameId first;
    std::uint64_t count;
    EnclaveId owner;
  };
  std::vector<Range> ranges_;
  FrameId next_ = 0x1000;
  EnclaveId next_enclave_ = 1;
};

// ---------------------------------------------------------------------------

using EntryId = std::uint32_t;

// Entry points every runtime enclave registers; all land on the trampoline.
inline constexpr EntryId kEntryMain = 0;
inline constexpr EntryId kEntryChild = 1;
inline constexpr EntryId kEntrySignal = 2;

struct EnclaveConfig {
  Addr base = 0x100000000;
  std::uint64_t size = 4 * 1024 * 1024;
  std::uint64_t heap_size = 256 * 1024;
  std::uint64_t stack_size_per_thread = 16 * 1024;
  int tcs_count = 4;
  int nssa = 3;
  std::vector<EntryId> entry_points = {kEntryMain, kEntryChild, kEntrySignal};
};

enum class RegionKind : std::uint8_t { kPrivate, kPublic };

// What a private region was laid out for at creation.
enum class RegionRole : std::uint8_t {
  kRuntime,
  kTcs,
  kStacks,
  kHeap,
  kPoolRx,   // code
  kPoolRw,   // data
  kPoolR,    // read-only data
  kPoolRwx,  // generated code
  kCarve,    // sub-allocation carved from a pool after freeze
};

const char* role_name(RegionRole r);

struct MemoryRegion {
  Addr start = 0;
  std::uint64_t len = 0;
  Perms perms = kPermNone;
  RegionKind kind = RegionKind::kPrivate;
  FrameId mapped_phys = 0;
  RegionRole role = RegionRole::kRuntime;

  Addr end() const { return start + len; }
  bool contains(Addr a) const { return a >= start && a < end(); }
};

enum class ExitReason : std::uint8_t { kAex, kOcall, kFault };

struct SsaFrame {
  GuestContext saved_context;
  ExitReason exit_reason = ExitReason::kAex;
  int fault_code = 0;
};

struct TcsSlot {
  int slot_id = 0;
  bool busy = false;
  std::optional<Tid> bound_thread;
  std::vector<SsaFrame> ssa_stack;
  // Thread bound to this slot is currently executing inside the enclave.
  bool inside = false;
  // ECALLs nested on this slot (e.g. signal entry during an OCALL).
  int entry_depth = 0;
};

enum class EnclaveStatus : std::uint8_t {
  kOk,
  kTcsBusy,
  kSsaExhausted,
  kEmptySsa,
  kViolation,
  kBadSlot,
};

const char* status_name(EnclaveStatus s);

enum class AccessVerdict : std::uint8_t { kAllowed, kR1Violation, kPermDenied, kUnmapped };

class EnclaveError : public SimError {
 public:
  enum class Kind { kZeroSize, kOverlapWithPublic, kTooSmall, kBadConfig };
  EnclaveError(Kind k, const std::string& msg) : SimError(msg), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct AddrRange {
  Addr start;
  std::uint64_t len;
};

struct EnclaveDiagnostics {
  std::uint64_t ssa_exhausted = 0;
  std::uint64_t nested_faults = 0;
  std::uint64_t ecalls = 0;
  std::uint64_t eexits = 0;
  std::uint64_t ocalls = 0;
  std::uint64_t aexs = 0;
  std::uint64_t eresumes = 0;
  std::uint64_t perm_denied = 0;
};

// The simulated SGX-v1 enclave. Layout is fixed at creation; after that
// private memory can only be carved from the pre-typed pools.
class EnclaveState {
 public:
  static std::unique_ptr<EnclaveState> create(const EnclaveConfig& config,
                                              std::shared_ptr<FrameRegistry> frames,
                                              std::span<const AddrRange> public_mappings,
                                              ViolationLog* log);

  const EnclaveConfig& config() const { return config_; }
  EnclaveId id() const { return id_; }
  bool frozen() const { return frozen_; }
  Addr base() const { return config_.base; }
  Addr limit() const { return config_.base + config_.size; }
  bool is_private(Addr a) const { return a >= base() && a < limit(); }
  bool touches_private(Addr a, std::uint64_t len) const;

  // Load base as the runtime self-locates it.
  Addr self_locate() const { return config_.base; }

  // --- entries and exits -------------------------------------------------
  EnclaveStatus ecall(EntryId entry, int slot, Tid tid, Addr args);
  // Return from an ECALL. The slot stays bound.
  void eexit(int slot);
  // OCALL out and back in; the ECALL nesting is unchanged.
  void ocall_exit(int slot);
  void ocall_return(int slot);
  // Unbind a slot entirely (thread exit).
  void release_tcs(int slot);
  std::optional<int> free_slot() const;
  int busy_slots() const;

  EnclaveStatus aex(int slot, const GuestContext& live, ExitReason reason = ExitReason::kAex,
                    int fault_code = 0);
  // Resumes at the top SSA frame. `presented`, when given, is the context
  // the untrusted side asks to resume with; any difference is an R5 entry
  // violation and the genuine frame stays in place.
  EnclaveStatus eresume(int slot, GuestContext& out,
                        const std::optional<GuestContext>& presented = std::nullopt);

  // Only one primary handler is accepted.
  bool register_primary_handler(EntryId entry);
  std::optional<EntryId> primary_handler() const { return primary_handler_; }

  // --- memory ------------------------------------------------------------
  AccessVerdict check_access(Actor actor, Addr addr, std::uint64_t len, AccessMode mode);
  AccessVerdict read(Actor actor, Addr addr, std::span<std::uint8_t> out);
  AccessVerdict write(Actor actor, Addr addr, std::span<const std::uint8_t> in);
  // In-enclave loader path: place content into freshly carved pages
  // regardless of their final perms.
  void place(Addr addr, std::span<const std::uint8_t> bytes);
  void zero(Addr addr, std::uint64_t len);
  std::span<const std::uint8_t> view(Addr addr, std::uint64_t len) const;

  // After freeze, only carves inside a pool of identical perms are legal;
  // anything else is R2. An explicit frame already mapped elsewhere is R4,
  // a frame owned by another enclave is R3.
  std::optional<MemoryRegion> map_private(Addr start, std::uint64_t len, Perms perms,
                                          std::optional<FrameId> frame = std::nullopt,
                                          Actor actor = Actor::kEnclave);
  void unmap_private(Addr start);
  ViolationEvent reject_mutation(const MemoryRegion& region, Perms new_perms, Actor actor);

  FrameId frame_of(Addr a) const { return first_frame_ + (a - base()) / kPageSize; }
  const std::vector<MemoryRegion>& regions() const { return regions_; }
  const MemoryRegion& region(RegionRole role) const;
  const MemoryRegion* region_at(Addr a) const;
  const std::map<Addr, MemoryRegion>& carves() const { return carves_; }

  std::vector<TcsSlot>& slots() { return slots_; }
  const std::vector<TcsSlot>& slots() const { return slots_; }
  const EnclaveDiagnostics& diagnostics() const { return diag_; }
  EnclaveDiagnostics& diagnostics() { return diag_; }
  ViolationLog& log() { return *log_; }

 private:
  EnclaveState() = default;
  void violate(ViolationCode code, Actor actor, std::string detail);

  EnclaveConfig config_;
  EnclaveId id_ = 0;
  bool frozen_ = false;
  std::shared_ptr<FrameRegistry> frames_;
  FrameId first_frame_ = 0;
  ViolationLog* log_ = nullptr;
  std::vector<std::uint8_t> bytes_;
  std::vector<MemoryRegion> regions_;
  std::map<Addr, MemoryRegion> carves_;
  // Frames mapped away from their identity address (frame -> private addr).
  std::map<FrameId, Addr> remapped_;
  std::vector<TcsSlot> slots_;
  std::optional<EntryId> primary_handler_;
  EnclaveDiagnostics diag_;
};

}  // namespace enclsim

#endif  // ENCLSIM_ENCLAVE_H_
