#ifndef ENCLSIM_DBT_H_
#define ENCLSIM_DBT_H_

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "enclsim/isa.h"
#include "enclsim/types.h"

namespace enclsim {

class Vm;
struct ThreadRecord;

enum class StubKind : std::uint8_t { kNone, kSyscall, kFutex, kCpuid, kRdtsc };

const char* stub_name(StubKind k);

struct TranslatedInsn {
  Instruction insn;
  Addr pc = 0;
  StubKind stub = StubKind::kNone;

  friend bool operator==(const TranslatedInsn&, const TranslatedInsn&) = default;
};

enum class Terminator : std::uint8_t { kBranch, kStub, kHalt, kFallthrough };

enum class FetchFault : std::uint8_t { kNone, kUnmapped, kInvalid };

struct TranslatedBlock {
  Addr start_pc = 0;
  std::vector<Instruction> source;
  std::vector<std::uint8_t> source_bytes;
  std::vector<TranslatedInsn> translated;
  Terminator terminator = Terminator::kFallthrough;
  // Set when the very first instruction cannot be fetched or decoded.
  FetchFault fault = FetchFault::kNone;

  Addr end_pc() const { return start_pc + source.size() * kInsnSize; }
  bool raw_illegal() const;
  friend bool operator==(const TranslatedBlock&, const TranslatedBlock&) = default;
};

class CodeCache {
 public:
  std::shared_ptr<const TranslatedBlock> lookup(Addr pc);
  std::shared_ptr<const TranslatedBlock> insert(TranslatedBlock b);
  // Drops blocks whose source overlaps [lo, hi); returns the number dropped.
  std::size_t invalidate(Addr lo, Addr hi);
  void clear() { blocks_.clear(); }
  std::size_t size() const { return blocks_.size(); }
  std::uint64_t hits() const { return hits_; }
  std::uint64_t misses() const { return misses_; }
  std::uint64_t invalidations() const { return invalidations_; }
  const std::map<Addr, std::shared_ptr<const TranslatedBlock>>& blocks() const { return blocks_; }

 private:
  std::map<Addr, std::shared_ptr<const TranslatedBlock>> blocks_;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
  std::uint64_t invalidations_ = 0;
};

inline constexpr std::size_t kMaxBlockInsns = 32;

class DbtEngine {
 public:
  explicit DbtEngine(Vm& vm);

  TranslatedBlock translate_block(Addr pc);
  // Runs one translated block of `t`. Control returns at block boundaries
  // and after each stub.
  void execute_block(ThreadRecord& t);
  void invalidate(Addr lo, Addr hi);

  CodeCache& cache() { return cache_; }
  const CodeCache& cache() const { return cache_; }
  std::uint64_t illegal_executed() const { return illegal_executed_; }

 private:
  Vm& vm_;
  CodeCache cache_;
  std::uint64_t illegal_executed_ = 0;
  // Set when a store hit code belonging to the running block.
  bool current_invalidated_ = false;
  Addr running_lo_ = 0;
  Addr running_hi_ = 0;
};

}  // namespace enclsim

#endif  // ENCLSIM_DBT_H_
