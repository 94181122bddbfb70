#ifndef ENCLSIM_TRACE_H_
#define ENCLSIM_TRACE_H_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "enclsim/types.h"

namespace enclsim {

// One trace field; values are pre-rendered so record order stays fixed.
struct TraceField {
  std::string_view key;
  std::string value;
};

std::string hex_value(std::uint64_t v);

// Line-delimited records: `step=<n> kind=<event> thread=<tid> k=v...`.
class Trace {
 public:
  explicit Trace(bool enabled = true) : enabled_(enabled) {}

  bool enabled() const { return enabled_; }
  void record(std::uint64_t step, std::string_view kind, Tid thread, std::initializer_list<TraceField> fields = {});
  void record(std::uint64_t step, std::string_view kind, Tid thread, std::span<const TraceField> fields);
  const std::string& text() const { return text_; }
  std::uint64_t records() const { return records_; }

 private:
  bool enabled_;
  std::string text_;
  std::uint64_t records_ = 0;
};

// A parsed trace record.
struct TraceRecord {
  std::uint64_t step = 0;
  std::string kind;
  Tid thread = 0;
  std::vector<std::pair<std::string, std::string>> fields;

  const std::string* get(std::string_view key) const;
  std::uint64_t get_u64(std::string_view key, std::uint64_t fallback = 0) const;
};

TraceRecord parse_trace_line(std::string_view line);

// Run counters. Field order is the serialization order.
struct RunStats {
  std::uint64_t steps = 0;
  std::uint64_t blocks = 0;
  std::uint64_t insns_retired = 0;
  std::uint64_t syscalls_retired = 0;
  std::uint64_t mediator_dispatches = 0;
  std::uint64_t syscalls_delegate = 0;
  std::uint64_t syscalls_emulate = 0;
  std::uint64_t syscalls_partial = 0;
  std::uint64_t syscalls_unsupported = 0;
  std::uint64_t ocalls = 0;
  std::uint64_t ocalls_delegate = 0;
  std::uint64_t futex_ocalls = 0;
  std::uint64_t ecalls = 0;
  // Syscall marshalling, named by argument direction: "in" is guest
  // input staged for the host, "out" is host results copied back.
  std::uint64_t bytes_copied_in = 0;
  std::uint64_t bytes_copied_out = 0;
  // Two-copy traffic of file mappings (mmap copy-in, write-back).
  std::uint64_t mapping_bytes_in = 0;
  std::uint64_t mapping_bytes_out = 0;
  std::uint64_t context_switches = 0;
  std::uint64_t spin_steps = 0;
  std::uint64_t pool_wait_steps = 0;
  std::uint64_t futex_waits = 0;
  std::uint64_t futex_wakes = 0;
  std::uint64_t signals_raised = 0;
  std::uint64_t signals_delivered = 0;
  std::uint64_t signals_dropped = 0;
  std::uint64_t signals_queued = 0;
  std::uint64_t violations = 0;
  std::uint64_t iago_violations = 0;
  std::uint64_t host_private_accesses = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::uint64_t cache_invalidations = 0;
  std::uint64_t clones = 0;
  std::uint64_t max_in_enclave = 0;
  std::uint64_t tls_switches = 0;
  std::uint64_t mappings_created = 0;
  std::uint64_t mappings_destroyed = 0;
  std::uint64_t writeback_pages = 0;
  std::uint64_t ssa_exhausted = 0;
  std::uint64_t adversary_actions = 0;
  // Linux syscall number -> retirements.
  std::map<std::int64_t, std::uint64_t> syscall_histogram;

  std::vector<std::pair<std::string, std::uint64_t>> counters() const;
  // key=value lines; page faults are not modeled and reported as N/A.
  std::string serialize() const;
  static RunStats parse(const std::string& text);
  bool set(std::string_view key, std::uint64_t v);
};

}  // namespace enclsim

#endif  // ENCLSIM_TRACE_H_
