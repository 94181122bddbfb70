#include "enclsim/trace.h"

#include <sstream>

namespace enclsim {

namespace {

#define ENCLSIM_STATS_FIELDS(X) \
  X(steps)                      \
  X(blocks)                     \
  X(insns_retired)              \
  X(syscalls_retired)           \
  X(mediator_dispatches)        \
  X(syscalls_delegate)          \
  X(syscalls_emulate)           \
  X(syscalls_partial)           \
  X(syscalls_unsupported)       \
  X(ocalls)                     \
  X(ocalls_delegate)            \
  X(futex_ocalls)               \
  X(ecalls)                     \
  X(bytes_copied_in)            \
  X(bytes_copied_out)           \
  X(mapping_bytes_in)           \
  X(mapping_bytes_out)          \
  X(context_switches)           \
  X(spin_steps)                 \
  X(pool_wait_steps)            \
  X(futex_waits)                \
  X(futex_wakes)                \
  X(signals_raised)             \
  X(signals_delivered)          \
  X(signals_dropped)            \
  X(signals_queued)             \
  X(violations)                 \
  X(iago_violations)            \
  X(host_private_accesses)      \
  X(cache_hits)                 \
  X(cache_misses)               \
  X(cache_invalidations)        \
  X(clones)                     \
  X(max_in_enclave)             \
  X(tls_switches)               \
  X(mappings_created)           \
  X(mappings_destroyed)         \
  X(writeback_pages)            \
  X(ssa_exhausted)              \
  X(adversary_actions)

}  // namespace

std::string hex_value(std::uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

void Trace::record(std::uint64_t step, std::string_view kind, Tid thread, std::initializer_list<TraceField> fields) {
  record(step, kind, thread, std::span<const TraceField>(fields.begin(), fields.size()));
}

void Trace::record(std::uint64_t step, std::string_view kind, Tid thread, std::span<const TraceField> fields) {
  ++records_;
  if (!enabled_) return;
  text_ += "step=";
  text_ += std::to_string(step);
  text_ += " kind=";
  text_ += kind;
  text_ += " thread=";
  text_ += std::to_string(thread);
  for (const TraceField& f : fields) {
    text_ += ' ';
    text_ += f.key;
    text_ += '=';
    // Values never contain separators.
    for (char c : f.value) text_ += (c == ' ' || c == '\n' || c == '=') ? '_' : c;
  }
  text_ += '\n';
}

const std::string* TraceRecord::get(std::string_view key) const {
  for (const auto& [k, v] : fields) {
    if (k == key) return &v;
  }
  return nullptr;
}

std::uint64_t TraceRecord::get_u64(std::string_view key, std::uint64_t fallback) const {
  const std::string* v = get(key);
  if (v == nullptr) return fallback;
  return std::stoull(*v, nullptr, 0);
}

TraceRecord parse_trace_line(std::string_view line) {
  TraceRecord rec;
  std::istringstream in{std::string(line)};
  std::string tok;
  int idx = 0;
  while (in >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) throw SimError("malformed trace token '" + tok + "'");
    std::string k = tok.substr(0, eq);
    std::string v = tok.substr(eq + 1);
    if (idx == 0) {
      if (k != "step") throw SimError("trace record must start with step=");
      rec.step = std::stoull(v);
    } else if (idx == 1) {
      if (k != "kind") throw SimError("trace record missing kind=");
      rec.kind = v;
    } else if (idx == 2) {
      if (k != "thread") throw SimError("trace record missing thread=");
      rec.thread = std::stoll(v);
    } else {
      rec.fields.emplace_back(std::move(k), std::move(v));
    }
    ++idx;
  }
  if (idx < 3) throw SimError("truncated trace record");
  return rec;
}

std::vector<std::pair<std::string, std::uint64_t>> RunStats::counters() const {
  std::vector<std::pair<std::string, std::uint64_t>> out;
#define X(name) out.emplace_back(#name, name);
  ENCLSIM_STATS_FIELDS(X)
#undef X
  for (const auto& [nr, n] : syscall_histogram) out.emplace_back("syscall_" + std::to_string(nr), n);
  return out;
}

bool RunStats::set(std::string_view key, std::uint64_t v) {
#define X(name)          \
  if (key == #name) {    \
    name = v;            \
    return true;         \
  }
  ENCLSIM_STATS_FIELDS(X)
#undef X
  if (key.substr(0, 8) == "syscall_") {
    syscall_histogram[std::stoll(std::string(key.substr(8)))] = v;
    return true;
  }
  return false;
}

std::string RunStats::serialize() const {
  std::string out;
  for (const auto& [k, v] : counters()) {
    out += k;
    out += '=';
    out += std::to_string(v);
    out += '\n';
  }
  out += "pagefaults=N/A\n";
  return out;
}

RunStats RunStats::parse(const std::string& text) {
  RunStats s;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw SimError("malformed stats line '" + line + "'");
    std::string k = line.substr(0, eq);
    std::string v = line.substr(eq + 1);
    if (v == "N/A") continue;
    if (!s.set(k, std::stoull(v))) throw SimError("unknown stats key '" + k + "'");
  }
  return s;
}

}  // namespace enclsim
