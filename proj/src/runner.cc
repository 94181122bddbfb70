#include "enclsim/runner.h"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace enclsim {

namespace fs = std::filesystem;

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  f << text;
}

namespace {

const std::set<std::string> kTopKeys = {"name",  "program", "seed",      "enclave", "runtime",
                                        "regs",  "data",    "files",     "adversary", "signals",
                                        "expect"};

[[noreturn]] void bad(const std::string& where, const std::string& why) {
  throw ConfigError(where + ": " + why);
}

void check_keys(const YAML::Node& n, const std::set<std::string>& allowed, const std::string& where) {
  if (!n.IsMap()) bad(where, "expected a mapping");
  for (const auto& kv : n) {
    const auto k = kv.first.as<std::string>();
    if (!allowed.count(k)) bad(where, "unknown key '" + k + "'");
  }
}

std::uint64_t u64(const YAML::Node& n, const std::string& where) {
  try {
    const auto s = n.as<std::string>();
    std::size_t used = 0;
    const std::uint64_t v = std::stoull(s, &used, 0);
    if (used != s.size()) bad(where, "not an integer: " + s);
    return v;
  } catch (const YAML::Exception&) {
    bad(where, "not an integer");
  } catch (const std::logic_error&) {
    bad(where, "not an integer");
  }
}

std::int64_t i64(const YAML::Node& n, const std::string& where) {
  const auto s = n.as<std::string>();
  try {
    std::size_t used = 0;
    const std::int64_t v = std::stoll(s, &used, 0);
    if (used != s.size()) bad(where, "not an integer: " + s);
    return v;
  } catch (const std::logic_error&) {
    bad(where, "not an integer: " + s);
  }
}

int reg_index(const std::string& k, const std::string& where) {
  if (k.size() == 2 && k[0] == 'r' && k[1] >= '0' && k[1] < '0' + static_cast<int>(kNumRegs)) return k[1] - '0';
  bad(where, "bad register name '" + k + "'");
}

std::vector<std::uint8_t> hex_bytes(const std::string& s, const std::string& where) {
  std::string h;
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) h += c;
  }
  if (h.size() % 2 != 0) bad(where, "odd hex length");
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < h.size(); i += 2) {
    out.push_back(static_cast<std::uint8_t>(std::stoul(h.substr(i, 2), nullptr, 16)));
  }
  return out;
}

// {text: ...} | {hex: ...} | {u64: [...]} | {fill: n, byte: b}
std::vector<std::uint8_t> blob(const YAML::Node& n, const std::string& where) {
  if (n.IsScalar()) {
    const auto s = n.as<std::string>();
    return {s.begin(), s.end()};
  }
  check_keys(n, {"text", "hex", "u64", "fill", "byte", "offset"}, where);
  if (!!n["text"] + !!n["hex"] + !!n["u64"] + !!n["fill"] > 1) bad(where, "blob takes exactly one of text, hex, u64, fill");
  if (n["byte"] && !n["fill"]) bad(where, "byte only goes with fill");
  std::vector<std::uint8_t> out;
  if (n["text"]) {
    const auto s = n["text"].as<std::string>();
    out.assign(s.begin(), s.end());
  } else if (n["hex"]) {
    out = hex_bytes(n["hex"].as<std::string>(), where);
  } else if (n["u64"]) {
    for (const auto& v : n["u64"]) {
      const std::uint64_t x = u64(v, where);
      for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
    }
  } else if (n["fill"]) {
    const auto len = u64(n["fill"], where);
    const auto b = n["byte"] ? u64(n["byte"], where) : 0;
    out.assign(len, static_cast<std::uint8_t>(b));
  } else {
    bad(where, "blob needs text, hex, u64 or fill");
  }
  return out;
}

std::string file_key(const std::string& k) {
  if (k == "stdout") return kStdoutPath;
  if (k == "stderr") return kStderrPath;
  if (k == "stdin") return kStdinPath;
  return k;
}

std::string printable(const std::vector<std::uint8_t>& b) {
  std::string s;
  for (std::uint8_t c : b) {
    if (c >= 0x20 && c < 0x7f) {
      s += static_cast<char>(c);
    } else {
      std::ostringstream os;
      os << "\\x" << std::hex << std::setw(2) << std::setfill('0') << int(c);
      s += os.str();
    }
  }
  return s;
}

}  // namespace

WorkloadManifest load_manifest(const std::string& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path);
  } catch (const YAML::BadFile&) {
    throw ConfigError("cannot open manifest '" + path + "'");
  } catch (const YAML::Exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  WorkloadManifest m;
  m.manifest_path = path;
  const fs::path dir = fs::path(path).parent_path();
  try {
    check_keys(root, kTopKeys, path);
    if (!root["name"]) bad(path, "missing 'name'");
    if (!root["program"]) bad(path, "missing 'program'");
    m.name = root["name"].as<std::string>();
    m.program_path = (dir / root["program"].as<std::string>()).string();
    try {
      m.program = assemble(read_text_file(m.program_path));
    } catch (const ParseError& e) {
      bad(m.program_path, e.what());
    } catch (const UndefinedLabel& e) {
      bad(m.program_path, e.what());
    }
    if (root["seed"]) m.vm.seed = u64(root["seed"], "seed");

    if (const auto& e = root["enclave"]) {
      check_keys(e, {"base", "size", "heap_size", "stack_size", "tcs_count", "nssa"}, "enclave");
      if (e["base"]) m.vm.enclave.base = u64(e["base"], "enclave.base");
      if (e["size"]) m.vm.enclave.size = u64(e["size"], "enclave.size");
      if (e["heap_size"]) m.vm.enclave.heap_size = u64(e["heap_size"], "enclave.heap_size");
      if (e["stack_size"]) m.vm.enclave.stack_size_per_thread = u64(e["stack_size"], "enclave.stack_size");
      if (e["tcs_count"]) m.vm.enclave.tcs_count = static_cast<int>(u64(e["tcs_count"], "enclave.tcs_count"));
      if (e["nssa"]) m.vm.enclave.nssa = static_cast<int>(u64(e["nssa"], "enclave.nssa"));
      if (m.vm.enclave.tcs_count < 1) bad("enclave.tcs_count", "must be at least 1");
      if (m.vm.enclave.nssa < 1) bad("enclave.nssa", "must be at least 1");
    }
    if (const auto& r = root["runtime"]) {
      check_keys(r, {"ocall_latency", "max_steps", "pool_wait_bound", "lock_spin_limit", "arena_size", "data_pages"},
                 "runtime");
      if (r["ocall_latency"]) m.vm.ocall_latency = u64(r["ocall_latency"], "runtime.ocall_latency");
      if (r["max_steps"]) m.vm.max_steps = u64(r["max_steps"], "runtime.max_steps");
      if (r["pool_wait_bound"]) m.vm.pool_wait_bound = u64(r["pool_wait_bound"], "runtime.pool_wait_bound");
      if (r["lock_spin_limit"]) m.vm.lock_spin_limit = static_cast<int>(u64(r["lock_spin_limit"], "runtime"));
      if (r["arena_size"]) m.vm.arena_size = u64(r["arena_size"], "runtime.arena_size");
      if (r["data_pages"]) m.vm.data_pages = u64(r["data_pages"], "runtime.data_pages");
    }
    if (const auto& r = root["regs"]) {
      if (!r.IsMap()) bad("regs", "expected a mapping");
      for (const auto& kv : r) {
        const auto k = kv.first.as<std::string>();
        m.regs[reg_index(k, "regs")] = u64(kv.second, "regs." + k);
      }
    }
    if (const auto& d = root["data"]) {
      if (!d.IsSequence()) bad("data", "expected a list");
      for (const auto& item : d) {
        const std::uint64_t off = item["offset"] ? u64(item["offset"], "data.offset") : m.data.size();
        auto bytes = blob(item, "data");
        if (off + bytes.size() > m.vm.data_pages * kPageSize) bad("data", "item past the data segment");
        if (m.data.size() < off + bytes.size()) m.data.resize(off + bytes.size());
        std::copy(bytes.begin(), bytes.end(), m.data.begin() + static_cast<std::ptrdiff_t>(off));
      }
    }
    if (const auto& f = root["files"]) {
      if (!f.IsMap()) bad("files", "expected a mapping");
      for (const auto& kv : f) m.files[file_key(kv.first.as<std::string>())] = blob(kv.second, "files");
    }
    if (root["adversary"]) m.adversary_path = (dir / root["adversary"].as<std::string>()).string();
    if (const auto& s = root["signals"]) {
      if (!s.IsSequence()) bad("signals", "expected a list");
      for (const auto& item : s) {
        check_keys(item, {"step", "sig", "thread"}, "signals");
        WorkloadManifest::AsyncSignal a;
        a.step = u64(item["step"], "signals.step");
        a.signum = static_cast<int>(i64(item["sig"], "signals.sig"));
        if (item["thread"]) a.tid = static_cast<Tid>(u64(item["thread"], "signals.thread"));
        m.signals.push_back(a);
      }
    }
    if (const auto& x = root["expect"]) {
      check_keys(x, {"exit_status", "signal", "regs", "files", "violations", "stats", "stats_min"}, "expect");
      auto& e = m.expect;
      if (x["exit_status"]) e.exit_status = static_cast<int>(i64(x["exit_status"], "expect.exit_status"));
      if (x["signal"]) e.signal = static_cast<int>(i64(x["signal"], "expect.signal"));
      if (const auto& r = x["regs"]) {
        for (const auto& kv : r) {
          const auto k = kv.first.as<std::string>();
          e.regs[reg_index(k, "expect.regs")] = static_cast<std::uint64_t>(i64(kv.second, "expect.regs." + k));
        }
      }
      if (const auto& f = x["files"]) {
        for (const auto& kv : f) e.files[file_key(kv.first.as<std::string>())] = blob(kv.second, "expect.files");
      }
      if (const auto& v = x["violations"]) {
        std::map<std::string, std::uint64_t> want;
        if (v.IsScalar()) {
          if (u64(v, "expect.violations") != 0) bad("expect.violations", "a scalar must be 0; use a code map");
        } else {
          for (const auto& kv : v) {
            auto k = kv.first.as<std::string>();
            if (k.size() < 2 || k[0] != 'R' || k[1] < '1' || k[1] > '5' || (k.size() > 2 && k[2] != '_')) {
              bad("expect.violations", "unknown violation code '" + k + "'");
            }
            want[k.substr(0, 2)] = u64(kv.second, "expect.violations." + k);
          }
        }
        e.violations = want;
      }
      RunStats probe;
      for (const char* key : {"stats", "stats_min"}) {
        if (const auto& s = x[key]) {
          for (const auto& kv : s) {
            const auto k = kv.first.as<std::string>();
            if (!probe.set(k, 0)) bad(std::string("expect.") + key, "unknown counter '" + k + "'");
            (std::string(key) == "stats" ? e.stats : e.stats_min)[k] = u64(kv.second, k);
          }
        }
      }
    }
  } catch (const YAML::Exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return m;
}

VmConfig effective_config(const WorkloadManifest& m, const RunOptions& opts) {
  VmConfig cfg = m.vm;
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.tcs) cfg.enclave.tcs_count = *opts.tcs;
  if (opts.nssa) cfg.enclave.nssa = *opts.nssa;
  if (opts.policy) cfg.policy = *opts.policy;
  cfg.trace = opts.trace;
  return cfg;
}

std::unique_ptr<Vm> prepare_vm(const WorkloadManifest& m, const RunOptions& opts) {
  std::optional<AdversarySchedule> adv;
  if (opts.adversary) {
    adv = *opts.adversary;
  } else if (opts.adversary_path) {
    if (!opts.adversary_path->empty()) adv = AdversarySchedule::load(*opts.adversary_path);
  } else if (m.adversary_path) {
    adv = AdversarySchedule::load(*m.adversary_path);
  }

  auto vmp = std::make_unique<Vm>(effective_config(m, opts));
  Vm& vm = *vmp;
  for (const auto& [path, bytes] : m.files) vm.host().add_file(path, bytes);
  if (adv) vm.host().set_adversary(*adv);
  vm.load(m.program, m.data);
  if (!vm.thread_table().empty()) {
    ThreadRecord& main = vm.main_thread();
    for (const auto& [r, v] : m.regs) main.ctx.regs[static_cast<std::size_t>(r)] = v;
  }
  const Tid main_tid = vm.main_thread().tid;
  for (const auto& s : m.signals) vm.host().raise_async_signal(s.tid == 0 ? main_tid : s.tid, s.signum, s.step);
  return vmp;
}

RunOutcome run_workload(const WorkloadManifest& m, const RunOptions& opts) {
  const VmConfig cfg = effective_config(m, opts);
  auto vmp = prepare_vm(m, opts);
  Vm& vm = *vmp;
  RunOutcome out;
  out.result = vm.run();
  out.stats = vm.stats();
  out.trace = vm.trace().text();
  out.stats_text = out.stats.serialize();
  out.violations = vm.violations().events();
  for (const std::string& p : {std::string(kStdoutPath), std::string(kStderrPath)}) {
    if (const auto* f = vm.host().file(p)) out.files[p] = *f;
  }
  for (const auto& [p, _] : m.expect.files) {
    if (const auto* f = vm.host().file(p)) out.files[p] = *f;
  }

  if (!out.result.error.empty() && cfg.policy == ViolationPolicy::kAbort && !out.violations.empty()) {
    out.verdict = Verdict::kViolationAbort;
    out.failures.push_back(out.result.error);
    return out;
  }

  auto& f = out.failures;
  const auto& x = m.expect;
  if (!out.result.error.empty()) f.push_back("run error: " + out.result.error);
  if (out.result.deadlock) f.push_back("deadlock");
  if (out.result.step_limit) f.push_back("step limit reached");
  if (x.exit_status && *x.exit_status != out.result.exit_status) {
    f.push_back("exit status " + std::to_string(out.result.exit_status) + ", expected " +
                std::to_string(*x.exit_status));
  }
  if (x.signal && out.result.term_signal != x.signal) {
    f.push_back("terminating signal " +
                (out.result.term_signal ? std::to_string(*out.result.term_signal) : std::string("none")) +
                ", expected " + std::to_string(*x.signal));
  }
  for (const auto& [r, v] : x.regs) {
    const std::uint64_t got = out.result.main_ctx.regs[static_cast<std::size_t>(r)];
    if (got != v) f.push_back("r" + std::to_string(r) + "=" + std::to_string(got) + ", expected " + std::to_string(v));
  }
  for (const auto& [p, want] : x.files) {
    auto it = out.files.find(p);
    if (it == out.files.end()) {
      f.push_back("file " + p + " missing");
    } else if (it->second != want) {
      f.push_back("file " + p + " = \"" + printable(it->second) + "\", expected \"" + printable(want) + "\"");
    }
  }
  std::map<std::string, std::uint64_t> got_v;
  for (const auto& ev : out.violations) ++got_v[std::string(violation_name(ev.code)).substr(0, 2)];
  const std::map<std::string, std::uint64_t> want_v = x.violations.value_or(std::map<std::string, std::uint64_t>{});
  for (const char* code : {"R1", "R2", "R3", "R4", "R5"}) {
    const auto g = got_v.count(code) ? got_v[code] : 0;
    const auto w = want_v.count(code) ? want_v.at(code) : 0;
    if (g != w) f.push_back(std::string(code) + " violations " + std::to_string(g) + ", expected " + std::to_string(w));
  }
  std::map<std::string, std::uint64_t> counters;
  for (const auto& [k, v] : out.stats.counters()) counters[k] = v;
  for (const auto& [k, v] : x.stats) {
    if (counters[k] != v) f.push_back(k + "=" + std::to_string(counters[k]) + ", expected " + std::to_string(v));
  }
  for (const auto& [k, v] : x.stats_min) {
    if (counters[k] < v) f.push_back(k + "=" + std::to_string(counters[k]) + ", expected >= " + std::to_string(v));
  }
  out.verdict = f.empty() ? Verdict::kPass : Verdict::kAssertionFailed;
  return out;
}

ReplayReport replay_trace(const std::string& text) {
  ReplayReport rep;
  if (text.empty()) throw TruncatedTrace("empty trace");
  if (text.back() != '\n') throw TruncatedTrace("last record is incomplete");
  std::istringstream in(text);
  std::string line;
  std::vector<TraceRecord> recs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      recs.push_back(parse_trace_line(line));
    } catch (const SimError& e) {
      throw TruncatedTrace("record " + std::to_string(recs.size() + 1) + ": " + e.what());
    }
  }
  rep.records = recs.size();
  if (recs.empty() || recs.back().kind != "end") throw TruncatedTrace("no end record");
  if (recs.size() < 2 || recs[recs.size() - 2].kind != "stats") throw TruncatedTrace("no stats record");

  const TraceRecord& sr = recs[recs.size() - 2];
  for (const auto& [k, v] : sr.fields) {
    if (v == "N/A") continue;
    try {
      if (!rep.stats.set(k, std::stoull(v))) rep.failures.push_back("unknown counter " + k);
    } catch (const std::logic_error&) {
      rep.failures.push_back("counter " + k + " is not a number: " + v);
    }
  }
  rep.steps = recs.back().step;

  auto field = [](const TraceRecord& r, std::string_view k) -> const std::string* {
    for (const auto& [fk, fv] : r.fields) {
      if (fk == k) return &fv;
    }
    return nullptr;
  };
  std::map<std::string, std::uint64_t> strat;
  std::uint64_t ocall_delegate = 0, futex_ocalls = 0, bytes_in = 0, bytes_out = 0;
  for (std::size_t i = 0; i + 2 < recs.size(); ++i) {
    const TraceRecord& r = recs[i];
    if (i > 0 && r.step < recs[i - 1].step) rep.failures.push_back("step goes backwards at record " + std::to_string(i + 1));
    ++rep.kinds[r.kind];
    if (r.kind == "syscall") {
      if (const auto* s = field(r, "strategy")) ++strat[*s];
    } else if (r.kind == "ocall") {
      const auto* c = field(r, "cause");
      const auto* n = field(r, "name");
      if (c && *c == "delegate") ++ocall_delegate;
      if (n && *n == "futex") ++futex_ocalls;
    } else if (r.kind == "sysret") {
      if (const auto* v = field(r, "in")) bytes_in += std::stoull(*v);
      if (const auto* v = field(r, "out")) bytes_out += std::stoull(*v);
    }
  }
  const RunStats& s = rep.stats;
  auto kind = [&](const std::string& k) { return rep.kinds.count(k) ? rep.kinds.at(k) : 0; };
  auto check = [&](const std::string& what, std::uint64_t a, std::uint64_t b) {
    rep.checked.push_back(what);
    if (a != b) rep.failures.push_back(what + ": " + std::to_string(a) + " != " + std::to_string(b));
  };
  check("syscalls_retired == syscall records", s.syscalls_retired, kind("syscall"));
  check("mediator_dispatches == syscalls_retired", s.mediator_dispatches, s.syscalls_retired);
  check("syscalls_delegate == delegate records", s.syscalls_delegate, strat["delegate"]);
  check("syscalls_emulate == emulate records", s.syscalls_emulate, strat["emulate"]);
  check("syscalls_partial == partial records", s.syscalls_partial, strat["partial"]);
  check("syscalls_unsupported == unsupported records", s.syscalls_unsupported, strat["unsupported"]);
  check("strategy counters sum to syscalls_retired",
        s.syscalls_delegate + s.syscalls_emulate + s.syscalls_partial + s.syscalls_unsupported, s.syscalls_retired);
  check("ocalls == ocall records", s.ocalls, kind("ocall"));
  check("ocalls_delegate == delegate ocall records", s.ocalls_delegate, ocall_delegate);
  check("futex_ocalls == futex ocall records", s.futex_ocalls, futex_ocalls);
  check("bytes_copied_in == sum of sysret in", s.bytes_copied_in, bytes_in);
  check("bytes_copied_out == sum of sysret out", s.bytes_copied_out, bytes_out);
  check("violations == violation records", s.violations, kind("violation"));
  check("iago_violations == iago records", s.iago_violations, kind("iago"));
  check("signals_delivered == secondary_entered records", s.signals_delivered, kind("secondary_entered"));
  check("blocks == block records", s.blocks, kind("block"));
  check("cache_misses == translate records", s.cache_misses, kind("translate"));
  check("clones == clone records", s.clones, kind("clone"));
  check("adversary_actions == adversary records", s.adversary_actions, kind("adversary"));
  check("steps == final step", s.steps, rep.steps);
  return rep;
}

std::string ReplayReport::render() const {
  std::ostringstream os;
  os << "records: " << records << "\nsteps: " << steps << "\n";
  os << "record kinds:\n";
  for (const auto& [k, n] : kinds) os << "  " << std::left << std::setw(20) << k << n << "\n";
  os << "identities checked: " << checked.size() << "\n";
  for (const auto& f : failures) os << "IDENTITY FAILED: " << f << "\n";
  os << (ok() ? "OK" : "FAILED") << "\n";
  return os.str();
}

std::string report_table(const std::vector<ReportRow>& rows, bool csv) {
  static const char* kCols[] = {"steps",        "insns_retired",  "syscalls_retired", "ocalls",
                                "bytes_copied_in", "bytes_copied_out", "context_switches", "spin_steps",
                                "signals_delivered", "violations"};
  if (rows.empty()) return "";
  std::vector<std::string> header = {"workload"};
  for (const char* c : kCols) header.emplace_back(c);
  std::vector<std::vector<std::string>> table;
  auto value = [](const RunStats& s, const std::string& k) -> std::int64_t {
    for (const auto& [n, v] : s.counters()) {
      if (n == k) return static_cast<std::int64_t>(v);
    }
    return 0;
  };
  for (const ReportRow& r : rows) {
    std::vector<std::string> line = {r.name};
    for (const char* c : kCols) line.push_back(std::to_string(value(r.stats, c)));
    table.push_back(line);
  }
  if (rows.size() == 2) {
    std::vector<std::string> line = {"delta"};
    for (const char* c : kCols) {
      const std::int64_t d = value(rows[1].stats, c) - value(rows[0].stats, c);
      line.push_back((d > 0 ? "+" : "") + std::to_string(d));
    }
    table.push_back(line);
  }
  std::ostringstream os;
  if (csv) {
    auto emit = [&](const std::vector<std::string>& l) {
      for (std::size_t i = 0; i < l.size(); ++i) os << (i ? "," : "") << l[i];
      os << "\n";
    };
    emit(header);
    for (const auto& l : table) emit(l);
    return os.str();
  }
  std::vector<std::size_t> w(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) {
    w[i] = header[i].size();
    for (const auto& l : table) w[i] = std::max(w[i], l[i].size());
  }
  auto emit = [&](const std::vector<std::string>& l) {
    for (std::size_t i = 0; i < l.size(); ++i) {
      if (i) os << "  ";
      if (i == 0) {
        os << std::left << std::setw(static_cast<int>(w[i])) << l[i];
      } else {
        os << std::right << std::setw(static_cast<int>(w[i])) << l[i];
      }
    }
    os << "\n";
  };
  emit(header);
  for (const auto& l : table) emit(l);
  return os.str();
}

}  // namespace enclsim
