// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion and exits
// non-zero if any failed. Expected values come from small oracles written
// here, not from the simulator's own bookkeeping.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "enclsim/reference_interpreter.h"
#include "enclsim/runner.h"
#include "enclsim/signal_subsystem.h"

using namespace enclsim;
namespace fs = std::filesystem;

namespace {

const std::string kRoot = ENCLSIM_SOURCE_DIR;

// Collects failure reasons; a criterion passes when none were added.
struct Check {
  std::vector<std::string> problems;
  void expect(bool ok, const std::string& what) {
    if (!ok && problems.size() < 8) problems.push_back(what);
  }
  template <typename A, typename B>
  void eq(const A& got, const B& want, const std::string& what) {
    if (!(got == want)) {
      std::ostringstream o;
      o << what << ": got " << got << ", want " << want;
      expect(false, o.str());
    }
  }
};

std::vector<std::string> manifests(const std::string& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(kRoot + "/" + dir)) {
    if (e.path().extension() == ".yaml") out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string stem(const std::string& p) { return fs::path(p).stem().string(); }

RunOptions quiet(std::optional<std::uint64_t> seed = std::nullopt) {
  RunOptions o;
  o.trace = false;
  o.seed = seed;
  return o;
}

std::string ctx_str(const GuestContext& c) { return to_string(c); }

// ---------------------------------------------------------------------------

void restrictions(Check& c) {
  const std::map<std::string, ViolationCode> scenario = {
      {"r1_read_private", ViolationCode::kR1Access}, {"r2_mutate_perms", ViolationCode::kR2Mutate},
      {"r3_share_frame", ViolationCode::kR3Share},   {"r4_alias_frame", ViolationCode::kR4Alias},
      {"r5_forged_signal", ViolationCode::kR5Entry},
  };
  std::set<ViolationCode> covered;
  for (const auto& [name, code] : scenario) {
    RunOutcome r = run_workload(load_manifest(kRoot + "/workloads/scenarios/" + name + ".yaml"), quiet());
    c.eq(r.violations.size(), 1u, name + " violation count");
    if (r.violations.size() == 1) {
      c.expect(r.violations[0].code == code, name + " produced " + violation_name(r.violations[0].code));
      covered.insert(r.violations[0].code);
    }
  }
  c.eq(covered.size(), 5u, "distinct restriction codes");

  const auto benign = manifests("workloads");
  c.expect(benign.size() >= 20, "benign suite has only " + std::to_string(benign.size()) + " workloads");
  for (const auto& p : benign) {
    RunOutcome r = run_workload(load_manifest(p), quiet());
    c.eq(r.violations.size(), 0u, stem(p) + " violations");
    c.expect(r.verdict == Verdict::kPass, stem(p) + " did not pass its own expectations");
  }
}

void mediation(Check& c) {
  auto all = manifests("workloads");
  for (const auto& p : manifests("workloads/scenarios")) all.push_back(p);
  for (const auto& p : all) {
    RunOptions o;  // traced: the trace gives a second, independent count
    RunOutcome r = run_workload(load_manifest(p), o);
    const RunStats& s = r.stats;
    c.eq(s.syscalls_retired, s.mediator_dispatches, stem(p) + " retired vs dispatched");
    std::uint64_t syscall_records = 0;
    std::istringstream in(r.trace);
    for (std::string line; std::getline(in, line);) {
      // Second token is the record kind.
      std::istringstream ls(line);
      std::string step, kind;
      ls >> step >> kind;
      syscall_records += kind == "kind=syscall";
    }
    c.eq(syscall_records, s.syscalls_retired, stem(p) + " syscall records");

    // Every host attempt on private memory must have been refused and logged.
    std::uint64_t r1 = 0;
    for (const auto& v : r.violations) r1 += v.code == ViolationCode::kR1Access;
    if (r.violations.empty()) c.eq(s.host_private_accesses, 0u, stem(p) + " host private accesses");
    c.eq(s.host_private_accesses, r1, stem(p) + " private accesses vs refusals");
  }
}

void toctou(Check& c) {
  const AdversarySchedule base = AdversarySchedule::load(kRoot + "/workloads/scenarios/toctou.adv");
  for (const char* w : {"file_io", "writev", "hello"}) {
    WorkloadManifest m = load_manifest(kRoot + "/workloads/" + w + ".yaml");
    m.expect.files.emplace("out.txt", std::vector<std::uint8_t>{});  // make the runner collect it
    RunOptions clean = quiet();
    clean.adversary_path = "";
    const RunOutcome ref = run_workload(m, clean);
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
      RunOptions o = quiet();
      o.adversary = base;
      o.adversary->seed = seed;
      const RunOutcome r = run_workload(m, o);
      const std::string tag = std::string(w) + " seed " + std::to_string(seed);
      c.expect(r.stats.adversary_actions > 0, tag + ": adversary never acted");
      c.expect(r.files == ref.files, tag + ": output files differ");
      c.expect(r.result.main_ctx.regs == ref.result.main_ctx.regs, tag + ": registers differ");
      c.eq(r.result.exit_status, ref.result.exit_status, tag + " exit status");
    }
  }
  // Control: the same host mutating the staged buffer *before* it consumes
  // it must show up in the output, or the check above proves nothing.
  WorkloadManifest m = load_manifest(kRoot + "/workloads/hello.yaml");
  RunOptions clean = quiet();
  clean.adversary_path = "";
  const RunOutcome ref = run_workload(m, clean);
  RunOptions o = quiet();
  o.adversary = AdversarySchedule::parse("seed 3\nwhen before_ocall write do mutate_public slot0 0 random:4\n");
  c.expect(run_workload(m, o).files != ref.files, "control: pre-consumption tampering went unnoticed");
}

void two_copy(Check& c) {
  WorkloadManifest m = load_manifest(kRoot + "/workloads/mmap_file.yaml");
  auto vm = prepare_vm(m, quiet());

  // The guest's stores, as (offset, value) pairs, split at the msync.
  const std::vector<std::pair<std::uint64_t, std::uint64_t>> before = {{8, 0x4847464544434241},
                                                                       {8292, 0x3837363534333231}};
  const std::vector<std::pair<std::uint64_t, std::uint64_t>> after = {{16376, 0x5a5a5a5a5a5a5a5a}};
  std::vector<std::uint8_t> expect(16384, 'a');
  std::set<std::uint64_t> pages_before, pages_after;
  auto apply = [&](const auto& stores, std::set<std::uint64_t>& pages) {
    for (auto [off, v] : stores) {
      for (int i = 0; i < 8; ++i) expect[off + i] = static_cast<std::uint8_t>(v >> (8 * i));
      pages.insert(off / kPageSize);
      pages.insert((off + 7) / kPageSize);
    }
  };

  Addr mapping = 0;
  std::vector<std::uint8_t> last_private;
  bool checked_msync = false;
  while (vm->step_once()) {
    const GuestContext& ctx = vm->main_thread().ctx;
    if (mapping == 0 && vm->memory().find(ctx.regs[6]) && vm->memory().find(ctx.regs[6])->shared) {
      mapping = ctx.regs[6];
    }
    if (mapping != 0 && vm->memory().find(mapping)) {
      last_private.assign(16384, 0);
      vm->memory().read_guest(mapping, last_private);
    }
    if (!checked_msync && vm->stats().syscall_histogram.count(26)) {
      checked_msync = true;
      auto snapshot = expect;
      std::set<std::uint64_t> dummy;
      apply(before, dummy);
      const auto* host = vm->host().file("data.bin");
      c.expect(host && *host == expect, "host file differs from private copy right after msync");
      c.expect(last_private == expect, "private copy after msync is not what the guest wrote");
      expect = snapshot;
    }
  }
  c.expect(checked_msync, "msync never retired");
  apply(before, pages_before);
  apply(after, pages_after);
  const auto* host = vm->host().file("data.bin");
  c.expect(host != nullptr, "data.bin missing");
  if (host) {
    c.expect(*host == last_private, "host file differs from last private bytes after munmap");
    c.expect(*host == expect, "host file differs from the oracle");
  }
  vm->run();  // finalises stats
  c.eq(vm->stats().writeback_pages, pages_before.size() + pages_after.size(), "write-back pages");
  c.eq(vm->stats().violations, 0u, "violations");
}

void locks(Check& c) {
  for (const char* w : {"mutex", "prodcons"}) {
    const WorkloadManifest base = load_manifest(kRoot + "/workloads/" + w + ".yaml");
    for (std::uint64_t t : {2, 4, 8}) {
      WorkloadManifest m = base;
      m.regs[1] = t;
      m.expect = {};
      m.expect.exit_status = 0;
      // Mutex: each thread adds 1 five times. Prodcons: every producer
      // hands over 1, 2 and 3, and consumers add up what they receive.
      std::uint64_t want = 0;
      for (std::uint64_t i = 0; i < t; ++i) {
        if (std::string(w) == "mutex") {
          want += 5;
        } else if (i % 2 == 0) {
          for (std::uint64_t v = 1; v <= 3; ++v) want += v;
        }
      }
      for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
        const RunOutcome r = run_workload(m, quiet(seed));
        const std::string tag = std::string(w) + " T=" + std::to_string(t) + " seed " + std::to_string(seed);
        c.expect(!r.result.deadlock && !r.result.step_limit, tag + ": did not finish (lost wake-up?)");
        c.eq(r.result.main_ctx.regs[0], want, tag + " result");
        c.eq(r.stats.futex_ocalls, 0u, tag + " futex OCALLs");
        c.expect(r.failures.empty(), tag + ": " + (r.failures.empty() ? "" : r.failures[0]));
      }
    }
  }
  // Control: without the lock calls some schedule must lose an update.
  {
    WorkloadManifest m = load_manifest(kRoot + "/workloads/mutex.yaml");
    std::string src = read_text_file(kRoot + "/workloads/mutex.gasm");
    for (const char* op : {"MOV r2, 6            ; FUTEX_LOCK_PI", "MOV r2, 7            ; FUTEX_UNLOCK_PI"}) {
      const std::string from = std::string(op) + "\n        SYSCALL";
      const auto at = src.find(from);
      c.expect(at != std::string::npos, "control: lock call not found in mutex.gasm");
      if (at != std::string::npos) src.replace(at, from.size(), "MOV r0, 0\n        MOV r0, 0");
    }
    m.program = assemble(src);
    m.regs[1] = 4;
    std::uint64_t lost = 0;
    for (std::uint64_t seed = 1; seed <= 1000; ++seed) lost += run_workload(m, quiet(seed)).result.main_ctx.regs[0] < 20;
    c.expect(lost > 0, "control: unlocked counter never lost an update");
  }
  NaiveDemoOptions o;
  o.threads = 2;
  o.max_interleavings = 1000;
  const InconsistencyReport naive = naive_two_copy_demo(1, o);
  c.expect(naive.found, "naive two-copy design: no witness in 1000 interleavings");
  c.expect(naive.interleavings_tried <= 1000, "naive witness took too many interleavings");
}

void multiplexing(Check& c) {
  WorkloadManifest m = load_manifest(kRoot + "/workloads/many_threads.yaml");
  const std::uint64_t n = m.regs.at(1);
  c.eq(n, 16u, "guest threads");
  c.eq(m.vm.enclave.tcs_count, 4, "tcs_count");
  auto vm = prepare_vm(m, quiet());
  int peak = 0;
  std::uint64_t steps = 0;
  while (vm->step_once()) {
    ++steps;
    const int live = vm->threads().live_in_enclave();
    int inside = 0;
    for (const auto& s : vm->enclave().slots()) inside += s.busy ? 1 : 0;
    peak = std::max({peak, live, inside});
    if (live > 4 || inside > 4) {
      c.expect(false, "step " + std::to_string(steps) + ": " + std::to_string(std::max(live, inside)) +
                          " threads in the enclave");
      break;
    }
  }
  const RunResult r = vm->run();
  c.eq(peak, 4, "peak in-enclave threads");
  c.eq(vm->stats().max_in_enclave, 4u, "max_in_enclave stat");
  c.eq(vm->stats().clones, n, "clones");
  std::uint64_t want = 0;
  for (std::uint64_t i = 1; i <= n; ++i) want += 10 * i;
  c.eq(r.main_ctx.regs[0], want, "sum of worker results");
  std::size_t exited = 0;
  for (const auto& [tid, t] : vm->thread_table()) exited += t.state == ThreadState::kExited;
  c.eq(exited, vm->thread_table().size(), "threads exited");
}

void signals(Check& c) {
  // SIGFPE: the saved context must be exactly the pre-fault state.
  {
    WorkloadManifest m = load_manifest(kRoot + "/workloads/sigfpe.yaml");
    auto vm = prepare_vm(m, quiet());
    // Oracle: the reference interpreter with rt_sigaction's SYSCALL replaced
    // by its result (0), stopping at the divide fault.
    GuestProgram ref_prog = m.program;
    for (auto& in : ref_prog.instructions) {
      if (in.op == Opcode::kSyscall) in = assemble("MOV r0, 0").instructions[0];
    }
    ReferenceInputs ri;
    ri.regs = vm->main_thread().ctx.regs;
    ri.data = m.data;
    const ReferenceResult ref = interpret_reference(ref_prog, ri);
    c.expect(ref.fault == 8, "reference did not stop on SIGFPE");
    GuestContext want = ref.ctx;
    want.pc += kInsnSize;  // trap semantics: resume after the faulting instruction
    want.tls_base_guest = vm->main_thread().ctx.tls_base_guest;

    std::optional<GuestContext> saved;
    bool resumed_checked = false;
    while (vm->step_once()) {
      ThreadRecord& t = vm->main_thread();
      if (!saved && !t.signal_frames.empty()) saved = t.signal_frames.back().interrupted;
      if (saved && t.signal_frames.empty() && !resumed_checked) {
        resumed_checked = true;
        c.expect(t.ctx == *saved, "context after sigreturn: " + ctx_str(t.ctx) + " vs saved " + ctx_str(*saved));
      }
    }
    c.expect(saved.has_value(), "handler never ran");
    if (saved) c.expect(*saved == want, "saved context " + ctx_str(*saved) + " vs oracle " + ctx_str(want));
    c.expect(resumed_checked, "never returned from the handler");
    const RunResult r = vm->run();
    c.expect(!r.term_signal, "process died");
    c.eq(r.main_ctx.regs[0], 8u, "handler-observed signal number");
  }
  // Nesting with nssa=3.
  {
    WorkloadManifest m = load_manifest(kRoot + "/workloads/signest.yaml");
    c.eq(m.vm.enclave.nssa, 3, "signest nssa");
    auto vm = prepare_vm(m, quiet());
    std::size_t depth = 0;
    std::uint64_t queued_at_depth = 0;
    while (vm->step_once()) {
      ThreadRecord& t = vm->main_thread();
      depth = std::max(depth, t.signal_frames.size());
      if (t.signal_frames.size() == 3 && !t.pending_signals.empty() && t.pending_signals.front().queued) {
        queued_at_depth = 4;
      }
    }
    vm->run();
    c.eq(depth, 3u, "max handler nesting");
    c.eq(queued_at_depth, 4u, "fourth signal queued behind depth 3");
    c.eq(vm->stats().signals_queued, 1u, "signals queued");
    c.eq(vm->stats().signals_delivered, 4u, "signals eventually delivered");
  }
  // Registration: 31 of 32 handled, SIGPROF refused.
  {
    constexpr int kSigKill = 9, kSigStop = 19, kSigProf = 27;
    int handled = 0;
    for (int s = 1; s <= 32; ++s) {
      Vm vm(VmConfig{});
      vm.load(assemble("MOV r1, 40\nloop: SUB r1, r1, 1\nJNZ loop\nHLT"));
      const RegisterStatus st = vm.signals().register_handler(vm.main_thread(), s, layout::kCodeBase, 0, 0);
      if (s == kSigProf) {
        c.expect(st == RegisterStatus::kUnsupported, "SIGPROF was not rejected");
        continue;
      }
      if (s == kSigKill || s == kSigStop) {
        // No handler possible; the default action must still happen.
        vm.host().raise_async_signal(vm.main_thread().tid, s, 3);
        const RunResult r = vm.run();
        const bool ok = st == RegisterStatus::kInvalid && r.term_signal == s;
        c.expect(ok, "signal " + std::to_string(s) + " not handled by default action");
        handled += ok;
        continue;
      }
      c.expect(st == RegisterStatus::kOk, "signal " + std::to_string(s) + " not registerable");
      handled += st == RegisterStatus::kOk;
    }
    c.eq(handled, 31, "signals handled");
  }
}

// Random syscall-free programs. r6 holds the data base and is never
// overwritten; r5 is reserved for loop counters; r7 is left alone.
std::string random_program(std::mt19937_64& rng) {
  auto pick = [&](std::uint64_t n) { return static_cast<std::uint64_t>(rng() % n); };
  auto reg = [&](int hi) { return "r" + std::to_string(pick(static_cast<std::uint64_t>(hi) + 1)); };
  auto imm = [&]() {
    switch (pick(4)) {
      case 0: return std::to_string(pick(8));
      case 1: return std::to_string(static_cast<std::int64_t>(pick(2000)) - 1000);
      case 2: return std::to_string(rng() >> 1);
      default: return std::string("0");
    }
  };
  auto src = [&]() { return pick(3) == 0 ? imm() : reg(5); };
  auto disp = [&]() { return std::to_string(pick(4 * kPageSize - 8)); };
  auto straight = [&](std::ostringstream& o, int dst_hi) {
    static const char* kArith[] = {"ADD", "SUB", "MUL", "DIV"};
    switch (pick(6)) {
      case 0: o << "MOV " << reg(dst_hi) << ", " << src() << "\n"; break;
      case 1: o << "LOAD " << reg(dst_hi) << ", [r6+" << disp() << "]\n"; break;
      case 2: o << "STORE [r6+" << disp() << "], " << src() << "\n"; break;
      default: {
        const char* op = kArith[pick(pick(5) == 0 ? 4 : 3)];  // DIV now and then
        const std::string a = reg(5);
        o << op << " " << reg(dst_hi) << ", " << a << ", " << src() << "\n";
      }
    }
  };

  std::ostringstream o;
  o << "MOV r6, " << layout::kDataBase << "\n";
  const int items = 5 + static_cast<int>(pick(30));
  int next_label = 0;
  std::vector<int> open_labels;  // forward targets not yet placed
  for (int i = 0; i < items; ++i) {
    const auto kind = pick(10);
    if (kind < 6) {
      straight(o, 4);
    } else if (kind < 8) {
      const int l = next_label++;
      const char* br[] = {"JZ", "JNZ", "JMP"};
      o << br[pick(3)] << " L" << l << "\n";
      open_labels.push_back(l);
    } else {
      const int l = next_label++;
      o << "MOV r5, " << 1 + pick(6) << "\nL" << l << ":\n";
      const int body = 1 + static_cast<int>(pick(5));
      for (int k = 0; k < body; ++k) straight(o, 4);
      o << "SUB r5, r5, 1\nJNZ L" << l << "\n";
    }
    // Place some pending forward labels.
    while (!open_labels.empty() && pick(3) == 0) {
      o << "L" << open_labels.back() << ":\n";
      open_labels.pop_back();
    }
  }
  for (int l : open_labels) o << "L" << l << ":\n";
  o << "HLT\n";
  return o.str();
}

void dbt_equivalence(Check& c) {
  std::mt19937_64 rng(20240601);
  int faults = 0;
  for (int n = 0; n < 500; ++n) {
    const std::string src = random_program(rng);
    const GuestProgram prog = assemble(src);
    std::vector<std::uint8_t> data(4 * kPageSize);
    for (auto& b : data) b = static_cast<std::uint8_t>(rng());

    VmConfig cfg;
    cfg.trace = false;
    Vm vm(cfg);
    vm.load(prog, data);
    for (int r = 0; r < 5; ++r) vm.main_thread().ctx.regs[r] = rng();

    ReferenceInputs ri;
    ri.regs = vm.main_thread().ctx.regs;
    ri.data = data;
    const ReferenceResult ref = interpret_reference(prog, ri);
    const RunResult got = vm.run();

    const std::string tag = "program " + std::to_string(n);
    c.expect(!ref.step_limit && !got.step_limit, tag + " did not terminate");
    c.expect(got.term_signal == ref.fault, tag + ": fault mismatch");
    faults += ref.fault.has_value();
    GuestContext want = ref.ctx;
    want.tls_base_guest = got.main_ctx.tls_base_guest;
    c.expect(got.main_ctx == want, tag + ": " + ctx_str(got.main_ctx) + " vs reference " + ctx_str(want));
    c.eq(vm.stats().insns_retired, ref.retired, tag + " retired instructions");
    std::vector<std::uint8_t> mem(ri.data_size);
    vm.memory().read_guest(layout::kDataBase, mem);
    c.expect(mem == ref.data, tag + ": data segment differs");

    c.eq(vm.dbt().illegal_executed(), 0u, tag + " raw illegal instructions executed");
    for (const auto& [pc, b] : vm.dbt().cache().blocks()) c.expect(!b->raw_illegal(), tag + ": raw illegal opcode");
    c.eq(vm.stats().violations, 0u, tag + " violations");
  }
  c.expect(faults > 0 && faults < 250, "generator fault mix looks wrong: " + std::to_string(faults));
}

void taxonomy(Check& c) {
  // Read the shipped table text directly rather than trusting the parser.
  std::istringstream in(SyscallTable::builtin_text());
  std::set<std::string> names;
  for (std::string line; std::getline(in, line);) {
    std::istringstream ls(line);
    std::vector<std::string> tok{std::istream_iterator<std::string>(ls), {}};
    if (tok.empty() || tok[0] != "syscall") continue;
    int n = 0;
    for (const auto& t : tok) n += t == "delegate" || t == "emulate" || t == "partial";
    c.eq(n, 1, "strategies on line for " + (tok.size() > 2 ? tok[2] : line));
    names.insert(tok.size() > 2 ? tok[2] : "");
  }
  c.eq(names.size(), SyscallTable::builtin().specs().size(), "syscalls in table");

  std::map<std::string, std::string> exercised;  // strategy -> first workload
  for (const auto& p : manifests("workloads")) {
    const RunStats s = run_workload(load_manifest(p), quiet()).stats;
    if (s.syscalls_delegate) exercised.emplace("delegate", stem(p));
    if (s.syscalls_emulate) exercised.emplace("emulate", stem(p));
    if (s.syscalls_partial) exercised.emplace("partial", stem(p));
  }
  for (const char* st : {"delegate", "emulate", "partial"}) {
    c.expect(exercised.count(st) > 0, std::string("no workload exercises ") + st);
  }
}

void determinism(Check& c) {
  auto all = manifests("workloads");
  for (const auto& p : manifests("workloads/scenarios")) all.push_back(p);
  const auto dir = fs::temp_directory_path() / "enclsim_determinism";
  fs::create_directories(dir);
  for (const auto& p : all) {
    const WorkloadManifest m = load_manifest(p);
    for (std::uint64_t seed : {0, 7, 12345}) {
      std::string files[2][2];
      for (int k = 0; k < 2; ++k) {
        RunOptions o;
        o.seed = seed;
        const RunOutcome r = run_workload(m, o);
        const auto tp = (dir / ("t" + std::to_string(k))).string();
        const auto sp = (dir / ("s" + std::to_string(k))).string();
        write_text_file(tp, r.trace);
        write_text_file(sp, r.stats_text);
        files[k][0] = read_text_file(tp);
        files[k][1] = read_text_file(sp);
      }
      const std::string tag = stem(p) + " seed " + std::to_string(seed);
      c.expect(!files[0][0].empty() && files[0][0] == files[1][0], tag + ": trace differs");
      c.expect(!files[0][1].empty() && files[0][1] == files[1][1], tag + ": stats differ");
    }
  }
  fs::remove_all(dir);
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria = {
      {"restriction suite: one violation per R1-R5 scenario, none in benign workloads", restrictions},
      {"complete mediation: retired syscalls == dispatches, no private access", mediation},
      {"TOCTOU: 100 adversary seeds leave guest outputs unchanged", toctou},
      {"two-copy coherence of shared file mappings", two_copy},
      {"locks: mutex/prodcons over 1000 seeds at T=2,4,8, no futex OCALLs, naive witness", locks},
      {"thread multiplexing: 16 threads over 4 TCS", multiplexing},
      {"signals: exact resume, nesting to 3, 31/32 handled", signals},
      {"DBT equivalence on 500 random programs", dbt_equivalence},
      {"syscall strategy taxonomy", taxonomy},
      {"determinism of trace and stats", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(c);
    } catch (const std::exception& e) {
      c.problems.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = c.problems.empty();
    failed += !ok;
    std::printf("criterion %2zu: %s  %s (%.1fs)\n", i + 1, ok ? "PASS" : "FAIL", criteria[i].first.c_str(), secs);
    for (const auto& p : c.problems) std::printf("    %s\n", p.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
