// enclsim: run workloads, replay traces, compare stats.
//
// Exit codes: 0 pass, 1 assertion failure, 2 violation (abort mode), 3 config error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "enclsim/lock_manager.h"
#include "enclsim/runner.h"

using namespace enclsim;

namespace {

constexpr int kExitConfig = 3;

int do_run(const std::string& workload, const std::optional<std::uint64_t>& seed, const std::optional<int>& tcs,
           const std::optional<int>& nssa, const std::string& violation, const std::optional<std::string>& adversary,
           const std::string& trace_out, const std::string& stats_out, bool quiet) {
  WorkloadManifest m = load_manifest(workload);
  RunOptions o;
  o.seed = seed;
  o.tcs = tcs;
  o.nssa = nssa;
  o.adversary_path = adversary;
  if (violation == "abort") {
    o.policy = ViolationPolicy::kAbort;
  } else if (violation != "record") {
    throw ConfigError("--violation must be abort or record");
  }
  RunOutcome r = run_workload(m, o);
  if (!trace_out.empty()) write_text_file(trace_out, r.trace);
  if (!stats_out.empty()) write_text_file(stats_out, r.stats_text);
  if (!quiet) {
    const auto& out = r.files[kStdoutPath];
    std::cout.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    std::cout.flush();
  }
  for (const auto& ev : r.violations) {
    std::cerr << "violation " << violation_name(ev.code) << " by " << actor_name(ev.actor) << ": " << ev.detail
              << "\n";
  }
  for (const auto& f : r.failures) std::cerr << "FAIL " << m.name << ": " << f << "\n";
  std::cerr << m.name << ": "
            << (r.verdict == Verdict::kPass ? "PASS" : r.verdict == Verdict::kViolationAbort ? "ABORTED" : "FAIL")
            << " status=" << r.result.exit_status << " steps=" << r.stats.steps << "\n";
  return static_cast<int>(r.verdict);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"enclave runtime simulator"};
  app.require_subcommand(1);

  std::string workload, violation = "record", trace_out, stats_out;
  std::optional<std::uint64_t> seed;
  std::optional<int> tcs, nssa;
  std::optional<std::string> adversary;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "run a workload manifest");
  run->add_option("workload_pos", workload, "workload manifest (YAML)");
  run->add_option("--workload", workload, "workload manifest (YAML)");
  run->add_option("--seed", seed, "scheduler seed");
  run->add_option("--tcs", tcs, "TCS slot count")->check(CLI::PositiveNumber);
  run->add_option("--nssa", nssa, "SSA frames per slot")->check(CLI::PositiveNumber);
  run->add_option("--violation", violation, "abort|record")->check(CLI::IsMember({"abort", "record"}));
  run->add_option("--adversary", adversary, "adversary schedule file ('' disables)");
  run->add_option("--trace-out", trace_out, "write the trace here");
  run->add_option("--stats-out", stats_out, "write stats here");
  run->add_flag("--quiet", quiet, "do not echo guest stdout");

  std::string trace_path;
  auto* replay = app.add_subcommand("replay", "re-check counter identities from a trace");
  replay->add_option("trace", trace_path, "trace file")->required();

  std::vector<std::string> stats_files;
  bool csv = false;
  auto* report = app.add_subcommand("report", "tabulate stats files");
  report->add_option("stats", stats_files, "stats files");
  report->add_flag("--csv", csv, "comma-separated output");

  std::uint64_t interleavings = 1000, demo_seed = 1;
  int threads = 2;
  auto* demo = app.add_subcommand("lockdemo", "search interleavings of the public-shadow futex design");
  demo->add_option("--interleavings", interleavings, "interleavings to try");
  demo->add_option("--seed", demo_seed, "search seed");
  demo->add_option("--threads", threads, "thread count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) {
      if (workload.empty()) throw ConfigError("no workload given");
      return do_run(workload, seed, tcs, nssa, violation, adversary, trace_out, stats_out, quiet);
    }
    if (*replay) {
      const ReplayReport rep = replay_trace(read_text_file(trace_path));
      std::cout << rep.render();
      return rep.ok() ? 0 : 1;
    }
    if (*report) {
      std::vector<ReportRow> rows;
      for (const auto& p : stats_files) {
        rows.push_back({std::filesystem::path(p).stem().string(), RunStats::parse(read_text_file(p))});
      }
      std::cout << report_table(rows, csv);
      return 0;
    }
    if (*demo) {
      NaiveDemoOptions o;
      o.threads = threads;
      o.max_interleavings = interleavings;
      const InconsistencyReport r = naive_two_copy_demo(demo_seed, o);
      if (!r.found) {
        std::cout << "NoWitnessFound after " << r.interleavings_tried << " interleavings\n";
        return 0;
      }
      std::cout << "witness: " << r.kind << " seed=" << r.seed << " after " << r.interleavings_tried
                << " interleavings\n";
      for (const auto& s : r.schedule) std::cout << "  " << s << "\n";
      return 0;
    }
  } catch (const TruncatedTrace& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SimError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
