#ifndef ENCLSIM_RUNNER_H_
#define ENCLSIM_RUNNER_H_

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "enclsim/assembler.h"
#include "enclsim/vm.h"

namespace enclsim {

// A workload: guest program plus everything needed to run and judge it.
// Loaded from YAML; see docs/manifest.schema.json.
struct WorkloadManifest {
  std::string name;
  std::string manifest_path;
  std::string program_path;
  GuestProgram program;
  VmConfig vm;
  std::map<int, std::uint64_t> regs;
  std::vector<std::uint8_t> data;
  std::map<std::string, std::vector<std::uint8_t>> files;
  std::optional<std::string> adversary_path;

  struct AsyncSignal {
    std::uint64_t step = 0;
    int signum = 0;
    Tid tid = 0;  // 0 = main thread
  };
  std::vector<AsyncSignal> signals;

  struct Expect {
    std::optional<int> exit_status;
    std::optional<int> signal;
    std::map<int, std::uint64_t> regs;
    std::map<std::string, std::vector<std::uint8_t>> files;
    // Absent means "no violations at all".
    std::optional<std::map<std::string, std::uint64_t>> violations;
    std::map<std::string, std::uint64_t> stats;
    std::map<std::string, std::uint64_t> stats_min;
  } expect;
};

WorkloadManifest load_manifest(const std::string& path);

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<int> tcs;
  std::optional<int> nssa;
  std::optional<ViolationPolicy> policy;
  // Overrides the manifest's adversary; an empty string disables it.
  std::optional<std::string> adversary_path;
  std::optional<AdversarySchedule> adversary;
  bool trace = true;
};

enum class Verdict { kPass = 0, kAssertionFailed = 1, kViolationAbort = 2 };

struct RunOutcome {
  RunResult result;
  RunStats stats;
  std::string trace;
  std::string stats_text;
  std::map<std::string, std::vector<std::uint8_t>> files;
  std::vector<ViolationEvent> violations;
  std::vector<std::string> failures;
  Verdict verdict = Verdict::kPass;
};

RunOutcome run_workload(const WorkloadManifest& m, const RunOptions& opts = {});

// Manifest settings with the option overrides applied.
VmConfig effective_config(const WorkloadManifest& m, const RunOptions& opts = {});
// A loaded Vm with files, adversary, registers and signals in place, not
// yet run. For callers that want to step it themselves.
std::unique_ptr<Vm> prepare_vm(const WorkloadManifest& m, const RunOptions& opts = {});

struct TruncatedTrace : SimError {
  explicit TruncatedTrace(const std::string& what) : SimError("TruncatedTrace: " + what) {}
};

struct ReplayReport {
  std::size_t records = 0;
  std::uint64_t steps = 0;
  RunStats stats;
  std::map<std::string, std::uint64_t> kinds;
  std::vector<std::string> checked;
  std::vector<std::string> failures;
  bool ok() const { return failures.empty(); }
  std::string render() const;
};

// Re-derives counter identities from the records alone.
ReplayReport replay_trace(const std::string& text);

struct ReportRow {
  std::string name;
  RunStats stats;
};
// Text table (or CSV) of selected counters; with exactly two rows a
// delta column is appended.
std::string report_table(const std::vector<ReportRow>& rows, bool csv);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace enclsim

#endif  // ENCLSIM_RUNNER_H_
