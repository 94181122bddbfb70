#ifndef ENCLSIM_VM_H_
#define ENCLSIM_VM_H_

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "enclsim/dbt.h"
#include "enclsim/enclave.h"
#include "enclsim/host_world.h"
#include "enclsim/isa.h"
#include "enclsim/lock_manager.h"
#include "enclsim/memory_manager.h"
#include "enclsim/signal_subsystem.h"
#include "enclsim/syscall_mediator.h"
#include "enclsim/syscall_spec.h"
#include "enclsim/thread_manager.h"
#include "enclsim/trace.h"

namespace enclsim {

struct VmConfig {
  EnclaveConfig enclave;
  std::uint64_t seed = 0;
  ViolationPolicy policy = ViolationPolicy::kRecord;
  // Steps a delegated OCALL stays outstanding on the host.
  std::uint64_t ocall_latency = 0;
  std::uint64_t max_steps = 5'000'000;
  std::uint64_t pool_wait_bound = 1'000'000;
  int lock_spin_limit = 4;
  std::uint64_t arena_size = 64 * 1024;
  std::uint64_t data_pages = 4;
  bool trace = true;
  const SyscallTable* table = nullptr;
};

struct RunResult {
  int exit_status = 0;
  std::optional<int> term_signal;
  bool step_limit = false;
  bool deadlock = false;
  std::string error;
  GuestContext main_ctx;
};

// One simulated process: enclave, host and the mediation runtime.
class Vm {
 public:
  explicit Vm(VmConfig config);
  ~Vm();
  Vm(const Vm&) = delete;
  Vm& operator=(const Vm&) = delete;

  // Loads code at the code base and `data` into the data segment, then
  // enters the enclave with the main thread.
  void load(const GuestProgram& program, std::span<const std::uint8_t> data = {});
  void set_initial_regs(const std::array<std::uint64_t, kNumRegs>& regs);
  RunResult run();
  // One scheduler step; false when the run is over.
  bool step_once();

  const VmConfig& config() const { return config_; }
  EnclaveState& enclave() { return *enclave_; }
  HostWorld& host() { return host_; }
  MemoryManager& memory() { return *memory_; }
  ThreadManager& threads() { return *threads_; }
  LockManager& locks() { return *locks_; }
  SignalSubsystem& signals() { return *signals_; }
  SyscallMediator& mediator() { return *mediator_; }
  DbtEngine& dbt() { return *dbt_; }
  Trace& trace() { return trace_; }
  RunStats& stats() { return stats_; }
  const RunStats& stats() const { return stats_; }
  ViolationLog& violations() { return log_; }
  std::shared_ptr<FrameRegistry> frames() { return frames_; }
  std::uint64_t step() const { return step_; }

  std::map<Tid, ThreadRecord>& thread_table() { return threads_table_; }
  ThreadRecord* thread(Tid tid);
  ThreadRecord& main_thread();

  void record(std::string_view kind, Tid tid, std::initializer_list<TraceField> fields = {});

  // Synchronous OCALL: exit, host execution with adversary hooks, re-entry.
  std::int64_t ocall(ThreadRecord& t, const OcallRequest& req, std::string_view cause, const std::string& name,
                     const MarshalPlan* plan = nullptr);
  // Split form used for delegated syscalls with latency.
  std::int64_t ocall_begin(ThreadRecord& t, const OcallRequest& req, std::string_view cause,
                           const std::string& name, const MarshalPlan* plan);
  std::int64_t ocall_end(ThreadRecord& t, const OcallRequest& req, const std::string& name,
                         const MarshalPlan* plan, std::int64_t raw);
  void fire_adversary(AdvEvent event, const std::string& name, ThreadRecord* t, const MarshalPlan* plan,
                      std::int64_t* result);

  // Enclave-side access to public memory.
  bool write_public(Addr a, std::span<const std::uint8_t> in);
  bool read_public(Addr a, std::span<std::uint8_t> out);

  void terminate(int status, std::optional<int> signal);
  bool terminated() const { return terminated_; }
  void set_exit_status(int code) {
    if (!terminated_) result_.exit_status = code;
  }
  std::uint64_t& rng_draws() { return rng_draws_; }

 private:
  void run_turn(ThreadRecord& t);
  bool schedulable(const ThreadRecord& t) const;
  void finish_stats();
  void apply_action(const AdvTrigger& trig, AdvEvent event, ThreadRecord* t, const MarshalPlan* plan,
                    std::int64_t* result);

  VmConfig config_;
  std::shared_ptr<FrameRegistry> frames_;
  ViolationLog log_;
  HostWorld host_;
  std::unique_ptr<EnclaveState> enclave_;
  std::unique_ptr<EnclaveState> peer_enclave_;
  Trace trace_;
  RunStats stats_;
  std::unique_ptr<MemoryManager> memory_;
  std::unique_ptr<ThreadManager> threads_;
  std::unique_ptr<LockManager> locks_;
  std::unique_ptr<SignalSubsystem> signals_;
  std::unique_ptr<SyscallMediator> mediator_;
  std::unique_ptr<DbtEngine> dbt_;
  std::map<Tid, ThreadRecord> threads_table_;
  std::mt19937_64 rng_;
  std::uint64_t rng_draws_ = 0;
  std::uint64_t step_ = 0;
  Tid last_tid_ = 0;
  Tid main_tid_ = 0;
  bool loaded_ = false;
  bool terminated_ = false;
  bool finished_ = false;
  bool finished_stats_ = false;
  RunResult result_;
};

}  // namespace enclsim

#endif  // ENCLSIM_VM_H_
