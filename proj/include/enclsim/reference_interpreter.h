#ifndef ENCLSIM_REFERENCE_INTERPRETER_H_
#define ENCLSIM_REFERENCE_INTERPRETER_H_

#include <cstdint>
#include <optional>
#include <vector>

#include "enclsim/isa.h"

namespace enclsim {

// Straight interpretation of a GuestProgram with no translation, no enclave
// and no runtime. Serves as the oracle the translated path is compared to.
struct ReferenceInputs {
  std::array<std::uint64_t, kNumRegs> regs{};
  // Initial contents of the rw data segment at layout::kDataBase.
  std::vector<std::uint8_t> data;
  std::uint64_t data_size = 4 * kPageSize;
  std::uint64_t max_steps = 1'000'000;
};

struct ReferenceResult {
  GuestContext ctx;
  // Signal number of the fault that stopped execution (SIGFPE, SIGSEGV, SIGILL).
  std::optional<int> fault;
  bool step_limit = false;
  std::uint64_t retired = 0;
  std::vector<std::uint8_t> data;
};

// Throws SimError if the program contains SYSCALL, CPUID or RDTSC.
ReferenceResult interpret_reference(const GuestProgram& program, const ReferenceInputs& inputs);

}  // namespace enclsim

#endif  // ENCLSIM_REFERENCE_INTERPRETER_H_
