#ifndef ENCLSIM_TESTS_TEST_UTIL_H_
#define ENCLSIM_TESTS_TEST_UTIL_H_

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "enclsim/assembler.h"
#include "enclsim/runner.h"
#include "enclsim/vm.h"

namespace enclsim::testutil {

inline std::unique_ptr<Vm> make_vm(std::string_view src, VmConfig cfg = {}, std::vector<std::uint8_t> data = {}) {
  auto vm = std::make_unique<Vm>(cfg);
  vm->load(assemble(src), data);
  return vm;
}

inline std::string workload(const std::string& rel) { return std::string(ENCLSIM_SOURCE_DIR) + "/workloads/" + rel; }

inline std::vector<std::uint8_t> bytes(std::string_view s) { return {s.begin(), s.end()}; }

inline std::string str(const std::vector<std::uint8_t>& b) { return {b.begin(), b.end()}; }

}  // namespace enclsim::testutil

#endif  // ENCLSIM_TESTS_TEST_UTIL_H_
