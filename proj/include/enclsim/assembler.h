#ifndef ENCLSIM_ASSEMBLER_H_
#define ENCLSIM_ASSEMBLER_H_

#include <string>
#include <string_view>

#include "enclsim/isa.h"
#include "enclsim/types.h"

namespace enclsim {

class ParseError : public SimError {
 public:
  ParseError(int line, const std::string& msg)
      : SimError("line " + std::to_string(line) + ": " + msg), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class UndefinedLabel : public SimError {
 public:
  UndefinedLabel(int line, const std::string& label)
      : SimError("line " + std::to_string(line) + ": undefined label '" + label + "'"),
        label_(label) {}
  const std::string& label() const { return label_; }

 private:
  std::string label_;
};

// One instruction per line, optional `label:` prefix, `;` comments,
// decimal or 0x-prefixed hex immediates. Label references resolve to
// program-relative offsets that are relocated when the image is loaded.
GuestProgram assemble(std::string_view text);

GuestProgram assemble_file(const std::string& path);

}  // namespace enclsim

#endif  // ENCLSIM_ASSEMBLER_H_
