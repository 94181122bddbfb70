#include "enclsim/assembler.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

namespace enclsim {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

bool is_identifier(std::string_view s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isalnum(c) || c == '_'; });
}

std::optional<int> parse_reg(std::string_view s) {
  if (s.size() == 2 && (s[0] == 'r' || s[0] == 'R') && s[1] >= '0' && s[1] <= '7') return s[1] - '0';
  return std::nullopt;
}

std::optional<std::int64_t> parse_number(std::string_view s) {
  bool neg = false;
  if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
    neg = s[0] == '-';
    s.remove_prefix(1);
  }
  int base = 10;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    base = 16;
    s.remove_prefix(2);
  }
  if (s.empty()) return std::nullopt;
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return neg ? -static_cast<std::int64_t>(v) : static_cast<std::int64_t>(v);
}

struct PendingLabel {
  std::size_t insn;
  int operand;
  std::string name;
  int line;
};

std::vector<std::string> split_operands(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : s) {
    if (c == '[') ++depth;
    if (c == ']') --depth;
    if (c == ',' && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  return out;
}

}  // namespace

GuestProgram assemble(std::string_view text) {
  GuestProgram prog;
  std::vector<PendingLabel> pending;
  std::map<std::string, int> label_lines;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw.substr(0, raw.find(';'));
    line = trim(line);
    // Leading labels, possibly several.
    while (true) {
      auto colon = line.find(':');
      if (colon == std::string::npos) break;
      std::string name = trim(std::string_view(line).substr(0, colon));
      if (!is_identifier(name) || parse_reg(name)) break;
      if (prog.labels.count(name)) throw ParseError(lineno, "duplicate label '" + name + "'");
      prog.labels[name] = prog.instructions.size();
      label_lines[name] = lineno;
      line = trim(std::string_view(line).substr(colon + 1));
    }
    if (line.empty()) continue;

    auto space = line.find_first_of(" \t");
    std::string mnemonic = upper(line.substr(0, space));
    std::string rest = space == std::string::npos ? "" : trim(std::string_view(line).substr(space));
    auto op = opcode_from_name(mnemonic);
    if (!op) throw ParseError(lineno, "unknown mnemonic '" + mnemonic + "'");

    Instruction insn;
    insn.op = *op;
    std::vector<std::string> ops = split_operands(rest);
    if (ops.size() > 3) throw ParseError(lineno, "too many operands");
    insn.operand_count = static_cast<int>(ops.size());
    for (std::size_t i = 0; i < ops.size(); ++i) {
      const std::string& o = ops[i];
      if (o.empty()) throw ParseError(lineno, "empty operand");
      Operand& dst = insn.operands[i];
      if (auto r = parse_reg(o)) {
        dst = Operand::r(*r);
      } else if (o.front() == '[') {
        if (o.back() != ']') throw ParseError(lineno, "unterminated memory operand");
        std::string inner = trim(std::string_view(o).substr(1, o.size() - 2));
        auto sign = inner.find_first_of("+-", 1);
        std::string base = trim(std::string_view(inner).substr(0, sign));
        auto r = parse_reg(base);
        if (!r) throw ParseError(lineno, "memory operand needs a base register");
        std::int64_t disp = 0;
        if (sign != std::string::npos) {
          std::string num = trim(std::string_view(inner).substr(sign + 1));
          auto v = parse_number(num);
          if (!v) throw ParseError(lineno, "bad displacement '" + num + "'");
          disp = inner[sign] == '-' ? -*v : *v;
        }
        if (disp < INT32_MIN || disp > INT32_MAX) throw ParseError(lineno, "displacement out of range");
        dst = Operand::m(*r, disp);
      } else if (auto v = parse_number(o)) {
        dst = Operand::i(*v);
      } else if (is_identifier(o)) {
        dst = Operand::i(0);
        dst.label = true;
        pending.push_back({prog.instructions.size(), static_cast<int>(i), o, lineno});
      } else {
        throw ParseError(lineno, "bad operand '" + o + "'");
      }
    }
    // Shape check through the codec so the assembler and decoder agree.
    Instruction probe = insn;
    for (auto& o : probe.operands) o.label = false;
    InsnBytes bytes = encode(probe);
    if (!decode(bytes)) throw ParseError(lineno, "invalid operands for " + mnemonic);
    prog.instructions.push_back(insn);
  }
  for (const PendingLabel& p : pending) {
    auto it = prog.labels.find(p.name);
    if (it == prog.labels.end()) throw UndefinedLabel(p.line, p.name);
    prog.instructions[p.insn].operands[p.operand].imm =
        static_cast<std::int64_t>(it->second * kInsnSize);
  }
  return prog;
}

GuestProgram assemble_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open program '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return assemble(ss.str());
}

}  // namespace enclsim
