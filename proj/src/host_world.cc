#include "enclsim/host_world.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace enclsim {

namespace {

std::uint64_t parse_u64(const std::string& s, int line) {
  try {
    std::size_t pos = 0;
    std::uint64_t v = std::stoull(s, &pos, 0);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("adversary line " + std::to_string(line) + ": bad number '" + s + "'");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

Addr PublicMemory::map(std::uint64_t len) {
  len = page_ceil(std::max<std::uint64_t>(len, 1));
  if (next_ + len > layout::kPublicLimit) throw SimError("public window exhausted");
  Addr start = next_;
  for (Addr a = start; a < start + len; a += kPageSize) pages_[a].assign(kPageSize, 0);
  // One guard page between reservations.
  next_ = start + len + kPageSize;
  return start;
}

void PublicMemory::unmap(Addr start, std::uint64_t len) {
  for (Addr a = page_floor(start); a < start + len; a += kPageSize) pages_.erase(a);
}

bool PublicMemory::mapped(Addr a, std::uint64_t len) const {
  if (len == 0) return true;
  if (a + len < a) return false;
  for (Addr p = page_floor(a); p < a + len; p += kPageSize) {
    if (!pages_.count(p)) return false;
  }
  return true;
}

bool PublicMemory::read(Addr a, std::span<std::uint8_t> out) const {
  if (!mapped(a, out.size())) return false;
  std::size_t done = 0;
  while (done < out.size()) {
    Addr cur = a + done;
    const auto& page = pages_.at(page_floor(cur));
    std::size_t off = cur - page_floor(cur);
    std::size_t n = std::min<std::size_t>(out.size() - done, kPageSize - off);
    std::copy_n(page.begin() + static_cast<std::ptrdiff_t>(off), n, out.begin() + static_cast<std::ptrdiff_t>(done));
    done += n;
  }
  return true;
}

bool PublicMemory::write(Addr a, std::span<const std::uint8_t> in) {
  if (!mapped(a, in.size())) return false;
  std::size_t done = 0;
  while (done < in.size()) {
    Addr cur = a + done;
    auto& page = pages_.at(page_floor(cur));
    std::size_t off = cur - page_floor(cur);
    std::size_t n = std::min<std::size_t>(in.size() - done, kPageSize - off);
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(done), n, page.begin() + static_cast<std::ptrdiff_t>(off));
    done += n;
  }
  return true;
}

std::vector<AddrRange> PublicMemory::ranges() const {
  std::vector<AddrRange> out;
  for (const auto& [a, _] : pages_) {
    if (!out.empty() && out.back().start + out.back().len == a) {
      out.back().len += kPageSize;
    } else {
      out.push_back({a, kPageSize});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

const char* ocall_kind_name(OcallKind k) {
  switch (k) {
    case OcallKind::kSyscall:
      return "syscall";
    case OcallKind::kThreadCreate:
      return "thread_create";
    case OcallKind::kThreadExit:
      return "thread_exit";
    case OcallKind::kMmap:
      return "mmap";
    case OcallKind::kMunmap:
      return "munmap";
    case OcallKind::kMsync:
      return "msync";
    case OcallKind::kMprotect:
      return "mprotect";
    case OcallKind::kSignalEcall:
      return "signal";
  }
  return "?";
}

const char* adv_event_name(AdvEvent e) {
  switch (e) {
    case AdvEvent::kStep:
      return "step";
    case AdvEvent::kBeforeOcall:
      return "before_ocall";
    case AdvEvent::kAfterOcall:
      return "after_ocall";
    case AdvEvent::kAfterCopyout:
      return "after_copyout";
    case AdvEvent::kThreadCreate:
      return "thread_create";
  }
  return "?";
}

const char* adv_action_name(AdvAction a) {
  switch (a) {
    case AdvAction::kMutatePublic:
      return "mutate_public";
    case AdvAction::kLieResult:
      return "lie_result";
    case AdvAction::kFlipLockWord:
      return "flip_lock_word";
    case AdvAction::kForgeSignal:
      return "forge_signal";
    case AdvAction::kSpuriousWake:
      return "spurious_wake";
    case AdvAction::kTamperSsa:
      return "tamper_ssa";
    case AdvAction::kBadEcall:
      return "bad_ecall";
    case AdvAction::kReadPrivate:
      return "read_private";
    case AdvAction::kMutatePerms:
      return "mutate_perms";
    case AdvAction::kAliasFrame:
      return "alias_frame";
    case AdvAction::kShareFrame:
      return "share_frame";
  }
  return "?";
}

AdversarySchedule AdversarySchedule::parse(const std::string& text) {
  static const std::map<std::string, AdvEvent> kEvents = {
      {"step", AdvEvent::kStep},
      {"before_ocall", AdvEvent::kBeforeOcall},
      {"after_ocall", AdvEvent::kAfterOcall},
      {"after_copyout", AdvEvent::kAfterCopyout},
      {"thread_create", AdvEvent::kThreadCreate},
  };
  // action -> (min args, max args)
  static const std::map<std::string, std::tuple<AdvAction, std::size_t, std::size_t>> kActions = {
      {"mutate_public", {AdvAction::kMutatePublic, 3, 3}},
      {"lie_result", {AdvAction::kLieResult, 2, 2}},
      {"flip_lock_word", {AdvAction::kFlipLockWord, 1, 1}},
      {"forge_signal", {AdvAction::kForgeSignal, 1, 2}},
      {"spurious_wake", {AdvAction::kSpuriousWake, 1, 1}},
      {"tamper_ssa", {AdvAction::kTamperSsa, 0, 0}},
      {"bad_ecall", {AdvAction::kBadEcall, 1, 1}},
      {"read_private", {AdvAction::kReadPrivate, 1, 1}},
      {"mutate_perms", {AdvAction::kMutatePerms, 1, 1}},
      {"alias_frame", {AdvAction::kAliasFrame, 0, 0}},
      {"share_frame", {AdvAction::kShareFrame, 0, 0}},
  };

  AdversarySchedule sched;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    raw = raw.substr(0, raw.find('#'));
    std::istringstream ls(raw);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    auto fail = [&](const std::string& why) {
      throw ConfigError("adversary line " + std::to_string(lineno) + ": " + why);
    };
    if (tok[0] == "seed") {
      if (tok.size() != 2) fail("seed takes one value");
      sched.seed = parse_u64(tok[1], lineno);
      continue;
    }
    if (tok[0] != "when") fail("expected 'when' or 'seed'");
    auto do_it = std::find(tok.begin(), tok.end(), "do");
    if (do_it == tok.end() || do_it == tok.begin() + 1) fail("missing 'do'");
    AdvTrigger t;
    t.line = lineno;
    auto ev = kEvents.find(tok[1]);
    if (ev == kEvents.end()) fail("unknown event '" + tok[1] + "'");
    t.event = ev->second;
    std::size_t filter_count = static_cast<std::size_t>(do_it - tok.begin()) - 2;
    if (t.event == AdvEvent::kThreadCreate) {
      if (filter_count != 0) fail("thread_create takes no filter");
    } else if (t.event == AdvEvent::kStep) {
      if (filter_count != 1) fail("step needs a step number");
      t.filter = tok[2];
      parse_u64(t.filter, lineno);
    } else {
      if (filter_count > 1) fail("too many filter tokens");
      if (filter_count == 1) t.filter = tok[2];
    }
    auto act_it = do_it + 1;
    if (act_it == tok.end()) fail("missing action");
    auto act = kActions.find(*act_it);
    if (act == kActions.end()) fail("unknown action '" + *act_it + "'");
    t.action = std::get<0>(act->second);
    t.args.assign(act_it + 1, tok.end());
    if (!t.args.empty() && t.args.back() == "once") {
      t.once = true;
      t.args.pop_back();
    }
    if (t.args.size() < std::get<1>(act->second) || t.args.size() > std::get<2>(act->second)) {
      fail("wrong number of arguments for " + act->first);
    }
    if (t.action == AdvAction::kLieResult && t.args[0] != "delta" && t.args[0] != "value") {
      fail("lie_result takes 'delta' or 'value'");
    }
    sched.triggers.push_back(std::move(t));
  }
  return sched;
}

AdversarySchedule AdversarySchedule::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open adversary schedule '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

// ---------------------------------------------------------------------------

HostWorld::HostWorld() {
  kernel_.files[kStdinPath] = {};
  kernel_.files[kStdoutPath] = {};
  kernel_.files[kStderrPath] = {};
  kernel_.fds[0] = {kStdinPath, 0, 0};
  kernel_.fds[1] = {kStdoutPath, 0, 1};
  kernel_.fds[2] = {kStderrPath, 0, 1};
  kernel_.threads.insert(kernel_.pid);
}

void HostWorld::set_adversary(AdversarySchedule s) {
  adversary_ = std::move(s);
  adv_rng_.seed(adversary_.seed);
}

bool HostWorld::host_read(Addr a, std::span<std::uint8_t> out) {
  if (enclave_ != nullptr && enclave_->touches_private(a, out.size())) {
    ++private_access_attempts_;
    enclave_->check_access(Actor::kHostOs, a, out.size(), AccessMode::kRead);
    return false;
  }
  return public_.read(a, out);
}

bool HostWorld::host_write(Addr a, std::span<const std::uint8_t> in) {
  if (enclave_ != nullptr && enclave_->touches_private(a, in.size())) {
    ++private_access_attempts_;
    enclave_->check_access(Actor::kHostOs, a, in.size(), AccessMode::kWrite);
    return false;
  }
  return public_.write(a, in);
}

std::int64_t HostWorld::ocall_execute(const OcallRequest& req) {
  const auto& a = req.args;
  switch (req.kind) {
    case OcallKind::kSyscall:
      switch (req.nr) {
        case 0:
          return sys_read(static_cast<std::int64_t>(a[0]), a[1], a[2]);
        case 1:
          return sys_write(static_cast<std::int64_t>(a[0]), a[1], a[2]);
        case 2:
          return sys_open(a[0], static_cast<std::int64_t>(a[1]));
        case 3:
          return sys_close(static_cast<std::int64_t>(a[0]));
        case 20:
          return sys_writev(static_cast<std::int64_t>(a[0]), a[1], a[2]);
        case 39:
          return kernel_.pid;
        case 96:
          return sys_gettimeofday(a[0]);
        default:
          return err::kENOSYS;
      }
    case OcallKind::kThreadCreate: {
      // The host only needs to see the argument block exists.
      std::array<std::uint8_t, 8> probe{};
      if (!host_read(a[0], probe)) return err::kEFAULT;
      Tid tid = allocate_tid();
      kernel_.threads.insert(tid);
      return tid;
    }
    case OcallKind::kThreadExit:
      kernel_.threads.erase(static_cast<Tid>(a[0]));
      return 0;
    case OcallKind::kMmap:
      return host_mmap(a[1], static_cast<std::int64_t>(a[3]), static_cast<std::int64_t>(a[4]), a[5]);
    case OcallKind::kMunmap:
      return host_munmap(a[0], a[1]);
    case OcallKind::kMsync:
      return host_msync(a[0], a[1]);
    case OcallKind::kMprotect:
      return public_.mapped(a[0], a[1]) ? 0 : err::kEINVAL;
    case OcallKind::kSignalEcall:
      return 0;
  }
  return err::kENOSYS;
}

std::int64_t HostWorld::sys_read(std::int64_t fd, Addr buf, std::uint64_t len) {
  auto it = kernel_.fds.find(fd);
  if (it == kernel_.fds.end()) return err::kEBADF;
  if ((it->second.flags & oflag::kAccMode) == 1) return err::kEBADF;
  const auto& content = kernel_.files[it->second.path];
  std::uint64_t off = it->second.offset;
  std::uint64_t n = off >= content.size() ? 0 : std::min<std::uint64_t>(len, content.size() - off);
  if (n > 0 && !host_write(buf, std::span(content).subspan(off, n))) return err::kEFAULT;
  it->second.offset += n;
  return static_cast<std::int64_t>(n);
}

std::int64_t HostWorld::sys_write(std::int64_t fd, Addr buf, std::uint64_t len) {
  auto it = kernel_.fds.find(fd);
  if (it == kernel_.fds.end()) return err::kEBADF;
  if ((it->second.flags & oflag::kAccMode) == 0 && fd != 1 && fd != 2) return err::kEBADF;
  std::vector<std::uint8_t> tmp(len);
  if (len > 0 && !host_read(buf, tmp)) return err::kEFAULT;
  auto& content = kernel_.files[it->second.path];
  if (it->second.flags & oflag::kAppend) it->second.offset = content.size();
  std::uint64_t off = it->second.offset;
  if (content.size() < off + len) content.resize(off + len, 0);
  std::copy(tmp.begin(), tmp.end(), content.begin() + static_cast<std::ptrdiff_t>(off));
  it->second.offset += len;
  return static_cast<std::int64_t>(len);
}

std::int64_t HostWorld::sys_writev(std::int64_t fd, Addr iov, std::uint64_t cnt) {
  std::int64_t total = 0;
  for (std::uint64_t i = 0; i < cnt; ++i) {
    std::array<std::uint8_t, 16> rec{};
    if (!host_read(iov + 16 * i, rec)) return err::kEFAULT;
    std::uint64_t base = 0;
    std::uint64_t len = 0;
    for (int b = 0; b < 8; ++b) {
      base |= static_cast<std::uint64_t>(rec[b]) << (8 * b);
      len |= static_cast<std::uint64_t>(rec[8 + b]) << (8 * b);
    }
    std::int64_t r = sys_write(fd, base, len);
    if (r < 0) return total > 0 ? total : r;
    total += r;
  }
  return total;
}

std::int64_t HostWorld::sys_open(Addr path_addr, std::int64_t flags) {
  std::string path;
  for (std::uint64_t i = 0; i < 4096; ++i) {
    std::array<std::uint8_t, 1> c{};
    if (!host_read(path_addr + i, c)) return err::kEFAULT;
    if (c[0] == 0) break;
    path.push_back(static_cast<char>(c[0]));
  }
  if (path.empty()) return err::kENOENT;
  auto it = kernel_.files.find(path);
  if (it == kernel_.files.end()) {
    if (!(flags & oflag::kCreat)) return err::kENOENT;
    kernel_.files[path] = {};
  } else if ((flags & oflag::kTrunc) && (flags & oflag::kAccMode) != 0) {
    it->second.clear();
  }
  std::int64_t fd = kernel_.next_fd++;
  kernel_.fds[fd] = {path, 0, flags};
  return fd;
}

std::int64_t HostWorld::sys_close(std::int64_t fd) {
  return kernel_.fds.erase(fd) ? 0 : err::kEBADF;
}

std::int64_t HostWorld::sys_gettimeofday(Addr tv) {
  if (tv == 0) return 0;
  std::array<std::uint8_t, 16> rec{};
  std::uint64_t sec = kernel_.clock / 1'000'000;
  std::uint64_t usec = kernel_.clock % 1'000'000;
  for (int b = 0; b < 8; ++b) {
    rec[b] = static_cast<std::uint8_t>(sec >> (8 * b));
    rec[8 + b] = static_cast<std::uint8_t>(usec >> (8 * b));
  }
  return host_write(tv, rec) ? 0 : err::kEFAULT;
}

std::int64_t HostWorld::host_mmap(std::uint64_t len, std::int64_t flags, std::int64_t fd, std::uint64_t off) {
  if (len == 0) return err::kEINVAL;
  HostMapping m;
  m.len = page_ceil(len);
  m.shared = (flags & mflag::kShared) != 0;
  if (!(flags & mflag::kAnonymous)) {
    auto it = kernel_.fds.find(fd);
    if (it == kernel_.fds.end()) return err::kEBADF;
    m.path = it->second.path;
    m.offset = off;
  }
  m.start = public_.map(m.len);
  if (m.path) {
    const auto& content = kernel_.files[*m.path];
    if (off < content.size()) {
      std::uint64_t n = std::min<std::uint64_t>(m.len, content.size() - off);
      public_.write(m.start, std::span(content).subspan(off, n));
    }
  }
  kernel_.mappings[m.start] = m;
  return static_cast<std::int64_t>(m.start);
}

std::int64_t HostWorld::host_munmap(Addr a, std::uint64_t len) {
  auto it = kernel_.mappings.upper_bound(a);
  if (it == kernel_.mappings.begin()) return err::kEINVAL;
  --it;
  const HostMapping& m = it->second;
  len = page_ceil(len);
  if (a < m.start || a + len > m.start + m.len || !page_aligned(a)) return err::kEINVAL;
  public_.unmap(a, len);
  bool any_left = false;
  for (Addr p = m.start; p < m.start + m.len && !any_left; p += kPageSize) any_left = public_.mapped(p, 1);
  if (!any_left) kernel_.mappings.erase(it);
  return 0;
}

std::int64_t HostWorld::host_msync(Addr a, std::uint64_t len) {
  auto it = kernel_.mappings.upper_bound(a);
  if (it == kernel_.mappings.begin()) return err::kEINVAL;
  --it;
  const HostMapping& m = it->second;
  if (a < m.start || a + len > m.start + m.len) return err::kEINVAL;
  if (!m.path || !m.shared) return 0;
  auto& content = kernel_.files[*m.path];
  // Only bytes backed by the file are written; the tail of the last page is dropped.
  std::uint64_t file_lo = m.offset + (a - m.start);
  std::uint64_t file_hi = std::min<std::uint64_t>(file_lo + len, content.size());
  if (file_hi <= file_lo) return 0;
  std::vector<std::uint8_t> tmp(file_hi - file_lo);
  if (!host_read(a, tmp)) return err::kEFAULT;
  std::copy(tmp.begin(), tmp.end(), content.begin() + static_cast<std::ptrdiff_t>(file_lo));
  return 0;
}

std::vector<AdvTrigger> HostWorld::adversary_step(AdvEvent event, const std::string& name, std::uint64_t step) {
  std::vector<AdvTrigger> out;
  for (AdvTrigger& t : adversary_.triggers) {
    if (t.event != event) continue;
    if (t.once && t.fired > 0) continue;
    if (event == AdvEvent::kStep) {
      if (std::stoull(t.filter, nullptr, 0) != step) continue;
    } else if (t.filter != "*" && t.filter != name) {
      continue;
    }
    ++t.fired;
    out.push_back(t);
  }
  return out;
}

void HostWorld::log_adversary(std::uint64_t step, const AdvTrigger& t, std::string detail) {
  adversary_log_.push_back({step, adv_event_name(t.event), adv_action_name(t.action), std::move(detail)});
}

void HostWorld::raise_async_signal(Tid tid, int signum, std::uint64_t at_step, bool forged) {
  pending_signals_.push_back({tid, signum, at_step, forged});
}

std::vector<HostWorld::AsyncSignal> HostWorld::take_due_signals(std::uint64_t step) {
  std::vector<AsyncSignal> due;
  std::vector<AsyncSignal> keep;
  for (const AsyncSignal& s : pending_signals_) (s.at_step <= step ? due : keep).push_back(s);
  pending_signals_ = std::move(keep);
  return due;
}

void HostWorld::add_file(const std::string& path, std::vector<std::uint8_t> bytes) {
  kernel_.files[path] = std::move(bytes);
}

const std::vector<std::uint8_t>* HostWorld::file(const std::string& path) const {
  auto it = kernel_.files.find(path);
  return it == kernel_.files.end() ? nullptr : &it->second;
}

void HostWorld::export_files(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (const auto& [path, bytes] : kernel_.files) {
    std::string name = path;
    std::replace(name.begin(), name.end(), '/', '_');
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
}

}  // namespace enclsim
