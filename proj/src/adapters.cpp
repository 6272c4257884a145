#include "redloop/adapters.hpp"

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include "redloop/pipeline.hpp"

extern char** environ;

namespace redloop {

std::vector<std::string> tokenize_shell(std::string_view line) {
  enum class State { blank, word, single, dbl };
  std::vector<std::string> tokens;
  std::string token;
  State state = State::blank;
  auto is_blank = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };

  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    switch (state) {
      case State::blank:
      case State::word:
        if (is_blank(c)) {
          if (state == State::word) {
            tokens.push_back(std::move(token));
            token.clear();
          }
          state = State::blank;
        } else if (c == '\'') {
          state = State::single;
        } else if (c == '"') {
          state = State::dbl;
        } else if (c == '\\') {
          if (i + 1 >= line.size()) throw TokenizeError("no character after trailing backslash");
          token += line[++i];
          state = State::word;
        } else {
          token += c;
          state = State::word;
        }
        break;
      case State::single:
        if (c == '\'') {
          state = State::word;
        } else {
          token += c;
        }
        break;
      case State::dbl:
        if (c == '"') {
          state = State::word;
        } else if (c == '\\') {
          if (i + 1 >= line.size()) throw TokenizeError("no closing quotation");
          const char next = line[++i];
          if (next != '"' && next != '\\') token += '\\';
          token += next;
        } else {
          token += c;
        }
        break;
    }
  }
  if (state == State::single || state == State::dbl) throw TokenizeError("no closing quotation");
  if (state == State::word) tokens.push_back(std::move(token));
  return tokens;
}

namespace {

bool is_tool_argv(const std::vector<std::string>& argv) {
  if (argv.empty()) return false;
  if (argv[0] == "nmap" || argv[0] == "ping") return true;
  return argv[0] == "sudo" && argv.size() >= 2 && argv[1] == "nmap";
}

}  // namespace

std::optional<std::string> extract_tool_line(std::string_view completion) {
  for (const auto& raw : text::split_lines(completion)) {
    std::string_view t = text::trim(raw);
    if (t.empty() || t.starts_with("```")) continue;
    if (t.size() >= 2 && t.front() == '`' && t.back() == '`') t = text::trim(t.substr(1, t.size() - 2));
    if (t.starts_with("$ ")) t = text::trim(t.substr(2));
    std::vector<std::string> argv;
    try {
      argv = tokenize_shell(t);
    } catch (const TokenizeError&) {
      continue;
    }
    if (is_tool_argv(argv)) return std::string(t);
  }
  return std::nullopt;
}

void validate_scan_argv(const std::vector<std::string>& argv) {
  if (!is_tool_argv(argv)) {
    throw InjectionRejected("scan command must start with nmap, sudo nmap or ping: '" + text::join(argv, " ") + "'");
  }
  static constexpr std::string_view kMeta = ";|&$`<>()\n";
  for (const auto& tok : argv) {
    if (tok.find_first_of(kMeta) != std::string::npos)
      throw InjectionRejected("shell metacharacter in scan argument '" + tok + "'");
  }
}

ScanInvocation make_scan_invocation(std::string_view line, double timeout) {
  std::vector<std::string> argv;
  try {
    argv = tokenize_shell(line);
  } catch (const TokenizeError& e) {
    throw InjectionRejected(std::string("cannot tokenize scan line: ") + e.what());
  }
  validate_scan_argv(argv);
  if (timeout <= 0) throw PreconditionError("scan timeout must be positive");
  return {std::move(argv), timeout};
}

ScanOutput ProcessScanRunner::run(const std::vector<std::string>& argv, double timeout_seconds) {
  if (argv.empty()) throw PreconditionError("empty argv");
  int fds[2];
  if (pipe(fds) != 0) throw TransportError(std::string("pipe: ") + std::strerror(errno));

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);
  posix_spawn_file_actions_adddup2(&actions, fds[1], STDERR_FILENO);
  posix_spawn_file_actions_addclose(&actions, fds[0]);

  std::vector<char*> cargv;
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);

  pid_t pid = 0;
  const int rc = posix_spawnp(&pid, cargv[0], &actions, nullptr, cargv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  close(fds[1]);
  if (rc != 0) {
    close(fds[0]);
    throw TransportError("cannot start " + argv[0] + ": " + std::strerror(rc));
  }

  ScanOutput out;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_seconds);
  char buf[4096];
  while (true) {
    const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) {
      out.timed_out = true;
      break;
    }
    pollfd pfd{fds[0], POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(remaining.count(), 100)));
    if (ready < 0 && errno != EINTR) break;
    if (ready <= 0) continue;
    const auto n = ::read(fds[0], buf, sizeof buf);
    if (n <= 0) break;
    out.transcript.append(buf, static_cast<std::size_t>(n));
  }
  close(fds[0]);
  if (out.timed_out) kill(pid, SIGKILL);
  int status = 0;
  waitpid(pid, &status, 0);
  return out;
}

std::string run_scan(const ScanInvocation& inv, ScanRunner& runner) {
  validate_scan_argv(inv.argv);
  auto out = runner.run(inv.argv, inv.timeout);
  if (out.timed_out) {
    if (!out.transcript.empty() && out.transcript.back() != '\n') out.transcript += '\n';
    std::ostringstream marker;
    marker << kScanTimeoutMarker << " after " << inv.timeout << "s\n";
    out.transcript += marker.str();
  }
  return out.transcript;
}

std::vector<ReconFinding> parse_scan_findings(std::string_view transcript, const ServiceAliases& aliases) {
  static const std::regex report_re(R"(^Nmap scan report for (\S+)(?: \(([^)]+)\))?)");
  static const std::regex port_re(R"(^(\d+)/(tcp|udp)\s+open\s+(\S+)(?:\s+(.*))?$)");
  std::vector<ReconFinding> findings;
  std::string ip;
  for (const auto& raw : text::split_lines(transcript)) {
    const std::string line(text::trim(raw));
    std::smatch m;
    if (std::regex_search(line, m, report_re)) {
      ip = m[2].matched ? m[2].str() : m[1].str();
    } else if (std::regex_match(line, m, port_re)) {
      const int port = std::stoi(m[1].str());
      if (port < 1 || port > 65535) continue;
      findings.push_back({ip, port, aliases.canonicalize(m[3].str()), std::string(text::trim(m[4].str()))});
    }
  }
  return findings;
}

SteadyClock::SteadyClock() : origin_(std::chrono::steady_clock::now()) {}

double SteadyClock::now() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - origin_).count();
}

void SteadyClock::sleep_for(double seconds) { std::this_thread::sleep_for(std::chrono::duration<double>(seconds)); }

NoiseFilter NoiseFilter::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open noise prefix file: " + path);
  std::vector<std::string> prefixes;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    prefixes.push_back(line);
  }
  return NoiseFilter(std::move(prefixes));
}

std::string NoiseFilter::apply(std::string_view transcript) const {
  std::string out;
  for (const auto& line : text::split_lines(transcript)) {
    const auto t = text::trim(line);
    bool noisy = false;
    for (const auto& p : prefixes_) {
      if (t.starts_with(p)) {
        noisy = true;
        break;
      }
    }
    if (!noisy) out += line + "\n";
  }
  return out;
}

namespace {

template <typename ReadFn>
ModuleExecution drain(ReadFn read, double window_seconds, Clock& clock, const ExecutionOptions& opts) {
  ModuleExecution exec;
  const double start = clock.now();
  std::string acc;
  while (true) {
    const auto r = read();
    acc += r.data;
    if (!r.busy) break;
    if (clock.now() - start >= window_seconds) {
      exec.window_elapsed = true;
      break;
    }
    clock.sleep_for(std::min(opts.poll_interval, std::max(0.0, start + window_seconds - clock.now())));
  }
  exec.elapsed = clock.now() - start;
  if (opts.noise) acc = opts.noise->apply(acc);
  if (exec.window_elapsed) {
    if (!acc.empty() && acc.back() != '\n') acc += '\n';
    std::ostringstream marker;
    marker << kWindowElapsedMarker << " after " << window_seconds << "s\n";
    acc += marker.str();
  }
  exec.transcript = tail_trim(acc, opts.tail_cap);
  return exec;
}

}  // namespace

ModuleExecution execute_block(RpcConsole& console, const std::string& console_id, std::string_view block,
                              double window_seconds, Clock& clock, const ExecutionOptions& opts) {
  console.write(console_id, block);
  return drain([&] { return console.read(console_id); }, window_seconds, clock, opts);
}

ModuleExecution execute_module(RpcConsole& console, const std::string& console_id, const NormalizedInvocation& inv,
                               double window_seconds, Clock& clock, const ExecutionOptions& opts) {
  return execute_block(console, console_id, inv.to_block(), window_seconds, clock, opts);
}

ModuleExecution run_session_command(RpcConsole& console, int session_id, std::string_view line,
                                    double window_seconds, Clock& clock, const ExecutionOptions& opts) {
  console.session_write(session_id, line);
  return drain([&] { return console.session_read(session_id); }, window_seconds, clock, opts);
}

SessionInventory poll_sessions(RpcConsole& console) { return console.list_sessions(); }

UpgradeResult upgrade_session(RpcConsole& console, const std::string& console_id, int session_id, Clock& clock,
                              double window_seconds, const ExecutionOptions& opts) {
  const auto before = console.list_sessions();
  const auto it = before.find(session_id);
  if (it == before.end()) throw NotFoundError("no session " + std::to_string(session_id));
  if (it->second.kind != SessionKind::shell)
    throw PreconditionError("session " + std::to_string(session_id) + " is not a shell session");

  UpgradeResult result;
  result.transcript = execute_block(console, console_id, "sessions -u " + std::to_string(session_id) + "\n",
                                    window_seconds, clock, opts)
                          .transcript;
  const auto origin = "upgrade:" + std::to_string(session_id);
  for (const auto& [id, entry] : console.list_sessions()) {
    if (before.count(id) || entry.kind != SessionKind::meterpreter || entry.origin != origin) continue;
    result.outcome = UpgradeOutcome::upgraded;
    result.session_id = id;
    break;
  }
  return result;
}

}  // namespace redloop
