#pragma once

// Tool-boundary contracts: scanner invocation and the RPC console that both
// the simulator and a live attack-framework client implement.

#include <chrono>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "redloop/campaign_types.hpp"
#include "redloop/module_kb.hpp"
#include "redloop/rectifier.hpp"

namespace redloop {

class TokenizeError : public Error {
 public:
  using Error::Error;
};

class InjectionRejected : public Error {
 public:
  using Error::Error;
};

// POSIX-style word splitting: blanks separate words, single quotes are
// literal, double quotes allow \" and \\ escapes, a backslash outside quotes
// escapes the next character. No expansion of any kind.
std::vector<std::string> tokenize_shell(std::string_view line);

// First line of a completion that is an nmap, sudo nmap or ping invocation.
// Code fences, prose and "$ " prompt prefixes are skipped.
std::optional<std::string> extract_tool_line(std::string_view completion);

inline constexpr double kDefaultScanTimeout = 300.0;

struct ScanInvocation {
  std::vector<std::string> argv;
  double timeout = kDefaultScanTimeout;
};

// Builds a validated invocation from a single command line. Throws
// InjectionRejected on shell metacharacters or a disallowed program.
ScanInvocation make_scan_invocation(std::string_view line, double timeout = kDefaultScanTimeout);
void validate_scan_argv(const std::vector<std::string>& argv);

struct ScanOutput {
  std::string transcript;
  bool timed_out = false;
};

class ScanRunner {
 public:
  virtual ~ScanRunner() = default;
  // argv is already tokenized; implementations never hand it to a shell.
  virtual ScanOutput run(const std::vector<std::string>& argv, double timeout_seconds) = 0;
  virtual bool reachable(std::string_view /*target*/) { return true; }
};

// Runs the scanner as a child process (posix_spawnp, no shell).
class ProcessScanRunner : public ScanRunner {
 public:
  ScanOutput run(const std::vector<std::string>& argv, double timeout_seconds) override;
};

inline constexpr std::string_view kScanTimeoutMarker = "[!] scan timed out";
inline constexpr std::string_view kWindowElapsedMarker = "[!] execution window elapsed";

std::string run_scan(const ScanInvocation& inv, ScanRunner& runner);

// Pulls open-port rows out of a scanner transcript.
std::vector<ReconFinding> parse_scan_findings(std::string_view transcript, const ServiceAliases& aliases);

class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() const = 0;
  virtual void sleep_for(double seconds) = 0;
};

class SteadyClock final : public Clock {
 public:
  SteadyClock();
  double now() const override;
  void sleep_for(double seconds) override;

 private:
  std::chrono::steady_clock::time_point origin_;
};

// Advances only when asked to; execution windows elapse without waiting.
class SimClock final : public Clock {
 public:
  double now() const override { return now_; }
  void sleep_for(double seconds) override { now_ += seconds; }
  void advance(double seconds) { now_ += seconds; }

 private:
  double now_ = 0.0;
};

struct ConsoleRead {
  std::string data;
  bool busy = false;
};

struct SessionEntry {
  SessionKind kind = SessionKind::shell;
  std::string info;
  // "upgrade:<id>" when the session was produced by upgrading shell <id>.
  std::string origin;
  bool operator==(const SessionEntry&) const = default;
};

using SessionInventory = std::map<int, SessionEntry>;

// Console, module, and session control as exposed by the attack framework's
// RPC daemon. Transport failures surface as TransportError.
class RpcConsole {
 public:
  virtual ~RpcConsole() = default;
  virtual std::string create() = 0;
  virtual void write(const std::string& console_id, std::string_view text) = 0;
  // Returns output produced since the previous read, exactly once.
  virtual ConsoleRead read(const std::string& console_id) = 0;
  virtual void destroy(const std::string& console_id) = 0;

  virtual SessionInventory list_sessions() = 0;
  virtual void session_write(int session_id, std::string_view line) = 0;
  virtual ConsoleRead session_read(int session_id) = 0;
};

// Drops banner and noise lines by prefix; the prefix list is data.
class NoiseFilter {
 public:
  NoiseFilter() = default;
  explicit NoiseFilter(std::vector<std::string> prefixes) : prefixes_(std::move(prefixes)) {}
  static NoiseFilter load_file(const std::string& path);

  std::string apply(std::string_view transcript) const;

 private:
  std::vector<std::string> prefixes_;
};

struct ExecutionOptions {
  double poll_interval = 0.5;
  double grace = 2.0;
  std::size_t tail_cap = 50;
  const NoiseFilter* noise = nullptr;
};

struct ModuleExecution {
  std::string transcript;
  bool window_elapsed = false;
  double elapsed = 0.0;
};

ModuleExecution execute_module(RpcConsole& console, const std::string& console_id, const NormalizedInvocation& inv,
                               double window_seconds, Clock& clock, const ExecutionOptions& opts = {});

// Writes an already-rendered block (used when normalization is disabled).
ModuleExecution execute_block(RpcConsole& console, const std::string& console_id, std::string_view block,
                              double window_seconds, Clock& clock, const ExecutionOptions& opts = {});

ModuleExecution run_session_command(RpcConsole& console, int session_id, std::string_view line,
                                    double window_seconds, Clock& clock, const ExecutionOptions& opts = {});

SessionInventory poll_sessions(RpcConsole& console);

enum class UpgradeOutcome { upgraded, failed };

struct UpgradeResult {
  UpgradeOutcome outcome = UpgradeOutcome::failed;
  std::optional<int> session_id;
  std::string transcript;
};

// Issues `sessions -u <id>`. Throws NotFoundError for unknown ids and
// PreconditionError when the session is not a shell.
UpgradeResult upgrade_session(RpcConsole& console, const std::string& console_id, int session_id, Clock& clock,
                              double window_seconds = 30.0, const ExecutionOptions& opts = {});

}  // namespace redloop
