#pragma once

// Deterministic stand-ins for the target host and the language model.

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "redloop/adapters.hpp"
#include "redloop/module_kb.hpp"
#include "redloop/pipeline.hpp"
#include "redloop/rectifier.hpp"

namespace redloop {

class ScenarioError : public Error {
 public:
  using Error::Error;
};

// Raised when a scripted playbook cannot answer a prompt. Always fatal to a
// campaign: a playbook that has drifted from the engine is a test bug.
class PlaybackError : public Error {
 public:
  using Error::Error;
};

struct Credential {
  std::string user;
  std::string pass;
};

struct ServiceSpec {
  std::string name;       // canonical
  std::string nmap_name;  // service column of the scan table
  std::string version;    // banner text shown with -sV
  int port = 0;
  std::optional<std::string> vulnerable_module;
  // Option name -> expected value. "${target}" and "${port}" expand to the
  // host and service port; "*" accepts any non-empty value.
  std::vector<std::pair<std::string, std::string>> required_options;
  SessionKind session_kind = SessionKind::shell;
  bool bruteforce = false;
  std::optional<Credential> credential;
  std::string session_user = "root";
  std::string session_cwd = "/";
  // The module reports success but the session cannot be retrieved.
  bool attach_fails = false;
  // Simulated seconds a spawned session stays alive; absent means forever.
  std::optional<double> session_lifetime;
};

struct FileEntry {
  std::string path;
  std::string contents;
};

struct ScenarioSpec {
  std::string name;
  std::string host;
  std::string flag_path;
  std::string flag_contents;
  bool upgrade_fails = false;
  std::vector<FileEntry> filesystem;
  std::vector<ServiceSpec> services;

  const ServiceSpec* service_on(int port) const;
};

// JSON scenario file. When `kb` is given every vulnerable_module must be one
// of its paths.
ScenarioSpec load_scenario(std::istream& source, const ModuleDatabase* kb = nullptr);
ScenarioSpec load_scenario_file(const std::string& path, const ModuleDatabase* kb = nullptr);

struct SimTiming {
  double scan = 12.0;
  double exploit = 4.0;
  double bruteforce_attempt = 2.0;
  double session_command = 1.0;
  double upgrade = 3.0;
};

// A simulated host that speaks both the scanner and the RPC console
// contracts. Time only moves through the supplied clock.
class SimulatedTarget final : public RpcConsole, public ScanRunner {
 public:
  SimulatedTarget(ScenarioSpec spec, const OptionSchemaProvider& schemas, Clock& clock, SimTiming timing = {});

  // ScanRunner
  ScanOutput run(const std::vector<std::string>& argv, double timeout_seconds) override;
  bool reachable(std::string_view target) override { return target == spec_.host; }

  // RpcConsole
  std::string create() override;
  void write(const std::string& console_id, std::string_view text) override;
  ConsoleRead read(const std::string& console_id) override;
  void destroy(const std::string& console_id) override;
  SessionInventory list_sessions() override;
  void session_write(int session_id, std::string_view line) override;
  ConsoleRead session_read(int session_id) override;

  const ScenarioSpec& spec() const { return spec_; }
  // Every line written to a console or session, in order, prefixed with
  // "console:" or "session <id>:".
  const std::vector<std::string>& dispatch_log() const { return dispatch_log_; }
  // Module paths whose run produced a session.
  const std::vector<std::string>& exploited_modules() const { return exploited_; }

 private:
  struct Event {
    double at;
    std::string text;
    std::optional<SessionEntry> spawn;
    std::optional<double> lifetime;
    std::string user;
    std::string cwd;
  };
  struct Console {
    std::optional<std::string> module;
    std::map<std::string, std::string> options;
    std::vector<Event> pending;
    std::string ready;
  };
  struct Session {
    SessionEntry entry;
    std::string user;
    std::string cwd;
    std::optional<double> expires;
    std::vector<Event> pending;
    std::string ready;
  };

  void advance();
  void deliver(std::vector<Event>& pending, std::string& ready);
  void run_console_line(Console& con, const std::string& line, double& t);
  void run_module(Console& con, double& t);
  void run_upgrade(Console& con, const std::vector<std::string>& words, double& t);
  std::string run_session_line(Session& s, const std::string& line);
  bool alive(const Session& s) const;
  std::optional<std::string> file(const std::string& path) const;
  std::string resolve(const Session& s, const std::string& path) const;

  ScenarioSpec spec_;
  const OptionSchemaProvider& schemas_;
  Clock& clock_;
  SimTiming timing_;
  std::map<std::string, Console> consoles_;
  std::map<int, Session> sessions_;
  int next_console_ = 1;
  int next_session_ = 1;
  std::vector<std::string> dispatch_log_;
  std::vector<std::string> exploited_;
};

// Plays back an ordered list of (prompt fingerprint, completion) records.
class ScriptedBackend final : public ModelBackend {
 public:
  struct Record {
    std::string fingerprint;
    std::string completion;
  };

  ScriptedBackend(std::string name, std::vector<Record> records);
  static ScriptedBackend load(std::istream& source);
  static ScriptedBackend load_file(const std::string& path);

  std::string complete(const Prompt& prompt) override;
  std::string identity() const override { return "scripted:" + name_; }
  std::size_t remaining() const { return records_.size() - cursor_; }

 private:
  std::string name_;
  std::vector<Record> records_;
  std::size_t cursor_ = 0;
};

// Rule-driven model stand-in. Each completion is a pure function of the seed
// and the prompt text, so a prompt that does not change (no memory, same
// last result) yields the same answer again.
class PolicyBackend final : public ModelBackend {
 public:
  struct Candidate {
    std::string module;
    double weight = 1.0;
    std::optional<std::string> payload;
  };
  struct Profile {
    std::string name;
    std::vector<std::string> recon;
    std::map<std::string, std::vector<Candidate>> services;
    std::vector<Candidate> fallback;
    std::map<SessionKind, std::vector<Candidate>> exfil;
    std::string flag_name = "flag.txt";
    // Chance that a failure buried in a verbatim transcript is noticed.
    double history_recall = 0.5;
  };

  PolicyBackend(Profile profile, std::uint64_t seed);
  static Profile load_profile(std::istream& source);
  static Profile load_profile_file(const std::string& path);

  std::string complete(const Prompt& prompt) override;
  std::string identity() const override { return "rules:" + profile_.name; }

 private:
  double draw(const Prompt& prompt, std::string_view salt) const;
  std::set<std::string> recalled_failures(const Prompt& prompt, Stage stage) const;
  const Candidate& pick(const std::vector<const Candidate*>& pool, const Prompt& prompt, std::string_view salt) const;
  std::string recon(const Prompt& prompt) const;
  std::string select(const Prompt& prompt) const;
  std::string setup(const Prompt& prompt) const;
  std::string exfil(const Prompt& prompt) const;

  Profile profile_;
  std::uint64_t seed_;
};

enum class Perturbation { suffix_edit, hierarchy_scramble, type_swap };

std::string_view to_string(Perturbation kind);
Perturbation parse_perturbation(std::string_view text);

// Applies one perturbation of the given kind. The result is never a KB
// path and never equals the input; draws are repeated until that holds.
std::string perturb_path(std::string_view path, Perturbation kind, const ModuleDatabase& kb, std::mt19937_64& rng);

// Wraps a backend and perturbs module paths in exploit selections.
class HallucinationInjector final : public ModelBackend {
 public:
  struct Event {
    std::string fingerprint;
    std::string original;
    std::string perturbed;
    Perturbation kind;
  };

  HallucinationInjector(ModelBackend& inner, const ModuleDatabase& kb, double rate, std::uint64_t seed,
                        std::vector<Perturbation> kinds = {Perturbation::suffix_edit, Perturbation::hierarchy_scramble,
                                                           Perturbation::type_swap});

  std::string complete(const Prompt& prompt) override;
  std::string identity() const override;
  const std::vector<Event>& events() const { return events_; }

 private:
  ModelBackend& inner_;
  const ModuleDatabase& kb_;
  double rate_;
  std::vector<Perturbation> kinds_;
  std::mt19937_64 rng_;
  std::vector<Event> events_;
};

struct CorpusMix {
  double suffix_edit = 0.4;
  double hierarchy_scramble = 0.4;
  double type_swap = 0.2;
};

struct GeneratedCase {
  CorpusEntry entry;
  Perturbation kind;
};

// Seeded hallucination corpus over exploit and auxiliary modules of `kb`.
std::vector<GeneratedCase> generate_corpus(const ModuleDatabase& kb, std::size_t n, std::uint64_t seed,
                                           CorpusMix mix = {});

}  // namespace redloop
