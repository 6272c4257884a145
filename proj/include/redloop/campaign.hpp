#pragma once

// The campaign loop: tactic selection, per-stage budgets, the duplicate
// guard, execution windows and session tracking.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "redloop/adapters.hpp"
#include "redloop/campaign_types.hpp"
#include "redloop/context_memory.hpp"
#include "redloop/module_kb.hpp"
#include "redloop/pipeline.hpp"
#include "redloop/rectifier.hpp"

namespace redloop {

enum class MemoryStrategy { cmm, cbm, none };

std::string_view to_string(MemoryStrategy s);
MemoryStrategy parse_memory_strategy(std::string_view text);

struct CampaignConfig {
  std::string target;
  int max_iters_per_stage = 30;
  double exec_window_default = 30.0;
  double exec_window_bruteforce = 180.0;
  int duplicate_retry_limit = 3;
  int generation_retry_limit = 3;
  double scan_timeout = kDefaultScanTimeout;
  std::string lhost = "10.0.0.2";
  int lport = 4444;
  std::string wordlist;
  std::string flag_name = "flag.txt";
  MemoryStrategy memory = MemoryStrategy::cmm;
  bool rectifier_enabled = true;
  RectifyMethod rectify_method = RectifyMethod::hybrid;
  double threshold = kDefaultThreshold;
  std::size_t tail_cap = 50;
  std::size_t summary_cap = kDefaultSummaryCap;
  double poll_interval = 0.5;
  // Memory file and per-iteration transcripts are written here when set.
  std::string output_dir;

  // Throws ConfigError on invalid values.
  void validate() const;
};

struct CampaignDeps {
  const ModuleDatabase& kb;
  const OptionSchemaProvider& schemas;
  const ServiceAliases& aliases;
  ModelBackend& backend;
  RpcConsole& console;
  ScanRunner& scanner;
  Clock& clock;
  const MarkerTable& markers;
  const VerbTable& verbs;
  const PromptTemplates* templates = nullptr;
  const NoiseFilter* noise = nullptr;
  // Sees every prompt before it reaches the backend.
  std::function<void(const Prompt&)> on_prompt;
};

Stage select_tactic(const CampaignState& state);

double execution_window(const NormalizedInvocation& inv, const CampaignConfig& cfg);

enum class GuardDecision { allow, reject };

GuardDecision guard_duplicate(const CampaignState& state, Stage stage, std::string_view cmd);

struct RectificationEvent {
  int global_iter = 0;
  Rectification rectification;
};

struct IterationRecord {
  int global_iter = 0;
  Stage stage = Stage::recon;
  int stage_iter = 0;
  std::string command;
  bool dispatched = false;
  Label label = Label::fail;
  std::string summary;
  std::optional<double> window;
  bool bruteforce = false;
  std::vector<std::string> injected_options;
  int guard_rejections = 0;
  bool forced_fail = false;
  std::string error;
  std::optional<Rectification> rectification;
};

// Registers sessions new to `state`, marks vanished ones dead and tries to
// upgrade every new shell session. Returns the upgrade transcripts.
std::vector<std::string> handle_sessions(CampaignState& state, const SessionInventory& inventory, RpcConsole& console,
                                         const std::string& console_id, Clock& clock, const CampaignConfig& cfg,
                                         const ExecutionOptions& opts = {});

struct CampaignReport {
  bool success = false;
  std::string target;
  std::map<Stage, int> stages;
  int total_iterations = 0;
  std::vector<RectificationEvent> rectifications;
  double duplication_rate = 0.0;
  double wall_seconds = 0.0;
  std::optional<std::string> flag_sha256;
  std::optional<std::string> flag_contents;
  std::string failure_reason;
  std::vector<IterationRecord> iterations;
  std::vector<Stage> stage_sequence;
  std::vector<std::string> dispatched_commands;
  GlobalMemory memory;

  std::string to_json() const;
};

class CampaignEngine {
 public:
  CampaignEngine(CampaignConfig cfg, CampaignDeps deps);

  // Throws ConfigError when the target cannot be reached.
  CampaignReport run();

  // One tactic-select, generate, execute, translate cycle.
  IterationRecord run_iteration();

  const CampaignState& state() const { return state_; }

 private:
  PromptContext prompt_context(Stage stage) const;
  void recon_iteration(IterationRecord& rec);
  void exploit_iteration(IterationRecord& rec);
  void exfil_iteration(IterationRecord& rec);
  void record(Stage stage, IterationRecord& rec, const std::string& agent_text, const ExecResult& result);
  void remember(Stage stage, IterationRecord& rec);
  void refresh_sessions();
  void persist(const IterationRecord& rec, std::string_view transcript) const;

  CampaignConfig cfg_;
  CampaignDeps deps_;
  CampaignState state_;
  ExecutionOptions exec_opts_;
  std::string console_id_;
  std::vector<RectificationEvent> rectifications_;
  std::vector<std::string> dispatched_;
  std::vector<IterationRecord> records_;
  std::vector<Stage> sequence_;
};

CampaignReport run_campaign(const CampaignConfig& cfg, const CampaignDeps& deps);

}  // namespace redloop
