#pragma once

// Run configuration, batch execution and aggregate reports for the CLI.

#include <cstdint>
#include <istream>
#include <memory>
#include <string>
#include <vector>

#include "redloop/campaign.hpp"
#include "redloop/sim.hpp"

namespace redloop {

struct RunConfig {
  CampaignConfig campaign;
  std::string scenario;
  std::string kb = "kb/sample_kb.txt";
  std::string schemas = "kb/option_schemas.txt";
  std::string aliases = "kb/service_aliases.txt";
  std::string markers = "markers.txt";
  std::string verbs = "verbs.txt";
  std::string noise = "noise_prefixes.txt";
  std::string templates = "templates";
  std::string backend = "scripted";  // scripted | rules | http
  std::string playbook;
  std::string profile = "profiles/default.json";
  std::string adapter = "sim";
  bool live_acknowledged = false;
  double inject_rate = 0.0;
  std::vector<Perturbation> inject_kinds = {Perturbation::suffix_edit, Perturbation::hierarchy_scramble,
                                            Perturbation::type_swap};
  std::uint64_t seed = 1;
  int repeat = 1;
  std::string out_dir;

  void validate() const;
};

RunConfig default_run_config();

// `key = value` lines, '#' comments. Unknown keys are an error.
void apply_config_line(RunConfig& cfg, std::string_view key, std::string_view value);
RunConfig load_run_config(std::istream& source, RunConfig base = default_run_config());
RunConfig load_run_config_file(const std::string& path, RunConfig base = default_run_config());

// Shared read-only data for any number of campaigns.
struct Resources {
  ModuleDatabase kb;
  SchemaTable schemas;
  ServiceAliases aliases;
  MarkerTable markers;
  VerbTable verbs;
  PromptTemplates templates;
  NoiseFilter noise;

  static Resources load(const RunConfig& cfg);
};

// One campaign against the simulator. `run_index` selects the per-run seed;
// `out_dir`, when non-empty, receives memory.json and transcripts.
CampaignReport run_single(const RunConfig& cfg, const Resources& res, int run_index, const std::string& out_dir = {},
                          std::function<void(const Prompt&)> on_prompt = {},
                          std::vector<std::string>* dispatch_log = nullptr);

std::uint64_t run_seed(std::uint64_t base, int run_index);

// Aggregate statistics recomputed from per-run reports.
std::string aggregate_json(const std::string& label, const std::vector<CampaignReport>& reports);
std::string aggregate_csv(const std::vector<CampaignReport>& reports);

struct StrategyResult {
  MemoryStrategy strategy = MemoryStrategy::cmm;
  std::vector<CampaignReport> runs;
  // Dispatched commands equal to a then-failed entry of the same stage.
  std::size_t failed_repeats = 0;

  double success_rate() const;
  double duplication_rate() const;
};

std::vector<StrategyResult> evaluate_memory(const RunConfig& cfg, const Resources& res,
                                            const std::vector<MemoryStrategy>& strategies);
std::string memory_eval_json(const std::vector<StrategyResult>& results);
std::string memory_eval_csv(const std::vector<StrategyResult>& results);

// Counts dispatched commands that repeat a command whose latest recorded
// outcome in the same stage was a failure at the time of dispatch.
std::size_t count_failed_repeats(const CampaignReport& report);

std::string rectifier_eval_json(const MethodEvaluation& eval, double threshold);

}  // namespace redloop
