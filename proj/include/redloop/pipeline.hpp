#pragma once

// The model-facing roles of an iteration: stage-conditioned command
// generation, module option setup, and output translation into a binary
// SUCCESS/FAIL label.

#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "redloop/campaign_types.hpp"
#include "redloop/module_kb.hpp"
#include "redloop/rectifier.hpp"

namespace redloop {

class GenerationError : public Error {
 public:
  using Error::Error;
};

enum class PromptRole { recon, select_exploit, setup_module, exfiltrate, summarize };

std::string_view to_string(PromptRole role);
PromptRole parse_prompt_role(std::string_view text);

struct Prompt {
  PromptRole role = PromptRole::recon;
  Stage stage = Stage::recon;
  int stage_iter = 1;
  int attempt = 1;
  std::map<std::string, std::string> slots;
  std::string text;

  // "<role>@<STAGE>#<stage_iter>", with "~<attempt>" appended on retries.
  std::string fingerprint() const;
  std::string slot(const std::string& name) const;
};

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  virtual std::string complete(const Prompt& prompt) = 0;
  virtual std::string identity() const = 0;
};

// Prompt templates with {{slot}} placeholders. A line starting with
// "?name " is kept only when slot `name` is non-empty.
class PromptTemplates {
 public:
  static PromptTemplates load_dir(const std::string& dir);
  static PromptTemplates defaults();

  void set(PromptRole role, std::string body);
  std::string render(PromptRole role, const std::map<std::string, std::string>& slots) const;

 private:
  std::map<PromptRole, std::string> templates_;
};

struct CommandHeader {
  std::string ip;
  int port = 0;
  std::string service;
  std::string version;

  bool operator==(const CommandHeader&) const = default;
};

struct CommandPlan {
  Stage stage = Stage::recon;
  std::optional<CommandHeader> header;
  std::vector<std::string> lines;
  std::optional<std::string> candidate_module;
  // Completion the plan was parsed from, and the attempt that produced it.
  std::string completion;
  int attempt = 1;

  std::string block() const;
};

enum class Label { success, fail };

std::string_view to_string(Label label);

struct ExecResult {
  std::string raw_tail;
  Label label = Label::fail;
  std::string summary;
  std::string next_hint;
};

// Stage-scoped regex markers that decide a transcript's label.
//   <STAGE> success|fail <regex>
class MarkerTable {
 public:
  static MarkerTable load_file(const std::string& path);
  static MarkerTable load(std::istream& source);

  void add(Stage stage, Label label, const std::string& pattern);

  struct Match {
    Label label;
    std::string line;
  };
  // Fail markers win over success markers. Stages without success markers
  // accept any non-marker content as success.
  Match classify(std::string_view transcript, Stage stage) const;

 private:
  struct Marker {
    Stage stage;
    Label label;
    std::string pattern;
    std::regex re;
  };
  std::vector<Marker> markers_;
};

// Command vocabulary per session kind.
class VerbTable {
 public:
  static VerbTable load_file(const std::string& path);
  static VerbTable load(std::istream& source);

  const std::set<std::string>& verbs(SessionKind kind) const;
  // Verbs only a meterpreter session understands.
  std::set<std::string> meterpreter_only() const;
  bool allows(SessionKind kind, std::string_view line) const;

 private:
  std::map<SessionKind, std::set<std::string>> verbs_;
};

struct PromptContext {
  const PromptTemplates* templates = nullptr;
  // Injected stage memory; set only by the structured-memory strategy.
  std::optional<std::string> memory_json;
  // Verbatim conversation history; set only by the transcript baseline.
  std::optional<std::string> history;
  std::string objective;
  int retry_limit = 3;
  std::function<void(const Prompt&)> observer;
};

CommandPlan generate_recon_command(const CampaignState& state, ModelBackend& backend, const PromptContext& ctx);

// `rejected` lists candidates the duplicate guard already refused during
// this iteration; it is shown to the model on regeneration.
CommandPlan select_exploit(const CampaignState& state, const ServiceAliases& aliases, ModelBackend& backend,
                           const PromptContext& ctx, const std::vector<std::string>& rejected = {},
                           int first_attempt = 1);

struct SetupOptions {
  InvocationContext network;
  bool normalize = true;
  std::set<std::string> bruteforce_markers = default_bruteforce_markers();
};

// `raw_block`, when given, receives the merged block before normalization.
NormalizedInvocation setup_module(const CommandPlan& plan, const OptionSchema& schema, const SetupOptions& opts,
                                  const CampaignState& state, ModelBackend& backend, const PromptContext& ctx,
                                  std::string* raw_block = nullptr);

CommandPlan generate_exfil_command(const CampaignState& state, const VerbTable& verbs, ModelBackend& backend,
                                   const PromptContext& ctx, const std::vector<std::string>& rejected = {},
                                   int first_attempt = 1);

inline constexpr std::size_t kDefaultSummaryCap = 320;

ExecResult translate_output(std::string_view raw, Stage stage, const MarkerTable& markers, std::string_view command = {},
                            ModelBackend* summarizer = nullptr, std::size_t summary_cap = kDefaultSummaryCap,
                            std::size_t tail_cap = 50);

inline constexpr std::string_view kElisionMarker = "[... output trimmed ...]";

// Last `cap` lines, prefixed with an elision marker when anything was cut.
std::string tail_trim(std::string_view raw, std::size_t cap);

std::string render_findings(const std::vector<ReconFinding>& findings);

// Content lines of a transcript with framework status lines ([*], [+], [-],
// [!]) removed.
std::vector<std::string> content_lines(std::string_view transcript);

}  // namespace redloop
