#include "redloop/campaign.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>

namespace redloop {

using ordered_json = nlohmann::ordered_json;

const SessionInfo* CampaignState::active_session() const {
  const SessionInfo* shell = nullptr;
  for (const auto& s : sessions) {
    if (!s.alive) continue;
    if (s.kind == SessionKind::meterpreter) return &s;
    if (!shell) shell = &s;
  }
  return shell;
}

std::string_view to_string(MemoryStrategy s) {
  switch (s) {
    case MemoryStrategy::cmm:
      return "cmm";
    case MemoryStrategy::cbm:
      return "cbm";
    case MemoryStrategy::none:
      return "none";
  }
  return "?";
}

MemoryStrategy parse_memory_strategy(std::string_view text) {
  for (auto s : {MemoryStrategy::cmm, MemoryStrategy::cbm, MemoryStrategy::none})
    if (to_string(s) == text) return s;
  throw ConfigError("unknown memory strategy '" + std::string(text) + "' (expected cmm, cbm or none)");
}

void CampaignConfig::validate() const {
  if (target.empty()) throw ConfigError("target is empty");
  if (max_iters_per_stage < 1) throw ConfigError("max_iters_per_stage must be >= 1");
  if (exec_window_default <= 0 || exec_window_bruteforce <= 0) throw ConfigError("execution windows must be positive");
  if (duplicate_retry_limit < 1 || generation_retry_limit < 1) throw ConfigError("retry limits must be >= 1");
  if (threshold < 0 || threshold > 1) throw ConfigError("threshold must be within [0, 1]");
  if (tail_cap < 1) throw ConfigError("tail_cap must be >= 1");
  if (lport < 1 || lport > 65535) throw ConfigError("lport out of range");
  if (scan_timeout <= 0) throw ConfigError("scan_timeout must be positive");
}

Stage select_tactic(const CampaignState& state) {
  if (state.objective_met) return Stage::end_of_campaign;
  if (state.recon_findings.empty()) return Stage::recon;
  if (!state.has_alive_session()) return Stage::exploit;
  return Stage::exfiltrate;
}

double execution_window(const NormalizedInvocation& inv, const CampaignConfig& cfg) {
  return inv.bruteforce ? cfg.exec_window_bruteforce : cfg.exec_window_default;
}

GuardDecision guard_duplicate(const CampaignState& state, Stage stage, std::string_view cmd) {
  return contains_failed(state.memory, stage, cmd) ? GuardDecision::reject : GuardDecision::allow;
}

std::vector<std::string> handle_sessions(CampaignState& state, const SessionInventory& inventory, RpcConsole& console,
                                         const std::string& console_id, Clock& clock, const CampaignConfig& cfg,
                                         const ExecutionOptions& opts) {
  std::vector<std::string> transcripts;
  for (auto& s : state.sessions) s.alive = inventory.count(s.id) > 0;
  auto known = [&](int id) {
    return std::any_of(state.sessions.begin(), state.sessions.end(), [&](const SessionInfo& s) { return s.id == id; });
  };
  for (const auto& [id, entry] : inventory) {
    if (known(id)) continue;
    state.sessions.push_back({id, entry.kind, true});
    if (entry.kind != SessionKind::shell || !entry.origin.empty()) continue;
    const auto up = upgrade_session(console, console_id, id, clock, cfg.exec_window_default, opts);
    transcripts.push_back(up.transcript);
    if (up.outcome == UpgradeOutcome::upgraded && up.session_id && !known(*up.session_id))
      state.sessions.push_back({*up.session_id, SessionKind::meterpreter, true});
  }
  return transcripts;
}

// ---------------------------------------------------------------------------

CampaignEngine::CampaignEngine(CampaignConfig cfg, CampaignDeps deps) : cfg_(std::move(cfg)), deps_(std::move(deps)) {
  cfg_.validate();
  state_.target = cfg_.target;
  exec_opts_.poll_interval = cfg_.poll_interval;
  exec_opts_.tail_cap = cfg_.tail_cap;
  exec_opts_.noise = deps_.noise;
}

PromptContext CampaignEngine::prompt_context(Stage stage) const {
  PromptContext ctx;
  ctx.templates = deps_.templates;
  ctx.objective = "retrieve the contents of " + cfg_.flag_name;
  ctx.retry_limit = cfg_.generation_retry_limit;
  ctx.observer = deps_.on_prompt;
  if (cfg_.memory == MemoryStrategy::cmm) ctx.memory_json = route_context(stage, state_.memory);
  if (cfg_.memory == MemoryStrategy::cbm) ctx.history = state_.transcript.render();
  return ctx;
}

void CampaignEngine::record(Stage stage, IterationRecord& rec, const std::string& agent_text, const ExecResult& result) {
  rec.label = result.label;
  rec.summary = result.summary;
  state_.last_result[stage] = result.summary;
  state_.transcript.append(Speaker::agent, agent_text);
  state_.transcript.append(Speaker::tool, result.summary + "\n" + result.raw_tail);
}

void CampaignEngine::remember(Stage stage, IterationRecord& rec) {
  if (stage != Stage::exploit && stage != Stage::exfiltrate) return;
  if (rec.command.empty()) return;
  state_.memory.append(stage, {rec.stage_iter, rec.command, rec.label == Label::success ? Outcome::success : Outcome::fail});
}

void CampaignEngine::refresh_sessions() {
  if (state_.sessions.empty()) return;
  const auto inventory = poll_sessions(deps_.console);
  for (auto& s : state_.sessions) s.alive = inventory.count(s.id) > 0;
}

void CampaignEngine::persist(const IterationRecord& rec, std::string_view transcript) const {
  if (cfg_.output_dir.empty()) return;
  const std::filesystem::path dir(cfg_.output_dir);
  text::write_file((dir / "memory.json").string(), render_memory_file(state_.memory));
  char name[32];
  std::snprintf(name, sizeof name, "iter_%03d.txt", rec.global_iter);
  std::string body = "# " + std::string(to_string(rec.stage)) + " " + std::to_string(rec.stage_iter) + "\n$ " +
                     rec.command + "\n" + std::string(transcript);
  text::write_file((dir / "transcripts" / name).string(), body);
}

void CampaignEngine::recon_iteration(IterationRecord& rec) {
  const auto ctx = prompt_context(Stage::recon);
  const auto plan = generate_recon_command(state_, deps_.backend, ctx);
  rec.command = plan.lines.front();
  const auto inv = make_scan_invocation(rec.command, cfg_.scan_timeout);
  const auto transcript = run_scan(inv, deps_.scanner);
  rec.dispatched = true;
  const auto result = translate_output(transcript, Stage::recon, deps_.markers, rec.command, nullptr, cfg_.summary_cap, cfg_.tail_cap);
  auto findings = parse_scan_findings(transcript, deps_.aliases);
  if (!findings.empty()) state_.recon_findings = std::move(findings);
  record(Stage::recon, rec, plan.completion, result);
  persist(rec, transcript);
}

void CampaignEngine::exploit_iteration(IterationRecord& rec) {
  const auto ctx = prompt_context(Stage::exploit);
  std::vector<std::string> rejected;
  int attempt = 1;
  CommandPlan plan;
  std::optional<Rectification> rect;
  while (true) {
    plan = select_exploit(state_, deps_.aliases, deps_.backend, ctx, rejected, attempt);
    attempt = plan.attempt + 1;
    std::string cmd = *plan.candidate_module;
    rect.reset();
    if (cfg_.rectifier_enabled) {
      try {
        rect = rectify(cfg_.rectify_method, cmd, deps_.kb, cfg_.threshold);
      } catch (const MalformedPathError&) {
        rect = Rectification{cmd, std::nullopt, 0.0, cfg_.rectify_method, RectifyOutcome::no_match};
      }
      if (rect->matched_path) cmd = *rect->matched_path;
    }
    rec.command = cmd;
    if (cfg_.memory == MemoryStrategy::cmm && guard_duplicate(state_, Stage::exploit, cmd) == GuardDecision::reject) {
      rejected.push_back(cmd);
      if (++rec.guard_rejections >= cfg_.duplicate_retry_limit) {
        rec.forced_fail = true;
        rec.label = Label::fail;
        rec.summary = "FAIL: " + cmd + " -> rejected as a repeat of a failed command";
        state_.last_result[Stage::exploit] = rec.summary;
        remember(Stage::exploit, rec);
        return;
      }
      continue;
    }
    break;
  }

  if (rect) {
    rec.rectification = rect;
    rectifications_.push_back({rec.global_iter, *rect});
    if (rect->outcome == RectifyOutcome::no_match) {
      rec.label = Label::fail;
      rec.summary = "FAIL: " + rec.command + " -> no knowledge-base module matches";
      state_.last_result[Stage::exploit] = rec.summary;
      state_.transcript.append(Speaker::agent, plan.completion);
      state_.transcript.append(Speaker::tool, rec.summary);
      remember(Stage::exploit, rec);
      return;
    }
  }
  plan.candidate_module = rec.command;
  for (auto& line : plan.lines)
    if (line.starts_with("use ")) line = "use " + rec.command;

  std::optional<OptionSchema> schema;
  try {
    schema = option_schema(deps_.schemas, rec.command);
  } catch (const NotFoundError&) {
    if (cfg_.rectifier_enabled) throw;
  }

  ModuleExecution exec;
  std::string agent_text;
  if (!schema) {
    // Unknown module with normalization off: the raw block goes out as is.
    agent_text = plan.block();
    rec.window = cfg_.exec_window_default;
    rec.dispatched = true;
    dispatched_.push_back(rec.command);
    exec = execute_block(deps_.console, console_id_, agent_text, *rec.window, deps_.clock, exec_opts_);
  } else {
    SetupOptions so;
    if (plan.header) {
      so.network.rhost = plan.header->ip;
      so.network.rport = plan.header->port;
    }
    so.network.lhost = cfg_.lhost;
    so.network.lport = cfg_.lport;
    if (!cfg_.wordlist.empty()) so.network.wordlist = cfg_.wordlist;
    so.normalize = cfg_.rectifier_enabled;
    std::string raw;
    const auto inv = setup_module(plan, *schema, so, state_, deps_.backend, ctx, &raw);
    const auto drafted = parse_invocation(raw);
    for (const auto& [name, _] : inv.option_assignments)
      if (!drafted.option(name)) rec.injected_options.push_back(name);
    rec.bruteforce = inv.bruteforce;
    rec.window = execution_window(inv, cfg_);
    agent_text = inv.to_block();
    rec.dispatched = true;
    dispatched_.push_back(rec.command);
    exec = execute_module(deps_.console, console_id_, inv, *rec.window, deps_.clock, exec_opts_);
  }

  const auto result = translate_output(exec.transcript, Stage::exploit, deps_.markers, rec.command, nullptr,
                                       cfg_.summary_cap, cfg_.tail_cap);
  const auto upgrades = handle_sessions(state_, poll_sessions(deps_.console), deps_.console, console_id_, deps_.clock, cfg_, exec_opts_);
  record(Stage::exploit, rec, agent_text, result);
  remember(Stage::exploit, rec);
  std::string transcript = exec.transcript;
  for (const auto& u : upgrades) transcript += u;
  persist(rec, transcript);
}

void CampaignEngine::exfil_iteration(IterationRecord& rec) {
  const auto* session = state_.active_session();
  if (!session) throw PreconditionError("exfiltration needs an alive session");
  const int session_id = session->id;
  const auto ctx = prompt_context(Stage::exfiltrate);
  std::vector<std::string> rejected;
  int attempt = 1;
  while (true) {
    const auto plan = generate_exfil_command(state_, deps_.verbs, deps_.backend, ctx, rejected, attempt);
    attempt = plan.attempt + 1;
    rec.command = plan.lines.front();
    if (cfg_.memory == MemoryStrategy::cmm && guard_duplicate(state_, Stage::exfiltrate, rec.command) == GuardDecision::reject) {
      rejected.push_back(rec.command);
      if (++rec.guard_rejections >= cfg_.duplicate_retry_limit) {
        rec.forced_fail = true;
        rec.label = Label::fail;
        rec.summary = "FAIL: " + rec.command + " -> rejected as a repeat of a failed command";
        state_.last_result[Stage::exfiltrate] = rec.summary;
        remember(Stage::exfiltrate, rec);
        return;
      }
      continue;
    }
    break;
  }

  rec.window = cfg_.exec_window_default;
  rec.dispatched = true;
  dispatched_.push_back(rec.command);
  const auto exec = run_session_command(deps_.console, session_id, rec.command, *rec.window, deps_.clock, exec_opts_);
  const auto result = translate_output(exec.transcript, Stage::exfiltrate, deps_.markers, rec.command, nullptr,
                                       cfg_.summary_cap, cfg_.tail_cap);
  record(Stage::exfiltrate, rec, rec.command, result);
  remember(Stage::exfiltrate, rec);

  static const std::set<std::string> kRetrieval = {"cat", "download", "head", "tail", "more"};
  const auto words = text::split_ws(rec.command);
  if (result.label == Label::success && words.size() >= 2 && kRetrieval.count(words.front())) {
    const auto& target = words.back();
    const auto slash = target.rfind('/');
    if ((slash == std::string::npos ? target : target.substr(slash + 1)) == cfg_.flag_name) {
      const auto lines = content_lines(exec.transcript);
      if (!lines.empty()) {
        state_.flag_contents = text::join(lines, "\n");
        state_.objective_met = true;
      }
    }
  }
  persist(rec, exec.transcript);
}

IterationRecord CampaignEngine::run_iteration() {
  if (console_id_.empty()) console_id_ = deps_.console.create();
  refresh_sessions();
  const auto stage = select_tactic(state_);
  if (stage == Stage::end_of_campaign) throw PreconditionError("campaign already ended");
  if (state_.stage_iters[stage] >= cfg_.max_iters_per_stage)
    throw PreconditionError("iteration budget of " + std::string(to_string(stage)) + " exhausted");

  state_.current_stage = stage;
  ++state_.global_iter;
  ++state_.stage_iters[stage];
  sequence_.push_back(stage);

  IterationRecord rec;
  rec.global_iter = state_.global_iter;
  rec.stage = stage;
  rec.stage_iter = state_.stage_iters[stage];
  try {
    switch (stage) {
      case Stage::recon:
        recon_iteration(rec);
        break;
      case Stage::exploit:
        exploit_iteration(rec);
        break;
      case Stage::exfiltrate:
        exfil_iteration(rec);
        break;
      default:
        break;
    }
  } catch (const GenerationError& e) {
    rec.error = e.what();
  } catch (const TransportError& e) {
    rec.error = e.what();
  } catch (const NormalizationError& e) {
    rec.error = e.what();
  } catch (const PayloadMismatchError& e) {
    rec.error = e.what();
  } catch (const InjectionRejected& e) {
    rec.error = e.what();
  } catch (const NotFoundError& e) {
    rec.error = e.what();
  }
  if (!rec.error.empty()) {
    rec.label = Label::fail;
    rec.summary = "FAIL: " + (rec.command.empty() ? std::string("<no command>") : rec.command) + " -> " + rec.error;
    state_.last_result[stage] = rec.summary;
    // A failure before anything reached the memory still counts as a failed
    // attempt of the chosen command.
    const StageLog* log = stage == Stage::recon ? nullptr : &state_.memory.log(stage);
    if (log && (log->entries.empty() || log->entries.back().iter != rec.stage_iter)) remember(stage, rec);
    persist(rec, rec.summary + "\n");
  }
  if (state_.objective_met) state_.current_stage = Stage::end_of_campaign;
  records_.push_back(rec);
  return rec;
}

CampaignReport CampaignEngine::run() {
  if (!deps_.scanner.reachable(cfg_.target)) throw ConfigError("target " + cfg_.target + " is not reachable");
  const double start = deps_.clock.now();
  console_id_ = deps_.console.create();

  CampaignReport report;
  while (true) {
    refresh_sessions();
    const auto stage = select_tactic(state_);
    if (stage == Stage::end_of_campaign) {
      state_.current_stage = Stage::end_of_campaign;
      report.success = true;
      break;
    }
    if (state_.stage_iters[stage] >= cfg_.max_iters_per_stage) {
      report.failure_reason = "iteration budget exhausted in " + std::string(to_string(stage));
      break;
    }
    run_iteration();
  }
  deps_.console.destroy(console_id_);

  report.target = cfg_.target;
  for (auto s : {Stage::recon, Stage::exploit, Stage::exfiltrate}) report.stages[s] = state_.stage_iters[s];
  report.total_iterations = state_.global_iter;
  report.rectifications = rectifications_;
  report.duplication_rate = duplication_rate(dispatched_);
  report.wall_seconds = deps_.clock.now() - start;
  if (state_.flag_contents) {
    report.flag_contents = state_.flag_contents;
    report.flag_sha256 = text::sha256_hex(*state_.flag_contents);
  }
  report.iterations = records_;
  report.stage_sequence = sequence_;
  report.dispatched_commands = dispatched_;
  report.memory = state_.memory;
  return report;
}

CampaignReport run_campaign(const CampaignConfig& cfg, const CampaignDeps& deps) { return CampaignEngine(cfg, deps).run(); }

std::string CampaignReport::to_json() const {
  ordered_json doc;
  doc["success"] = success;
  doc["target"] = target;
  ordered_json st = ordered_json::object();
  for (auto s : {Stage::recon, Stage::exploit, Stage::exfiltrate}) {
    const auto it = stages.find(s);
    st[std::string(to_string(s))] = it == stages.end() ? 0 : it->second;
  }
  doc["stages"] = st;
  doc["total_iterations"] = total_iterations;
  auto rects = ordered_json::array();
  for (const auto& ev : rectifications) {
    ordered_json r;
    r["iter"] = ev.global_iter;
    r["input"] = ev.rectification.input_path;
    r["matched"] = ev.rectification.matched_path ? ordered_json(*ev.rectification.matched_path) : ordered_json(nullptr);
    r["outcome"] = std::string(to_string(ev.rectification.outcome));
    r["similarity"] = ev.rectification.similarity;
    r["method"] = std::string(to_string(ev.rectification.method));
    rects.push_back(std::move(r));
  }
  doc["rectifications"] = rects;
  doc["duplication_rate"] = duplication_rate;
  doc["wall_seconds"] = wall_seconds;
  doc["flag_sha256"] = flag_sha256 ? ordered_json(*flag_sha256) : ordered_json(nullptr);
  doc["failure_reason"] = failure_reason;
  auto seq = ordered_json::array();
  for (auto s : stage_sequence) seq.push_back(std::string(to_string(s)));
  doc["stage_sequence"] = seq;
  auto iters = ordered_json::array();
  for (const auto& rec : iterations) {
    ordered_json r;
    r["iter"] = rec.global_iter;
    r["stage"] = std::string(to_string(rec.stage));
    r["stage_iter"] = rec.stage_iter;
    r["command"] = rec.command;
    r["dispatched"] = rec.dispatched;
    r["label"] = std::string(to_string(rec.label));
    r["summary"] = rec.summary;
    r["window"] = rec.window ? ordered_json(*rec.window) : ordered_json(nullptr);
    r["bruteforce"] = rec.bruteforce;
    r["injected"] = rec.injected_options;
    r["guard_rejections"] = rec.guard_rejections;
    r["forced_fail"] = rec.forced_fail;
    r["error"] = rec.error;
    iters.push_back(std::move(r));
  }
  doc["iterations"] = iters;
  doc["memory"] = ordered_json::parse(render_memory_file(memory));
  return doc.dump(2);
}

}  // namespace redloop
