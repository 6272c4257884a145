#include "redloop/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "redloop/adapters.hpp"

namespace redloop {

namespace {

constexpr PromptRole kRoles[] = {PromptRole::recon, PromptRole::select_exploit, PromptRole::setup_module,
                                 PromptRole::exfiltrate, PromptRole::summarize};

bool is_fence(std::string_view line) { return line.starts_with("```"); }

// Strips inline backticks and a leading "$ " prompt from a completion line.
std::string clean_line(std::string_view raw) {
  auto t = text::trim(raw);
  if (t.size() >= 2 && t.front() == '`' && t.back() == '`') t = text::trim(t.substr(1, t.size() - 2));
  if (t.starts_with("$ ")) t = text::trim(t.substr(2));
  return std::string(t);
}

std::string first_word(std::string_view line) {
  const auto words = text::split_ws(line);
  return words.empty() ? std::string() : words.front();
}

Prompt make_prompt(PromptRole role, Stage stage, const CampaignState& state, int attempt,
                   std::map<std::string, std::string> slots, const PromptContext& ctx) {
  Prompt p;
  p.role = role;
  p.stage = stage;
  const auto it = state.stage_iters.find(stage);
  p.stage_iter = std::max(1, it == state.stage_iters.end() ? 1 : it->second);
  p.attempt = attempt;
  slots["stage"] = std::string(to_string(stage));
  slots["target"] = state.target;
  slots["objective"] = ctx.objective;
  if (ctx.memory_json) slots["memory"] = *ctx.memory_json;
  if (ctx.history) slots["history"] = *ctx.history;
  if (auto last = state.last_result.find(stage); last != state.last_result.end()) slots["last_result"] = last->second;
  p.slots = std::move(slots);
  static const PromptTemplates fallback = PromptTemplates::defaults();
  p.text = (ctx.templates ? *ctx.templates : fallback).render(role, p.slots);
  return p;
}

std::string ask(ModelBackend& backend, const Prompt& prompt, const PromptContext& ctx) {
  if (ctx.observer) ctx.observer(prompt);
  return backend.complete(prompt);
}

std::optional<CommandHeader> parse_header(std::string_view line) {
  auto t = text::trim(line);
  if (!t.starts_with("HEADER")) return std::nullopt;
  t = text::trim(t.substr(6));
  if (t.starts_with(":")) t = text::trim(t.substr(1));
  const auto fields = text::split(t, '|');
  if (fields.size() != 4) return std::nullopt;
  CommandHeader h;
  h.ip = std::string(text::trim(fields[0]));
  try {
    std::size_t used = 0;
    const auto port_text = std::string(text::trim(fields[1]));
    h.port = std::stoi(port_text, &used);
    if (used != port_text.size()) return std::nullopt;
  } catch (const std::exception&) {
    return std::nullopt;
  }
  h.service = std::string(text::trim(fields[2]));
  h.version = std::string(text::trim(fields[3]));
  return h;
}

bool is_console_line(std::string_view line) {
  const auto w = first_word(line);
  return w == "use" || w == "set" || w == "setg" || w == "exploit" || w == "run";
}

}  // namespace

std::string_view to_string(PromptRole role) {
  switch (role) {
    case PromptRole::recon:
      return "recon";
    case PromptRole::select_exploit:
      return "select_exploit";
    case PromptRole::setup_module:
      return "setup_module";
    case PromptRole::exfiltrate:
      return "exfiltrate";
    case PromptRole::summarize:
      return "summarize";
  }
  return "?";
}

PromptRole parse_prompt_role(std::string_view text) {
  for (auto r : kRoles)
    if (to_string(r) == text) return r;
  throw ConfigError("unknown prompt role '" + std::string(text) + "'");
}

std::string_view to_string(Label label) { return label == Label::success ? "SUCCESS" : "FAIL"; }

std::string Prompt::fingerprint() const {
  std::string fp = std::string(to_string(role)) + "@" + std::string(to_string(stage)) + "#" + std::to_string(stage_iter);
  if (attempt > 1) fp += "~" + std::to_string(attempt);
  return fp;
}

std::string Prompt::slot(const std::string& name) const {
  const auto it = slots.find(name);
  return it == slots.end() ? std::string() : it->second;
}

std::string CommandPlan::block() const {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Templates

PromptTemplates PromptTemplates::load_dir(const std::string& dir) {
  PromptTemplates t;
  for (auto role : kRoles) {
    const auto path = std::filesystem::path(dir) / (std::string(to_string(role)) + ".tmpl");
    if (!std::filesystem::exists(path)) throw NotFoundError("missing prompt template " + path.string());
    t.set(role, text::read_file(path.string()));
  }
  return t;
}

PromptTemplates PromptTemplates::defaults() { return load_dir(data_path("templates")); }

void PromptTemplates::set(PromptRole role, std::string body) { templates_[role] = std::move(body); }

std::string PromptTemplates::render(PromptRole role, const std::map<std::string, std::string>& slots) const {
  const auto it = templates_.find(role);
  if (it == templates_.end()) throw NotFoundError("no template for role " + std::string(to_string(role)));
  auto value = [&](const std::string& name) {
    const auto s = slots.find(name);
    return s == slots.end() ? std::string() : s->second;
  };

  std::string out;
  for (auto line : text::split_lines(it->second)) {
    if (line.starts_with("?")) {
      const auto space = line.find(' ');
      const auto name = line.substr(1, space == std::string::npos ? std::string::npos : space - 1);
      if (value(name).empty()) continue;
      line = space == std::string::npos ? std::string() : line.substr(space + 1);
    }
    std::string rendered;
    std::size_t pos = 0;
    while (true) {
      const auto open = line.find("{{", pos);
      if (open == std::string::npos) break;
      const auto close = line.find("}}", open + 2);
      if (close == std::string::npos) break;
      rendered += line.substr(pos, open - pos);
      rendered += value(std::string(text::trim(line.substr(open + 2, close - open - 2))));
      pos = close + 2;
    }
    rendered += line.substr(pos);
    out += rendered + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Markers and verbs

MarkerTable MarkerTable::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open marker file: " + path);
  return load(in);
}

MarkerTable MarkerTable::load(std::istream& source) {
  MarkerTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(source, line)) {
    ++lineno;
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::istringstream words{std::string(t)};
    std::string stage, label;
    words >> stage >> label;
    std::string pattern;
    std::getline(words, pattern);
    pattern = std::string(text::trim(pattern));
    if (pattern.empty() || (label != "success" && label != "fail"))
      throw ConfigError("marker line " + std::to_string(lineno) + ": expected '<STAGE> success|fail <regex>'");
    try {
      table.add(parse_stage(stage), label == "success" ? Label::success : Label::fail, pattern);
    } catch (const std::regex_error& e) {
      throw ConfigError("marker line " + std::to_string(lineno) + ": bad regex: " + e.what());
    }
  }
  return table;
}

void MarkerTable::add(Stage stage, Label label, const std::string& pattern) {
  markers_.push_back({stage, label, pattern, std::regex(pattern, std::regex::ECMAScript | std::regex::icase)});
}

MarkerTable::Match MarkerTable::classify(std::string_view transcript, Stage stage) const {
  const auto lines = text::split_lines(transcript);
  const bool blank = std::all_of(lines.begin(), lines.end(), [](const auto& l) { return text::trim(l).empty(); });
  if (blank) return {Label::fail, "empty transcript"};

  auto find = [&](Label label) -> std::optional<std::string> {
    for (const auto& m : markers_) {
      if (m.stage != stage || m.label != label) continue;
      for (const auto& l : lines)
        if (std::regex_search(l, m.re)) return std::string(text::trim(l));
    }
    return std::nullopt;
  };

  if (auto hit = find(Label::fail)) return {Label::fail, *hit};
  if (auto hit = find(Label::success)) return {Label::success, *hit};
  const bool has_success_markers =
      std::any_of(markers_.begin(), markers_.end(), [&](const auto& m) { return m.stage == stage && m.label == Label::success; });
  if (has_success_markers) return {Label::fail, "no success marker"};
  const auto content = content_lines(transcript);
  if (content.empty()) return {Label::fail, "no content"};
  return {Label::success, content.front()};
}

VerbTable VerbTable::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open verb file: " + path);
  return load(in);
}

// <session-kind>: verb verb ...
VerbTable VerbTable::load(std::istream& source) {
  VerbTable table;
  std::string line;
  while (std::getline(source, line)) {
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto colon = t.find(':');
    if (colon == std::string_view::npos) throw ConfigError("verb line without ':': " + std::string(t));
    const auto kind = parse_session_kind(text::trim(t.substr(0, colon)));
    for (auto& v : text::split_ws(t.substr(colon + 1))) table.verbs_[kind].insert(std::move(v));
  }
  return table;
}

const std::set<std::string>& VerbTable::verbs(SessionKind kind) const {
  static const std::set<std::string> none;
  const auto it = verbs_.find(kind);
  return it == verbs_.end() ? none : it->second;
}

std::set<std::string> VerbTable::meterpreter_only() const {
  std::set<std::string> out;
  const auto& shell = verbs(SessionKind::shell);
  for (const auto& v : verbs(SessionKind::meterpreter))
    if (!shell.count(v)) out.insert(v);
  return out;
}

bool VerbTable::allows(SessionKind kind, std::string_view line) const { return verbs(kind).count(first_word(line)) > 0; }

// ---------------------------------------------------------------------------
// Generation

std::string render_findings(const std::vector<ReconFinding>& findings) {
  std::string out;
  for (const auto& f : findings)
    out += f.ip + "|" + std::to_string(f.port) + "|" + f.service + "|" + f.version + "\n";
  return out;
}

CommandPlan generate_recon_command(const CampaignState& state, ModelBackend& backend, const PromptContext& ctx) {
  if (state.target.empty()) throw PreconditionError("campaign target is empty");
  std::string last;
  for (int attempt = 1; attempt <= ctx.retry_limit; ++attempt) {
    std::map<std::string, std::string> slots;
    if (!last.empty()) slots["rejected"] = last;
    const auto prompt = make_prompt(PromptRole::recon, Stage::recon, state, attempt, std::move(slots), ctx);
    const auto completion = ask(backend, prompt, ctx);
    const auto line = extract_tool_line(completion);
    if (line) {
      try {
        const auto inv = make_scan_invocation(*line);
        if (std::find(inv.argv.begin(), inv.argv.end(), state.target) != inv.argv.end()) {
          CommandPlan plan;
          plan.stage = Stage::recon;
          plan.lines = {*line};
          plan.completion = completion;
          plan.attempt = attempt;
          return plan;
        }
        last = *line + " (does not target " + state.target + ")";
        continue;
      } catch (const InjectionRejected& e) {
        last = *line + " (" + e.what() + ")";
        continue;
      }
    }
    last = "no scan command found";
  }
  throw GenerationError("no valid scan command after " + std::to_string(ctx.retry_limit) + " attempts: " + last);
}

CommandPlan select_exploit(const CampaignState& state, const ServiceAliases& aliases, ModelBackend& backend,
                           const PromptContext& ctx, const std::vector<std::string>& rejected, int first_attempt) {
  if (state.recon_findings.empty()) throw PreconditionError("select_exploit requires recon findings");
  std::string problem;
  for (int i = 0; i < ctx.retry_limit; ++i) {
    const int attempt = first_attempt + i;
    std::map<std::string, std::string> slots;
    slots["findings"] = render_findings(state.recon_findings);
    if (!rejected.empty()) slots["rejected"] = text::join(rejected, ", ");
    if (!problem.empty()) slots["problem"] = problem;
    const auto prompt = make_prompt(PromptRole::select_exploit, Stage::exploit, state, attempt, std::move(slots), ctx);
    const auto completion = ask(backend, prompt, ctx);

    CommandPlan plan;
    plan.stage = Stage::exploit;
    plan.completion = completion;
    plan.attempt = attempt;
    for (const auto& raw : text::split_lines(completion)) {
      const auto line = clean_line(raw);
      if (line.empty() || is_fence(line)) continue;
      if (!plan.header) {
        if (auto h = parse_header(line)) {
          plan.header = *h;
          continue;
        }
      }
      if (!is_console_line(line)) continue;
      const auto words = text::split_ws(line);
      if (words[0] == "use") {
        if (plan.candidate_module || words.size() != 2) continue;
        plan.candidate_module = words[1];
      }
      plan.lines.push_back(line);
    }

    if (!plan.header) {
      problem = "missing HEADER line";
      continue;
    }
    if (!plan.candidate_module) {
      problem = "missing 'use <module>' line";
      continue;
    }
    const auto service = aliases.canonicalize(plan.header->service);
    const auto match = std::find_if(state.recon_findings.begin(), state.recon_findings.end(), [&](const ReconFinding& f) {
      return f.ip == plan.header->ip && f.port == plan.header->port && f.service == service;
    });
    if (match == state.recon_findings.end()) {
      problem = "header " + plan.header->ip + ":" + std::to_string(plan.header->port) + " " + plan.header->service +
                " does not match any recon finding";
      continue;
    }
    plan.header->service = service;
    return plan;
  }
  throw GenerationError("no usable exploit selection after " + std::to_string(ctx.retry_limit) + " attempts: " + problem);
}

namespace {

std::string render_schema(const OptionSchema& schema) {
  std::string out;
  for (const auto& o : schema.options) {
    out += o.name + (o.required ? " required" : " optional");
    if (o.default_value) out += " default=" + *o.default_value;
    out += "\n";
  }
  for (const auto& p : schema.payloads) out += "payload " + p.path + " " + p.arch + "\n";
  return out;
}

}  // namespace

NormalizedInvocation setup_module(const CommandPlan& plan, const OptionSchema& schema, const SetupOptions& opts,
                                  const CampaignState& state, ModelBackend& backend, const PromptContext& ctx,
                                  std::string* raw_block) {
  if (!plan.candidate_module) throw PreconditionError("setup_module requires a candidate module");

  std::map<std::string, std::string> slots;
  slots["module"] = *plan.candidate_module;
  slots["schema"] = render_schema(schema);
  slots["block"] = plan.block();
  if (opts.network.wordlist) slots["wordlist"] = *opts.network.wordlist;
  if (opts.network.lhost) slots["lhost"] = *opts.network.lhost;
  if (opts.network.lport) slots["lport"] = std::to_string(*opts.network.lport);
  const auto prompt = make_prompt(PromptRole::setup_module, Stage::exploit, state, plan.attempt, std::move(slots), ctx);
  const auto completion = ask(backend, prompt, ctx);

  // The selection block wins over the drafted setup: only options the block
  // left unset are taken from the setup completion.
  auto drafted = parse_invocation("use " + *plan.candidate_module + "\n" + completion);
  auto selected = parse_invocation(plan.block());
  std::string raw = "use " + *plan.candidate_module + "\n";
  for (const auto& [name, value] : selected.option_assignments) raw += "set " + name + " " + value + "\n";
  for (const auto& [name, value] : drafted.option_assignments)
    if (!selected.option(name)) raw += "set " + name + " " + value + "\n";
  if (auto payload = selected.payload ? selected.payload : drafted.payload) raw += "set PAYLOAD " + *payload + "\n";
  if (raw_block) *raw_block = raw;

  if (!opts.normalize) {
    auto inv = parse_invocation(raw);
    inv.bruteforce = classify_bruteforce(inv.module_path, schema, opts.bruteforce_markers);
    return inv;
  }
  try {
    return normalize_invocation(raw, schema, opts.network, opts.bruteforce_markers);
  } catch (const NormalizationError& e) {
    throw NormalizationError(e.option(), std::string(e.what()) + " (module " + *plan.candidate_module + ")");
  }
}

CommandPlan generate_exfil_command(const CampaignState& state, const VerbTable& verbs, ModelBackend& backend,
                                   const PromptContext& ctx, const std::vector<std::string>& rejected, int first_attempt) {
  const auto* session = state.active_session();
  if (!session) throw PreconditionError("generate_exfil_command requires an alive session");
  const auto& allowed = verbs.verbs(session->kind);
  std::string problem;
  for (int i = 0; i < ctx.retry_limit; ++i) {
    const int attempt = first_attempt + i;
    std::map<std::string, std::string> slots;
    slots["session_kind"] = std::string(to_string(session->kind));
    slots["verbs"] = text::join(std::vector<std::string>(allowed.begin(), allowed.end()), " ");
    if (!rejected.empty()) slots["rejected"] = text::join(rejected, ", ");
    if (!problem.empty()) slots["problem"] = problem;
    const auto prompt = make_prompt(PromptRole::exfiltrate, Stage::exfiltrate, state, attempt, std::move(slots), ctx);
    const auto completion = ask(backend, prompt, ctx);

    std::optional<std::string> command;
    for (const auto& raw : text::split_lines(completion)) {
      const auto line = clean_line(raw);
      if (line.empty() || is_fence(line)) continue;
      if (allowed.count(first_word(line))) {
        command = line;
        break;
      }
    }
    if (!command) {
      problem = "no " + std::string(to_string(session->kind)) + " command found";
      continue;
    }
    CommandPlan plan;
    plan.stage = Stage::exfiltrate;
    plan.lines = {*command};
    plan.completion = completion;
    plan.attempt = attempt;
    return plan;
  }
  throw GenerationError("no usable exfiltration command after " + std::to_string(ctx.retry_limit) + " attempts: " + problem);
}

// ---------------------------------------------------------------------------
// Translation

std::string tail_trim(std::string_view raw, std::size_t cap) {
  if (cap < 1) throw PreconditionError("tail cap must be >= 1");
  const auto lines = text::split_lines(raw);
  if (lines.size() <= cap) return std::string(raw);
  std::string out(kElisionMarker);
  out += "\n";
  for (std::size_t i = lines.size() - cap; i < lines.size(); ++i) out += lines[i] + "\n";
  return out;
}

std::vector<std::string> content_lines(std::string_view transcript) {
  std::vector<std::string> out;
  for (const auto& l : text::split_lines(transcript)) {
    const auto t = text::trim(l);
    if (t.empty() || t == kElisionMarker) continue;
    if (t.starts_with("[*]") || t.starts_with("[+]") || t.starts_with("[-]") || t.starts_with("[!]")) continue;
    out.emplace_back(t);
  }
  return out;
}

namespace {

std::string next_hint(Stage stage, Label label) {
  switch (stage) {
    case Stage::recon:
      return label == Label::success ? "select an exploit for a discovered service" : "rescan the target";
    case Stage::exploit:
      return label == Label::success ? "use the new session to locate the flag" : "try a different module";
    case Stage::exfiltrate:
      return label == Label::success ? "read the located file" : "widen the search scope";
    default:
      return {};
  }
}

std::string clip(std::string s, std::size_t cap) {
  if (s.size() <= cap) return s;
  if (cap <= 3) return s.substr(0, cap);
  s.resize(cap - 3);
  // Do not leave a dangling partial UTF-8 sequence.
  while (!s.empty() && (static_cast<unsigned char>(s.back()) & 0xC0) == 0x80) s.pop_back();
  if (!s.empty() && static_cast<unsigned char>(s.back()) >= 0xC0) s.pop_back();
  return s + "...";
}

}  // namespace

ExecResult translate_output(std::string_view raw, Stage stage, const MarkerTable& markers, std::string_view command,
                            ModelBackend* summarizer, std::size_t summary_cap, std::size_t tail_cap) {
  ExecResult r;
  r.raw_tail = tail_trim(raw, tail_cap);
  const auto match = markers.classify(r.raw_tail, stage);
  r.label = match.label;
  r.next_hint = next_hint(stage, r.label);

  if (summarizer) {
    Prompt p;
    p.role = PromptRole::summarize;
    p.stage = stage;
    p.slots = {{"label", std::string(to_string(r.label))}, {"command", std::string(command)}, {"output", r.raw_tail}};
    p.text = "Summarize the key findings.\n" + r.raw_tail;
    try {
      r.summary = clip(std::string(text::trim(summarizer->complete(p))), summary_cap);
    } catch (const TransportError&) {
      r.summary.clear();
    }
  }
  if (r.summary.empty()) {
    std::string s = std::string(to_string(r.label)) + ": " + std::string(command);
    s += " -> " + match.line;
    r.summary = clip(std::move(s), summary_cap);
  }
  return r;
}

}  // namespace redloop
