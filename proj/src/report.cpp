#include "redloop/report.hpp"

#include "redloop/http_backend.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

namespace redloop {

using ordered_json = nlohmann::ordered_json;

namespace {

bool parse_bool(std::string_view key, std::string_view v) {
  const auto s = text::lower(v);
  if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "off" || s == "no") return false;
  throw ConfigError(std::string(key) + ": expected a boolean, got '" + std::string(v) + "'");
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || v.empty())
    throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    const std::string s(v);
    const double d = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  }
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

}  // namespace

RunConfig default_run_config() { return RunConfig{}; }

void RunConfig::validate() const {
  // The target may still come from the scenario.
  CampaignConfig c = campaign;
  if (c.target.empty()) c.target = "scenario";
  c.validate();
  if (repeat < 1) throw ConfigError("repeat must be at least 1");
  if (inject_rate < 0.0 || inject_rate > 1.0) throw ConfigError("inject_rate must be within [0,1]");
  if (backend != "scripted" && backend != "rules" && backend != "http")
    throw ConfigError("unknown backend '" + backend + "' (expected scripted, rules or http)");
  if (backend == "scripted" && playbook.empty()) throw ConfigError("the scripted backend needs a playbook");
  if (adapter != "sim" && adapter != "live") throw ConfigError("unknown adapter '" + adapter + "'");
  if (adapter == "live") {
    if (!live_acknowledged) throw ConfigError("the live adapter needs --i-understand-live-targets");
    throw ConfigError("the live adapter is not available in this build");
  }
  if (scenario.empty()) throw ConfigError("no scenario given");
  if (!out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    const auto probe = std::filesystem::path(out_dir) / ".write_probe";
    std::ofstream f(probe);
    if (ec || !f) throw ConfigError("output directory " + out_dir + " is not writable");
    f.close();
    std::filesystem::remove(probe, ec);
  }
}

void apply_config_line(RunConfig& cfg, std::string_view key, std::string_view value) {
  auto& c = cfg.campaign;
  const std::string v(value);
  if (key == "target") c.target = v;
  else if (key == "scenario") cfg.scenario = v;
  else if (key == "kb") cfg.kb = v;
  else if (key == "schemas") cfg.schemas = v;
  else if (key == "aliases") cfg.aliases = v;
  else if (key == "markers") cfg.markers = v;
  else if (key == "verbs") cfg.verbs = v;
  else if (key == "noise") cfg.noise = v;
  else if (key == "templates") cfg.templates = v;
  else if (key == "backend") cfg.backend = v;
  else if (key == "playbook") cfg.playbook = v;
  else if (key == "profile") cfg.profile = v;
  else if (key == "adapter") cfg.adapter = v;
  else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "repeat") cfg.repeat = parse_number<int>(key, value);
  else if (key == "out") cfg.out_dir = v;
  else if (key == "inject_rate") cfg.inject_rate = parse_real(key, value);
  else if (key == "inject_kinds") {
    cfg.inject_kinds.clear();
    for (const auto& part : text::split(value, ','))
      if (!text::trim(part).empty()) cfg.inject_kinds.push_back(parse_perturbation(text::trim(part)));
    if (cfg.inject_kinds.empty()) throw ConfigError("inject_kinds: empty list");
  }
  else if (key == "memory") c.memory = parse_memory_strategy(value);
  else if (key == "rectifier") c.rectifier_enabled = parse_bool(key, value);
  else if (key == "rectify_method") c.rectify_method = parse_rectify_method(value);
  else if (key == "threshold") c.threshold = parse_real(key, value);
  else if (key == "max_iters_per_stage") c.max_iters_per_stage = parse_number<int>(key, value);
  else if (key == "exec_window_default") c.exec_window_default = parse_real(key, value);
  else if (key == "exec_window_bruteforce") c.exec_window_bruteforce = parse_real(key, value);
  else if (key == "duplicate_retry_limit") c.duplicate_retry_limit = parse_number<int>(key, value);
  else if (key == "generation_retry_limit") c.generation_retry_limit = parse_number<int>(key, value);
  else if (key == "scan_timeout") c.scan_timeout = parse_real(key, value);
  else if (key == "lhost") c.lhost = v;
  else if (key == "lport") c.lport = parse_number<int>(key, value);
  else if (key == "wordlist") c.wordlist = v;
  else if (key == "flag_name") c.flag_name = v;
  else if (key == "tail_cap") c.tail_cap = parse_number<std::size_t>(key, value);
  else if (key == "summary_cap") c.summary_cap = parse_number<std::size_t>(key, value);
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

RunConfig load_run_config(std::istream& source, RunConfig base) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(source, line)) {
    ++n;
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    try {
      apply_config_line(base, text::trim(t.substr(0, eq)), text::trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(n) + ": " + e.what());
    } catch (const Error& e) {
      throw ConfigError("config line " + std::to_string(n) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_run_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return load_run_config(in, std::move(base));
}

Resources Resources::load(const RunConfig& cfg) {
  Resources r;
  r.kb = load_database_file(data_path(cfg.kb));
  r.schemas = SchemaTable::load_file(data_path(cfg.schemas));
  r.aliases = ServiceAliases::load_file(data_path(cfg.aliases));
  r.markers = MarkerTable::load_file(data_path(cfg.markers));
  r.verbs = VerbTable::load_file(data_path(cfg.verbs));
  r.templates = PromptTemplates::load_dir(data_path(cfg.templates));
  r.noise = NoiseFilter::load_file(data_path(cfg.noise));
  return r;
}

std::uint64_t run_seed(std::uint64_t base, int run_index) {
  // splitmix64 step so neighbouring runs do not share low bits
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(run_index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

CampaignReport run_single(const RunConfig& cfg, const Resources& res, int run_index, const std::string& out_dir,
                          std::function<void(const Prompt&)> on_prompt, std::vector<std::string>* dispatch_log) {
  const auto seed = run_seed(cfg.seed, run_index);
  auto scenario = load_scenario_file(data_path(cfg.scenario), &res.kb);

  SimClock clock;
  SimulatedTarget target(scenario, res.schemas, clock);

  std::unique_ptr<ModelBackend> base;
  if (cfg.backend == "scripted") {
    base = std::make_unique<ScriptedBackend>(ScriptedBackend::load_file(data_path(cfg.playbook)));
  } else if (cfg.backend == "rules") {
    base = std::make_unique<PolicyBackend>(PolicyBackend::load_profile_file(data_path(cfg.profile)), seed);
  } else if (cfg.backend == "http") {
    base = std::make_unique<HttpBackend>(HttpBackendConfig::from_env());
  } else {
    throw ConfigError("unknown backend '" + cfg.backend + "'");
  }
  std::unique_ptr<HallucinationInjector> injector;
  ModelBackend* backend = base.get();
  if (cfg.inject_rate > 0.0) {
    injector = std::make_unique<HallucinationInjector>(*base, res.kb, cfg.inject_rate, seed ^ 0x5bd1e995ULL,
                                                       cfg.inject_kinds);
    backend = injector.get();
  }

  CampaignConfig cc = cfg.campaign;
  if (cc.target.empty()) cc.target = scenario.host;
  if (cc.wordlist.empty()) cc.wordlist = data_path("wordlists/common.txt");
  cc.output_dir = out_dir;

  CampaignDeps deps{res.kb,     res.schemas, res.aliases, *backend,       target, target, clock,
                    res.markers, res.verbs,  &res.templates, &res.noise, std::move(on_prompt)};
  auto report = run_campaign(cc, deps);
  if (dispatch_log) *dispatch_log = target.dispatch_log();
  return report;
}

std::size_t count_failed_repeats(const CampaignReport& report) {
  std::map<std::pair<Stage, std::string>, Label> latest;
  std::size_t n = 0;
  for (const auto& rec : report.iterations) {
    if (rec.stage != Stage::exploit && rec.stage != Stage::exfiltrate) continue;
    if (rec.command.empty()) continue;
    const auto key = std::make_pair(rec.stage, rec.command);
    const auto it = latest.find(key);
    if (rec.dispatched && it != latest.end() && it->second == Label::fail) ++n;
    latest[key] = rec.label;
  }
  return n;
}

std::string aggregate_json(const std::string& label, const std::vector<CampaignReport>& reports) {
  // Everything here is recomputed from the per-run reports.
  std::size_t successes = 0;
  std::map<Stage, std::vector<double>> iters;
  std::vector<double> dup, wall, total;
  for (const auto& r : reports) {
    if (r.success) ++successes;
    for (auto s : {Stage::recon, Stage::exploit, Stage::exfiltrate}) {
      const auto it = r.stages.find(s);
      iters[s].push_back(it == r.stages.end() ? 0.0 : it->second);
    }
    dup.push_back(r.duplication_rate);
    wall.push_back(r.wall_seconds);
    total.push_back(r.total_iterations);
  }
  ordered_json doc;
  doc["label"] = label;
  doc["runs"] = reports.size();
  doc["successes"] = successes;
  doc["success_rate"] = reports.empty() ? 0.0 : static_cast<double>(successes) / static_cast<double>(reports.size());
  ordered_json means = ordered_json::object();
  for (auto s : {Stage::recon, Stage::exploit, Stage::exfiltrate}) means[std::string(to_string(s))] = mean_of(iters[s]);
  doc["mean_stage_iterations"] = means;
  doc["mean_total_iterations"] = mean_of(total);
  doc["mean_duplication_rate"] = mean_of(dup);
  doc["mean_wall_seconds"] = mean_of(wall);
  auto per = ordered_json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    ordered_json r;
    r["run"] = i + 1;
    r["success"] = reports[i].success;
    r["total_iterations"] = reports[i].total_iterations;
    r["flag_sha256"] = reports[i].flag_sha256 ? ordered_json(*reports[i].flag_sha256) : ordered_json(nullptr);
    per.push_back(std::move(r));
  }
  doc["per_run"] = per;
  return doc.dump(2) + "\n";
}

std::string aggregate_csv(const std::vector<CampaignReport>& reports) {
  std::ostringstream os;
  os << "run,success,recon_iters,exploit_iters,exfiltrate_iters,total_iters,duplication_rate,wall_seconds\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    auto stage = [&](Stage s) {
      const auto it = r.stages.find(s);
      return it == r.stages.end() ? 0 : it->second;
    };
    os << i + 1 << ',' << (r.success ? 1 : 0) << ',' << stage(Stage::recon) << ',' << stage(Stage::exploit) << ','
       << stage(Stage::exfiltrate) << ',' << r.total_iterations << ',' << fixed(r.duplication_rate) << ','
       << fixed(r.wall_seconds, 1) << '\n';
  }
  return os.str();
}

double StrategyResult::success_rate() const {
  if (runs.empty()) return 0.0;
  std::size_t n = 0;
  for (const auto& r : runs) n += r.success ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(runs.size());
}

double StrategyResult::duplication_rate() const {
  std::vector<double> xs;
  for (const auto& r : runs) xs.push_back(r.duplication_rate);
  return mean_of(xs);
}

std::vector<StrategyResult> evaluate_memory(const RunConfig& cfg, const Resources& res,
                                            const std::vector<MemoryStrategy>& strategies) {
  if (cfg.repeat < 1) throw ConfigError("repeat must be at least 1");
  std::vector<StrategyResult> out;
  for (auto strategy : strategies) {
    StrategyResult sr;
    sr.strategy = strategy;
    RunConfig rc = cfg;
    rc.campaign.memory = strategy;
    for (int i = 0; i < cfg.repeat; ++i) {
      sr.runs.push_back(run_single(rc, res, i));
      sr.failed_repeats += count_failed_repeats(sr.runs.back());
    }
    out.push_back(std::move(sr));
  }
  return out;
}

std::string memory_eval_json(const std::vector<StrategyResult>& results) {
  auto arr = ordered_json::array();
  for (const auto& sr : results) {
    ordered_json s;
    s["strategy"] = std::string(to_string(sr.strategy));
    s["runs"] = sr.runs.size();
    s["success_rate"] = sr.success_rate();
    s["duplication_rate"] = sr.duplication_rate();
    s["failed_repeats"] = sr.failed_repeats;
    auto cases = ordered_json::array();
    for (std::size_t i = 0; i < sr.runs.size(); ++i) {
      ordered_json c;
      c["run"] = i + 1;
      c["success"] = sr.runs[i].success;
      c["duplication_rate"] = sr.runs[i].duplication_rate;
      c["total_iterations"] = sr.runs[i].total_iterations;
      cases.push_back(std::move(c));
    }
    s["cases"] = cases;
    arr.push_back(std::move(s));
  }
  ordered_json doc;
  doc["strategies"] = arr;
  return doc.dump(2) + "\n";
}

std::string memory_eval_csv(const std::vector<StrategyResult>& results) {
  std::ostringstream os;
  os << "strategy,runs,success_rate,duplication_rate,failed_repeats\n";
  for (const auto& sr : results)
    os << to_string(sr.strategy) << ',' << sr.runs.size() << ',' << fixed(sr.success_rate()) << ','
       << fixed(sr.duplication_rate()) << ',' << sr.failed_repeats << '\n';
  return os.str();
}

std::string rectifier_eval_json(const MethodEvaluation& eval, double threshold) {
  ordered_json doc;
  doc["threshold"] = threshold;
  auto methods = ordered_json::array();
  for (const auto& m : eval.methods) {
    ordered_json j;
    j["method"] = std::string(to_string(m.method));
    j["total"] = m.total;
    j["successes"] = m.successes;
    j["no_match"] = m.no_match;
    j["success_rate"] = m.rate();
    auto cases = ordered_json::array();
    for (const auto& c : m.cases) {
      ordered_json cj;
      cj["hallucinated"] = c.hallucinated;
      cj["intended"] = c.intended;
      cj["matched"] = c.matched ? ordered_json(*c.matched) : ordered_json(nullptr);
      cj["outcome"] = std::string(to_string(c.outcome));
      cj["success"] = c.success;
      cases.push_back(std::move(cj));
    }
    j["cases"] = cases;
    methods.push_back(std::move(j));
  }
  doc["methods"] = methods;
  const double h = eval.score(RectifyMethod::hybrid).rate();
  ordered_json ordering;
  ordering["hybrid_ge_fuzzy_full"] = h >= eval.score(RectifyMethod::fuzzy_full).rate();
  ordering["hybrid_ge_last_exact"] = h >= eval.score(RectifyMethod::last_exact).rate();
  doc["ordering"] = ordering;
  return doc.dump(2) + "\n";
}

}  // namespace redloop
