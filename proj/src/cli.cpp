#include "redloop/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "redloop/report.hpp"

namespace redloop {

namespace {

namespace fs = std::filesystem;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> repeat;
  std::string scenario;
  std::string kb;
  std::string backend;
  std::string playbook;
  std::string profile;
  std::string memory;
  std::string target;
  std::string adapter;
  bool live_ack = false;
  bool no_rectifier = false;
  std::optional<double> inject_rate;
  std::optional<double> threshold;
  std::optional<int> max_iters;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key = value config file");
  cmd->add_option("--seed", f.seed, "base seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--repeat", f.repeat, "number of campaigns");
  cmd->add_option("--scenario", f.scenario, "scenario JSON");
  cmd->add_option("--kb", f.kb, "knowledge base file");
  cmd->add_option("--backend", f.backend, "scripted | rules | http");
}

void add_campaign(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--playbook", f.playbook, "playbook for the scripted backend");
  cmd->add_option("--profile", f.profile, "profile for the rules backend");
  cmd->add_option("--memory", f.memory, "cmm | cbm | none");
  cmd->add_option("--target", f.target, "target host (defaults to the scenario host)");
  cmd->add_option("--adapter", f.adapter, "sim | live");
  cmd->add_flag("--i-understand-live-targets", f.live_ack, "acknowledge that the live adapter attacks real hosts");
  cmd->add_flag("--no-rectifier", f.no_rectifier, "disable path rectification and option injection");
  cmd->add_option("--inject-rate", f.inject_rate, "hallucination injection rate");
  cmd->add_option("--threshold", f.threshold, "rectifier similarity floor");
  cmd->add_option("--max-iters", f.max_iters, "iteration budget per stage");
}

RunConfig build_config(const CommonFlags& f, RunConfig base = default_run_config()) {
  RunConfig cfg = f.config.empty() ? std::move(base) : load_run_config_file(f.config, std::move(base));
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (f.repeat) cfg.repeat = *f.repeat;
  if (!f.scenario.empty()) cfg.scenario = f.scenario;
  if (!f.kb.empty()) cfg.kb = f.kb;
  if (!f.backend.empty()) cfg.backend = f.backend;
  if (!f.playbook.empty()) cfg.playbook = f.playbook;
  if (!f.profile.empty()) cfg.profile = f.profile;
  if (!f.memory.empty()) cfg.campaign.memory = parse_memory_strategy(f.memory);
  if (!f.target.empty()) cfg.campaign.target = f.target;
  if (!f.adapter.empty()) cfg.adapter = f.adapter;
  if (f.live_ack) cfg.live_acknowledged = true;
  if (f.no_rectifier) cfg.campaign.rectifier_enabled = false;
  if (f.inject_rate) cfg.inject_rate = *f.inject_rate;
  if (f.threshold) cfg.campaign.threshold = *f.threshold;
  if (f.max_iters) cfg.campaign.max_iters_per_stage = *f.max_iters;
  return cfg;
}

void require_file(const std::string& what, const std::string& path) {
  if (path.empty()) throw ConfigError("no " + what + " given");
  if (!fs::exists(data_path(path))) throw ConfigError(what + " not found: " + path);
}

std::string run_dir_name(int i) {
  std::ostringstream os;
  os << "run_" << std::setw(3) << std::setfill('0') << i + 1;
  return os.str();
}

int cmd_run(const CommonFlags& f, std::ostream& out) {
  auto cfg = build_config(f);
  if (cfg.out_dir.empty()) cfg.out_dir = "redloop-out";
  cfg.validate();
  require_file("scenario", cfg.scenario);
  if (cfg.backend == "scripted") require_file("playbook", cfg.playbook);
  if (cfg.backend == "rules") require_file("profile", cfg.profile);
  const auto res = Resources::load(cfg);

  std::vector<CampaignReport> reports;
  for (int i = 0; i < cfg.repeat; ++i) {
    const auto dir = fs::path(cfg.out_dir) / run_dir_name(i);
    fs::create_directories(dir);
    reports.push_back(run_single(cfg, res, i, dir.string()));
    const auto& r = reports.back();
    text::write_file((dir / "report.json").string(), r.to_json() + "\n");
    out << run_dir_name(i) << ": success=" << (r.success ? "true" : "false");
    for (const auto& [stage, n] : r.stages) out << ' ' << to_string(stage) << '=' << n;
    if (!r.success) out << " reason=\"" << r.failure_reason << '"';
    out << '\n';
  }
  const auto label = fs::path(cfg.scenario).stem().string();
  text::write_file((fs::path(cfg.out_dir) / "aggregate.json").string(), aggregate_json(label, reports));
  text::write_file((fs::path(cfg.out_dir) / "aggregate.csv").string(), aggregate_csv(reports));
  std::size_t ok = 0;
  for (const auto& r : reports) ok += r.success ? 1 : 0;
  out << "successes " << ok << "/" << reports.size() << '\n';
  return 0;
}

struct RectifierFlags {
  std::string corpus;
  std::optional<std::size_t> generate;
};

int cmd_eval_rectifier(const CommonFlags& f, const RectifierFlags& rf, std::ostream& out) {
  auto cfg = build_config(f);
  if (cfg.out_dir.empty()) cfg.out_dir = "redloop-out";
  const auto kb = load_database_file(data_path(cfg.kb));
  if (kb.empty()) throw ConfigError("knowledge base is empty: " + cfg.kb);

  std::vector<CorpusEntry> corpus;
  if (rf.generate) {
    if (!rf.corpus.empty()) throw ConfigError("--corpus and --generate are mutually exclusive");
    for (auto& c : generate_corpus(kb, *rf.generate, cfg.seed)) corpus.push_back(std::move(c.entry));
  } else {
    require_file("corpus", rf.corpus);
    std::ifstream in(data_path(rf.corpus));
    corpus = load_corpus(in);
  }
  const double threshold = cfg.campaign.threshold;
  const auto eval = evaluate_methods(corpus, kb, threshold);

  fs::create_directories(cfg.out_dir);
  if (rf.generate) text::write_file((fs::path(cfg.out_dir) / "corpus.tsv").string(), serialize_corpus(corpus));
  text::write_file((fs::path(cfg.out_dir) / "rectifier_eval.json").string(), rectifier_eval_json(eval, threshold));
  std::ostringstream csv;
  csv << "method,total,successes,no_match,success_rate\n";
  for (const auto& m : eval.methods)
    csv << to_string(m.method) << ',' << m.total << ',' << m.successes << ',' << m.no_match << ','
        << std::fixed << std::setprecision(4) << m.rate() << '\n';
  text::write_file((fs::path(cfg.out_dir) / "rectifier_eval.csv").string(), csv.str());

  out << eval.text_report();
  const double h = eval.score(RectifyMethod::hybrid).rate();
  out << "ordering hybrid>=fuzzy_full: " << (h >= eval.score(RectifyMethod::fuzzy_full).rate() ? "yes" : "no") << '\n';
  out << "ordering hybrid>=last_exact: " << (h >= eval.score(RectifyMethod::last_exact).rate() ? "yes" : "no") << '\n';
  return 0;
}

int cmd_eval_memory(const CommonFlags& f, const std::string& strategies_arg, std::ostream& out) {
  RunConfig base = default_run_config();
  base.backend = "rules";
  base.profile = "profiles/duplicate_prone.json";
  base.repeat = 5;
  auto cfg = build_config(f, base);
  if (cfg.out_dir.empty()) cfg.out_dir = "redloop-out";

  std::vector<MemoryStrategy> strategies;
  for (const auto& part : text::split(strategies_arg, ','))
    if (!text::trim(part).empty()) strategies.push_back(parse_memory_strategy(text::trim(part)));
  if (strategies.empty()) throw ConfigError("no memory strategies given");
  cfg.validate();
  require_file("scenario", cfg.scenario);
  const auto res = Resources::load(cfg);

  const auto results = evaluate_memory(cfg, res, strategies);
  fs::create_directories(cfg.out_dir);
  text::write_file((fs::path(cfg.out_dir) / "memory_eval.json").string(), memory_eval_json(results));
  text::write_file((fs::path(cfg.out_dir) / "memory_eval.csv").string(), memory_eval_csv(results));
  out << memory_eval_csv(results);
  return 0;
}

int cmd_kb_import(const std::string& source, const std::string& dest, std::ostream& out, std::ostream& err) {
  const auto raw = text::read_file(source);
  // List every duplicate before the loader stops at the first one.
  std::map<std::string, std::vector<std::size_t>> seen;
  std::size_t n = 0;
  for (const auto& line : text::split_lines(raw)) {
    ++n;
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto fields = text::split(t, '|');
    if (fields.size() >= 4) seen[std::string(text::trim(fields[3]))].push_back(n);
  }
  std::string dups;
  for (const auto& [path, lines] : seen) {
    if (lines.size() < 2) continue;
    dups += "\n  " + path + " (lines";
    for (auto l : lines) dups += " " + std::to_string(l);
    dups += ")";
  }
  if (!dups.empty()) throw KbLoadError(0, "duplicate module paths:" + dups);

  std::istringstream in(raw);
  const auto db = load_database(in);
  if (db.empty()) err << "warning: " << source << " holds no records; writing an empty knowledge base\n";
  text::write_file(dest, serialize(db));
  std::map<ModuleType, std::size_t> by_type;
  for (const auto& r : db.records()) ++by_type[r.module_type];
  out << "imported " << db.size() << " records";
  for (const auto& [type, count] : by_type) out << ", " << to_string(type) << "=" << count;
  out << '\n';
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"redloop: staged attack-campaign orchestration against simulated targets"};
  app.require_subcommand(1);

  CommonFlags run_flags, rect_flags, mem_flags;
  auto* run = app.add_subcommand("run", "run campaigns and write per-run and aggregate reports");
  add_common(run, run_flags);
  add_campaign(run, run_flags);

  RectifierFlags rf;
  auto* er = app.add_subcommand("eval-rectifier", "compare rectification methods over a corpus");
  add_common(er, rect_flags);
  er->add_option("--corpus", rf.corpus, "hallucinated<TAB>intended corpus");
  er->add_option("--generate", rf.generate, "generate a seeded corpus of N cases instead");
  er->add_option("--threshold", rect_flags.threshold, "similarity floor");

  std::string strategies = "cmm,cbm";
  auto* em = app.add_subcommand("eval-memory", "compare memory strategies over repeated campaigns");
  add_common(em, mem_flags);
  add_campaign(em, mem_flags);
  em->add_option("--strategies", strategies, "comma separated: cmm, cbm, none");

  std::string source, dest;
  auto* ki = app.add_subcommand("kb-import", "validate a knowledge base file and write it out");
  ki->add_option("source", source, "KB file to read")->required();
  ki->add_option("dest", dest, "where to write the validated KB")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*run) return cmd_run(run_flags, out);
    if (*er) return cmd_eval_rectifier(rect_flags, rf, out);
    if (*em) return cmd_eval_memory(mem_flags, strategies, out);
    if (*ki) return cmd_kb_import(source, dest, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace redloop
