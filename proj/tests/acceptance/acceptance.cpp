// Runs the ten acceptance criteria and prints one PASS/FAIL line each.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "campaign_checks.hpp"
#include "oracles.hpp"
#include "redloop/report.hpp"
#include "test_util.hpp"

using namespace redloop;

namespace {

using Wall = std::chrono::steady_clock;

double seconds_since(Wall::time_point t0) { return std::chrono::duration<double>(Wall::now() - t0).count(); }

// Failure detail for the current criterion.
struct Verdict {
  bool ok = true;
  std::string why;
  std::string note;  // printed on PASS
  void fail(const std::string& msg) {
    if (ok) why = msg;
    ok = false;
  }
};

const Resources& res() {
  static const auto r = Resources::load(default_run_config());
  return r;
}

// Strings over ASCII letters, digits, punctuation and a few multibyte characters.
std::string mixed_string(std::mt19937_64& rng, std::size_t max_len) {
  static const std::vector<std::string> alpha = {"a", "b", "c", "x", "Z", "0", "7", "_", "/", "-", ".",
                                                 "é", "ß", "€", "ж", "中"};
  const auto n = rng() % (max_len + 1);
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += alpha[rng() % alpha.size()];
  return s;
}

Verdict c1_levenshtein() {
  Verdict v;
  std::mt19937_64 rng(101);
  const auto t0 = Wall::now();
  for (int i = 0; i < 1000; ++i) {
    const auto a = mixed_string(rng, 16), b = mixed_string(rng, 16);
    const auto got = levenshtein(a, b), want = oracle::edit_distance(a, b);
    if (got != want) v.fail("levenshtein(" + a + ", " + b + ") = " + std::to_string(got) + ", want " + std::to_string(want));
  }
  if (levenshtein("openssh_user_enum", "ssh_enumusers") != 13) v.fail("openssh_user_enum vs ssh_enumusers is not 13");
  const auto dt = seconds_since(t0);
  if (dt > 5.0) v.fail("took " + std::to_string(dt) + " s");
  return v;
}

Verdict c2_similarity() {
  Verdict v;
  std::mt19937_64 rng(202);
  if (similarity("", "") != 1.0) v.fail("similarity of two empty strings is not 1");
  if (std::abs(similarity("openssh_user_enum", "ssh_enumusers") - 4.0 / 17.0) > 1e-12) v.fail("4/17 example");
  for (int i = 0; i < 1000; ++i) {
    const auto a = mixed_string(rng, 16), b = mixed_string(rng, 16);
    const auto la = oracle::decode(a).size(), lb = oracle::decode(b).size();
    const double want = la + lb == 0 ? 1.0
                                     : 1.0 - static_cast<double>(oracle::edit_distance(a, b)) /
                                                 static_cast<double>(std::max(la, lb));
    if (std::abs(similarity(a, b) - want) > 1e-12) v.fail("similarity(" + a + ", " + b + ")");
  }
  return v;
}

Verdict c3_closure() {
  Verdict v;
  const auto& kb = res().kb;
  std::mt19937_64 rng(303);
  std::vector<std::string> inputs;
  for (const auto& c : generate_corpus(kb, 2500, 31)) inputs.push_back(c.entry.hallucinated);
  while (inputs.size() < 5000) {
    auto seg = mixed_string(rng, 14);
    std::erase(seg, '/');
    if (seg.empty()) seg = "m";
    const char* types[] = {"exploit/", "auxiliary/", "post/", "exploit/unix/"};
    inputs.push_back(types[rng() % 4] + seg);
  }
  for (const auto& in : inputs) {
    for (auto method : {RectifyMethod::hybrid, RectifyMethod::fuzzy_full, RectifyMethod::last_exact}) {
      Rectification r;
      try {
        r = rectify(method, in, kb);
      } catch (const std::exception& e) {
        v.fail(std::string(to_string(method)) + " threw on " + in + ": " + e.what());
        continue;
      }
      if (r.outcome == RectifyOutcome::no_match) {
        if (r.matched_path) v.fail("no_match with a path for " + in);
      } else if (!r.matched_path || !kb.contains(*r.matched_path)) {
        v.fail(std::string(to_string(method)) + " returned a path outside the KB for " + in);
      }
    }
  }
  return v;
}

std::string c4_eval_json(MethodEvaluation* out = nullptr) {
  std::vector<CorpusEntry> corpus;
  for (auto& c : generate_corpus(res().kb, 500, 4242)) corpus.push_back(c.entry);
  auto eval = evaluate_methods(corpus, res().kb);
  auto json = rectifier_eval_json(eval, kDefaultThreshold);
  if (out) *out = std::move(eval);
  return json;
}

Verdict c4_methods() {
  Verdict v;
  const auto t0 = Wall::now();
  MethodEvaluation eval;
  c4_eval_json(&eval);
  const double h = eval.score(RectifyMethod::hybrid).rate(), f = eval.score(RectifyMethod::fuzzy_full).rate(),
               l = eval.score(RectifyMethod::last_exact).rate();
  std::ostringstream rates;
  rates << "hybrid=" << h << " fuzzy_full=" << f << " last_exact=" << l;
  if (!(h >= f)) v.fail("hybrid < fuzzy_full: " + rates.str());
  if (!(h > l)) v.fail("hybrid <= last_exact: " + rates.str());

  std::size_t suffix = 0, ok = 0;
  for (const auto& c : generate_corpus(res().kb, 500, 4242)) {
    if (c.kind != Perturbation::suffix_edit) continue;
    ++suffix;
    const auto r = rectify_hybrid(c.entry.hallucinated, res().kb);
    ok += r.matched_path && *r.matched_path == c.entry.intended;
  }
  if (suffix == 0 || static_cast<double>(ok) / static_cast<double>(suffix) < 0.9)
    v.fail("hybrid on suffix edits " + std::to_string(ok) + "/" + std::to_string(suffix));
  const auto dt = seconds_since(t0);
  if (dt > 30.0) v.fail("took " + std::to_string(dt) + " s");
  return v;
}

Verdict c5_golden() {
  Verdict v;
  auto cfg = default_run_config();
  cfg.scenario = "scenarios/apache.json";
  cfg.playbook = "playbooks/apache_faithful.json";
  std::vector<std::string> log;
  const auto r = run_single(cfg, res(), 0, {}, {}, &log);
  if (!r.success) v.fail("campaign failed: " + r.failure_reason);
  if (render_memory_file(r.memory) != text::read_file(testutil::test_file("golden/apache_memory.json")))
    v.fail("memory file differs from the golden file");
  if (render_stage_log(r.memory, Stage::exploit) != text::read_file(testutil::test_file("golden/apache_exploit_log.json")))
    v.fail("EXPLOIT log differs");
  if (render_stage_log(r.memory, Stage::exfiltrate) !=
      text::read_file(testutil::test_file("golden/apache_exfiltrate_log.json")))
    v.fail("EXFILTRATE log differs");
  const IterationRecord* first = nullptr;
  for (const auto& rec : r.iterations)
    if (rec.stage == Stage::exploit && rec.dispatched) {
      first = &rec;
      break;
    }
  if (!first || std::find(first->injected_options.begin(), first->injected_options.end(), "RPORT") ==
                    first->injected_options.end())
    v.fail("RPORT was not injected into the first invocation");
  else {
    // The executor saw the injected value before the first exploit ran.
    const auto use = std::find(log.begin(), log.end(), "console:use " + first->command);
    const auto run = std::find(use, log.end(), "console:exploit");
    if (std::find(use, run, "console:set RPORT 80") == run) v.fail("the first invocation did not set RPORT 80");
  }
  const auto scenario = load_scenario_file(data_path(cfg.scenario), &res().kb);
  if (r.flag_contents != scenario.flag_contents) v.fail("flag contents do not match the scenario");
  if (r.flag_sha256 != text::sha256_hex(scenario.flag_contents)) v.fail("flag hash does not match");
  return v;
}

const std::vector<std::string> kScenarios = {"vsftpd", "openssh", "telnet", "apache", "unrealircd", "postgresql", "samba"};

struct AblationConfig {
  std::string name;
  bool rectifier;
  MemoryStrategy memory;
};

const std::vector<AblationConfig> kAblation = {{"full", true, MemoryStrategy::cmm},
                                               {"no_rectifier", false, MemoryStrategy::cmm},
                                               {"no_memory", true, MemoryStrategy::none},
                                               {"neither", false, MemoryStrategy::none}};

struct Ablation {
  std::map<std::string, double> rate;
  std::string json;  // all aggregates, concatenated
  std::vector<CampaignReport> reports;
};

Ablation run_ablation() {
  Ablation a;
  for (const auto& ac : kAblation) {
    std::size_t ok = 0, n = 0;
    for (const auto& s : kScenarios) {
      auto cfg = default_run_config();
      cfg.scenario = "scenarios/" + s + ".json";
      cfg.backend = "rules";
      cfg.inject_rate = 0.3;
      cfg.seed = 2024;
      cfg.campaign.rectifier_enabled = ac.rectifier;
      cfg.campaign.memory = ac.memory;
      std::vector<CampaignReport> runs;
      for (int i = 0; i < 10; ++i) runs.push_back(run_single(cfg, res(), i));
      for (const auto& r : runs) ok += r.success;
      n += runs.size();
      a.json += aggregate_json(ac.name + "/" + s, runs);
      a.reports.insert(a.reports.end(), runs.begin(), runs.end());
    }
    a.rate[ac.name] = static_cast<double>(ok) / static_cast<double>(n);
  }
  return a;
}

Verdict c6_ablation(const Ablation& a, double elapsed) {
  Verdict v;
  std::ostringstream os;
  for (const auto& [k, r] : a.rate) os << (os.tellp() > 0 ? " " : "") << k << "=" << r;
  const auto& r = a.rate;
  if (!(r.at("full") >= r.at("no_rectifier") && r.at("full") >= r.at("no_memory")))
    v.fail("full is not the best configuration: " + os.str());
  if (!(r.at("neither") <= r.at("no_rectifier") && r.at("neither") <= r.at("no_memory")))
    v.fail("neither is not the worst configuration: " + os.str());
  if (r.at("full") < 0.9) v.fail("full below 0.9: " + os.str());
  if (r.at("neither") > r.at("full") - 0.15) v.fail("neither within 0.15 of full: " + os.str());
  if (elapsed > 300.0) v.fail("took " + std::to_string(elapsed) + " s");
  v.note = os.str();
  return v;
}

struct MemoryRuns {
  std::vector<CampaignReport> cmm, cbm;
  std::vector<std::vector<std::string>> cmm_logs;
  std::string json;
};

MemoryRuns run_memory() {
  MemoryRuns m;
  auto cfg = default_run_config();
  cfg.scenario = "scenarios/apache.json";
  cfg.backend = "rules";
  cfg.profile = "profiles/duplicate_prone.json";
  cfg.seed = 77;
  for (auto strategy : {MemoryStrategy::cmm, MemoryStrategy::cbm}) {
    cfg.campaign.memory = strategy;
    for (int i = 0; i < 5; ++i) {
      std::vector<std::string> log;
      auto r = run_single(cfg, res(), i, {}, {}, &log);
      if (strategy == MemoryStrategy::cmm) {
        m.cmm.push_back(std::move(r));
        m.cmm_logs.push_back(std::move(log));
      } else {
        m.cbm.push_back(std::move(r));
      }
    }
  }
  m.json = aggregate_json("cmm", m.cmm) + aggregate_json("cbm", m.cbm);
  return m;
}

double mean_duplication(const std::vector<CampaignReport>& runs) {
  double s = 0;
  for (const auto& r : runs) s += r.duplication_rate;
  return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
}

Verdict c7_memory(const MemoryRuns& m) {
  Verdict v;
  for (std::size_t i = 0; i < m.cmm.size(); ++i) {
    const auto n = checks::failed_redispatches(m.cmm[i], m.cmm_logs[i]);
    if (n != 0) v.fail("CMM run " + std::to_string(i + 1) + " re-dispatched " + std::to_string(n) + " failed commands");
    if (checks::executor_commands(m.cmm_logs[i]) != checks::dispatched_records(m.cmm[i]))
      v.fail("CMM run " + std::to_string(i + 1) + ": executor log and dispatch records disagree");
  }
  const double cmm = mean_duplication(m.cmm), cbm = mean_duplication(m.cbm);
  if (!(cbm > cmm)) v.fail("CBM duplication " + std::to_string(cbm) + " <= CMM " + std::to_string(cmm));
  return v;
}

Verdict c8_budgets(const std::vector<const std::vector<CampaignReport>*>& groups) {
  Verdict v;
  int worst = 0;
  for (const auto* g : groups)
    for (const auto& r : *g) {
      for (const auto& [stage, n] : r.stages) worst = std::max(worst, n);
      if (r.total_iterations > 90) v.fail("campaign ran " + std::to_string(r.total_iterations) + " iterations");
      for (const auto& rec : r.iterations) {
        if (!rec.window) continue;
        const double want = rec.bruteforce ? 180.0 : 30.0;
        if (*rec.window != want)
          v.fail(rec.command + " ran with a " + std::to_string(*rec.window) + " s window, want " + std::to_string(want));
      }
    }
  if (worst > 30) v.fail("a stage ran " + std::to_string(worst) + " iterations");
  return v;
}

std::string random_cmd(std::mt19937_64& rng) {
  static const std::vector<std::string> pool = {"exploit/multi/ssh/sshexec", "search -f flag.txt",
                                                "cat \"/home/user/my flag\\.txt\"", "download /root/flag.txt",
                                                "exploit/unix/ftp/vsftpd_234_backdoor", "ls -la /var/www"};
  if (rng() % 3 == 0) {
    auto s = mixed_string(rng, 20);
    if (s.empty()) s = "x";
    return s;
  }
  return pool[rng() % pool.size()];
}

Verdict c9_roundtrip() {
  Verdict v;
  std::mt19937_64 rng(909);
  for (int i = 0; i < 1000; ++i) {
    GlobalMemory m;
    for (auto stage : {Stage::exploit, Stage::exfiltrate}) {
      int iter = 0;
      const auto n = rng() % 10;
      for (std::size_t k = 0; k < n; ++k) {
        iter += 1 + static_cast<int>(rng() % 4);
        m.append(stage, {iter, random_cmd(rng), rng() % 2 ? Outcome::success : Outcome::fail});
      }
    }
    const auto once = render_memory_file(m);
    try {
      const auto back = parse_memory_file(once);
      if (!(back == m)) v.fail("parsed memory differs from the original");
      if (render_memory_file(back) != once) v.fail("render(parse(render(m))) differs from render(m)");
      for (auto stage : {Stage::exploit, Stage::exfiltrate})
        if (parse_stage_log(render_stage_log(m, stage)) != m.log(stage).entries) v.fail("stage log round trip");
    } catch (const std::exception& e) {
      v.fail(std::string("parse threw: ") + e.what());
    }
  }
  return v;
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int n, const std::string& name, const Verdict& v) {
    const auto& detail = v.ok ? v.note : v.why;
    std::printf("criterion %2d %-32s %s%s%s\n", n, name.c_str(), v.ok ? "PASS" : "FAIL", detail.empty() ? "" : "  ",
                detail.c_str());
    std::fflush(stdout);
    failures += v.ok ? 0 : 1;
  };
  auto guarded = [](const std::function<Verdict()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      Verdict v;
      v.fail(std::string("exception: ") + e.what());
      return v;
    }
  };

  report(1, "levenshtein vs oracle", guarded(c1_levenshtein));
  report(2, "similarity formula", guarded(c2_similarity));
  report(3, "rectifier closure", guarded(c3_closure));
  report(4, "method ordering on corpus", guarded(c4_methods));
  report(5, "golden apache trace", guarded(c5_golden));

  Ablation ablation;
  MemoryRuns memory;
  report(6, "ablation", guarded([&] {
           const auto t0 = Wall::now();
           ablation = run_ablation();
           return c6_ablation(ablation, seconds_since(t0));
         }));
  report(7, "memory duplicate suppression", guarded([&] {
           memory = run_memory();
           return c7_memory(memory);
         }));
  report(8, "budgets and windows",
         guarded([&] { return c8_budgets({&ablation.reports, &memory.cmm, &memory.cbm}); }));
  report(9, "memory round trip", guarded(c9_roundtrip));
  report(10, "determinism", guarded([&] {
           Verdict v;
           if (c4_eval_json() != c4_eval_json()) v.fail("rectifier evaluation differs between runs");
           if (run_ablation().json != ablation.json) v.fail("ablation aggregates differ between runs");
           if (run_memory().json != memory.json) v.fail("memory aggregates differ between runs");
           auto cfg = default_run_config();
           cfg.scenario = "scenarios/apache.json";
           cfg.playbook = "playbooks/apache_faithful.json";
           if (run_single(cfg, res(), 0).to_json() != run_single(cfg, res(), 0).to_json())
             v.fail("golden run reports differ");
           return v;
         }));
  return failures == 0 ? 0 : 1;
}
