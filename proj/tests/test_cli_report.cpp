#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <json.hpp>
#include <set>
#include <sstream>

#include "redloop/cli.hpp"
#include "redloop/report.hpp"

using namespace redloop;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "redloop");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("redloop_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("run on the apache playbook") {
  const auto dir = scratch("apache");
  const auto r = cli({"run", "--scenario", "scenarios/apache.json", "--playbook", "playbooks/apache_faithful.json", "--out",
                      dir.string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("run_001: success=true RECON=1 EXPLOIT=2 EXFILTRATE=3") != std::string::npos);
  CHECK(r.out.find("successes 1/1") != std::string::npos);
  CHECK(fs::exists(dir / "run_001" / "report.json"));
  CHECK(fs::exists(dir / "run_001" / "memory.json"));
  CHECK(fs::exists(dir / "aggregate.json"));
  CHECK(fs::exists(dir / "aggregate.csv"));
}

TEST_CASE("run argument errors") {
  const auto dir = scratch("errors");
  auto r = cli({"run", "--scenario", "scenarios/missing.json", "--playbook", "playbooks/apache_faithful.json", "--out",
                dir.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("scenario not found") != std::string::npos);

  r = cli({"run", "--scenario", "scenarios/apache.json", "--playbook", "playbooks/apache_faithful.json", "--repeat", "0",
           "--out", dir.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("repeat") != std::string::npos);

  r = cli({"run", "--scenario", "scenarios/apache.json", "--backend", "oracle", "--out", dir.string()});
  CHECK(r.code == 1);

  r = cli({"run", "--scenario", "scenarios/apache.json", "--backend", "rules", "--adapter", "live", "--out", dir.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("--i-understand-live-targets") != std::string::npos);

  r = cli({"run", "--scenario", "scenarios/apache.json", "--backend", "rules", "--adapter", "live",
           "--i-understand-live-targets", "--out", dir.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("not available") != std::string::npos);

  r = cli({"frobnicate"});
  CHECK(r.code != 0);
}

TEST_CASE("eval-rectifier") {
  const auto dir = scratch("rect");
  const auto corpus = dir / "identity.tsv";
  text::write_file(corpus.string(),
                   "exploit/unix/ftp/vsftpd_234_backdoor\texploit/unix/ftp/vsftpd_234_backdoor\n"
                   "auxiliary/scanner/ssh/ssh_login\tauxiliary/scanner/ssh/ssh_login\n");
  auto r = cli({"eval-rectifier", "--corpus", corpus.string(), "--out", dir.string()});
  CHECK(r.code == 0);
  const auto doc = nlohmann::json::parse(text::read_file((dir / "rectifier_eval.json").string()));
  for (const auto& m : doc.at("methods")) CHECK(m.at("success_rate").get<double>() == 1.0);
  CHECK(r.out.find("ordering hybrid>=fuzzy_full: yes") != std::string::npos);

  const auto empty = dir / "empty.tsv";
  text::write_file(empty.string(), "");
  r = cli({"eval-rectifier", "--corpus", empty.string(), "--out", dir.string()});
  CHECK(r.code == 1);

  r = cli({"eval-rectifier", "--generate", "50", "--seed", "3", "--out", dir.string()});
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "corpus.tsv"));

  r = cli({"eval-rectifier", "--generate", "50", "--corpus", corpus.string(), "--out", dir.string()});
  CHECK(r.code == 1);
}

TEST_CASE("eval-memory") {
  const auto dir = scratch("mem");
  auto r = cli({"eval-memory", "--scenario", "scenarios/apache.json", "--strategies", "cmm,bogus", "--out", dir.string()});
  CHECK(r.code == 1);
  r = cli({"eval-memory", "--scenario", "scenarios/vsftpd.json", "--repeat", "2", "--out", dir.string()});
  CHECK(r.code == 0);
  const auto doc = nlohmann::json::parse(text::read_file((dir / "memory_eval.json").string()));
  CHECK(doc.at("strategies").size() == 2);
}

TEST_CASE("kb-import") {
  const auto dir = scratch("kb");
  auto r = cli({"kb-import", data_path("kb/sample_kb.txt"), (dir / "kb.txt").string()});
  CHECK(r.code == 0);
  CHECK(r.out.starts_with("imported "));
  CHECK(load_database_file((dir / "kb.txt").string()).size() == load_database_file(data_path("kb/sample_kb.txt")).size());

  const auto dup = dir / "dup.txt";
  text::write_file(dup.string(),
                   "exploit|unix|ftp|exploit/unix/ftp/vsftpd_234_backdoor|excellent|VSFTPD backdoor\n"
                   "auxiliary|multi|ssh|auxiliary/scanner/ssh/ssh_login|normal|SSH login\n"
                   "exploit|unix|ftp|exploit/unix/ftp/vsftpd_234_backdoor|excellent|VSFTPD again\n");
  r = cli({"kb-import", dup.string(), (dir / "out.txt").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("exploit/unix/ftp/vsftpd_234_backdoor (lines 1 3)") != std::string::npos);

  const auto comments = dir / "comments.txt";
  text::write_file(comments.string(), "# nothing here\n\n");
  r = cli({"kb-import", comments.string(), (dir / "empty_out.txt").string()});
  CHECK(r.code == 0);
  CHECK(r.err.find("warning") != std::string::npos);
}

TEST_CASE("config files") {
  std::istringstream in("# comment\nseed = 9\nmemory = cbm\nrectifier = false\nmax_iters_per_stage = 7\n"
                        "inject_kinds = suffix_edit,type_swap\nscenario = scenarios/vsftpd.json\n");
  const auto cfg = load_run_config(in);
  CHECK(cfg.seed == 9);
  CHECK(cfg.campaign.memory == MemoryStrategy::cbm);
  CHECK_FALSE(cfg.campaign.rectifier_enabled);
  CHECK(cfg.campaign.max_iters_per_stage == 7);
  CHECK(cfg.inject_kinds == std::vector<Perturbation>{Perturbation::suffix_edit, Perturbation::type_swap});

  std::istringstream bad("colour = blue\n");
  CHECK_THROWS_AS(load_run_config(bad), ConfigError);
  std::istringstream bad_num("seed = many\n");
  CHECK_THROWS_AS(load_run_config(bad_num), ConfigError);
  std::istringstream no_eq("seed 9\n");
  CHECK_THROWS_AS(load_run_config(no_eq), ConfigError);

  RunConfig rc = default_run_config();
  rc.scenario = "scenarios/vsftpd.json";
  rc.backend = "rules";
  CHECK_NOTHROW(rc.validate());
  rc.inject_rate = 1.5;
  CHECK_THROWS_AS(rc.validate(), ConfigError);
  rc.inject_rate = 0;
  rc.backend = "scripted";
  CHECK_THROWS_AS(rc.validate(), ConfigError);

  // Flags override the file.
  const auto dir = scratch("cfg");
  text::write_file((dir / "run.conf").string(),
                   "scenario = scenarios/vsftpd.json\nbackend = rules\nrepeat = 3\nseed = 4\n");
  const auto r = cli({"run", "--config", (dir / "run.conf").string(), "--repeat", "1", "--out", (dir / "out").string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("successes 1/1") != std::string::npos);
}

TEST_CASE("run seeds are distinct and stable") {
  CHECK(run_seed(1, 0) == run_seed(1, 0));
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) seen.insert(run_seed(42, i));
  CHECK(seen.size() == 1000);
  CHECK(run_seed(1, 0) != run_seed(2, 0));
}

TEST_CASE("aggregate statistics are recomputed from the runs") {
  auto cfg = default_run_config();
  cfg.scenario = "scenarios/metasploitable2.json";
  cfg.backend = "rules";
  cfg.inject_rate = 0.3;
  cfg.seed = 11;
  const auto res = Resources::load(cfg);
  std::vector<CampaignReport> reports;
  for (int i = 0; i < 6; ++i) reports.push_back(run_single(cfg, res, i));

  const auto doc = nlohmann::json::parse(aggregate_json("m2", reports));
  std::size_t ok = 0;
  double total = 0, exploit = 0, dup = 0;
  for (const auto& r : reports) {
    ok += r.success;
    total += r.total_iterations;
    exploit += r.stages.count(Stage::exploit) ? r.stages.at(Stage::exploit) : 0;
    dup += r.duplication_rate;
  }
  CHECK(doc.at("label") == "m2");
  CHECK(doc.at("runs") == 6);
  CHECK(doc.at("successes") == ok);
  CHECK(doc.at("success_rate").get<double>() == doctest::Approx(ok / 6.0));
  CHECK(doc.at("mean_total_iterations").get<double>() == doctest::Approx(total / 6));
  CHECK(doc.at("mean_stage_iterations").at("EXPLOIT").get<double>() == doctest::Approx(exploit / 6));
  CHECK(doc.at("mean_duplication_rate").get<double>() == doctest::Approx(dup / 6));
  CHECK(doc.at("per_run").size() == 6);

  const auto csv = aggregate_csv(reports);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);

  // Same seed, same bytes.
  std::vector<CampaignReport> again;
  for (int i = 0; i < 6; ++i) again.push_back(run_single(cfg, res, i));
  CHECK(aggregate_json("m2", again) == aggregate_json("m2", reports));
  for (int i = 0; i < 6; ++i) CHECK(again[i].to_json() == reports[i].to_json());
}

TEST_CASE("report json fields") {
  auto cfg = default_run_config();
  cfg.scenario = "scenarios/apache.json";
  cfg.playbook = "playbooks/apache_faithful.json";
  const auto res = Resources::load(cfg);
  const auto r = run_single(cfg, res, 0);
  const auto doc = nlohmann::json::parse(r.to_json());
  CHECK(doc.at("success") == true);
  CHECK(doc.at("stages").at("EXPLOIT") == 2);
  CHECK(doc.at("total_iterations") == 6);
  REQUIRE(doc.at("rectifications").size() == 2);
  CHECK(doc.at("rectifications")[0].at("outcome") == "already_valid");
  CHECK(doc.at("rectifications")[1].at("outcome") == "corrected");
  CHECK(doc.at("rectifications")[1].at("matched") == "exploit/multi/http/php_cgi_arg_injection");
  CHECK(doc.at("flag_sha256") == *r.flag_sha256);
}

TEST_CASE("vsftpd with rules backend succeeds every time") {
  const auto dir = scratch("vsftpd10");
  const auto r = cli({"run", "--scenario", "scenarios/vsftpd.json", "--backend", "rules", "--repeat", "10", "--out",
                      dir.string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("successes 10/10") != std::string::npos);
}

TEST_CASE("memory evaluation counts") {
  auto cfg = default_run_config();
  cfg.scenario = "scenarios/apache.json";
  cfg.backend = "rules";
  cfg.profile = "profiles/duplicate_prone.json";
  cfg.repeat = 3;
  const auto res = Resources::load(cfg);
  const auto results = evaluate_memory(cfg, res, {MemoryStrategy::cmm, MemoryStrategy::none});
  REQUIRE(results.size() == 2);
  CHECK(results[0].failed_repeats == 0);
  for (const auto& r : results[0].runs) CHECK(count_failed_repeats(r) == 0);
  CHECK(results[1].duplication_rate() > results[0].duplication_rate());
  const auto csv = memory_eval_csv(results);
  CHECK(csv.find("cmm,") != std::string::npos);
}
