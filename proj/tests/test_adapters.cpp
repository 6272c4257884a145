#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <chrono>
#include <fstream>

#include "redloop/adapters.hpp"
#include "redloop/sim.hpp"
#include "test_util.hpp"

using namespace redloop;

namespace {

struct RecordingRunner : ScanRunner {
  std::vector<std::vector<std::string>> calls;
  double cost = 1.0;
  ScanOutput run(const std::vector<std::string>& argv, double timeout) override {
    calls.push_back(argv);
    if (timeout < cost) return {"Starting Nmap 7.80\npartial line", true};
    return {"Nmap scan report for 10.0.0.5\n22/tcp open ssh OpenSSH 4.7p1\n", false};
  }
};

struct Sim {
  SimClock clock;
  ScenarioSpec spec;
  SimulatedTarget target;
  std::string console;
  explicit Sim(const std::string& scenario)
      : spec(load_scenario_file(data_path(scenario), &testutil::sample_kb())),
        target(spec, testutil::sample_schemas(), clock),
        console(target.create()) {}
};

NormalizedInvocation vsftpd_inv(const std::string& host, int port) {
  NormalizedInvocation inv;
  inv.module_path = "exploit/unix/ftp/vsftpd_234_backdoor";
  inv.option_assignments = {{"RHOSTS", host}, {"RPORT", std::to_string(port)}};
  return inv;
}

}  // namespace

TEST_CASE("tokenize_shell examples") {
  CHECK(tokenize_shell(R"(nmap -sV "10.0.0.5")") == std::vector<std::string>{"nmap", "-sV", "10.0.0.5"});
  CHECK(tokenize_shell("a 'b c' d") == std::vector<std::string>{"a", "b c", "d"});
  CHECK_THROWS_AS(tokenize_shell(R"(a "unclosed)"), TokenizeError);
  CHECK(tokenize_shell("echo $HOME *.txt") == std::vector<std::string>{"echo", "$HOME", "*.txt"});
}

TEST_CASE("tokenize_shell agrees with the POSIX oracle table") {
  std::ifstream in(testutil::test_file("data/tokenize_cases.jsonl"));
  REQUIRE(in);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto c = nlohmann::json::parse(line);
    const auto input = c.at("line").get<std::string>();
    CAPTURE(input);
    if (c.contains("error")) {
      CHECK_THROWS_AS(tokenize_shell(input), TokenizeError);
    } else {
      CHECK(tokenize_shell(input) == c.at("tokens").get<std::vector<std::string>>());
    }
    ++n;
  }
  CHECK(n == 200);
}

TEST_CASE("extract_tool_line") {
  CHECK(extract_tool_line("Here is the scan:\n```\nnmap -sS -sV 10.0.0.5\n```") == "nmap -sS -sV 10.0.0.5");
  CHECK_FALSE(extract_tool_line("I would start by looking around.\nThen decide."));
  CHECK(extract_tool_line("First a scan.\nIt should be thorough.\nsudo nmap -p- host\nping host") == "sudo nmap -p- host");
  CHECK(extract_tool_line("$ ping -c 1 10.0.0.1") == "ping -c 1 10.0.0.1");
  // "sudo" alone or with another program does not qualify.
  CHECK_FALSE(extract_tool_line("sudo rm -rf /\nsudo"));
  // Whatever comes back satisfies the invocation invariants.
  for (const char* text : {"nmap host", "x\nsudo nmap -sV h\n", "```sh\nping h\n```", "nmapx h\nnmap h"}) {
    const auto l = extract_tool_line(text);
    REQUIRE(l);
    const auto argv = tokenize_shell(*l);
    CHECK((argv[0] == "nmap" || argv[0] == "ping" || (argv[0] == "sudo" && argv.size() > 1 && argv[1] == "nmap")));
  }
}

TEST_CASE("make_scan_invocation rejects metacharacters and other programs") {
  CHECK(make_scan_invocation("nmap -sV 10.0.0.5").argv.size() == 3);
  CHECK_THROWS_AS(make_scan_invocation("nmap 10.0.0.5; rm -rf /"), InjectionRejected);
  CHECK_THROWS_AS(make_scan_invocation("nmap $(whoami)"), InjectionRejected);
  CHECK_THROWS_AS(make_scan_invocation("nmap `id`"), InjectionRejected);
  CHECK_THROWS_AS(make_scan_invocation("nmap h | tee x"), InjectionRejected);
  CHECK_THROWS_AS(make_scan_invocation("nmap h > out"), InjectionRejected);
  CHECK_THROWS_AS(make_scan_invocation("curl h"), InjectionRejected);
  CHECK_THROWS_AS(make_scan_invocation("sudo ping h"), InjectionRejected);
  CHECK_THROWS_AS(make_scan_invocation("nmap \"h"), InjectionRejected);
  CHECK_THROWS_AS(validate_scan_argv({"nmap", "a;b"}), InjectionRejected);
}

TEST_CASE("run_scan forwards tokens and marks timeouts") {
  RecordingRunner runner;
  const auto out = run_scan(make_scan_invocation("nmap -sV '10.0.0.5'", 30), runner);
  CHECK(out.find("22/tcp open") != std::string::npos);
  REQUIRE(runner.calls.size() == 1);
  CHECK(runner.calls[0] == std::vector<std::string>{"nmap", "-sV", "10.0.0.5"});

  const auto slow = run_scan(make_scan_invocation("nmap 10.0.0.5", 0.001), runner);
  CHECK(slow.find("partial line\n") != std::string::npos);
  CHECK(slow.find(kScanTimeoutMarker) != std::string::npos);

  ScanInvocation bad{{"nmap", "x;y"}, 1};
  CHECK_THROWS_AS(run_scan(bad, runner), InjectionRejected);
  CHECK(runner.calls.size() == 2);
}

TEST_CASE("process runner enforces its timeout") {
  ProcessScanRunner runner;
  const auto start = std::chrono::steady_clock::now();
  const auto out = runner.run({"sleep", "5"}, 0.2);
  const double took = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(out.timed_out);
  CHECK(took < 0.2 + 2.0);
  const auto echo = runner.run({"echo", "a;b", "$HOME"}, 5);
  CHECK_FALSE(echo.timed_out);
  CHECK(echo.transcript == "a;b $HOME\n");
  CHECK_THROWS_AS(runner.run({"/definitely/not/here"}, 1), TransportError);
}

TEST_CASE("parse_scan_findings") {
  const auto aliases = ServiceAliases::load_file(data_path("kb/service_aliases.txt"));
  const auto f = parse_scan_findings(
      "Nmap scan report for 10.0.0.5\nPORT     STATE SERVICE VERSION\n22/tcp   open  ssh     OpenSSH 4.7p1 Debian 8ubuntu1\n"
      "80/tcp open http Apache httpd 2.2.8 ((Ubuntu) DAV/2)\n81/tcp closed http\n",
      aliases);
  REQUIRE(f.size() == 2);
  CHECK(f[0] == ReconFinding{"10.0.0.5", 22, "ssh", "OpenSSH 4.7p1 Debian 8ubuntu1"});
  CHECK(f[1].service == "http");
  CHECK(f[1].version == "Apache httpd 2.2.8 ((Ubuntu) DAV/2)");
}

TEST_CASE("simulated scan of metasploitable2") {
  Sim sim("scenarios/metasploitable2.json");
  const auto out = run_scan(make_scan_invocation("nmap -sS -sV " + sim.spec.host), sim.target);
  const auto findings = parse_scan_findings(out, ServiceAliases::load_file(data_path("kb/service_aliases.txt")));
  CHECK(findings.size() == 7);
  CHECK(out.find("21/tcp   open  ftp         vsftpd 2.3.4") != std::string::npos);
  CHECK(sim.clock.now() > 0);
}

TEST_CASE("execute_module against the simulator") {
  Sim sim("scenarios/vsftpd.json");
  const auto ok = execute_module(sim.target, sim.console, vsftpd_inv(sim.spec.host, 21), 30, sim.clock);
  CHECK(ok.transcript.find("session 1 opened") != std::string::npos);
  CHECK_FALSE(ok.window_elapsed);
  CHECK(poll_sessions(sim.target).size() == 1);

  Sim wrong("scenarios/vsftpd.json");
  const auto bad = execute_module(wrong.target, wrong.console, vsftpd_inv(wrong.spec.host, 2121), 30, wrong.clock);
  CHECK(bad.transcript.find("no session was created") != std::string::npos);
  CHECK(poll_sessions(wrong.target).empty());
}

TEST_CASE("execution window elapses mid brute force") {
  Sim sim("scenarios/openssh.json");
  NormalizedInvocation inv;
  inv.module_path = "auxiliary/scanner/ssh/ssh_login";
  inv.option_assignments = {{"RHOSTS", sim.spec.host}, {"RPORT", "22"}, {"USER_FILE", data_path("wordlists/common.txt")},
                            {"PASS_FILE", data_path("wordlists/common.txt")}};
  inv.bruteforce = true;
  const double before = sim.clock.now();
  const auto short_run = execute_module(sim.target, sim.console, inv, 10, sim.clock);
  CHECK(short_run.window_elapsed);
  CHECK(short_run.transcript.find(kWindowElapsedMarker) != std::string::npos);
  CHECK(sim.clock.now() - before <= 10 + ExecutionOptions{}.grace);

  Sim full("scenarios/openssh.json");
  const auto long_run = execute_module(full.target, full.console, inv, 180, full.clock);
  CHECK_FALSE(long_run.window_elapsed);
  CHECK(long_run.transcript.find("session 1 opened") != std::string::npos);
}

TEST_CASE("console reads return output exactly once") {
  Sim sim("scenarios/vsftpd.json");
  sim.target.write(sim.console, vsftpd_inv(sim.spec.host, 21).to_block());
  std::string all;
  for (int i = 0; i < 40; ++i) {
    const auto r = sim.target.read(sim.console);
    all += r.data;
    if (!r.busy) break;
    sim.clock.advance(0.5);
  }
  CHECK(all.find("session 1 opened") != std::string::npos);
  const auto again = sim.target.read(sim.console);
  CHECK(again.data.empty());
  CHECK_FALSE(again.busy);
}

TEST_CASE("poll_sessions snapshots") {
  Sim sim("scenarios/vsftpd.json");
  CHECK(poll_sessions(sim.target).empty());
  CHECK(poll_sessions(sim.target) == poll_sessions(sim.target));
  execute_module(sim.target, sim.console, vsftpd_inv(sim.spec.host, 21), 30, sim.clock);
  const auto a = poll_sessions(sim.target);
  const auto b = poll_sessions(sim.target);
  CHECK(a.size() == 1);
  CHECK(a.size() == b.size());
  CHECK(a.begin()->first == b.begin()->first);
  CHECK(a.begin()->second.kind == SessionKind::shell);
}

TEST_CASE("dead sessions leave the inventory") {
  auto spec = load_scenario_file(data_path("scenarios/vsftpd.json"), &testutil::sample_kb());
  spec.services[0].session_lifetime = 5.0;
  SimClock clock;
  SimulatedTarget target(spec, testutil::sample_schemas(), clock);
  const auto con = target.create();
  execute_module(target, con, vsftpd_inv(spec.host, 21), 30, clock);
  REQUIRE(poll_sessions(target).count(1) == 1);
  clock.advance(10);
  CHECK(poll_sessions(target).count(1) == 0);
  const auto closed = run_session_command(target, 1, "id", 30, clock);
  CHECK(closed.transcript.find("closed") != std::string::npos);
}

TEST_CASE("upgrade_session") {
  Sim sim("scenarios/vsftpd.json");
  execute_module(sim.target, sim.console, vsftpd_inv(sim.spec.host, 21), 30, sim.clock);
  const auto up = upgrade_session(sim.target, sim.console, 1, sim.clock);
  CHECK(up.outcome == UpgradeOutcome::upgraded);
  REQUIRE(up.session_id);
  CHECK(poll_sessions(sim.target).at(*up.session_id).kind == SessionKind::meterpreter);
  CHECK_THROWS_AS(upgrade_session(sim.target, sim.console, *up.session_id, sim.clock), PreconditionError);
  CHECK_THROWS_AS(upgrade_session(sim.target, sim.console, 99, sim.clock), NotFoundError);

  auto spec = load_scenario_file(data_path("scenarios/vsftpd.json"), &testutil::sample_kb());
  spec.upgrade_fails = true;
  SimClock clock;
  SimulatedTarget target(spec, testutil::sample_schemas(), clock);
  const auto con = target.create();
  execute_module(target, con, vsftpd_inv(spec.host, 21), 30, clock);
  const auto failed = upgrade_session(target, con, 1, clock);
  CHECK(failed.outcome == UpgradeOutcome::failed);
  CHECK(poll_sessions(target).size() == 1);
  CHECK(poll_sessions(target).at(1).kind == SessionKind::shell);
}

TEST_CASE("noise filter") {
  const auto noise = NoiseFilter::load_file(data_path("noise_prefixes.txt"));
  CHECK(noise.apply("Starting Nmap 7.80\n22/tcp open ssh\n[*] Started reverse TCP handler on x\n") == "22/tcp open ssh\n");
}
