#include "redloop/sim.hpp"

#include <fnmatch.h>

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <regex>
#include <sstream>

namespace redloop {

using ordered_json = nlohmann::ordered_json;

namespace {

double unit(std::uint64_t x) { return static_cast<double>(x >> 11) * 0x1.0p-53; }

std::string normal_path(std::string_view p) {
  auto s = std::filesystem::path(std::string(p)).lexically_normal().string();
  while (s.size() > 1 && s.back() == '/') s.pop_back();
  return s;
}

std::string basename_of(std::string_view p) {
  const auto slash = p.rfind('/');
  return std::string(slash == std::string_view::npos ? p : p.substr(slash + 1));
}

bool under(std::string_view path, std::string_view dir) {
  if (dir == "/") return path.starts_with("/");
  return path.size() > dir.size() && path.starts_with(dir) && path[dir.size()] == '/';
}

template <typename T>
T get_or(const ordered_json& obj, const char* key, T fallback) {
  return obj.contains(key) ? obj.at(key).get<T>() : fallback;
}

void check_keys(const ordered_json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  for (const auto& [key, _] : obj.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ScenarioError(where + ": unknown key '" + key + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// Scenario loading

const ServiceSpec* ScenarioSpec::service_on(int port) const {
  for (const auto& s : services)
    if (s.port == port) return &s;
  return nullptr;
}

ScenarioSpec load_scenario(std::istream& source, const ModuleDatabase* kb) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(source);
  } catch (const nlohmann::json::parse_error& e) {
    throw ScenarioError(std::string("scenario is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ScenarioError("scenario must be a JSON object");
  check_keys(doc, {"name", "host", "flag_path", "flag_contents", "upgrade_fails", "filesystem", "services"}, "scenario");

  ScenarioSpec spec;
  try {
    spec.name = get_or<std::string>(doc, "name", "unnamed");
    spec.host = doc.at("host").get<std::string>();
    spec.flag_path = doc.at("flag_path").get<std::string>();
    spec.flag_contents = doc.at("flag_contents").get<std::string>();
    spec.upgrade_fails = get_or<bool>(doc, "upgrade_fails", false);

    for (const auto& f : doc.value("filesystem", ordered_json::array())) {
      check_keys(f, {"path", "contents"}, "filesystem entry");
      spec.filesystem.push_back({normal_path(f.at("path").get<std::string>()), get_or<std::string>(f, "contents", "")});
    }

    for (const auto& s : doc.value("services", ordered_json::array())) {
      check_keys(s,
                 {"name", "nmap_name", "version", "port", "vulnerable_module", "required_options", "session_kind",
                  "bruteforce", "credential", "session_user", "session_cwd", "attach_fails", "session_lifetime"},
                 "service");
      ServiceSpec svc;
      svc.name = s.at("name").get<std::string>();
      svc.nmap_name = get_or<std::string>(s, "nmap_name", svc.name);
      svc.version = get_or<std::string>(s, "version", "");
      svc.port = s.at("port").get<int>();
      if (s.contains("vulnerable_module") && !s.at("vulnerable_module").is_null())
        svc.vulnerable_module = s.at("vulnerable_module").get<std::string>();
      const auto required = s.value("required_options", ordered_json::object());
      for (const auto& [k, v] : required.items())
        svc.required_options.emplace_back(k, v.get<std::string>());
      svc.session_kind = parse_session_kind(get_or<std::string>(s, "session_kind", "shell"));
      svc.bruteforce = get_or<bool>(s, "bruteforce", false);
      if (s.contains("credential"))
        svc.credential = Credential{s.at("credential").at("user").get<std::string>(),
                                    s.at("credential").at("pass").get<std::string>()};
      svc.session_user = get_or<std::string>(s, "session_user", "root");
      svc.session_cwd = normal_path(get_or<std::string>(s, "session_cwd", "/"));
      svc.attach_fails = get_or<bool>(s, "attach_fails", false);
      if (s.contains("session_lifetime")) svc.session_lifetime = s.at("session_lifetime").get<double>();
      spec.services.push_back(std::move(svc));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ScenarioError(std::string("scenario field error: ") + e.what());
  } catch (const ConfigError& e) {
    throw ScenarioError(e.what());
  }

  if (spec.host.empty()) throw ScenarioError("scenario host is empty");
  if (!spec.flag_path.starts_with("/")) throw ScenarioError("flag_path must be absolute: " + spec.flag_path);
  spec.flag_path = normal_path(spec.flag_path);
  auto flag = std::find_if(spec.filesystem.begin(), spec.filesystem.end(), [&](const auto& f) { return f.path == spec.flag_path; });
  if (flag == spec.filesystem.end()) throw ScenarioError("flag_path " + spec.flag_path + " is not in the filesystem list");
  if (flag->contents.empty()) flag->contents = spec.flag_contents;
  if (flag->contents != spec.flag_contents) throw ScenarioError("filesystem contents of the flag differ from flag_contents");

  std::set<int> ports;
  for (const auto& s : spec.services) {
    if (s.name.empty()) throw ScenarioError("service without a name");
    if (s.port < 1 || s.port > 65535) throw ScenarioError("service " + s.name + " has port out of range");
    if (!ports.insert(s.port).second) throw ScenarioError("duplicate service port " + std::to_string(s.port));
    if (s.bruteforce && !s.credential) throw ScenarioError("brute-force service " + s.name + " needs a credential");
    if (kb && s.vulnerable_module && !kb->contains(*s.vulnerable_module))
      throw ScenarioError("vulnerable module " + *s.vulnerable_module + " of service " + s.name + " is not in the knowledge base");
  }
  return spec;
}

ScenarioSpec load_scenario_file(const std::string& path, const ModuleDatabase* kb) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open scenario file: " + path);
  try {
    return load_scenario(in, kb);
  } catch (const ScenarioError& e) {
    throw ScenarioError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Simulated target

SimulatedTarget::SimulatedTarget(ScenarioSpec spec, const OptionSchemaProvider& schemas, Clock& clock, SimTiming timing)
    : spec_(std::move(spec)), schemas_(schemas), clock_(clock), timing_(timing) {}

ScanOutput SimulatedTarget::run(const std::vector<std::string>& argv, double timeout_seconds) {
  validate_scan_argv(argv);
  std::size_t i = argv[0] == "sudo" ? 1 : 0;
  const std::string program = argv[i++];
  static const std::set<std::string> takes_value = {"-p", "-oN", "-oX", "-oG", "-oA", "--top-ports", "-e", "-iL",
                                                    "--script", "-c", "-W", "-i", "--max-retries"};
  bool version = false;
  std::optional<std::set<int>> port_filter;
  std::vector<std::string> hosts;
  for (; i < argv.size(); ++i) {
    const auto& a = argv[i];
    if (a == "-sV" || a == "-A") version = true;
    if (takes_value.count(a) && i + 1 < argv.size()) {
      if (a == "-p" && argv[i + 1] != "-") {
        port_filter.emplace();
        for (const auto& part : text::split(argv[i + 1], ',')) {
          const auto dash = part.find('-');
          try {
            if (dash == std::string::npos) {
              port_filter->insert(std::stoi(part));
            } else {
              const int lo = dash == 0 ? 1 : std::stoi(part.substr(0, dash));
              const int hi = dash + 1 == part.size() ? 65535 : std::stoi(part.substr(dash + 1));
              for (const auto& s : spec_.services)
                if (s.port >= lo && s.port <= hi) port_filter->insert(s.port);
            }
          } catch (const std::exception&) {
          }
        }
      }
      ++i;
      continue;
    }
    if (!a.starts_with("-")) hosts.push_back(a);
  }
  const bool hit = std::find(hosts.begin(), hosts.end(), spec_.host) != hosts.end();

  std::ostringstream out;
  ScanOutput result;
  const double cost = program == "ping" ? 1.0 : timing_.scan;
  if (program == "ping") {
    const auto host = hosts.empty() ? std::string("?") : hosts.front();
    out << "PING " << host << " (" << host << ") 56(84) bytes of data.\n";
    if (hit) out << "64 bytes from " << host << ": icmp_seq=1 ttl=64 time=0.42 ms\n";
    out << "--- " << host << " ping statistics ---\n";
    out << "1 packets transmitted, " << (hit ? 1 : 0) << " received, " << (hit ? "0%" : "100%") << " packet loss\n";
  } else {
    out << "Starting Nmap 7.80 ( https://nmap.org )\n";
    if (timeout_seconds < cost) {
      clock_.sleep_for(timeout_seconds);
      result.transcript = out.str();
      result.timed_out = true;
      return result;
    }
    if (!hit) {
      out << "Note: Host seems down. If it is really up, but blocking our ping probes, try -Pn\n";
      out << "Nmap done: " << std::max<std::size_t>(hosts.size(), 1) << " IP address (0 hosts up) scanned in 3.04 seconds\n";
    } else {
      std::vector<const ServiceSpec*> shown;
      for (const auto& s : spec_.services)
        if (!port_filter || port_filter->count(s.port)) shown.push_back(&s);
      std::sort(shown.begin(), shown.end(), [](auto* a, auto* b) { return a->port < b->port; });
      out << "Nmap scan report for " << spec_.host << "\n";
      out << "Host is up (0.00042s latency).\n";
      if (shown.empty()) {
        out << "All 1000 scanned ports on " << spec_.host << " are closed\n";
      } else {
        out << "Not shown: " << (1000 - shown.size()) << " closed ports\n";
        out << std::left << std::setw(9) << "PORT" << std::setw(6) << "STATE" << std::setw(12) << "SERVICE"
            << (version ? "VERSION" : "") << "\n";
        for (const auto* s : shown) {
          std::string line;
          std::ostringstream row;
          row << std::left << std::setw(9) << (std::to_string(s->port) + "/tcp") << std::setw(6) << "open"
              << std::setw(12) << s->nmap_name;
          if (version) row << s->version;
          out << text::trim(row.str()) << "\n";
        }
      }
      if (version) out << "Service detection performed. Please report any incorrect results at https://nmap.org/submit/ .\n";
      out << "Nmap done: 1 IP address (1 host up) scanned in " << std::fixed << std::setprecision(2) << cost << " seconds\n";
    }
  }
  clock_.sleep_for(std::min(cost, timeout_seconds));
  result.transcript = out.str();
  result.timed_out = cost > timeout_seconds;
  return result;
}

std::string SimulatedTarget::create() {
  const auto id = std::to_string(next_console_++);
  consoles_[id];
  return id;
}

void SimulatedTarget::destroy(const std::string& console_id) {
  if (!consoles_.erase(console_id)) throw NotFoundError("no console " + console_id);
}

bool SimulatedTarget::alive(const Session& s) const { return !s.expires || clock_.now() < *s.expires; }

void SimulatedTarget::deliver(std::vector<Event>& pending, std::string& ready) {
  const double now = clock_.now();
  std::size_t n = 0;
  for (; n < pending.size() && pending[n].at <= now; ++n) {
    auto& ev = pending[n];
    std::string msg = ev.text;
    if (ev.spawn) {
      const int id = next_session_++;
      Session s;
      s.entry = *ev.spawn;
      s.user = ev.user;
      s.cwd = ev.cwd;
      if (ev.lifetime) s.expires = ev.at + *ev.lifetime;
      sessions_[id] = std::move(s);
      msg = text::replace_all(msg, "{id}", std::to_string(id));
      if (ev.spawn->origin.empty()) exploited_.push_back(ev.spawn->info);
    }
    ready += msg;
    if (!msg.empty() && msg.back() != '\n') ready += '\n';
  }
  pending.erase(pending.begin(), pending.begin() + static_cast<std::ptrdiff_t>(n));
}

void SimulatedTarget::advance() {
  for (auto& [_, con] : consoles_) deliver(con.pending, con.ready);
  for (auto& [_, s] : sessions_) deliver(s.pending, s.ready);
}

void SimulatedTarget::write(const std::string& console_id, std::string_view text) {
  advance();
  auto it = consoles_.find(console_id);
  if (it == consoles_.end()) throw NotFoundError("no console " + console_id);
  auto& con = it->second;
  // A new command replaces whatever job was still running.
  con.pending.clear();
  double t = clock_.now();
  for (const auto& raw : text::split_lines(text)) {
    const std::string line(text::trim(raw));
    if (line.empty()) continue;
    dispatch_log_.push_back("console:" + line);
    run_console_line(con, line, t);
  }
  advance();
}

ConsoleRead SimulatedTarget::read(const std::string& console_id) {
  advance();
  auto it = consoles_.find(console_id);
  if (it == consoles_.end()) throw NotFoundError("no console " + console_id);
  ConsoleRead r{std::move(it->second.ready), !it->second.pending.empty()};
  it->second.ready.clear();
  return r;
}

void SimulatedTarget::run_console_line(Console& con, const std::string& line, double& t) {
  const auto words = text::split_ws(line);
  auto say = [&](std::string msg) { con.pending.push_back({t, std::move(msg), std::nullopt, std::nullopt, {}, {}}); };
  const auto& verb = words[0];
  if (verb == "use") {
    if (words.size() != 2) return say("[-] Usage: use <module>");
    try {
      schemas_.schema(words[1]);
      con.module = words[1];
      con.options.clear();
    } catch (const NotFoundError&) {
      con.module.reset();
      say("[-] Failed to load module: " + words[1]);
    }
  } else if (verb == "set" || verb == "setg") {
    if (words.size() < 3) return say("[-] Usage: set <option> <value>");
    const auto name = text::lower(words[1]);
    std::string upper = words[1];
    std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
    const auto value = std::string(text::trim(line.substr(line.find(words[1], words[0].size()) + words[1].size())));
    con.options[upper] = value;
    say(upper + " => " + value);
  } else if (verb == "unset") {
    if (words.size() >= 2) con.options.erase(words[1]);
  } else if (verb == "back") {
    con.module.reset();
    con.options.clear();
  } else if (verb == "exploit" || verb == "run") {
    run_module(con, t);
  } else if (verb == "sessions") {
    run_upgrade(con, words, t);
  } else {
    say("[-] Unknown command: " + verb);
  }
}

void SimulatedTarget::run_module(Console& con, double& t) {
  auto say = [&](std::string msg) { con.pending.push_back({t, std::move(msg), std::nullopt, std::nullopt, {}, {}}); };
  if (!con.module) return say("[-] No module selected.");
  const auto schema = schemas_.schema(*con.module);
  const bool aux = con.module->starts_with("auxiliary/");

  auto value = [&](const std::string& name) -> std::string {
    if (auto it = con.options.find(name); it != con.options.end()) return it->second;
    if (const auto* o = schema.find_option(name); o && o->default_value) return *o->default_value;
    return {};
  };
  std::vector<std::string> missing;
  for (const auto& o : schema.options)
    if (o.required && value(o.name).empty()) missing.push_back(o.name);
  if (!missing.empty())
    return say("[-] Msf::OptionValidateError The following options failed to validate: " + text::join(missing, ", ") + ".");

  const auto payload = value("PAYLOAD");
  if (!payload.empty() && !schema.find_payload(payload))
    return say("[-] Exploit failed: " + payload + " is not a compatible payload.");

  const auto rhost = value("RHOSTS").empty() ? value("RHOST") : value("RHOSTS");
  const auto rport_text = value("RPORT");
  int rport = 0;
  try {
    rport = std::stoi(rport_text);
  } catch (const std::exception&) {
  }
  const auto lhost = value("LHOST").empty() ? std::string("0.0.0.0") : value("LHOST");
  const auto lport = value("LPORT").empty() ? std::string("4444") : value("LPORT");
  const auto peer = rhost + ":" + rport_text;
  const auto finish = aux ? std::string("[*] Auxiliary module execution completed") : std::string("[*] Exploit completed, but no session was created.");

  if (payload.find("reverse") != std::string::npos) say("[*] Started reverse TCP handler on " + lhost + ":" + lport);
  const ServiceSpec* svc = rhost == spec_.host ? spec_.service_on(rport) : nullptr;
  if (!svc) {
    t += timing_.exploit;
    say("[-] " + peer + " - Exploit failed [unreachable]: Rex::ConnectionRefused The connection was refused by the remote host (" + peer + ").");
    return say(finish);
  }

  bool options_match = true;
  for (const auto& [name, pattern] : svc->required_options) {
    const auto v = value(name);
    if (pattern == "*") {
      options_match = options_match && !v.empty();
    } else {
      const auto expected = text::replace_all(text::replace_all(pattern, "${target}", spec_.host), "${port}", std::to_string(svc->port));
      options_match = options_match && v == expected;
    }
  }

  if (!svc->vulnerable_module || *svc->vulnerable_module != *con.module || !options_match) {
    t += timing_.exploit;
    if (aux) {
      say("[*] " + peer + " - Scanned 1 of 1 hosts (100% complete)");
    } else {
      say("[*] " + peer + " - The target does not appear to be vulnerable.");
    }
    return say(finish);
  }

  auto spawn = [&](std::string msg) {
    SessionEntry entry{svc->session_kind, *con.module, ""};
    con.pending.push_back({t, std::move(msg), entry, svc->session_lifetime, svc->session_user, svc->session_cwd});
  };
  const auto opened = [&] {
    return (svc->session_kind == SessionKind::meterpreter ? "[*] Meterpreter session {id} opened (" : "[*] Command shell session {id} opened (") +
           lhost + ":" + lport + " -> " + peer + ")";
  };

  if (svc->bruteforce) {
    auto read_lines = [&](const std::string& path, std::vector<std::string>& out) {
      std::ifstream in(path);
      if (!in) return false;
      std::string l;
      while (std::getline(in, l)) {
        const auto tl = text::trim(l);
        if (!tl.empty() && tl.front() != '#') out.emplace_back(tl);
      }
      return true;
    };
    std::vector<std::pair<std::string, std::string>> attempts;
    std::vector<std::string> users, passes, pairs;
    for (const auto& opt : {"USER_FILE", "PASS_FILE", "USERPASS_FILE"}) {
      const auto path = value(opt);
      if (path.empty()) continue;
      auto& target = std::string(opt) == "USER_FILE" ? users : std::string(opt) == "PASS_FILE" ? passes : pairs;
      if (!read_lines(path, target)) return say("[-] Auxiliary failed: Errno::ENOENT No such file or directory - " + path);
    }
    if (!value("USERNAME").empty()) users.insert(users.begin(), value("USERNAME"));
    if (!value("PASSWORD").empty()) passes.insert(passes.begin(), value("PASSWORD"));
    for (const auto& p : pairs) {
      const auto w = text::split_ws(p);
      if (w.size() >= 2) attempts.emplace_back(w[0], w[1]);
    }
    for (const auto& u : users)
      for (const auto& p : passes) attempts.emplace_back(u, p);
    if (attempts.empty())
      return say("[-] Auxiliary failed: Msf::OptionValidateError One of USERNAME, USER_FILE or USERPASS_FILE is required.");
    for (const auto& [u, p] : attempts) {
      t += timing_.bruteforce_attempt;
      if (u == svc->credential->user && p == svc->credential->pass) {
        say("[+] " + peer + " - Success: '" + u + ":" + p + "'");
        if (svc->attach_fails) {
          say("[-] " + peer + " - Session could not be retrieved after login.");
        } else {
          spawn(opened());
        }
        say("[*] " + peer + " - Scanned 1 of 1 hosts (100% complete)");
        return say(finish);
      }
      say("[-] " + peer + " - Failed: '" + u + ":" + p + "'");
    }
    say("[*] " + peer + " - Scanned 1 of 1 hosts (100% complete)");
    return say(finish);
  }

  t += timing_.exploit;
  if (svc->session_kind == SessionKind::meterpreter) say("[*] Sending stage (39927 bytes) to " + rhost);
  if (svc->attach_fails) {
    say("[-] " + peer + " - Session could not be retrieved: stage transfer interrupted.");
    return say(finish);
  }
  spawn(opened());
}

void SimulatedTarget::run_upgrade(Console& con, const std::vector<std::string>& words, double& t) {
  auto say = [&](std::string msg) { con.pending.push_back({t, std::move(msg), std::nullopt, std::nullopt, {}, {}}); };
  if (words.size() < 2 || words[1] == "-l") {
    std::string listing = "Active sessions\n===============\n";
    for (const auto& [id, s] : sessions_)
      if (alive(s)) listing += "  " + std::to_string(id) + "  " + std::string(to_string(s.entry.kind)) + "  " + s.user + "\n";
    return say(listing);
  }
  if (words[1] != "-u" || words.size() < 3) return say("[-] Usage: sessions -u <id>");
  int id = 0;
  try {
    id = std::stoi(words[2]);
  } catch (const std::exception&) {
  }
  const auto it = sessions_.find(id);
  if (it == sessions_.end() || !alive(it->second)) return say("[-] Invalid session identifier: " + words[2]);
  if (it->second.entry.kind != SessionKind::shell) return say("[-] Session " + words[2] + " is not a command shell session.");
  say("[*] Upgrading session ID: " + words[2]);
  t += timing_.upgrade;
  if (spec_.upgrade_fails) return say("[-] Post failed: Rex::TimeoutError Operation timed out.");
  SessionEntry entry{SessionKind::meterpreter, it->second.entry.info, "upgrade:" + words[2]};
  std::optional<double> lifetime;
  if (it->second.expires) lifetime = std::max(0.0, *it->second.expires - t);
  con.pending.push_back({t, "[*] Meterpreter session {id} opened (upgrade of session " + words[2] + ")", entry, lifetime,
                         it->second.user, it->second.cwd});
}

SessionInventory SimulatedTarget::list_sessions() {
  advance();
  SessionInventory inv;
  for (const auto& [id, s] : sessions_)
    if (alive(s)) inv[id] = s.entry;
  return inv;
}

void SimulatedTarget::session_write(int session_id, std::string_view line) {
  advance();
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("no session " + std::to_string(session_id));
  auto& s = it->second;
  const std::string cmd(text::trim(line));
  dispatch_log_.push_back("session " + std::to_string(session_id) + ":" + cmd);
  const double at = clock_.now() + timing_.session_command;
  std::string out = alive(s) ? run_session_line(s, cmd) : "[-] Session " + std::to_string(session_id) + " closed.";
  s.pending.push_back({at, std::move(out), std::nullopt, std::nullopt, {}, {}});
}

ConsoleRead SimulatedTarget::session_read(int session_id) {
  advance();
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("no session " + std::to_string(session_id));
  ConsoleRead r{std::move(it->second.ready), !it->second.pending.empty()};
  it->second.ready.clear();
  return r;
}

std::optional<std::string> SimulatedTarget::file(const std::string& path) const {
  for (const auto& f : spec_.filesystem)
    if (f.path == path) return f.contents;
  return std::nullopt;
}

std::string SimulatedTarget::resolve(const Session& s, const std::string& path) const {
  if (path.starts_with("/")) return normal_path(path);
  return normal_path(s.cwd + "/" + path);
}

std::string SimulatedTarget::run_session_line(Session& s, const std::string& line) {
  std::vector<std::string> w;
  try {
    w = tokenize_shell(line);
  } catch (const TokenizeError& e) {
    return std::string("[-] Parse error: ") + e.what();
  }
  std::erase_if(w, [](const std::string& tok) { return tok.starts_with("2>"); });
  if (w.empty()) return {};
  const bool meterpreter = s.entry.kind == SessionKind::meterpreter;
  const auto& verb = w[0];

  auto is_dir = [&](const std::string& dir) {
    if (dir == "/") return true;
    return std::any_of(spec_.filesystem.begin(), spec_.filesystem.end(), [&](const auto& f) { return under(f.path, dir); });
  };
  auto matches = [&](const std::string& dir, const std::string& pattern) {
    std::vector<const FileEntry*> out;
    for (const auto& f : spec_.filesystem)
      if (under(f.path, dir) && fnmatch(pattern.c_str(), basename_of(f.path).c_str(), 0) == 0) out.push_back(&f);
    return out;
  };
  auto listing = [&](const std::string& dir) {
    std::set<std::string> names;
    for (const auto& f : spec_.filesystem) {
      if (!under(f.path, dir)) continue;
      const auto rest = f.path.substr(dir == "/" ? 1 : dir.size() + 1);
      names.insert(rest.substr(0, rest.find('/')));
    }
    return names;
  };
  auto missing = [&](const std::string& p) {
    return meterpreter ? "[-] " + p + ": No such file or directory" : verb + ": " + p + ": No such file or directory";
  };

  if (verb == "pwd") return s.cwd;
  if (verb == "cd") {
    const auto dir = resolve(s, w.size() > 1 ? w[1] : "/");
    if (!is_dir(dir)) return missing(dir);
    s.cwd = dir;
    return {};
  }
  if (verb == "ls") {
    const auto dir = resolve(s, w.size() > 1 ? w[1] : s.cwd);
    if (!is_dir(dir)) return missing(dir);
    std::string out = meterpreter ? "Listing: " + dir + "\n" : "";
    for (const auto& n : listing(dir)) out += n + "\n";
    return out;
  }
  if (verb == "cat" || verb == "head" || verb == "tail" || verb == "download" || verb == "more") {
    if (w.size() < 2) return meterpreter ? "[-] Usage: " + verb + " <file>" : verb + ": missing operand";
    const auto p = resolve(s, w.back());
    const auto contents = file(p);
    if (!contents) return missing(p);
    if (verb == "download")
      return "[*] Downloading: " + p + " -> " + basename_of(p) + "\n[*] Downloaded " + std::to_string(contents->size()) +
             " B of " + std::to_string(contents->size()) + " B (100.0%)\n" + *contents;
    return *contents;
  }

  if (meterpreter) {
    if (verb == "search") {
      std::string dir = s.cwd, pattern;
      for (std::size_t i = 1; i + 1 < w.size(); ++i) {
        if (w[i] == "-d") dir = resolve(s, w[++i]);
        else if (w[i] == "-f") pattern = w[++i];
      }
      if (pattern.empty()) return "[-] search: a file pattern (-f) is required";
      const auto found = matches(dir, pattern);
      if (found.empty()) return "[-] No files matching your search were found.";
      std::string out = "[*] Found " + std::to_string(found.size()) + " result" + (found.size() == 1 ? "" : "s") + " for " + pattern + ".\n";
      for (const auto* f : found) out += "    " + f->path + " (" + std::to_string(f->contents.size()) + " bytes)\n";
      return out;
    }
    if (verb == "getuid") return "Server username: " + s.user;
    if (verb == "sysinfo") return "Computer        : " + spec_.host + "\nOS              : Linux";
    return "[-] Unknown command: " + verb;
  }

  if (verb == "find") {
    std::string dir = w.size() > 1 && !w[1].starts_with("-") ? resolve(s, w[1]) : s.cwd;
    std::string pattern = "*";
    for (std::size_t i = 1; i + 1 < w.size(); ++i)
      if (w[i] == "-name" || w[i] == "-iname") pattern = w[i + 1];
    if (!is_dir(dir)) return missing(dir);
    std::string out;
    for (const auto* f : matches(dir, pattern)) out += f->path + "\n";
    return out;
  }
  if (verb == "locate") {
    if (w.size() < 2) return "locate: no pattern to search for specified";
    std::string out;
    for (const auto& f : spec_.filesystem)
      if (f.path.find(w[1]) != std::string::npos) out += f.path + "\n";
    return out;
  }
  if (verb == "grep") {
    if (w.size() < 3) return "grep: missing operand";
    const auto contents = file(resolve(s, w[2]));
    if (!contents) return missing(resolve(s, w[2]));
    std::string out;
    for (const auto& l : text::split_lines(*contents))
      if (l.find(w[1]) != std::string::npos) out += l + "\n";
    return out;
  }
  if (verb == "id") {
    const int uid = s.user == "root" ? 0 : 33;
    return "uid=" + std::to_string(uid) + "(" + s.user + ") gid=" + std::to_string(uid) + "(" + s.user + ")";
  }
  if (verb == "whoami") return s.user;
  if (verb == "uname") return "Linux";
  return "sh: 1: " + verb + ": not found";
}

// ---------------------------------------------------------------------------
// Scripted playback

ScriptedBackend::ScriptedBackend(std::string name, std::vector<Record> records)
    : name_(std::move(name)), records_(std::move(records)) {}

ScriptedBackend ScriptedBackend::load(std::istream& source) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(source);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("playbook is not valid JSON: ") + e.what());
  }
  std::vector<Record> records;
  try {
    for (const auto& r : doc.at("records")) {
      std::string completion;
      const auto& c = r.at("completion");
      if (c.is_array()) {
        std::vector<std::string> lines;
        for (const auto& l : c) lines.push_back(l.get<std::string>());
        completion = text::join(lines, "\n");
      } else {
        completion = c.get<std::string>();
      }
      records.push_back({r.at("fingerprint").get<std::string>(), std::move(completion)});
    }
    return ScriptedBackend(doc.value("name", std::string("playbook")), std::move(records));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("playbook field error: ") + e.what());
  }
}

ScriptedBackend ScriptedBackend::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open playbook: " + path);
  return load(in);
}

std::string ScriptedBackend::complete(const Prompt& prompt) {
  const auto fp = prompt.fingerprint();
  if (cursor_ >= records_.size()) throw PlaybackError("playbook '" + name_ + "' exhausted at prompt " + fp);
  const auto& rec = records_[cursor_];
  if (rec.fingerprint != fp)
    throw PlaybackError("playbook '" + name_ + "' expected prompt " + rec.fingerprint + " but got " + fp);
  ++cursor_;
  return rec.completion;
}

// ---------------------------------------------------------------------------
// Rule-driven backend

PolicyBackend::PolicyBackend(Profile profile, std::uint64_t seed) : profile_(std::move(profile)), seed_(seed) {}

PolicyBackend::Profile PolicyBackend::load_profile(std::istream& source) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(source);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("profile is not valid JSON: ") + e.what());
  }
  auto candidates = [](const ordered_json& arr, const char* key) {
    std::vector<Candidate> out;
    for (const auto& c : arr) {
      Candidate cand;
      cand.module = c.at(key).get<std::string>();
      cand.weight = c.value("weight", 1.0);
      if (cand.weight <= 0) throw ConfigError("candidate weight must be positive: " + cand.module);
      if (c.contains("payload")) cand.payload = c.at("payload").get<std::string>();
      out.push_back(std::move(cand));
    }
    return out;
  };
  Profile p;
  try {
    p.name = doc.value("name", std::string("profile"));
    p.flag_name = doc.value("flag_name", std::string("flag.txt"));
    p.history_recall = doc.value("history_recall", 0.5);
    for (const auto& r : doc.at("recon")) p.recon.push_back(r.get<std::string>());
    for (const auto& [service, arr] : doc.at("services").items()) p.services[service] = candidates(arr, "module");
    if (doc.contains("fallback")) p.fallback = candidates(doc.at("fallback"), "module");
    for (const auto& [kind, arr] : doc.at("exfil").items()) p.exfil[parse_session_kind(kind)] = candidates(arr, "command");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("profile field error: ") + e.what());
  }
  if (p.recon.empty()) throw ConfigError("profile has no recon commands");
  return p;
}

PolicyBackend::Profile PolicyBackend::load_profile_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open profile: " + path);
  return load_profile(in);
}

double PolicyBackend::draw(const Prompt& prompt, std::string_view salt) const {
  std::mt19937_64 rng(text::fnv1a(std::string(salt) + "\x1f" + prompt.text, text::fnv1a(std::to_string(seed_))));
  return unit(rng());
}

std::set<std::string> PolicyBackend::recalled_failures(const Prompt& prompt, Stage stage) const {
  std::set<std::string> failed;
  if (const auto mem = prompt.slot("memory"); !mem.empty()) {
    std::map<std::string, Outcome> latest;
    for (const auto& e : parse_stage_log(mem)) latest[e.cmd] = e.result;
    for (const auto& [cmd, r] : latest)
      if (r == Outcome::fail) failed.insert(cmd);
  }
  if (const auto rejected = prompt.slot("rejected"); !rejected.empty())
    for (const auto& r : text::split(rejected, ',')) failed.emplace(text::trim(r));
  if (const auto history = prompt.slot("history"); !history.empty()) {
    const std::string tag = "TOOL: FAIL: ";
    std::map<std::string, bool> latest_failed;
    for (const auto& line : text::split_lines(history)) {
      const bool fail = line.starts_with(tag);
      if (!fail && !line.starts_with("TOOL: SUCCESS: ")) continue;
      auto rest = line.substr(fail ? tag.size() : std::string("TOOL: SUCCESS: ").size());
      const auto arrow = rest.find(" -> ");
      latest_failed[rest.substr(0, arrow)] = fail;
    }
    for (const auto& [cmd, fail] : latest_failed)
      if (fail && draw(prompt, "recall:" + std::string(to_string(stage)) + ":" + cmd) < profile_.history_recall)
        failed.insert(cmd);
  }
  return failed;
}

const PolicyBackend::Candidate& PolicyBackend::pick(const std::vector<const Candidate*>& pool, const Prompt& prompt,
                                                    std::string_view salt) const {
  double total = 0;
  for (const auto* c : pool) total += c->weight;
  double u = draw(prompt, salt) * total;
  for (const auto* c : pool) {
    if (u < c->weight) return *c;
    u -= c->weight;
  }
  return *pool.back();
}

std::string PolicyBackend::complete(const Prompt& prompt) {
  switch (prompt.role) {
    case PromptRole::recon:
      return recon(prompt);
    case PromptRole::select_exploit:
      return select(prompt);
    case PromptRole::setup_module:
      return setup(prompt);
    case PromptRole::exfiltrate:
      return exfil(prompt);
    case PromptRole::summarize:
      return {};
  }
  return {};
}

std::string PolicyBackend::recon(const Prompt& prompt) const {
  std::vector<Candidate> pool;
  for (const auto& r : profile_.recon) pool.push_back({r, 1.0, std::nullopt});
  std::vector<const Candidate*> ptrs;
  for (const auto& c : pool) ptrs.push_back(&c);
  const auto line = text::replace_all(pick(ptrs, prompt, "recon").module, "{target}", prompt.slot("target"));
  return "Start with a service and version scan of the target.\n```\n" + line + "\n```\n";
}

std::string PolicyBackend::select(const Prompt& prompt) const {
  struct Finding {
    std::string line, ip, service;
  };
  std::vector<Finding> findings;
  for (const auto& l : text::split_lines(prompt.slot("findings"))) {
    const auto f = text::split(l, '|');
    if (f.size() == 4) findings.push_back({l, f[0], f[2]});
  }
  if (findings.empty()) return "No findings to act on.";

  const auto failed = recalled_failures(prompt, Stage::exploit);
  auto excluded = [&](const Candidate& c) {
    const auto suffix = last_segment(c.module);
    return std::any_of(failed.begin(), failed.end(), [&](const std::string& f) {
      const auto slash = f.rfind('/');
      return f == c.module || (slash == std::string::npos ? f : f.substr(slash + 1)) == suffix;
    });
  };

  const Finding* chosen = nullptr;
  std::vector<const Candidate*> pool;
  for (const auto& f : findings) {
    const auto it = profile_.services.find(f.service);
    if (it == profile_.services.end()) continue;
    for (const auto& c : it->second)
      if (!excluded(c)) pool.push_back(&c);
    if (!pool.empty()) {
      chosen = &f;
      break;
    }
  }
  if (!chosen) {
    for (const auto& f : findings) {
      const auto it = profile_.services.find(f.service);
      if (it == profile_.services.end()) continue;
      chosen = &f;
      for (const auto& c : it->second) pool.push_back(&c);
      break;
    }
  }
  if (!chosen) {
    chosen = &findings.front();
    for (const auto& c : profile_.fallback)
      if (!excluded(c)) pool.push_back(&c);
    if (pool.empty())
      for (const auto& c : profile_.fallback) pool.push_back(&c);
  }
  if (pool.empty()) return "HEADER " + chosen->line + "\nNo suitable module is known for this service.";

  const auto& c = pick(pool, prompt, "select");
  std::string out = "HEADER " + chosen->line + "\n";
  out += "use " + c.module + "\n";
  out += "set RHOSTS " + chosen->ip + "\n";
  if (c.payload) out += "set PAYLOAD " + *c.payload + "\n";
  out += "exploit\n";
  return out;
}

std::string PolicyBackend::setup(const Prompt& prompt) const {
  std::set<std::string> names;
  for (const auto& l : text::split_lines(prompt.slot("schema"))) {
    const auto w = text::split_ws(l);
    if (!w.empty() && w[0] != "payload") names.insert(w[0]);
  }
  std::string out;
  if (names.count("RHOSTS")) out += "set RHOSTS " + prompt.slot("target") + "\n";
  if (names.count("LHOST") && !prompt.slot("lhost").empty()) out += "set LHOST " + prompt.slot("lhost") + "\n";
  if (names.count("LPORT") && !prompt.slot("lport").empty()) out += "set LPORT " + prompt.slot("lport") + "\n";
  return out;
}

std::string PolicyBackend::exfil(const Prompt& prompt) const {
  const auto kind = parse_session_kind(prompt.slot("session_kind"));
  const auto failed = recalled_failures(prompt, Stage::exfiltrate);

  // A path to the flag mentioned in the latest result or the history.
  const std::regex path_re("(/[A-Za-z0-9_./-]*/" + std::regex_replace(profile_.flag_name, std::regex(R"([.^$|()\[\]{}*+?\\])"), R"(\$&)") + ")");
  std::optional<std::string> known;
  for (const auto& source : {prompt.slot("history"), prompt.slot("last_result")}) {
    for (auto it = std::sregex_iterator(source.begin(), source.end(), path_re); it != std::sregex_iterator(); ++it)
      known = (*it)[1].str();
  }
  if (known && !failed.count("cat " + *known)) return "cat " + *known + "\n";

  const auto it = profile_.exfil.find(kind);
  if (it == profile_.exfil.end() || it->second.empty()) return "No command available for this session.";
  std::vector<Candidate> expanded;
  for (const auto& c : it->second)
    expanded.push_back({text::replace_all(c.module, "{flag}", profile_.flag_name), c.weight, std::nullopt});
  std::vector<const Candidate*> pool;
  for (const auto& c : expanded)
    if (!failed.count(c.module)) pool.push_back(&c);
  if (pool.empty())
    for (const auto& c : expanded) pool.push_back(&c);
  return pick(pool, prompt, "exfil").module + "\n";
}

// ---------------------------------------------------------------------------
// Hallucination injection

std::string_view to_string(Perturbation kind) {
  switch (kind) {
    case Perturbation::suffix_edit:
      return "suffix_edit";
    case Perturbation::hierarchy_scramble:
      return "hierarchy_scramble";
    case Perturbation::type_swap:
      return "type_swap";
  }
  return "?";
}

Perturbation parse_perturbation(std::string_view text) {
  for (auto k : {Perturbation::suffix_edit, Perturbation::hierarchy_scramble, Perturbation::type_swap})
    if (to_string(k) == text) return k;
  throw ConfigError("unknown perturbation kind '" + std::string(text) + "'");
}

namespace {

std::string perturb_once(std::string_view path, Perturbation kind, std::mt19937_64& rng) {
  static constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyz0123456789_";
  static const std::vector<std::string> kSegments = {"linux", "unix", "windows", "multi", "http", "webapp", "misc",
                                                     "ssh", "ftp", "scanner", "remote", "smb", "irc", "postgres",
                                                     "samba", "telnet", "local", "gather"};
  auto segs = text::split(path, '/');
  switch (kind) {
    case Perturbation::suffix_edit: {
      auto& last = segs.back();
      const int edits = 1 + static_cast<int>(rng() % 2);
      for (int e = 0; e < edits; ++e) {
        const auto op = rng() % 3;
        const char c = kAlphabet[rng() % kAlphabet.size()];
        if (op == 0 || last.size() <= 1) {
          last.insert(last.begin() + static_cast<std::ptrdiff_t>(rng() % (last.size() + 1)), c);
        } else if (op == 1) {
          last.erase(rng() % last.size(), 1);
        } else {
          const auto pos = rng() % last.size();
          last[pos] = c == last[pos] ? (c == 'a' ? 'b' : 'a') : c;
        }
      }
      break;
    }
    case Perturbation::hierarchy_scramble: {
      if (segs.size() < 3) segs.insert(segs.begin() + 1, kSegments[rng() % kSegments.size()]);
      for (std::size_t i = 1; i + 1 < segs.size(); ++i) segs[i] = kSegments[rng() % kSegments.size()];
      break;
    }
    case Perturbation::type_swap:
      segs.front() = segs.front() == "exploit" ? "auxiliary" : "exploit";
      break;
  }
  return text::join(segs, "/");
}

}  // namespace

std::string perturb_path(std::string_view path, Perturbation kind, const ModuleDatabase& kb, std::mt19937_64& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    auto p = perturb_once(path, kind, rng);
    if (p != path && !kb.contains(p) && !p.ends_with("/")) return p;
  }
  throw Error("cannot perturb " + std::string(path) + " with " + std::string(to_string(kind)) + " outside the knowledge base");
}

HallucinationInjector::HallucinationInjector(ModelBackend& inner, const ModuleDatabase& kb, double rate,
                                             std::uint64_t seed, std::vector<Perturbation> kinds)
    : inner_(inner), kb_(kb), rate_(rate), kinds_(std::move(kinds)), rng_(seed) {
  if (rate < 0 || rate > 1) throw ConfigError("hallucination rate must be within [0, 1]");
  if (kinds_.empty()) throw ConfigError("at least one perturbation kind is required");
}

std::string HallucinationInjector::identity() const {
  std::ostringstream out;
  out << "hallucinate(" << inner_.identity() << ", rate=" << rate_ << ")";
  return out.str();
}

std::string HallucinationInjector::complete(const Prompt& prompt) {
  auto completion = inner_.complete(prompt);
  if (prompt.role != PromptRole::select_exploit || rate_ <= 0) return completion;
  std::string out;
  for (const auto& line : text::split_lines(completion)) {
    const auto w = text::split_ws(line);
    if (w.size() == 2 && w[0] == "use" && unit(rng_()) < rate_) {
      const auto kind = kinds_[rng_() % kinds_.size()];
      const auto perturbed = perturb_path(w[1], kind, kb_, rng_);
      events_.push_back({prompt.fingerprint(), w[1], perturbed, kind});
      out += "use " + perturbed + "\n";
    } else {
      out += line + "\n";
    }
  }
  return out;
}

std::vector<GeneratedCase> generate_corpus(const ModuleDatabase& kb, std::size_t n, std::uint64_t seed, CorpusMix mix) {
  std::vector<const ModuleRecord*> eligible;
  for (const auto& r : kb.records())
    if (r.module_type == ModuleType::exploit || r.module_type == ModuleType::auxiliary) eligible.push_back(&r);
  if (eligible.empty()) throw PreconditionError("knowledge base has no exploit or auxiliary modules");
  const double total = mix.suffix_edit + mix.hierarchy_scramble + mix.type_swap;
  if (total <= 0) throw ConfigError("corpus mix weights must sum to a positive value");

  std::mt19937_64 rng(seed);
  std::vector<GeneratedCase> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = unit(rng()) * total;
    const auto kind = u < mix.suffix_edit ? Perturbation::suffix_edit
                      : u < mix.suffix_edit + mix.hierarchy_scramble ? Perturbation::hierarchy_scramble
                                                                     : Perturbation::type_swap;
    const auto* rec = eligible[rng() % eligible.size()];
    out.push_back({{perturb_path(rec->path, kind, kb, rng), rec->path}, kind});
  }
  return out;
}

}  // namespace redloop
