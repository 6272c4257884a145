#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "redloop/module_kb.hpp"
#include "test_util.hpp"

using namespace redloop;
using testutil::kb_from;

TEST_CASE("load_database: single vsftpd record") {
  const auto db = kb_from("exploit|unix|ftp|exploit/unix/ftp/vsftpd_234_backdoor|excellent|VSFTPD v2.3.4 backdoor\n");
  REQUIRE(db.size() == 1);
  CHECK(db.records()[0].suffix() == "vsftpd_234_backdoor");
  CHECK(db.records()[0].rank == Rank::excellent);
  CHECK(db.records()[0].service == "ftp");
  CHECK(db.by_suffix("vsftpd_234_backdoor").size() == 1);
}

TEST_CASE("load_database: empty and comment-only input") {
  CHECK(kb_from("").empty());
  CHECK(kb_from("# nothing here\n\n   \n").empty());
}

TEST_CASE("load_database: two records sharing a suffix") {
  const auto db = kb_from(
      "auxiliary|multi|ssh|auxiliary/scanner/ssh/ssh_login|normal|SSH login\n"
      "auxiliary|multi|ssh|auxiliary/other/ssh/ssh_login|normal|copy\n"
      "exploit|unix|ftp|exploit/unix/ftp/vsftpd_234_backdoor|excellent|x\n");
  CHECK(db.by_suffix("ssh_login").size() == 2);
  CHECK(db.suffix_index().size() == 2);
}

TEST_CASE("load_database: malformed records fail with the line number") {
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      kb_from(text);
    } catch (const KbLoadError& e) {
      return e.line();
    }
    return 0;
  };
  // Unknown rank.
  CHECK(line_of("# c\nexploit|unix|ftp|exploit/unix/ftp/x|superb|d\n") == 2);
  // Path prefix disagrees with the type.
  CHECK(line_of("auxiliary|unix|ftp|exploit/unix/ftp/x|normal|d\n") == 1);
  // Trailing slash leaves an empty suffix.
  CHECK(line_of("exploit|unix|ftp|exploit/unix/ftp/|normal|d\n") == 1);
  // Too few fields.
  CHECK(line_of("exploit|unix|ftp\n") == 1);
  // Duplicate path.
  CHECK(line_of("exploit|u|ftp|exploit/a/b|normal|d\nexploit|u|ftp|exploit/a/b|good|d\n") == 2);
  // Whitespace inside the path.
  CHECK(line_of("exploit|u|ftp|exploit/a b/c|normal|d\n") == 1);
}

TEST_CASE("validate_record") {
  ModuleRecord r{"exploit/unix/ftp/vsftpd_234_backdoor", ModuleType::exploit, "ftp", "unix", Rank::excellent, "d"};
  CHECK_FALSE(validate_record(r));
  r.path = "noslash";
  CHECK(validate_record(r));
  r.path = "post/unix/x";
  CHECK(validate_record(r));
}

TEST_CASE("suffixes") {
  CHECK(suffixes(kb_from("exploit|u|s|exploit/b/c|normal|\nexploit|u|s|exploit/b/d|normal|\n")) ==
        std::set<std::string>{"c", "d"});
  CHECK(suffixes(testutil::sample_kb()).count("ssh_enumusers") == 1);
  CHECK(suffixes(ModuleDatabase{}).empty());
}

TEST_CASE("sample KB invariants") {
  const auto& db = testutil::sample_kb();
  CHECK(db.size() >= 50);
  std::set<std::string> paths;
  for (const auto& r : db.records()) {
    CHECK_FALSE(validate_record(r));
    CHECK(paths.insert(r.path).second);
    const auto hits = db.by_suffix(r.suffix());
    const auto self = static_cast<std::size_t>(&r - db.records().data());
    CHECK(std::find(hits.begin(), hits.end(), self) != hits.end());
    CHECK(suffixes(db).count(std::string(r.suffix())) == 1);
  }
  std::set<std::string> keys;
  for (const auto& [k, _] : db.suffix_index()) keys.insert(k);
  CHECK(keys == suffixes(db));
}

TEST_CASE("serialize round trip") {
  const auto& db = testutil::sample_kb();
  const auto again = kb_from(serialize(db));
  CHECK(again.records() == db.records());
  CHECK(serialize(again) == serialize(db));
}

TEST_CASE("serialize round trip on random databases") {
  std::mt19937_64 rng(11);
  const char* types[] = {"exploit", "auxiliary", "post", "payload"};
  const char* ranks[] = {"manual", "low", "average", "normal", "good", "great", "excellent"};
  for (int round = 0; round < 50; ++round) {
    std::vector<ModuleRecord> recs;
    const int n = static_cast<int>(rng() % 20);
    for (int i = 0; i < n; ++i) {
      const auto type = *parse_module_type(types[rng() % 4]);
      ModuleRecord r;
      r.module_type = type;
      r.path = std::string(to_string(type)) + "/os" + std::to_string(rng() % 3) + "/m_" + std::to_string(i);
      r.service = "svc" + std::to_string(rng() % 4);
      r.os = "linux";
      r.rank = *parse_rank(ranks[rng() % 7]);
      r.description = "desc " + std::to_string(rng() % 100);
      recs.push_back(r);
    }
    const auto db = ModuleDatabase::from_records(recs);
    CHECK(kb_from(serialize(db)).records() == db.records());
  }
}

TEST_CASE("service aliases") {
  const auto aliases = ServiceAliases::load_file(data_path("kb/service_aliases.txt"));
  CHECK(canonicalize_service(aliases, "OpenSSH") == "ssh");
  CHECK(canonicalize_service(aliases, "ssh") == "ssh");
  CHECK(canonicalize_service(aliases, "Apache httpd") == "http");
  CHECK(canonicalize_service(aliases, "OpenSSH 4.7p1 Debian 8ubuntu1") == "ssh");
  CHECK(canonicalize_service(aliases, "netbios-ssn") == "smb");
  // Unknown names fold to lower case.
  CHECK(canonicalize_service(aliases, "Gopher") == "gopher");
}

TEST_CASE("query_modules") {
  const auto& db = testutil::sample_kb();
  const auto ftp = query_modules(db, "ftp", Rank::excellent);
  CHECK(std::any_of(ftp.begin(), ftp.end(), [](const auto& r) { return r.suffix() == "vsftpd_234_backdoor"; }));
  CHECK(query_modules(db, "nosuchservice", Rank::manual).empty());

  for (const char* svc : {"ssh", "http", "smb", "ftp", "irc"}) {
    const auto all = query_modules(db, svc, Rank::manual);
    for (auto min : {Rank::low, Rank::normal, Rank::great, Rank::excellent}) {
      const auto some = query_modules(db, svc, min);
      // Subset of the looser query and of the records, equal to a direct filter.
      std::vector<ModuleRecord> direct;
      for (const auto& r : db.records())
        if (r.service == svc && r.rank >= min) direct.push_back(r);
      CHECK(some == direct);
      for (const auto& r : some) {
        CHECK(std::find(all.begin(), all.end(), r) != all.end());
        CHECK(db.contains(r.path));
      }
      // Filtering twice is filtering once.
      std::vector<ModuleRecord> twice;
      for (const auto& r : some)
        if (r.rank >= min) twice.push_back(r);
      CHECK(twice == some);
    }
  }
}

TEST_CASE("option_schema") {
  const auto& schemas = testutil::sample_schemas();
  const auto s = option_schema(schemas, "exploit/unix/ftp/vsftpd_234_backdoor");
  REQUIRE(s.find_option("RHOSTS"));
  REQUIRE(s.find_option("RPORT"));
  CHECK(s.find_option("RHOSTS")->required);
  CHECK(s.find_option("RPORT")->required);
  CHECK(s.find_option("RPORT")->default_value == "21");
  CHECK_THROWS_AS(option_schema(schemas, "exploit/none/such"), NotFoundError);

  // Every exploit and auxiliary KB module has a schema with unique option names.
  for (const auto& r : testutil::sample_kb().records()) {
    if (r.module_type != ModuleType::exploit && r.module_type != ModuleType::auxiliary) continue;
    CAPTURE(r.path);
    REQUIRE(schemas.contains(r.path));
    std::set<std::string> names;
    for (const auto& o : schemas.schema(r.path).options) CHECK(names.insert(o.name).second);
  }
}

TEST_CASE("schema table rejects repeated option names") {
  std::istringstream in("module exploit/a/b\nopt RHOSTS required\nopt RHOSTS optional\n");
  CHECK_THROWS(SchemaTable::load(in));
}
