#pragma once

// Knowledge base of verified attack-framework modules.
//
// The database is immutable once built and is the ground truth every
// rectified module path must resolve into.

#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "redloop/common.hpp"

namespace redloop {

enum class ModuleType { exploit, auxiliary, post, payload, encoder, nop };

std::string_view to_string(ModuleType type);
std::optional<ModuleType> parse_module_type(std::string_view text);

// Ordered manual < low < average < normal < good < great < excellent.
enum class Rank { manual = 0, low, average, normal, good, great, excellent };

std::string_view to_string(Rank rank);
std::optional<Rank> parse_rank(std::string_view text);

struct ModuleRecord {
  std::string path;
  ModuleType module_type = ModuleType::exploit;
  std::string service;
  std::string os;
  Rank rank = Rank::normal;
  std::string description;

  std::string_view suffix() const;

  bool operator==(const ModuleRecord&) const = default;
};

class KbLoadError : public Error {
 public:
  KbLoadError(std::size_t line, const std::string& what)
      : Error(line ? "kb line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Checks the per-record invariants; returns a description of the first
// violation or nullopt when the record is well formed.
std::optional<std::string> validate_record(const ModuleRecord& record);

class ModuleDatabase {
 public:
  ModuleDatabase() = default;

  // Validates every record and builds the indices. Throws KbLoadError on an
  // invalid record or a duplicate path.
  static ModuleDatabase from_records(std::vector<ModuleRecord> records);

  const std::vector<ModuleRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  const ModuleRecord* find(std::string_view path) const;
  bool contains(std::string_view path) const { return find(path) != nullptr; }

  // Record indices sharing the given suffix, in file order.
  std::span<const std::size_t> by_suffix(std::string_view suffix) const;
  std::span<const std::size_t> by_service(std::string_view service) const;

  const std::map<std::string, std::vector<std::size_t>, std::less<>>& suffix_index() const { return suffix_index_; }

 private:
  std::vector<ModuleRecord> records_;
  std::map<std::string, std::size_t, std::less<>> path_index_;
  std::map<std::string, std::vector<std::size_t>, std::less<>> suffix_index_;
  std::map<std::string, std::vector<std::size_t>, std::less<>> service_index_;
};

enum class KbFormat { pipe };

// Pipe format, one record per line:
//   module_type|os|service|path|rank|description
// Lines starting with '#' and blank lines are skipped.
ModuleDatabase load_database(std::istream& source, KbFormat format = KbFormat::pipe);
ModuleDatabase load_database_file(const std::string& path);
std::string serialize(const ModuleDatabase& db);

std::set<std::string> suffixes(const ModuleDatabase& db);

// Folds service names through a data-driven alias table ("OpenSSH" -> "ssh").
class ServiceAliases {
 public:
  ServiceAliases() = default;

  // Alias file: `alias = canonical` per line, '#' comments.
  static ServiceAliases load(std::istream& source);
  static ServiceAliases load_file(const std::string& path);

  void add(std::string_view alias, std::string_view canonical);
  std::string canonicalize(std::string_view raw) const;

 private:
  std::map<std::string, std::string, std::less<>> aliases_;
};

std::string canonicalize_service(const ServiceAliases& aliases, std::string_view raw);

std::vector<ModuleRecord> query_modules(const ModuleDatabase& db, std::string_view service, Rank min_rank);

struct OptionSpec {
  std::string name;
  bool required = false;
  std::optional<std::string> default_value;
};

struct PayloadSpec {
  std::string path;
  std::string arch;
};

struct OptionSchema {
  std::string module_path;
  std::vector<OptionSpec> options;
  std::vector<PayloadSpec> payloads;

  const OptionSpec* find_option(std::string_view name) const;
  const PayloadSpec* find_payload(std::string_view path) const;
};

// Anything able to describe a module's options: the simulator table, a
// static schema file, or a live RPC client.
class OptionSchemaProvider {
 public:
  virtual ~OptionSchemaProvider() = default;
  // Throws NotFoundError for unknown modules.
  virtual OptionSchema schema(std::string_view module_path) const = 0;
};

// Stanza file:
//   module <path>
//   opt <NAME> required|optional [default]
//   payload <path> <arch>
class SchemaTable : public OptionSchemaProvider {
 public:
  static SchemaTable load(std::istream& source);
  static SchemaTable load_file(const std::string& path);

  void add(OptionSchema schema);
  OptionSchema schema(std::string_view module_path) const override;
  bool contains(std::string_view module_path) const;
  std::size_t size() const { return schemas_.size(); }

 private:
  std::map<std::string, OptionSchema, std::less<>> schemas_;
};

OptionSchema option_schema(const OptionSchemaProvider& provider, std::string_view module_path);

}  // namespace redloop
