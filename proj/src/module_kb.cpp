#include "redloop/module_kb.hpp"

#include <fstream>
#include <istream>
#include <sstream>

namespace redloop {

namespace {

constexpr std::string_view kTypeNames[] = {"exploit", "auxiliary", "post", "payload", "encoder", "nop"};
constexpr std::string_view kRankNames[] = {"manual", "low", "average", "normal", "good", "great", "excellent"};

}  // namespace

std::string_view to_string(ModuleType type) { return kTypeNames[static_cast<int>(type)]; }

std::optional<ModuleType> parse_module_type(std::string_view text) {
  for (int i = 0; i < 6; ++i)
    if (kTypeNames[i] == text) return static_cast<ModuleType>(i);
  return std::nullopt;
}

std::string_view to_string(Rank rank) { return kRankNames[static_cast<int>(rank)]; }

std::optional<Rank> parse_rank(std::string_view text) {
  for (int i = 0; i < 7; ++i)
    if (kRankNames[i] == text) return static_cast<Rank>(i);
  return std::nullopt;
}

std::string_view ModuleRecord::suffix() const {
  const auto pos = path.rfind('/');
  return pos == std::string::npos ? std::string_view(path) : std::string_view(path).substr(pos + 1);
}

std::optional<std::string> validate_record(const ModuleRecord& record) {
  const auto& p = record.path;
  if (p.empty()) return "empty module path";
  if (p.find('/') == std::string::npos) return "module path has no '/': " + p;
  if (text::contains_whitespace(p)) return "module path contains whitespace: " + p;
  if (record.suffix().empty()) return "module path has empty last segment: " + p;
  const auto first = std::string_view(p).substr(0, p.find('/'));
  if (first != to_string(record.module_type))
    return "module path '" + p + "' does not start with its type '" + std::string(to_string(record.module_type)) + "'";
  if (record.description.find('\n') != std::string::npos) return "description spans lines";
  return std::nullopt;
}

ModuleDatabase ModuleDatabase::from_records(std::vector<ModuleRecord> records) {
  ModuleDatabase db;
  db.records_ = std::move(records);
  for (std::size_t i = 0; i < db.records_.size(); ++i) {
    const auto& r = db.records_[i];
    if (auto err = validate_record(r)) throw KbLoadError(0, "record " + std::to_string(i + 1) + ": " + *err);
    if (!db.path_index_.emplace(r.path, i).second) throw KbLoadError(0, "duplicate module path: " + r.path);
    db.suffix_index_[std::string(r.suffix())].push_back(i);
    db.service_index_[r.service].push_back(i);
  }
  return db;
}

const ModuleRecord* ModuleDatabase::find(std::string_view path) const {
  const auto it = path_index_.find(path);
  return it == path_index_.end() ? nullptr : &records_[it->second];
}

std::span<const std::size_t> ModuleDatabase::by_suffix(std::string_view suffix) const {
  const auto it = suffix_index_.find(suffix);
  if (it == suffix_index_.end()) return {};
  return it->second;
}

std::span<const std::size_t> ModuleDatabase::by_service(std::string_view service) const {
  const auto it = service_index_.find(service);
  if (it == service_index_.end()) return {};
  return it->second;
}

ModuleDatabase load_database(std::istream& source, KbFormat /*format*/) {
  std::vector<ModuleRecord> records;
  std::map<std::string, std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(source, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (!text::valid_utf8(line)) throw KbLoadError(lineno, "invalid UTF-8");

    // The description is the last field and may itself contain '|'.
    auto fields = text::split(line, '|');
    if (fields.size() < 6) throw KbLoadError(lineno, "expected 6 '|'-separated fields, got " + std::to_string(fields.size()));
    std::string description = fields[5];
    for (std::size_t k = 6; k < fields.size(); ++k) description += "|" + fields[k];

    ModuleRecord r;
    const auto type = parse_module_type(text::trim(fields[0]));
    if (!type) throw KbLoadError(lineno, "unknown module type '" + fields[0] + "'");
    r.module_type = *type;
    r.os = std::string(text::trim(fields[1]));
    r.service = std::string(text::trim(fields[2]));
    r.path = std::string(text::trim(fields[3]));
    const auto rank = parse_rank(text::trim(fields[4]));
    if (!rank) throw KbLoadError(lineno, "unknown rank '" + fields[4] + "'");
    r.rank = *rank;
    r.description = std::string(text::trim(description));
    if (r.service.empty()) throw KbLoadError(lineno, "empty service field");
    if (auto err = validate_record(r)) throw KbLoadError(lineno, *err);
    if (auto [it, inserted] = seen.emplace(r.path, lineno); !inserted)
      throw KbLoadError(lineno, "duplicate module path " + r.path + " (first seen on line " + std::to_string(it->second) + ")");
    records.push_back(std::move(r));
  }
  return ModuleDatabase::from_records(std::move(records));
}

ModuleDatabase load_database_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open knowledge base: " + path);
  return load_database(in);
}

std::string serialize(const ModuleDatabase& db) {
  std::string out;
  for (const auto& r : db.records()) {
    out += to_string(r.module_type);
    out += '|' + r.os + '|' + r.service + '|' + r.path + '|';
    out += to_string(r.rank);
    out += '|' + r.description + '\n';
  }
  return out;
}

std::set<std::string> suffixes(const ModuleDatabase& db) {
  std::set<std::string> out;
  for (const auto& [suffix, _] : db.suffix_index()) out.insert(suffix);
  return out;
}

ServiceAliases ServiceAliases::load(std::istream& source) {
  ServiceAliases aliases;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(source, line)) {
    ++lineno;
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ConfigError("alias line " + std::to_string(lineno) + ": expected 'alias = canonical'");
    aliases.add(text::trim(t.substr(0, eq)), text::trim(t.substr(eq + 1)));
  }
  return aliases;
}

ServiceAliases ServiceAliases::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open alias table: " + path);
  return load(in);
}

void ServiceAliases::add(std::string_view alias, std::string_view canonical) {
  aliases_[text::lower(text::trim(alias))] = text::lower(text::trim(canonical));
}

std::string ServiceAliases::canonicalize(std::string_view raw) const {
  // Collapse internal whitespace so "Apache   httpd" folds like "Apache httpd".
  const auto key = text::join(text::split_ws(text::lower(raw)), " ");
  if (const auto it = aliases_.find(key); it != aliases_.end()) return it->second;
  const auto words = text::split_ws(key);
  // Banner strings carry versions ("OpenSSH 4.7p1 Debian"); fall back to the
  // longest alias that prefixes the words.
  for (std::size_t n = words.size(); n > 1; --n) {
    std::vector<std::string> head(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(n - 1));
    if (const auto it = aliases_.find(text::join(head, " ")); it != aliases_.end()) return it->second;
  }
  return key;
}

std::string canonicalize_service(const ServiceAliases& aliases, std::string_view raw) {
  return aliases.canonicalize(raw);
}

std::vector<ModuleRecord> query_modules(const ModuleDatabase& db, std::string_view service, Rank min_rank) {
  std::vector<ModuleRecord> out;
  for (const auto idx : db.by_service(service)) {
    const auto& r = db.records()[idx];
    if (r.rank >= min_rank) out.push_back(r);
  }
  return out;
}

const OptionSpec* OptionSchema::find_option(std::string_view name) const {
  for (const auto& o : options)
    if (o.name == name) return &o;
  return nullptr;
}

const PayloadSpec* OptionSchema::find_payload(std::string_view path) const {
  for (const auto& p : payloads)
    if (p.path == path) return &p;
  return nullptr;
}

SchemaTable SchemaTable::load(std::istream& source) {
  SchemaTable table;
  std::optional<OptionSchema> current;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) {
    throw ConfigError("schema line " + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(source, line)) {
    ++lineno;
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto words = text::split_ws(t);
    if (words[0] == "module") {
      if (words.size() != 2) fail("expected 'module <path>'");
      if (current) table.add(std::move(*current));
      current = OptionSchema{words[1], {}, {}};
    } else if (words[0] == "opt") {
      if (!current) fail("'opt' before any 'module'");
      if (words.size() < 3) fail("expected 'opt <name> required|optional [default]'");
      if (words[2] != "required" && words[2] != "optional") fail("option must be 'required' or 'optional'");
      if (current->find_option(words[1])) fail("duplicate option " + words[1] + " in " + current->module_path);
      OptionSpec spec{words[1], words[2] == "required", std::nullopt};
      if (words.size() > 3) {
        std::vector<std::string> rest(words.begin() + 3, words.end());
        spec.default_value = text::join(rest, " ");
      }
      current->options.push_back(std::move(spec));
    } else if (words[0] == "payload") {
      if (!current) fail("'payload' before any 'module'");
      if (words.size() != 3) fail("expected 'payload <path> <arch>'");
      current->payloads.push_back({words[1], words[2]});
    } else {
      fail("unknown directive '" + words[0] + "'");
    }
  }
  if (current) table.add(std::move(*current));
  return table;
}

SchemaTable SchemaTable::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open option schema file: " + path);
  return load(in);
}

void SchemaTable::add(OptionSchema schema) {
  std::set<std::string> names;
  for (const auto& o : schema.options)
    if (!names.insert(o.name).second) throw ConfigError("duplicate option " + o.name + " in " + schema.module_path);
  const auto key = schema.module_path;
  schemas_[key] = std::move(schema);
}

OptionSchema SchemaTable::schema(std::string_view module_path) const {
  const auto it = schemas_.find(module_path);
  if (it == schemas_.end()) throw NotFoundError("no option schema for module " + std::string(module_path));
  return it->second;
}

bool SchemaTable::contains(std::string_view module_path) const { return schemas_.find(module_path) != schemas_.end(); }

OptionSchema option_schema(const OptionSchemaProvider& provider, std::string_view module_path) {
  return provider.schema(module_path);
}

}  // namespace redloop
