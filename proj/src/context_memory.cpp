#include "redloop/context_memory.hpp"

#include <json.hpp>

#include <set>

namespace redloop {

using ordered_json = nlohmann::ordered_json;

GlobalMemory::GlobalMemory(std::size_t cmd_cap) : cmd_cap_(cmd_cap) {}

StageLog& GlobalMemory::mutable_log(Stage stage) {
  switch (stage) {
    case Stage::exploit:
      return exploit_;
    case Stage::exfiltrate:
      return exfiltrate_;
    default:
      throw UnsupportedStageError("no memory log for stage " + std::string(to_string(stage)));
  }
}

const StageLog& GlobalMemory::log(Stage stage) const { return const_cast<GlobalMemory*>(this)->mutable_log(stage); }

void GlobalMemory::append(Stage stage, MemoryEntry entry) {
  auto& log = mutable_log(stage);
  if (entry.iter < 1) throw MemoryOrderError("memory iter must be >= 1, got " + std::to_string(entry.iter));
  if (!log.entries.empty() && entry.iter <= log.entries.back().iter)
    throw MemoryOrderError("memory iter " + std::to_string(entry.iter) + " does not follow " +
                           std::to_string(log.entries.back().iter) + " in " + std::string(to_string(stage)));
  if (entry.cmd.empty()) throw Error("memory cmd must not be empty");
  if (entry.cmd.size() > cmd_cap_)
    throw Error("memory cmd exceeds " + std::to_string(cmd_cap_) + " characters; raw output does not belong in memory");
  if (!text::valid_utf8(entry.cmd)) throw Error("memory cmd is not valid UTF-8");
  log.entries.push_back(std::move(entry));
}

GlobalMemory append_entry(GlobalMemory mem, Stage stage, MemoryEntry entry) {
  mem.append(stage, std::move(entry));
  return mem;
}

namespace {

ordered_json to_json(std::span<const MemoryEntry> entries) {
  auto arr = ordered_json::array();
  for (const auto& e : entries) {
    ordered_json obj;
    obj["iter"] = e.iter;
    obj["cmd"] = e.cmd;
    obj["result"] = std::string(to_string(e.result));
    arr.push_back(std::move(obj));
  }
  return arr;
}

std::vector<MemoryEntry> from_json(const ordered_json& arr) {
  if (!arr.is_array()) throw MemoryParseError(0, "stage log must be a JSON array");
  std::vector<MemoryEntry> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& obj = arr[i];
    if (!obj.is_object()) throw MemoryParseError(i, "entry is not an object");
    for (const char* key : {"iter", "cmd", "result"})
      if (!obj.contains(key)) throw MemoryParseError(i, std::string("missing key '") + key + "'");
    if (obj.size() != 3) throw MemoryParseError(i, "unexpected extra keys");
    if (!obj["iter"].is_number_integer()) throw MemoryParseError(i, "iter is not an integer");
    const auto iter = obj["iter"].get<long long>();
    if (iter < 1) throw MemoryParseError(i, "iter must be positive");
    if (!out.empty() && iter <= out.back().iter) throw MemoryParseError(i, "iter is not strictly increasing");
    if (!obj["cmd"].is_string() || obj["cmd"].get<std::string>().empty()) throw MemoryParseError(i, "cmd must be a non-empty string");
    if (!obj["result"].is_string()) throw MemoryParseError(i, "result must be a string");
    const auto result = obj["result"].get<std::string>();
    if (result != "success" && result != "fail") throw MemoryParseError(i, "result must be 'success' or 'fail', got '" + result + "'");
    out.push_back({static_cast<int>(iter), obj["cmd"].get<std::string>(), result == "success" ? Outcome::success : Outcome::fail});
  }
  return out;
}

}  // namespace

std::string render_entries(std::span<const MemoryEntry> entries) { return to_json(entries).dump(); }

std::string render_stage_log(const GlobalMemory& mem, Stage stage) { return render_entries(mem.log(stage).entries); }

std::vector<MemoryEntry> parse_stage_log(std::string_view json_text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw MemoryParseError(0, std::string("malformed JSON: ") + e.what());
  }
  return from_json(doc);
}

bool contains_failed(const GlobalMemory& mem, Stage stage, std::string_view cmd) {
  if (stage != Stage::exploit && stage != Stage::exfiltrate) return false;
  const auto& entries = mem.log(stage).entries;
  for (auto it = entries.rbegin(); it != entries.rend(); ++it)
    if (it->cmd == cmd) return it->result == Outcome::fail;
  return false;
}

std::optional<std::string> route_context(Stage stage, const GlobalMemory& mem) {
  if (stage != Stage::exploit && stage != Stage::exfiltrate) return std::nullopt;
  return render_stage_log(mem, stage);
}

double duplication_rate(std::span<const std::string> commands) {
  if (commands.empty()) return 0.0;
  std::set<std::string_view> seen;
  std::size_t repeats = 0;
  for (const auto& c : commands)
    if (!seen.insert(c).second) ++repeats;
  return static_cast<double>(repeats) / static_cast<double>(commands.size());
}

std::string render_memory_file(const GlobalMemory& mem) {
  ordered_json doc;
  doc["EXPLOIT"] = to_json(mem.log(Stage::exploit).entries);
  doc["EXFILTRATE"] = to_json(mem.log(Stage::exfiltrate).entries);
  return doc.dump();
}

GlobalMemory parse_memory_file(std::string_view json_text, std::size_t cmd_cap) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw MemoryParseError(0, std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("EXPLOIT") || !doc.contains("EXFILTRATE") || doc.size() != 2)
    throw MemoryParseError(0, "memory file must hold exactly EXPLOIT and EXFILTRATE logs");
  GlobalMemory mem(cmd_cap);
  for (auto stage : {Stage::exploit, Stage::exfiltrate})
    for (auto& e : from_json(doc[std::string(to_string(stage))])) mem.append(stage, std::move(e));
  return mem;
}

void TranscriptBuffer::append(Speaker speaker, std::string text) { turns_.push_back({speaker, std::move(text)}); }

std::string TranscriptBuffer::render() const {
  std::string out;
  for (const auto& t : turns_) {
    out += t.speaker == Speaker::agent ? "AGENT: " : "TOOL: ";
    out += t.text;
    if (out.empty() || out.back() != '\n') out += '\n';
  }
  return out;
}

}  // namespace redloop
