#pragma once

// Stage-scoped campaign memory.
//
// Each memory stage keeps a compact log of {iter, cmd, result}; only the
// log of the active stage is ever handed to command generation. RECON keeps
// no log. TranscriptBuffer is the verbatim-history baseline used for
// comparison runs.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "redloop/common.hpp"

namespace redloop {

class MemoryOrderError : public Error {
 public:
  using Error::Error;
};

class UnsupportedStageError : public Error {
 public:
  using Error::Error;
};

class MemoryParseError : public Error {
 public:
  MemoryParseError(std::size_t index, const std::string& what)
      : Error("memory entry " + std::to_string(index) + ": " + what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

inline constexpr std::size_t kDefaultCmdCap = 512;

struct MemoryEntry {
  int iter = 1;
  std::string cmd;
  Outcome result = Outcome::fail;

  bool operator==(const MemoryEntry&) const = default;
};

struct StageLog {
  Stage stage = Stage::exploit;
  std::vector<MemoryEntry> entries;

  bool operator==(const StageLog&) const = default;
};

class GlobalMemory {
 public:
  explicit GlobalMemory(std::size_t cmd_cap = kDefaultCmdCap);

  // Throws UnsupportedStageError for RECON/END, MemoryOrderError when iter
  // does not exceed the stage's last iter, and Error for an empty, oversized
  // or non-UTF-8 cmd.
  void append(Stage stage, MemoryEntry entry);

  const StageLog& log(Stage stage) const;
  std::size_t cmd_cap() const { return cmd_cap_; }

  bool operator==(const GlobalMemory& other) const {
    return exploit_ == other.exploit_ && exfiltrate_ == other.exfiltrate_;
  }

 private:
  StageLog& mutable_log(Stage stage);

  std::size_t cmd_cap_;
  StageLog exploit_{Stage::exploit, {}};
  StageLog exfiltrate_{Stage::exfiltrate, {}};
};

// Functional form: returns a copy with the entry appended.
GlobalMemory append_entry(GlobalMemory mem, Stage stage, MemoryEntry entry);

// Canonical JSON array, keys iter/cmd/result in that order, no whitespace.
std::string render_entries(std::span<const MemoryEntry> entries);
std::string render_stage_log(const GlobalMemory& mem, Stage stage);
std::vector<MemoryEntry> parse_stage_log(std::string_view json_text);

// True iff cmd's latest outcome in the stage log is a failure.
bool contains_failed(const GlobalMemory& mem, Stage stage, std::string_view cmd);

// Only the active stage's log; nothing for RECON or END_OF_CAMPAIGN.
std::optional<std::string> route_context(Stage stage, const GlobalMemory& mem);

// Share of commands that exactly repeat an earlier command.
double duplication_rate(std::span<const std::string> commands);

// Persisted per-campaign form: {"EXPLOIT":[...],"EXFILTRATE":[...]}.
std::string render_memory_file(const GlobalMemory& mem);
GlobalMemory parse_memory_file(std::string_view json_text, std::size_t cmd_cap = kDefaultCmdCap);

enum class Speaker { agent, tool };

class TranscriptBuffer {
 public:
  struct Turn {
    Speaker speaker;
    std::string text;
  };

  void append(Speaker speaker, std::string text);
  const std::vector<Turn>& turns() const { return turns_; }
  std::string render() const;
  bool empty() const { return turns_.empty(); }

 private:
  std::vector<Turn> turns_;
};

}  // namespace redloop
