#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "redloop/common.hpp"
#include "redloop/context_memory.hpp"

namespace redloop {

struct ReconFinding {
  std::string ip;
  int port = 0;
  std::string service;  // canonical
  std::string version;

  bool operator==(const ReconFinding&) const = default;
};

struct SessionInfo {
  int id = 0;
  SessionKind kind = SessionKind::shell;
  bool alive = true;

  bool operator==(const SessionInfo&) const = default;
};

struct CampaignState {
  std::string target;
  Stage current_stage = Stage::recon;
  int global_iter = 0;
  std::map<Stage, int> stage_iters{{Stage::recon, 0}, {Stage::exploit, 0}, {Stage::exfiltrate, 0}};
  std::vector<ReconFinding> recon_findings;
  std::vector<SessionInfo> sessions;
  bool objective_met = false;
  std::optional<std::string> flag_contents;
  GlobalMemory memory;
  TranscriptBuffer transcript;
  // Latest translated summary per stage, fed back into the next prompt.
  std::map<Stage, std::string> last_result;

  const SessionInfo* active_session() const;
  bool has_alive_session() const { return active_session() != nullptr; }
};

}  // namespace redloop
