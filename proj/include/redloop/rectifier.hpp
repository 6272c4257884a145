#pragma once

// Module-path rectification and execution-level normalization.
//
// Three matchers are provided: the hybrid suffix matcher used by the
// campaign engine, plus whole-path fuzzy matching and exact last-segment
// matching kept as comparison baselines. Every matcher only ever returns
// paths taken from the knowledge base.

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "redloop/module_kb.hpp"

namespace redloop {

class MalformedPathError : public Error {
 public:
  using Error::Error;
};

class NormalizationError : public Error {
 public:
  NormalizationError(std::string option, const std::string& what) : Error(what), option_(std::move(option)) {}
  const std::string& option() const { return option_; }

 private:
  std::string option_;
};

class PayloadMismatchError : public Error {
 public:
  using Error::Error;
};

class CorpusError : public Error {
 public:
  using Error::Error;
};

// Substring after the final '/'. Rejects empty paths, paths with whitespace
// and paths ending in '/'.
std::string_view last_segment(std::string_view path);

// Unit-cost edit distance over Unicode scalar values.
std::size_t levenshtein(std::string_view a, std::string_view b);

// 1 - d(a,b) / max(|a|,|b|); two empty strings are identical (1.0).
double similarity(std::string_view a, std::string_view b);

enum class RectifyMethod { hybrid, fuzzy_full, last_exact };
enum class RectifyOutcome { corrected, already_valid, no_match };

std::string_view to_string(RectifyMethod method);
RectifyMethod parse_rectify_method(std::string_view text);
std::string_view to_string(RectifyOutcome outcome);

struct Rectification {
  std::string input_path;
  std::optional<std::string> matched_path;
  double similarity = 0.0;
  RectifyMethod method = RectifyMethod::hybrid;
  RectifyOutcome outcome = RectifyOutcome::no_match;
};

inline constexpr double kDefaultThreshold = 0.5;

Rectification rectify_hybrid(std::string_view path, const ModuleDatabase& db, double threshold = kDefaultThreshold);
Rectification rectify_fuzzy_full(std::string_view path, const ModuleDatabase& db, double threshold = kDefaultThreshold);
Rectification rectify_last_exact(std::string_view path, const ModuleDatabase& db);
Rectification rectify(RectifyMethod method, std::string_view path, const ModuleDatabase& db,
                      double threshold = kDefaultThreshold);

// Network facts the normalizer may draw on when a block omits an option.
struct InvocationContext {
  std::optional<std::string> rhost;
  std::optional<int> rport;
  std::optional<std::string> lhost;
  std::optional<int> lport;
  std::optional<std::string> wordlist;
};

struct NormalizedInvocation {
  std::string module_path;
  std::vector<std::pair<std::string, std::string>> option_assignments;
  std::optional<std::string> payload;
  bool bruteforce = false;

  const std::string* option(std::string_view name) const;
  // Console block: use / set ... / set PAYLOAD / exploit|run.
  std::string to_block() const;
  bool operator==(const NormalizedInvocation&) const = default;
};

const std::set<std::string>& default_bruteforce_markers();

bool classify_bruteforce(std::string_view module_path, const OptionSchema& schema,
                         const std::set<std::string>& markers = default_bruteforce_markers());

// Parses `use`/`set` lines without enforcing a schema. Used as-is when
// normalization is disabled.
NormalizedInvocation parse_invocation(std::string_view raw_block);

// Parses the block, injects any required option the block left out and
// validates the payload. Never returns a partially populated invocation.
NormalizedInvocation normalize_invocation(std::string_view raw_block, const OptionSchema& schema,
                                          const InvocationContext& ctx,
                                          const std::set<std::string>& markers = default_bruteforce_markers());

struct CorpusEntry {
  std::string hallucinated;
  std::string intended;
};

// `hallucinated<TAB>intended` per line.
std::vector<CorpusEntry> load_corpus(std::istream& source);
std::string serialize_corpus(const std::vector<CorpusEntry>& corpus);

struct CaseOutcome {
  std::string hallucinated;
  std::string intended;
  std::optional<std::string> matched;
  RectifyOutcome outcome = RectifyOutcome::no_match;
  bool success = false;
};

struct MethodScore {
  RectifyMethod method = RectifyMethod::hybrid;
  std::size_t successes = 0;
  std::size_t no_match = 0;
  std::size_t total = 0;
  std::vector<CaseOutcome> cases;

  double rate() const { return total ? static_cast<double>(successes) / static_cast<double>(total) : 0.0; }
};

struct MethodEvaluation {
  std::vector<MethodScore> methods;  // hybrid, fuzzy_full, last_exact

  const MethodScore& score(RectifyMethod method) const;
  // Per-method rates to four decimal places, one line per method.
  std::string text_report() const;
};

MethodEvaluation evaluate_methods(const std::vector<CorpusEntry>& corpus, const ModuleDatabase& db,
                                  double threshold = kDefaultThreshold);

}  // namespace redloop
