#include "redloop/rectifier.hpp"

#include <algorithm>
#include <iomanip>
#include <istream>
#include <limits>
#include <sstream>

namespace redloop {

std::string_view last_segment(std::string_view path) {
  if (path.empty()) throw MalformedPathError("empty module path");
  if (text::contains_whitespace(path)) throw MalformedPathError("module path contains whitespace: '" + std::string(path) + "'");
  if (path.back() == '/') throw MalformedPathError("module path ends with '/': '" + std::string(path) + "'");
  const auto pos = path.rfind('/');
  return pos == std::string_view::npos ? path : path.substr(pos + 1);
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
  const auto x = text::utf8_decode(a);
  const auto y = text::utf8_decode(b);
  if (x.empty()) return y.size();
  if (y.empty()) return x.size();
  std::vector<std::size_t> prev(y.size() + 1), cur(y.size() + 1);
  for (std::size_t j = 0; j <= y.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= y.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (x[i - 1] == y[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[y.size()];
}

double similarity(std::string_view a, std::string_view b) {
  const auto la = text::utf8_decode(a).size();
  const auto lb = text::utf8_decode(b).size();
  const auto longest = std::max(la, lb);
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

std::string_view to_string(RectifyMethod method) {
  switch (method) {
    case RectifyMethod::hybrid:
      return "hybrid";
    case RectifyMethod::fuzzy_full:
      return "fuzzy_full";
    case RectifyMethod::last_exact:
      return "last_exact";
  }
  return "unknown";
}

RectifyMethod parse_rectify_method(std::string_view text) {
  if (text == "hybrid") return RectifyMethod::hybrid;
  if (text == "fuzzy_full") return RectifyMethod::fuzzy_full;
  if (text == "last_exact") return RectifyMethod::last_exact;
  throw ConfigError("unknown rectification method: " + std::string(text));
}

std::string_view to_string(RectifyOutcome outcome) {
  switch (outcome) {
    case RectifyOutcome::corrected:
      return "corrected";
    case RectifyOutcome::already_valid:
      return "already_valid";
    case RectifyOutcome::no_match:
      return "no_match";
  }
  return "unknown";
}

namespace {

void require_non_empty(const ModuleDatabase& db) {
  if (db.empty()) throw PreconditionError("rectification needs a non-empty knowledge base");
}

std::string_view first_segment(std::string_view path) { return path.substr(0, path.find('/')); }

// Higher rank, then the module type named by the input's first segment, then
// the lexicographically smallest path.
std::size_t break_tie(const ModuleDatabase& db, const std::vector<std::size_t>& candidates, std::string_view input) {
  const auto input_type = first_segment(input);
  auto better = [&](std::size_t lhs, std::size_t rhs) {
    const auto& a = db.records()[lhs];
    const auto& b = db.records()[rhs];
    if (a.rank != b.rank) return a.rank > b.rank;
    const bool at = to_string(a.module_type) == input_type;
    const bool bt = to_string(b.module_type) == input_type;
    if (at != bt) return at;
    return a.path < b.path;
  };
  return *std::min_element(candidates.begin(), candidates.end(), better);
}

Rectification already_valid(std::string_view path, RectifyMethod method) {
  return {std::string(path), std::string(path), 1.0, method, RectifyOutcome::already_valid};
}

Rectification resolve(const ModuleDatabase& db, std::string_view path, RectifyMethod method, double best,
                      const std::vector<std::size_t>& candidates, double threshold) {
  Rectification r{std::string(path), std::nullopt, best, method, RectifyOutcome::no_match};
  if (candidates.empty() || best < threshold) return r;
  const auto& winner = db.records()[break_tie(db, candidates, path)];
  r.matched_path = winner.path;
  r.outcome = winner.path == path ? RectifyOutcome::already_valid : RectifyOutcome::corrected;
  return r;
}

}  // namespace

Rectification rectify_hybrid(std::string_view path, const ModuleDatabase& db, double threshold) {
  require_non_empty(db);
  const auto s = last_segment(path);
  if (db.contains(path)) return already_valid(path, RectifyMethod::hybrid);
  double best = -1.0;
  std::vector<std::size_t> candidates;
  for (const auto& [suffix, indices] : db.suffix_index()) {
    const double sim = similarity(s, suffix);
    if (sim > best) {
      best = sim;
      candidates.assign(indices.begin(), indices.end());
    } else if (sim == best) {
      candidates.insert(candidates.end(), indices.begin(), indices.end());
    }
  }
  return resolve(db, path, RectifyMethod::hybrid, best, candidates, threshold);
}

Rectification rectify_fuzzy_full(std::string_view path, const ModuleDatabase& db, double threshold) {
  require_non_empty(db);
  last_segment(path);
  if (db.contains(path)) return already_valid(path, RectifyMethod::fuzzy_full);
  double best = -1.0;
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < db.size(); ++i) {
    const double sim = similarity(path, db.records()[i].path);
    if (sim > best) {
      best = sim;
      candidates.assign(1, i);
    } else if (sim == best) {
      candidates.push_back(i);
    }
  }
  return resolve(db, path, RectifyMethod::fuzzy_full, best, candidates, threshold);
}

Rectification rectify_last_exact(std::string_view path, const ModuleDatabase& db) {
  require_non_empty(db);
  const auto s = last_segment(path);
  if (db.contains(path)) return already_valid(path, RectifyMethod::last_exact);
  const auto hits = db.by_suffix(s);
  if (hits.empty()) return {std::string(path), std::nullopt, 0.0, RectifyMethod::last_exact, RectifyOutcome::no_match};
  return resolve(db, path, RectifyMethod::last_exact, 1.0, {hits.begin(), hits.end()}, 0.0);
}

Rectification rectify(RectifyMethod method, std::string_view path, const ModuleDatabase& db, double threshold) {
  switch (method) {
    case RectifyMethod::hybrid:
      return rectify_hybrid(path, db, threshold);
    case RectifyMethod::fuzzy_full:
      return rectify_fuzzy_full(path, db, threshold);
    case RectifyMethod::last_exact:
      return rectify_last_exact(path, db);
  }
  throw PreconditionError("unknown rectification method");
}

// ---------------------------------------------------------------------------
// Execution-level normalization

const std::string* NormalizedInvocation::option(std::string_view name) const {
  for (const auto& [n, v] : option_assignments)
    if (n == name) return &v;
  return nullptr;
}

std::string NormalizedInvocation::to_block() const {
  std::string out = "use " + module_path + "\n";
  for (const auto& [name, value] : option_assignments) out += "set " + name + " " + value + "\n";
  if (payload) out += "set PAYLOAD " + *payload + "\n";
  out += module_path.starts_with("auxiliary/") ? "run\n" : "exploit\n";
  return out;
}

const std::set<std::string>& default_bruteforce_markers() {
  static const std::set<std::string> markers{"USER_FILE", "PASS_FILE", "USERPASS_FILE"};
  return markers;
}

bool classify_bruteforce(std::string_view /*module_path*/, const OptionSchema& schema,
                         const std::set<std::string>& markers) {
  return std::any_of(schema.options.begin(), schema.options.end(),
                     [&](const OptionSpec& o) { return markers.count(o.name) > 0; });
}

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::toupper(c); });
  return out;
}

bool is_placeholder(std::string_view value) {
  if (value.empty()) return true;
  if (value.size() >= 2 && ((value.front() == '<' && value.back() == '>') || (value.front() == '{' && value.back() == '}')))
    return true;
  const auto up = upper(value);
  return up.find("YOUR_") != std::string::npos || up == "CHANGEME" || up == "TBD";
}

void assign(NormalizedInvocation& inv, const std::string& name, std::string value) {
  for (auto& [n, v] : inv.option_assignments) {
    if (n == name) {
      v = std::move(value);
      return;
    }
  }
  inv.option_assignments.emplace_back(name, std::move(value));
}

}  // namespace

NormalizedInvocation parse_invocation(std::string_view raw_block) {
  NormalizedInvocation inv;
  for (const auto& raw_line : text::split_lines(raw_block)) {
    const auto line = text::trim(raw_line);
    if (line.empty() || line.front() == '#') continue;
    const auto words = text::split_ws(line);
    const auto verb = text::lower(words[0]);
    if (verb == "use" && words.size() >= 2) {
      if (inv.module_path.empty()) inv.module_path = words[1];
    } else if ((verb == "set" || verb == "setg") && words.size() >= 2) {
      const auto name = upper(words[1]);
      std::string value;
      if (words.size() > 2) {
        const auto pos = line.find(words[1], words[0].size()) + words[1].size();
        value = std::string(text::trim(line.substr(pos)));
      }
      if (name == "PAYLOAD") {
        inv.payload = value;
      } else {
        assign(inv, name, value);
      }
    }
  }
  return inv;
}

NormalizedInvocation normalize_invocation(std::string_view raw_block, const OptionSchema& schema,
                                          const InvocationContext& ctx, const std::set<std::string>& markers) {
  auto inv = parse_invocation(raw_block);
  if (inv.module_path.empty()) throw NormalizationError("", "command block has no 'use <module>' line");
  if (inv.module_path != schema.module_path)
    throw NormalizationError("", "block uses " + inv.module_path + " but the schema describes " + schema.module_path);

  std::erase_if(inv.option_assignments, [](const auto& kv) { return is_placeholder(kv.second); });
  if (inv.payload && is_placeholder(*inv.payload)) inv.payload.reset();

  inv.bruteforce = classify_bruteforce(inv.module_path, schema, markers);

  auto context_value = [&](const std::string& name) -> std::optional<std::string> {
    if ((name == "RHOSTS" || name == "RHOST") && ctx.rhost) return *ctx.rhost;
    if (name == "RPORT" && ctx.rport) return std::to_string(*ctx.rport);
    if (name == "LHOST" && ctx.lhost) return *ctx.lhost;
    if (name == "LPORT" && ctx.lport) return std::to_string(*ctx.lport);
    if (markers.count(name) && ctx.wordlist) return *ctx.wordlist;
    return std::nullopt;
  };

  for (const auto& opt : schema.options) {
    if (!opt.required || inv.option(opt.name)) continue;
    if (auto v = context_value(opt.name)) {
      assign(inv, opt.name, *v);
    } else if (opt.default_value && !opt.default_value->empty()) {
      assign(inv, opt.name, *opt.default_value);
    } else {
      throw NormalizationError(opt.name, "required option " + opt.name + " of " + schema.module_path +
                                             " has no value and no source to inject from");
    }
  }

  if (inv.bruteforce && ctx.wordlist) {
    const bool has_list = std::any_of(markers.begin(), markers.end(), [&](const auto& m) { return inv.option(m); });
    if (!has_list) {
      if (schema.find_option("USER_FILE") || schema.find_option("PASS_FILE")) {
        if (schema.find_option("USER_FILE") && !inv.option("USERNAME")) assign(inv, "USER_FILE", *ctx.wordlist);
        if (schema.find_option("PASS_FILE") && !inv.option("PASSWORD")) assign(inv, "PASS_FILE", *ctx.wordlist);
      } else if (schema.find_option("USERPASS_FILE")) {
        assign(inv, "USERPASS_FILE", *ctx.wordlist);
      }
    }
  }

  if (inv.payload && !schema.find_payload(*inv.payload)) {
    std::string allowed;
    for (const auto& p : schema.payloads) allowed += (allowed.empty() ? "" : ", ") + p.path + " (" + p.arch + ")";
    throw PayloadMismatchError("payload " + *inv.payload + " is not compatible with " + schema.module_path +
                               "; expected one of: " + (allowed.empty() ? "<none>" : allowed));
  }
  return inv;
}

// ---------------------------------------------------------------------------
// Method comparison

std::vector<CorpusEntry> load_corpus(std::istream& source) {
  std::vector<CorpusEntry> corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(source, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw CorpusError("corpus line " + std::to_string(lineno) + ": expected hallucinated<TAB>intended");
    corpus.push_back({std::string(text::trim(line.substr(0, tab))), std::string(text::trim(line.substr(tab + 1)))});
  }
  return corpus;
}

std::string serialize_corpus(const std::vector<CorpusEntry>& corpus) {
  std::string out;
  for (const auto& e : corpus) out += e.hallucinated + "\t" + e.intended + "\n";
  return out;
}

const MethodScore& MethodEvaluation::score(RectifyMethod method) const {
  for (const auto& m : methods)
    if (m.method == method) return m;
  throw NotFoundError("method not evaluated: " + std::string(to_string(method)));
}

std::string MethodEvaluation::text_report() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  for (const auto& m : methods) {
    out << std::left << std::setw(12) << to_string(m.method) << " rate=" << m.rate() << " success=" << m.successes
        << "/" << m.total << " no_match=" << m.no_match << "\n";
  }
  return out.str();
}

MethodEvaluation evaluate_methods(const std::vector<CorpusEntry>& corpus, const ModuleDatabase& db, double threshold) {
  if (corpus.empty()) throw CorpusError("empty rectification corpus");
  for (const auto& e : corpus)
    if (!db.contains(e.intended)) throw CorpusError("intended path not in knowledge base: " + e.intended);

  MethodEvaluation eval;
  for (const auto method : {RectifyMethod::hybrid, RectifyMethod::fuzzy_full, RectifyMethod::last_exact}) {
    MethodScore score;
    score.method = method;
    for (const auto& e : corpus) {
      CaseOutcome c{e.hallucinated, e.intended, std::nullopt, RectifyOutcome::no_match, false};
      try {
        const auto r = rectify(method, e.hallucinated, db, threshold);
        c.matched = r.matched_path;
        c.outcome = r.outcome;
        c.success = r.matched_path && *r.matched_path == e.intended;
      } catch (const MalformedPathError&) {
        // Garbage input counts as an unrecovered case.
      }
      if (c.outcome == RectifyOutcome::no_match) ++score.no_match;
      if (c.success) ++score.successes;
      ++score.total;
      score.cases.push_back(std::move(c));
    }
    eval.methods.push_back(std::move(score));
  }
  return eval;
}

}  // namespace redloop
