#pragma once

#include <random>
#include <sstream>
#include <string>

#include "redloop/common.hpp"
#include "redloop/module_kb.hpp"

namespace testutil {

inline std::string test_file(const std::string& rel) { return std::string(REDLOOP_TEST_DIR) + "/" + rel; }

inline const redloop::ModuleDatabase& sample_kb() {
  static const auto db = redloop::load_database_file(redloop::data_path("kb/sample_kb.txt"));
  return db;
}

inline const redloop::SchemaTable& sample_schemas() {
  static const auto t = redloop::SchemaTable::load_file(redloop::data_path("kb/option_schemas.txt"));
  return t;
}

inline redloop::ModuleDatabase kb_from(const std::string& text) {
  std::istringstream in(text);
  return redloop::load_database(in);
}

// Random string over a small alphabet that includes multi-byte characters.
inline std::string random_string(std::mt19937_64& rng, std::size_t max_len) {
  static const char* const kPieces[] = {"a", "b", "c", "d", "_", "/", "x", "0", "é", "ß", "\xe2\x82\xac", "Z"};
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, std::size(kPieces) - 1);
  std::string s;
  const auto n = len(rng);
  for (std::size_t i = 0; i < n; ++i) s += kPieces[pick(rng)];
  return s;
}

}  // namespace testutil
