#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace redloop {

// Base for every error raised by the library. Callers that only care about
// "something in redloop failed" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

enum class Stage { recon, exploit, exfiltrate, end_of_campaign };

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view text);

enum class Outcome { success, fail };

std::string_view to_string(Outcome outcome);

enum class SessionKind { shell, meterpreter };

std::string_view to_string(SessionKind kind);
SessionKind parse_session_kind(std::string_view text);

namespace text {

std::string_view trim(std::string_view s);
std::string lower(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::vector<std::string> split_lines(std::string_view s);
std::vector<std::string> split_ws(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
bool contains_whitespace(std::string_view s);
std::string replace_all(std::string s, std::string_view from, std::string_view to);

// Decodes UTF-8 into Unicode scalar values. Malformed sequences decode to
// U+FFFD one byte at a time so every input has a defined length.
std::u32string utf8_decode(std::string_view s);
bool valid_utf8(std::string_view s);

std::string sha256_hex(std::string_view data);
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

// FNV-1a, used wherever a stable cross-run hash of text is needed.
std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace text

// Resolves a path relative to the shipped data directory unless it is
// absolute or exists relative to the working directory.
std::string data_path(std::string_view relative);

}  // namespace redloop
