#pragma once

// Reference implementations kept deliberately naive.

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

namespace oracle {

// Minimal UTF-8 decoder; inputs in the tests are always well formed.
inline std::u32string decode(std::string_view s) {
  std::u32string out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    int n = c < 0x80 ? 1 : c < 0xE0 ? 2 : c < 0xF0 ? 3 : 4;
    char32_t v = n == 1 ? c : n == 2 ? (c & 0x1F) : n == 3 ? (c & 0x0F) : (c & 0x07);
    for (int k = 1; k < n; ++k) v = (v << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
    out.push_back(v);
    i += n;
  }
  return out;
}

// Full (n+1)x(m+1) Wagner-Fischer table.
inline std::size_t edit_distance(std::string_view a8, std::string_view b8) {
  const auto a = decode(a8), b = decode(b8);
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
  return d[a.size()][b.size()];
}

inline double sim(std::string_view a, std::string_view b) {
  const auto la = decode(a).size(), lb = decode(b).size();
  if (la == 0 && lb == 0) return 1.0;
  return 1.0 - static_cast<double>(edit_distance(a, b)) / static_cast<double>(std::max(la, lb));
}

inline std::string last(std::string_view p) {
  const auto k = p.rfind('/');
  return std::string(k == std::string_view::npos ? p : p.substr(k + 1));
}

}  // namespace oracle
