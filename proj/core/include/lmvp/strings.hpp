#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>

namespace lmvp {

namespace detail {
inline void cat_one(std::string& out, std::string_view v) { out += v; }
inline void cat_one(std::string& out, const char* v) { out += v; }
inline void cat_one(std::string& out, const std::string& v) { out += v; }
inline void cat_one(std::string& out, char v) { out += v; }

template <class T>
void cat_one(std::string& out, T v)
  requires std::is_arithmetic_v<T>
{
  char buf[48];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}
}  // namespace detail

// Joins heterogeneous pieces into one string. Numbers are rendered with
// std::to_chars (shortest round-trip form), so the same value always prints
// the same bytes -- the CSV and config-echo determinism contracts lean on it.
template <class... Ts>
std::string cat(const Ts&... parts) {
  std::string out;
  (detail::cat_one(out, parts), ...);
  return out;
}

inline std::string num(double v) { return cat(v); }
inline std::string num(float v) { return cat(v); }

inline std::string_view trim(std::string_view s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace lmvp
