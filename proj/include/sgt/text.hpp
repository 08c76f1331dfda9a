#pragma once

// Small text helpers shared by the config, CSV and CLI layers.

#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <string_view>
#include <vector>

#include "sgt/error.hpp"
#include "sgt/transform.hpp"

namespace sgt {

/// Shortest %.{15,16,17}g representation that parses back to `v` exactly.
inline std::string format_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v || v != v) break;
  }
  return buf;
}

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view text, std::string_view what) {
  const std::string s(trim(text));
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE)
    throw ConfigError("invalid number '" + s + "' for " + std::string(what));
  return v;
}

inline std::uint64_t parse_uint(std::string_view text, std::string_view what) {
  const std::string s(trim(text));
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || s[0] == '-' || end != s.c_str() + s.size() || errno == ERANGE)
    throw ConfigError("invalid non-negative integer '" + s + "' for " + std::string(what));
  return v;
}

inline bool parse_bool(std::string_view text, std::string_view what) {
  const auto s = trim(text);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("invalid boolean '" + std::string(s) + "' for " + std::string(what));
}

/// "a,b,c" or "start:stop:step" (inclusive of stop when step divides the span).
inline std::vector<double> parse_real_list(std::string_view text, std::string_view what) {
  const auto s = trim(text);
  if (s.empty()) throw ConfigError("empty list for " + std::string(what));
  if (s.find(':') != std::string_view::npos) {
    const auto parts = split(s, ':');
    if (parts.size() != 3) throw ConfigError("range for " + std::string(what) + " must be start:stop:step");
    try {
      return make_grid(parse_double(parts[0], what), parse_double(parts[1], what), parse_double(parts[2], what));
    } catch (const InputError& e) {
      throw ConfigError(std::string(what) + ": " + e.what());
    }
  }
  std::vector<double> out;
  for (const auto& part : split(s, ',')) out.push_back(parse_double(part, what));
  return out;
}

/// "1,2,3" or "start:stop" / "start:stop:step" over integers (inclusive).
inline std::vector<std::uint64_t> parse_uint_list(std::string_view text, std::string_view what) {
  const auto s = trim(text);
  if (s.empty()) throw ConfigError("empty list for " + std::string(what));
  std::vector<std::uint64_t> out;
  if (s.find(':') != std::string_view::npos) {
    const auto parts = split(s, ':');
    if (parts.size() < 2 || parts.size() > 3)
      throw ConfigError("range for " + std::string(what) + " must be start:stop[:step]");
    const auto start = parse_uint(parts[0], what), stop = parse_uint(parts[1], what);
    const auto step = parts.size() == 3 ? parse_uint(parts[2], what) : 1;
    if (step == 0 || stop < start) throw ConfigError("bad integer range for " + std::string(what));
    for (auto v = start; v <= stop; v += step) out.push_back(v);
    return out;
  }
  for (const auto& part : split(s, ',')) out.push_back(parse_uint(part, what));
  return out;
}

}  // namespace sgt
