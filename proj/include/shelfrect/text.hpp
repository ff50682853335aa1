#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "shelfrect/error.hpp"

namespace shelfrect::text {

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  if (v == 0.0) v = 0.0;  // no "-0"
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw Error(ErrorKind::numeric, "cannot format value");
  return std::string(buf, end);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size() || !std::isfinite(v))
    throw ParseError("not a finite decimal: '" + std::string(s) + "'");
  return v;
}

inline long long parse_int(std::string_view s) {
  long long v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size())
    throw ParseError("not an integer: '" + std::string(s) + "'");
  return v;
}

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

/// Splits on runs of spaces (and any of `extra`); empty fields are dropped.
inline std::vector<std::string_view> split_fields(std::string_view s, std::string_view extra = {}) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  auto is_sep = [&](char c) { return c == ' ' || c == '\t' || extra.find(c) != std::string_view::npos; };
  while (i < s.size()) {
    while (i < s.size() && is_sep(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_sep(s[j])) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename Range>
std::string join_doubles(const Range& values, char sep = ' ') {
  std::string out;
  bool first = true;
  for (double v : values) {
    if (!first) out.push_back(sep);
    out += format_double(v);
    first = false;
  }
  return out;
}

}  // namespace shelfrect::text
