#pragma once

#include <concepts>
#include <ostream>
#include <string>
#include <string_view>

namespace prefopt::csv {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

inline void write_field(std::ostream& out, double v) { out << format_double(v); }
inline void write_field(std::ostream& out, std::string_view v) { out << v; }
inline void write_field(std::ostream& out, const char* v) { out << v; }
inline void write_field(std::ostream& out, const std::string& v) { out << v; }
inline void write_field(std::ostream& out, bool v) { out << (v ? 1 : 0); }
template <std::integral T>
  requires(!std::same_as<T, bool>)
void write_field(std::ostream& out, T v) {
  out << v;
}

/// Writes one comma-separated, LF-terminated row.
template <typename First, typename... Rest>
void row(std::ostream& out, const First& first, const Rest&... rest) {
  write_field(out, first);
  ((out << ',', write_field(out, rest)), ...);
  out << '\n';
}

}  // namespace prefopt::csv
