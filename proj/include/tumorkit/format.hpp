#ifndef TUMORKIT_FORMAT_HPP
#define TUMORKIT_FORMAT_HPP

#include <charconv>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "tumorkit/errors.hpp"

namespace tumorkit {

/// Shortest round-tripping text for a double; infinities as "inf"/"-inf".
inline std::string format_number(double v) {
  if (std::isinf(v))
    return v > 0 ? "inf" : "-inf";
  if (std::isnan(v))
    return "nan";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

inline double parse_number(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  if (s == "inf" || s == "+inf" || s == "Infinity")
    return std::numeric_limits<double>::infinity();
  if (s == "-inf" || s == "-Infinity")
    return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw FormatError("not a number: '" + std::string(s) + "'");
  return v;
}

/// JSON has no infinity; non-finite values are written as strings.
inline nlohmann::json json_number(double v) {
  if (std::isfinite(v))
    return v;
  return format_number(v);
}

} // namespace tumorkit

#endif // TUMORKIT_FORMAT_HPP
