#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace puat {

/// Parses a decimal number or a fraction such as "8/255".
double parse_number(const std::string& text);
std::int64_t parse_integer(const std::string& text);
bool parse_bool(const std::string& text);
/// Shortest rendering that parses back to the same double.
std::string format_exact(double v);
std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);

}  // namespace puat
