#pragma once

#include <charconv>
#include <cstdint>
#include <string>

namespace adalora {

/// Shortest decimal that round-trips the exact double. Deterministic, so CSV
/// outputs are byte-stable across repeated exports.
inline std::string format_double(double x) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

inline std::string format_int(std::int64_t x) { return std::to_string(x); }

} // namespace adalora
