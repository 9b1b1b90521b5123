#pragma once

#include <charconv>
#include <stdexcept>
#include <string>
#include <system_error>

namespace fedmp {

// Shortest decimal form that parses back to the same double.
inline std::string format_double(double x) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

// Exact inverse of format_double; throws std::invalid_argument on junk.
inline double parse_double(const std::string& s) {
    double x = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), x);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw std::invalid_argument("not a number: '" + s + "'");
    }
    return x;
}

}  // namespace fedmp
