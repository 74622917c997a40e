#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "skdan/error.hpp"

namespace skdan {

// Locale-independent double formatting (shortest round-trip form). All CSV
// and report output goes through this so artifacts are byte-reproducible.
inline std::string fmt_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& context) {
    double v = 0.0;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    while (begin != end && (*begin == ' ' || *begin == '\t')) ++begin;
    if (begin != end && *begin == '+') ++begin;  // from_chars rejects a leading plus
    auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc{})
        throw DataError(context + ": cannot parse number from '" + std::string(s) + "'");
    return v;
}

inline long parse_long(std::string_view s, const std::string& context) {
    long v = 0;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    while (begin != end && (*begin == ' ' || *begin == '\t')) ++begin;
    if (begin != end && *begin == '+') ++begin;
    auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc{})
        throw DataError(context + ": cannot parse integer from '" + std::string(s) + "'");
    return v;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
    return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == ',') {
            out.push_back(trim(line.substr(start, i - start)));
            start = i + 1;
        }
    }
    return out;
}

}  // namespace skdan
