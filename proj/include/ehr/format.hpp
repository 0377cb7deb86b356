#pragma once

#include <charconv>
#include <string>
#include <string_view>
#include <vector>

#include "ehr/errors.hpp"

namespace ehr {

// Shortest decimal form that round-trips the exact double; keeps CSV output
// byte-stable across runs.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw IoError("failed to format double");
    return std::string(buf, ptr);
}

inline double parse_double(std::string_view text, const std::string& context) {
    double v = 0.0;
    const char* begin = text.data();
    const char* end = begin + text.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end) {
        throw ParseError(context + ": bad number '" + std::string(text) + "'");
    }
    return v;
}

// Plain comma split; none of the emitted fields contain commas or quotes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

}  // namespace ehr
