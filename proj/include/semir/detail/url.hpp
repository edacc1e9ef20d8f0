#pragma once

#include <cctype>
#include <string>
#include <string_view>

#include "semir/common.hpp"

namespace semir::detail {

/// Percent-encodes every byte outside the RFC 3986 unreserved set.
inline std::string url_encode(std::string_view s) {
    static constexpr char hex[] = "0123456789ABCDEF";
    std::string out;
    out.reserve(s.size() * 3);
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back('%');
            out.push_back(hex[c >> 4]);
            out.push_back(hex[c & 0xF]);
        }
    }
    return out;
}

inline std::string url_decode(std::string_view s, bool plus_is_space = false) {
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '%') {
            if (i + 2 >= s.size()) {
                throw ParseError("truncated percent escape");
            }
            const int hi = nibble(s[i + 1]);
            const int lo = nibble(s[i + 2]);
            if (hi < 0 || lo < 0) {
                throw ParseError("bad percent escape");
            }
            out.push_back(static_cast<char>((hi << 4) | lo));
            i += 2;
        } else if (plus_is_space && s[i] == '+') {
            out.push_back(' ');
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

}  // namespace semir::detail
