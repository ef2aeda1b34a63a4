/**
 * @file textutil.hpp
 * @brief Text normalization and answer-line parsing helpers.
 *
 * All generation prompts ask for labeled lines ("Background:", "Shape:", ...)
 * and the final recognition answer for a numbered list; these helpers parse
 * both forms leniently.
 */

#pragma once

#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tsr::text {

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    for (size_t i = 0; i <= s.size(); ++i)
        if (i == s.size() || s[i] == sep) {
            out.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    return out;
}

/// Lowercase, punctuation stripped to spaces, whitespace collapsed.
/// "Speed Limit (50km/h)" -> "speed limit 50km h".
inline std::string normalize_name(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char raw : s) {
        unsigned char c = static_cast<unsigned char>(raw);
        if (std::isalnum(c)) {
            if (pending_space && !out.empty()) out.push_back(' ');
            pending_space = false;
            out.push_back(static_cast<char>(std::tolower(c)));
        } else {
            pending_space = true;
        }
    }
    return out;
}

/// First line of `body` that starts with `label` + ':' (case-insensitive,
/// tolerant of list markers in front); returns the text after the colon.
/// '|' separates inline label runs ("Shape: x | Color: y") like a newline.
inline std::optional<std::string> labeled_line(std::string_view body, std::string_view label) {
    const std::string want = to_lower(label);
    std::vector<std::string> lines;
    for (const std::string& raw : split(body, '\n'))
        for (const std::string& piece : split(raw, '|')) lines.push_back(piece);
    for (const std::string& raw_line : lines) {
        std::string line = trim(raw_line);
        size_t skip = 0;
        while (skip < line.size() && (line[skip] == '-' || line[skip] == '*' || line[skip] == '#' ||
                                      line[skip] == ' '))
            ++skip;
        line = line.substr(skip);
        if (line.size() <= want.size()) continue;
        if (to_lower(std::string_view(line).substr(0, want.size())) != want) continue;
        size_t pos = want.size();
        while (pos < line.size() && line[pos] == ' ') ++pos;
        if (pos >= line.size() || line[pos] != ':') continue;
        return trim(std::string_view(line).substr(pos + 1));
    }
    return std::nullopt;
}

/// Items of a numbered enumeration: "1. Stop", "2) Yield", "3: No entry".
/// Markers may sit on separate lines or inline ("1. Stop 2. Yield"); each
/// item runs until the next marker.
inline std::vector<std::string> enumerated_items(std::string_view body) {
    struct Marker {
        size_t start;    // first digit
        size_t content;  // after the separator
    };
    std::vector<Marker> markers;
    for (size_t i = 0; i < body.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(body[i]))) continue;
        if (i > 0 && !std::isspace(static_cast<unsigned char>(body[i - 1]))) {
            while (i + 1 < body.size() && std::isdigit(static_cast<unsigned char>(body[i + 1]))) ++i;
            continue;  // digits inside a word ("(50km/h)") are not markers
        }
        size_t d = i;
        while (d < body.size() && std::isdigit(static_cast<unsigned char>(body[d]))) ++d;
        if (d - i <= 3 && d < body.size() &&
            (body[d] == '.' || body[d] == ')' || body[d] == ':' || body[d] == ']'))
            markers.push_back({i, d + 1});
        i = d;
    }
    std::vector<std::string> items;
    for (size_t m = 0; m < markers.size(); ++m) {
        size_t end = m + 1 < markers.size() ? markers[m + 1].start : body.size();
        std::string item = trim(body.substr(markers[m].content, end - markers[m].content));
        if (!item.empty()) items.push_back(std::move(item));
    }
    return items;
}

}  // namespace tsr::text
