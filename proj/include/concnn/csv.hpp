#pragma once

#include "concnn/error.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

namespace concnn::csv {

/// Splits one CSV record. Handles double-quoted fields with "" escapes;
/// embedded newlines are not supported.
inline std::vector<std::string> split_record(std::string_view line) {
    std::vector<std::string> fields;
    std::string current;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    current.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                current.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    fields.push_back(std::move(current));
    return fields;
}

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::ptrdiff_t column(std::string_view name) const {
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (header[c] == name) {
                return static_cast<std::ptrdiff_t>(c);
            }
        }
        return -1;
    }
};

inline Table read(std::istream& in) {
    Table table;
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (!have_header && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
            line.erase(0, 3);
        }
        if (trim(line).empty()) {
            continue;
        }
        auto fields = split_record(line);
        for (auto& f : fields) {
            f = std::string(trim(f));
        }
        if (!have_header) {
            table.header = std::move(fields);
            have_header = true;
        } else {
            table.rows.push_back(std::move(fields));
        }
    }
    return table;
}

inline Table read_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::EmptyFile, fmt::format("cannot open '{}'", path));
    return read(in);
}

inline double parse_double(std::string_view text, std::string_view what) {
    double value = 0.0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end) {
        fail(ErrorCode::MalformedValue, fmt::format("{}: '{}' is not a number", what, text));
    }
    return value;
}

inline std::int64_t parse_int(std::string_view text, std::string_view what) {
    std::int64_t value = 0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end) {
        fail(ErrorCode::MalformedValue, fmt::format("{}: '{}' is not an integer", what, text));
    }
    return value;
}

/// Quotes a field only when it needs it.
inline std::string escape(std::string_view field) {
    if (field.find_first_of(",\"\n") == std::string_view::npos) {
        return std::string(field);
    }
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') {
            out.push_back('"');
        }
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

/// Shortest representation that round-trips to the same double.
inline std::string number(double value) { return fmt::format("{}", value); }

} // namespace concnn::csv
