#pragma once

// Minimal RFC 4180 style reader/writer: comma separated, double-quote quoting,
// doubled quotes inside quoted fields. Enough for the tables this project
// reads and writes; not a general-purpose CSV library.

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "epigraph/core/errors.hpp"

namespace epigraph::csv {

using Row = std::vector<std::string>;

struct Document {
    Row header;
    std::vector<Row> rows;
    std::vector<std::size_t> line_numbers;  // 1-based source line of each row

    std::optional<std::size_t> column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        return std::nullopt;
    }
};

inline Row parse_line(std::string_view line, const std::string& origin, std::size_t line_no) {
    Row fields;
    std::string cur;
    bool quoted = false, was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"' && cur.empty() && !was_quoted) {
            quoted = was_quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
            was_quoted = false;
        } else {
            cur.push_back(c);
        }
    }
    if (quoted) throw SchemaError(origin + ":" + std::to_string(line_no) + ": unterminated quoted field");
    fields.push_back(std::move(cur));
    return fields;
}

inline Document read(std::istream& in, const std::string& origin) {
    Document doc;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        if (line.empty()) continue;
        auto row = parse_line(line, origin, line_no);
        if (!have_header) {
            doc.header = std::move(row);
            have_header = true;
            continue;
        }
        if (row.size() != doc.header.size())
            throw SchemaError(origin + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(doc.header.size()) + " fields, found " + std::to_string(row.size()));
        doc.rows.push_back(std::move(row));
        doc.line_numbers.push_back(line_no);
    }
    if (!have_header) throw SchemaError(origin + ": empty file, header row required");
    return doc;
}

inline Document read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ArtifactError("cannot open " + path);
    return read(in, path);
}

inline std::string quote(std::string_view field) {
    if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline void write_row(std::ostream& out, const Row& row) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << quote(row[i]);
    out << '\n';
}

// Shortest representation that round-trips exactly; empty for NaN (missing).
inline std::string format_number(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

// Parses a numeric cell; empty cells are missing (NaN).
inline double parse_number(std::string_view cell, const std::string& where) {
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t')) cell.remove_suffix(1);
    if (cell.empty()) return NAN;
    double v = 0.0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size())
        throw SchemaError(where + ": not a number: '" + std::string(cell) + "'");
    return v;
}

inline long parse_integer(std::string_view cell, const std::string& where) {
    long v = 0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (cell.empty() || res.ec != std::errc{} || res.ptr != cell.data() + cell.size())
        throw SchemaError(where + ": not an integer: '" + std::string(cell) + "'");
    return v;
}

}  // namespace epigraph::csv
