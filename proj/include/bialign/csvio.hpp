#pragma once

#include "bialign/errors.hpp"

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace bialign::csvio {

// Shortest representation that round-trips a double exactly.
inline std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline std::string escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline void write(const std::string& path, const Table& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open csv for writing: " + path);
    auto emit = [&](const std::vector<std::string>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ",";
            out << escape(row[i]);
        }
        out << "\n";
    };
    emit(table.header);
    for (const auto& row : table.rows) emit(row);
    if (!out) throw DataError("failed while writing csv: " + path);
}

inline Table read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open csv: " + path);
    Table t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (first) {
            t.header = split_line(line);
            first = false;
        } else {
            t.rows.push_back(split_line(line));
        }
    }
    return t;
}

} // namespace bialign::csvio
