#pragma once

// File and table helpers shared by the corpus loaders and the CLI: atomic
// writes, JSONL, a small RFC-4180-style CSV reader, and the rater annotation
// table format (pair_id, rater_id, one column per category x significance).

#include <atomic>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "repeval/core.hpp"

namespace repeval {

class IoError : public Error {
public:
    using Error::Error;
};

class MalformedRecordError : public Error {
public:
    MalformedRecordError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

/// Write-temp-then-rename so readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    namespace fs = std::filesystem;
    static std::atomic<unsigned> counter{0};
    fs::path dir = path.parent_path();
    if (!dir.empty()) fs::create_directories(dir);
    fs::path tmp = path;
    tmp += ".tmp" + std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("cannot rename into place: " + path.string());
    }
}

inline std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t nl = text.find('\n', start);
        if (nl == std::string::npos) {
            if (start < text.size()) lines.push_back(text.substr(start));
            break;
        }
        std::string line = text.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
        start = nl + 1;
    }
    return lines;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

// ---------------------------------------------------------------------------
// JSONL

inline std::vector<ojson> read_jsonl(const std::filesystem::path& path) {
    std::vector<ojson> records;
    std::size_t lineno = 0;
    for (const std::string& line : split_lines(read_file(path))) {
        ++lineno;
        if (trim(line).empty()) continue;
        ojson j = ojson::parse(line, nullptr, false);
        if (j.is_discarded()) throw MalformedRecordError(lineno, "invalid JSON");
        records.push_back(std::move(j));
    }
    return records;
}

inline std::string jsonl_dump(const std::vector<ojson>& records) {
    std::string out;
    for (const ojson& j : records) {
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline void write_jsonl_atomic(const std::filesystem::path& path,
                               const std::vector<ojson>& records) {
    write_file_atomic(path, jsonl_dump(records));
}

// ---------------------------------------------------------------------------
// CSV (quoted fields, "" escapes, embedded commas and newlines)

inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t i = 0;
    auto end_field = [&] {
        row.push_back(field);
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        rows.push_back(row);
        row.clear();
    };
    while (i < text.size()) {
        char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            if (!field.empty() && field.back() == '\r') field.pop_back();
            end_row();
        } else {
            field += c;
            field_started = true;
        }
        ++i;
    }
    if (!field.empty() && field.back() == '\r') field.pop_back();
    if (field_started || !field.empty() || !row.empty()) end_row();
    return rows;
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

// ---------------------------------------------------------------------------
// Annotation tables
//
// Canonical layout: pair_id, rater_id, then one count column per category x
// significance named `<category>_<significance>`. A column-mapping JSON file
// ({"columns": {"source name": "canonical name", ...}}) adapts other layouts.

inline std::vector<std::string> annotation_count_columns() {
    std::vector<std::string> cols;
    for (ErrorCategory c : all_categories())
        for (Significance s :
             {Significance::clinically_significant, Significance::clinically_insignificant})
            cols.push_back(std::string(to_string(c)) + "_" + std::string(to_string(s)));
    return cols;
}

inline std::map<std::string, std::string> load_column_mapping(
    const std::filesystem::path& path) {
    ojson j = ojson::parse(read_file(path));
    std::map<std::string, std::string> mapping;
    for (auto& [from, to] : j.at("columns").items()) mapping[from] = to.get<std::string>();
    return mapping;
}

inline std::vector<RaterAnnotation> load_annotations_csv(
    const std::filesystem::path& path,
    const std::map<std::string, std::string>& column_mapping = {}) {
    auto rows = parse_csv(read_file(path));
    if (rows.empty()) throw MalformedRecordError(1, "empty annotations file");

    std::vector<std::string> header = rows.front();
    for (std::string& h : header) {
        h = trim(h);
        auto it = column_mapping.find(h);
        if (it != column_mapping.end()) h = it->second;
    }
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;

    std::vector<std::string> required = annotation_count_columns();
    required.insert(required.begin(), {"pair_id", "rater_id"});
    std::string missing;
    for (const std::string& name : required)
        if (!col.count(name)) missing += (missing.empty() ? "" : ", ") + name;
    if (!missing.empty())
        throw MalformedRecordError(1, "missing annotation columns: " + missing);

    std::vector<RaterAnnotation> out;
    std::set<std::pair<std::string, std::string>> seen;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() == 1 && trim(row[0]).empty()) continue;
        if (row.size() < header.size())
            throw MalformedRecordError(r + 1, "expected " + std::to_string(header.size()) +
                                                  " columns, got " + std::to_string(row.size()));
        RaterAnnotation a;
        a.pair_id = trim(row[col.at("pair_id")]);
        a.rater_id = trim(row[col.at("rater_id")]);
        if (a.pair_id.empty() || a.rater_id.empty())
            throw MalformedRecordError(r + 1, "empty pair_id or rater_id");
        if (!seen.insert({a.pair_id, a.rater_id}).second)
            throw MalformedRecordError(r + 1, "duplicate cell for pair " + a.pair_id +
                                                  ", rater " + a.rater_id);
        for (ErrorCategory c : all_categories()) {
            for (Significance s : {Significance::clinically_significant,
                                   Significance::clinically_insignificant}) {
                std::string name =
                    std::string(to_string(c)) + "_" + std::string(to_string(s));
                const std::string cell = trim(row[col.at(name)]);
                int value = 0;
                try {
                    std::size_t pos = 0;
                    value = std::stoi(cell, &pos);
                    if (pos != cell.size()) throw std::invalid_argument(cell);
                } catch (const std::exception&) {
                    throw MalformedRecordError(r + 1, "non-integer count in column " + name +
                                                          ": '" + cell + "'");
                }
                if (value < 0)
                    throw MalformedRecordError(r + 1, "negative count in column " + name);
                a.counts.at(c, s) = value;
            }
        }
        out.push_back(std::move(a));
    }
    return out;
}

inline std::string annotations_csv_dump(const std::vector<RaterAnnotation>& annotations) {
    std::string out = "pair_id,rater_id";
    for (const std::string& c : annotation_count_columns()) out += "," + c;
    out += '\n';
    for (const RaterAnnotation& a : annotations) {
        out += csv_escape(a.pair_id) + "," + csv_escape(a.rater_id);
        for (ErrorCategory c : all_categories())
            for (Significance s : {Significance::clinically_significant,
                                   Significance::clinically_insignificant})
                out += "," + std::to_string(a.counts.at(c, s));
        out += '\n';
    }
    return out;
}

}  // namespace repeval
