#include "kwcp/csv.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kwcp/error.hpp"

namespace kwcp::csv {

std::size_t Table::column(std::string_view name) const
{
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw Error(ErrorKind::Schema, path + ": missing column '" + std::string(name) + "'");
}

bool Table::has_column(std::string_view name) const
{
    for (const auto& h : header)
        if (h == name) return true;
    return false;
}

std::vector<std::string> split_line(std::string_view line)
{
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else {
            field.push_back(ch);
        }
    }
    fields.push_back(std::move(field));
    return fields;
}

Table read(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Schema, path + ": cannot open file");

    Table table;
    table.path = path;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (first) {
            // UTF-8 byte-order mark
            if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
                static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF)
                line.erase(0, 3);
            table.header = split_line(line);
            for (auto& h : table.header) {
                while (!h.empty() && (h.back() == ' ' || h.back() == '\t')) h.pop_back();
                while (!h.empty() && (h.front() == ' ' || h.front() == '\t')) h.erase(0, 1);
            }
            first = false;
            continue;
        }
        if (line.empty()) continue;
        auto fields = split_line(line);
        if (fields.size() != table.header.size()) {
            throw Error(ErrorKind::Schema, path + ": row " + std::to_string(table.rows.size() + 2) + " has " +
                                               std::to_string(fields.size()) + " fields, header has " +
                                               std::to_string(table.header.size()));
        }
        table.rows.push_back(std::move(fields));
    }
    if (first) throw Error(ErrorKind::Schema, path + ": empty file (header required)");
    return table;
}

double parse_double(const std::string& text, const Table& table, std::size_t row, std::string_view column)
{
    const char* begin = text.data();
    const char* end = begin + text.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    while (end > begin && (end[-1] == ' ' || end[-1] == '\t')) --end;
    if (begin < end && *begin == '+') ++begin;
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
        throw Error(ErrorKind::Schema, table.path + ": row " + std::to_string(row + 2) + ", column '" +
                                           std::string(column) + "': expected a finite number, got '" + text +
                                           "'");
    }
    return value;
}

std::string format_double(double value)
{
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

std::string escape(std::string_view field)
{
    if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char ch : field) {
        if (ch == '"') out.push_back('"');
        out.push_back(ch);
    }
    out.push_back('"');
    return out;
}

} // namespace kwcp::csv
