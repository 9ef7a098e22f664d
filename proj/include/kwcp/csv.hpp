#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace kwcp::csv {

/// Header plus rows of a comma-separated file. Quoted fields with embedded
/// commas and doubled quotes are supported; row numbers are 1-based file
/// lines (the header is line 1).
struct Table {
    std::string path;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Column index or Error(Schema) naming the column and file.
    std::size_t column(std::string_view name) const;
    bool has_column(std::string_view name) const;
};

Table read(const std::string& path);

std::vector<std::string> split_line(std::string_view line);

/// Strict finite parse; throws Error(Schema) with file, row and column.
double parse_double(const std::string& text, const Table& table, std::size_t row, std::string_view column);

/// Formats with 17 significant digits (round-trip exact).
std::string format_double(double value);

/// Quotes a field when it contains a comma, quote or newline.
std::string escape(std::string_view field);

} // namespace kwcp::csv
