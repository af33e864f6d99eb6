#pragma once

#include <string>
#include <vector>

namespace stva {

/// A parsed CSV file: one header row plus data rows, all fields as strings.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    // Column position of `name`, or -1.
    int column(const std::string& name) const;
};

/// Reads a comma-separated file. Handles quoted fields and CRLF line ends;
/// empty fields come back as empty strings. Throws ValidationError if the
/// file cannot be opened or a quoted field is left open.
CsvTable read_csv(const std::string& path);

/// Parses one CSV record (no trailing newline).
std::vector<std::string> split_csv_line(const std::string& line);

} // namespace stva
