#pragma once

// Minimal CSV helpers: no quoting, comma separated, header row required.

#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rndkit::csv {

std::vector<std::string> split(std::string_view line);

/// Shortest decimal form that parses back to the same double.
std::string format(double value);

struct Header {
    std::vector<std::string> names;
    std::unordered_map<std::string, std::size_t> index;

    /// Column position; throws DataError naming the missing column.
    [[nodiscard]] std::size_t require(const std::string& name, const std::string& source) const;
    [[nodiscard]] bool has(const std::string& name) const { return index.contains(name); }
};

/// Reads the header line. Throws DataError on an empty stream.
Header read_header(std::istream& in, const std::string& source);

double parse_double(std::string_view field);  // throws DataError
bool parse_flag(std::string_view field);      // 0/1/true/false

void write_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace rndkit::csv
