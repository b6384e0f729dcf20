#include "rndkit/csv.hpp"

#include "rndkit/error.hpp"

#include <charconv>
#include <istream>
#include <ostream>

namespace rndkit::csv {

std::vector<std::string> split(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.emplace_back(line.substr(start));
            break;
        }
        out.emplace_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    for (auto& f : out) {
        while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) f.pop_back();
        std::size_t lead = 0;
        while (lead < f.size() && (f[lead] == ' ' || f[lead] == '\t')) ++lead;
        f.erase(0, lead);
    }
    return out;
}

std::string format(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return {buf, res.ptr};
}

std::size_t Header::require(const std::string& name, const std::string& source) const {
    const auto it = index.find(name);
    if (it == index.end()) throw DataError(source + ": missing column '" + name + "'");
    return it->second;
}

Header read_header(std::istream& in, const std::string& source) {
    std::string line;
    if (!std::getline(in, line)) throw DataError(source + ": empty file (no header)");
    Header h;
    h.names = split(line);
    for (std::size_t i = 0; i < h.names.size(); ++i) h.index.emplace(h.names[i], i);
    return h;
}

double parse_double(std::string_view field) {
    double v = 0.0;
    const auto* end = field.data() + field.size();
    const auto res = std::from_chars(field.data(), end, v);
    if (field.empty() || res.ec != std::errc{} || res.ptr != end) {
        throw DataError("not a number: '" + std::string(field) + "'");
    }
    return v;
}

bool parse_flag(std::string_view field) {
    if (field == "1" || field == "true" || field == "TRUE") return true;
    if (field == "0" || field == "false" || field == "FALSE") return false;
    throw DataError("not a flag: '" + std::string(field) + "'");
}

void write_row(std::ostream& out, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out << ',';
        out << fields[i];
    }
    out << '\n';
}

}  // namespace rndkit::csv
