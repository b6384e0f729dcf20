#pragma once

#include <string>
#include <string_view>

namespace rndkit {

/// Calendar dates are carried as day counts since 1970-01-01.
using Day = int;

/// Parses "YYYY-MM-DD". Throws DataError on malformed or impossible dates.
Day parse_iso_date(std::string_view text);
std::string format_iso_date(Day day);
int year_of(Day day);

/// Actual/365 year fraction.
inline double year_fraction(Day from, Day to) { return static_cast<double>(to - from) / 365.0; }

}  // namespace rndkit
