#include "rndkit/dates.hpp"

#include "rndkit/error.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>

namespace rndkit {

namespace {

int parse_int(std::string_view s) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw DataError("bad date component '" + std::string(s) + "'");
    }
    return v;
}

}  // namespace

Day parse_iso_date(std::string_view text) {
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
        throw DataError("date '" + std::string(text) + "' is not YYYY-MM-DD");
    }
    using namespace std::chrono;
    const year_month_day ymd{year{parse_int(text.substr(0, 4))},
                             month{static_cast<unsigned>(parse_int(text.substr(5, 2)))},
                             day{static_cast<unsigned>(parse_int(text.substr(8, 2)))}};
    if (!ymd.ok()) {
        throw DataError("date '" + std::string(text) + "' does not exist");
    }
    return static_cast<Day>(sys_days{ymd}.time_since_epoch().count());
}

std::string format_iso_date(Day d) {
    using namespace std::chrono;
    const year_month_day ymd{sys_days{days{d}}};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

int year_of(Day d) {
    using namespace std::chrono;
    return static_cast<int>(year_month_day{sys_days{days{d}}}.year());
}

}  // namespace rndkit
