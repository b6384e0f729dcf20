#include "rndkit/quotes_io.hpp"

#include "rndkit/csv.hpp"
#include "rndkit/error.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <tuple>
#include <unordered_map>

namespace rndkit {

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return in;
}

}  // namespace

QuoteFile parse_quotes(std::istream& in, const std::string& source) {
    const csv::Header h = csv::read_header(in, source);
    const std::size_t c_ticker = h.require("ticker", source);
    const std::size_t c_date = h.require("quote_date", source);
    const std::size_t c_expiry = h.require("expiry", source);
    const std::size_t c_strike = h.require("strike", source);
    const std::size_t c_cp = h.require("cp_flag", source);
    const std::size_t c_bid = h.require("bid", source);
    const std::size_t c_ask = h.require("ask", source);
    const std::size_t c_fwd = h.require("forward", source);
    const std::size_t c_rate = h.require("rate", source);
    const std::size_t c_div = h.require("div_yield", source);
    const std::size_t c_iv = h.require("iv", source);
    const std::size_t width = h.names.size();

    QuoteFile out;
    std::string line;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        try {
            const auto f = csv::split(line);
            if (f.size() != width) throw DataError("expected " + std::to_string(width) + " fields, got " + std::to_string(f.size()));
            OptionQuote q;
            q.ticker = f[c_ticker];
            if (q.ticker.empty()) throw DataError("empty ticker");
            q.quote_date = parse_iso_date(f[c_date]);
            q.expiry = parse_iso_date(f[c_expiry]);
            q.strike = csv::parse_double(f[c_strike]);
            const std::string& cp = f[c_cp];
            if (cp == "C" || cp == "c") {
                q.is_call = true;
            } else if (cp == "P" || cp == "p") {
                q.is_call = false;
            } else {
                throw DataError("cp_flag must be C or P");
            }
            q.bid = csv::parse_double(f[c_bid]);
            q.ask = csv::parse_double(f[c_ask]);
            q.forward = csv::parse_double(f[c_fwd]);
            q.rate = csv::parse_double(f[c_rate]);
            q.div_yield = csv::parse_double(f[c_div]);
            if (!f[c_iv].empty()) q.iv_raw = csv::parse_double(f[c_iv]);
            if (!(q.bid >= 0.0)) throw DataError("bid < 0");
            if (!(q.ask >= q.bid)) throw DataError("ask < bid");
            if (!(q.strike > 0.0)) throw DataError("strike <= 0");
            if (!(q.expiry > q.quote_date)) throw DataError("expiry not after quote_date");
            if (!(q.forward > 0.0)) throw DataError("forward <= 0");
            if (!std::isfinite(q.rate) || !std::isfinite(q.div_yield)) throw DataError("non-finite rate");
            q.mid = 0.5 * (q.bid + q.ask);
            out.quotes.push_back(std::move(q));
        } catch (const DataError& e) {
            out.rejects.push_back({row, e.what(), line});
        }
    }
    return out;
}

QuoteFile load_quotes(const std::filesystem::path& path) {
    auto in = open_input(path);
    return parse_quotes(in, path.string());
}

void write_quotes(std::ostream& out, const std::vector<OptionQuote>& quotes) {
    out << "ticker,quote_date,expiry,strike,cp_flag,bid,ask,forward,rate,div_yield,iv\n";
    for (const auto& q : quotes) {
        csv::write_row(out, {q.ticker, format_iso_date(q.quote_date), format_iso_date(q.expiry), csv::format(q.strike),
                             q.is_call ? "C" : "P", csv::format(q.bid), csv::format(q.ask), csv::format(q.forward),
                             csv::format(q.rate), csv::format(q.div_yield), q.iv_raw ? csv::format(*q.iv_raw) : ""});
    }
}

void write_rejects(std::ostream& out, const std::vector<RejectRecord>& rejects) {
    out << "row,reason\n";
    for (const auto& r : rejects) {
        std::string reason = r.reason;
        std::replace(reason.begin(), reason.end(), ',', ';');
        out << r.row << ',' << reason << '\n';
    }
}

void SurfaceSlice::validate() const {
    if (strikes.size() != calls.size()) throw DataError(ticker + ": strikes and calls differ in length");
    if (!(maturity_years > 0.0)) throw DataError(ticker + ": maturity must be positive");
    if (!(forward > 0.0)) throw DataError(ticker + ": forward must be positive");
    for (std::size_t i = 1; i < strikes.size(); ++i) {
        if (!(strikes[i] > strikes[i - 1])) throw DataError(ticker + ": strikes not strictly ascending");
    }
}

double SurfaceSlice::discount() const { return std::exp(-rate * maturity_years); }

std::vector<SurfaceSlice> build_slices(const std::vector<OptionQuote>& quotes) {
    using Key = std::tuple<std::string, Day, Day>;
    std::map<Key, std::vector<const OptionQuote*>> groups;
    for (const auto& q : quotes) groups[{q.ticker, q.quote_date, q.expiry}].push_back(&q);
    std::vector<SurfaceSlice> out;
    out.reserve(groups.size());
    for (const auto& [key, members] : groups) {
        SurfaceSlice s;
        s.ticker = std::get<0>(key);
        s.quote_date = std::get<1>(key);
        s.expiry = std::get<2>(key);
        s.maturity_years = year_fraction(s.quote_date, s.expiry);
        double fwd = 0.0;
        double rate = 0.0;
        double div = 0.0;
        for (const auto* q : members) {
            fwd += q->forward;
            rate += q->rate;
            div += q->div_yield;
        }
        const auto n = static_cast<double>(members.size());
        s.forward = fwd / n;
        s.rate = rate / n;
        s.div_yield = div / n;
        const double df = s.discount();
        // strike -> (call mid, put mid); duplicates averaged
        std::map<double, std::array<std::pair<double, int>, 2>> by_strike;
        for (const auto* q : members) {
            auto& slot = by_strike[q->strike][q->is_call ? 0 : 1];
            slot.first += q->mid;
            slot.second += 1;
        }
        for (const auto& [K, sides] : by_strike) {
            const bool have_call = sides[0].second > 0;
            const bool have_put = sides[1].second > 0;
            const double call = have_call ? sides[0].first / sides[0].second : 0.0;
            const double put = have_put ? sides[1].first / sides[1].second : 0.0;
            const bool use_call = have_call && (!have_put || K >= s.forward);
            s.strikes.push_back(K);
            s.calls.push_back(use_call ? call : put + df * (s.forward - K));
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<OptionQuote> slices_to_quotes(const std::vector<SurfaceSlice>& slices) {
    std::vector<OptionQuote> out;
    for (const auto& s : slices) {
        for (std::size_t i = 0; i < s.strikes.size(); ++i) {
            OptionQuote q;
            q.ticker = s.ticker;
            q.quote_date = s.quote_date;
            q.expiry = s.expiry;
            q.strike = s.strikes[i];
            q.is_call = true;
            q.bid = q.ask = q.mid = s.calls[i];
            q.forward = s.forward;
            q.rate = s.rate;
            q.div_yield = s.div_yield;
            out.push_back(std::move(q));
        }
    }
    return out;
}

SnapshotMode parse_snapshot_mode(const std::string& name) {
    if (name == "latest") return SnapshotMode::Latest;
    if (name == "contemporaneous") return SnapshotMode::Contemporaneous;
    throw ParameterError("snapshot mode must be latest or contemporaneous, got '" + name + "'");
}

std::string snapshot_mode_name(SnapshotMode mode) {
    return mode == SnapshotMode::Latest ? "latest" : "contemporaneous";
}

namespace {

struct ZipShares {
    std::array<double, 3> share{};
};

using FirmSnapshot = std::map<std::string, ZipShares>;  // zip -> shares

// ticker -> year -> zip shares. Records without a year sit under INT_MIN and
// apply to every year.
using ExposureBook = std::map<std::string, std::map<int, FirmSnapshot>>;

constexpr int kAnyYear = std::numeric_limits<int>::min();

const FirmSnapshot* pick_snapshot(const std::map<int, FirmSnapshot>& years, SnapshotMode mode, int year) {
    if (years.empty()) return nullptr;
    if (mode == SnapshotMode::Latest) return &years.rbegin()->second;
    // Contemporaneous: the year itself, else the latest earlier year, else
    // the earliest available.
    auto it = years.upper_bound(year);
    if (it == years.begin()) return &it->second;
    return &std::prev(it)->second;
}

}  // namespace

TreatmentResult compute_treatment(const std::vector<ExposureRecord>& exposures, const std::vector<FireEvent>& fires,
                                  const std::vector<Day>& dates, const TreatmentOptions& opts) {
    if (!(opts.threshold > 0.0 && opts.threshold <= 1.0)) throw ParameterError("threshold must be in (0, 1]");
    ExposureBook book;
    std::set<std::string> known_zips;
    for (const auto& e : exposures) {
        for (double s : {e.share_estabs, e.share_emp, e.share_sales}) {
            if (!(s >= 0.0 && s <= 1.0)) throw DataError(e.ticker + ": share outside [0,1] in zip " + e.zip);
        }
        auto& z = book[e.ticker][e.year.value_or(kAnyYear)][e.zip];
        z.share[0] += e.share_estabs;
        z.share[1] += e.share_emp;
        z.share[2] += e.share_sales;
        known_zips.insert(e.zip);
    }
    // Year-less records apply to every dated snapshot too.
    for (auto& [ticker, years] : book) {
        const auto any = years.find(kAnyYear);
        if (any == years.end() || years.size() == 1) continue;
        const FirmSnapshot base = any->second;
        years.erase(any);
        for (auto& [year, snap] : years) {
            for (const auto& [zip, sh] : base) {
                for (int m = 0; m < 3; ++m) snap[zip].share[m] += sh.share[m];
            }
        }
    }
    for (const auto& [ticker, years] : book) {
        for (const auto& [year, snap] : years) {
            std::array<double, 3> total{};
            for (const auto& [zip, sh] : snap) {
                for (int m = 0; m < 3; ++m) total[m] += sh.share[m];
            }
            for (double t : total) {
                if (t > 1.0 + 1e-6) throw DataError(ticker + ": exposure shares sum above 1");
            }
        }
    }

    TreatmentResult out;
    std::vector<FireEvent> active_fires;
    for (const auto& f : fires) {
        if (f.end_date < f.start_date) throw DataError("fire in zip " + f.zip + " ends before it starts");
        if (!known_zips.contains(f.zip)) {
            ++out.unknown_zip_fires;
            continue;
        }
        active_fires.push_back(f);
    }
    std::vector<Day> days = dates;
    std::sort(days.begin(), days.end());
    days.erase(std::unique(days.begin(), days.end()), days.end());

    // zips burning on each day
    std::vector<std::set<std::string>> burning(days.size());
    for (const auto& f : active_fires) {
        auto lo = std::lower_bound(days.begin(), days.end(), f.start_date);
        for (auto it = lo; it != days.end() && *it <= f.end_date; ++it) burning[it - days.begin()].insert(f.zip);
    }

    const double thr = opts.threshold - 1e-12;
    for (const auto& [ticker, years] : book) {
        std::vector<bool> treated(days.size(), false);
        for (std::size_t d = 0; d < days.size(); ++d) {
            if (burning[d].empty()) continue;
            const FirmSnapshot* snap = pick_snapshot(years, opts.snapshot, year_of(days[d]));
            if (snap == nullptr) continue;
            std::array<double, 3> hit{};
            for (const auto& zip : burning[d]) {
                const auto it = snap->find(zip);
                if (it == snap->end()) continue;
                for (int m = 0; m < 3; ++m) hit[m] += it->second.share[m];
            }
            treated[d] = hit[0] >= thr || hit[1] >= thr || hit[2] >= thr;
        }
        std::size_t last_start = days.size();
        for (std::size_t d = 0; d < days.size(); ++d) {
            if (treated[d] && (d == 0 || !treated[d - 1])) last_start = d;
        }
        bool ever = false;
        for (std::size_t d = 0; d < days.size(); ++d) {
            ever = ever || treated[d];
            out.rows.push_back({ticker, days[d], treated[d], ever, last_start < days.size() && d >= last_start});
        }
    }
    return out;
}

std::vector<ExposureRecord> parse_exposures(std::istream& in, const std::string& source) {
    const csv::Header h = csv::read_header(in, source);
    const std::size_t c_t = h.require("ticker", source);
    const std::size_t c_z = h.require("zip", source);
    const std::size_t c_e = h.require("share_estabs", source);
    const std::size_t c_m = h.require("share_emp", source);
    const std::size_t c_s = h.require("share_sales", source);
    const bool has_year = h.has("year");
    const std::size_t c_y = has_year ? h.index.at("year") : 0;
    std::vector<ExposureRecord> out;
    std::string line;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto f = csv::split(line);
        if (f.size() != h.names.size()) throw DataError(source + ": row " + std::to_string(row) + " has wrong field count");
        try {
            ExposureRecord r{f[c_t], f[c_z], csv::parse_double(f[c_e]), csv::parse_double(f[c_m]),
                             csv::parse_double(f[c_s]), std::nullopt};
            if (has_year && !f[c_y].empty()) r.year = static_cast<int>(csv::parse_double(f[c_y]));
            out.push_back(std::move(r));
        } catch (const DataError& e) {
            throw DataError(source + ": row " + std::to_string(row) + ": " + e.what());
        }
    }
    return out;
}

std::vector<ExposureRecord> load_exposures(const std::filesystem::path& path) {
    auto in = open_input(path);
    return parse_exposures(in, path.string());
}

std::vector<FireEvent> parse_fires(std::istream& in, const std::string& source) {
    const csv::Header h = csv::read_header(in, source);
    const std::size_t c_z = h.require("zip", source);
    const std::size_t c_s = h.require("start_date", source);
    const std::size_t c_e = h.require("end_date", source);
    std::vector<FireEvent> out;
    std::string line;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto f = csv::split(line);
        if (f.size() != h.names.size()) throw DataError(source + ": row " + std::to_string(row) + " has wrong field count");
        try {
            out.push_back({f[c_z], parse_iso_date(f[c_s]), parse_iso_date(f[c_e])});
        } catch (const DataError& e) {
            throw DataError(source + ": row " + std::to_string(row) + ": " + e.what());
        }
    }
    return out;
}

std::vector<FireEvent> load_fires(const std::filesystem::path& path) {
    auto in = open_input(path);
    return parse_fires(in, path.string());
}

void write_treatment(std::ostream& out, const std::vector<TreatmentCalendar>& rows) {
    out << "ticker,date,treated_now,after_first,after_last\n";
    for (const auto& r : rows) {
        out << r.ticker << ',' << format_iso_date(r.date) << ',' << int(r.treated_now) << ',' << int(r.after_first)
            << ',' << int(r.after_last) << '\n';
    }
}

std::vector<TreatmentCalendar> parse_treatment(std::istream& in, const std::string& source) {
    const csv::Header h = csv::read_header(in, source);
    const std::size_t c_t = h.require("ticker", source);
    const std::size_t c_d = h.require("date", source);
    const std::size_t c_n = h.require("treated_now", source);
    const std::size_t c_f = h.require("after_first", source);
    const std::size_t c_l = h.require("after_last", source);
    std::vector<TreatmentCalendar> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto f = csv::split(line);
        if (f.size() != h.names.size()) throw DataError(source + ": wrong field count");
        out.push_back({f[c_t], parse_iso_date(f[c_d]), csv::parse_flag(f[c_n]), csv::parse_flag(f[c_f]),
                       csv::parse_flag(f[c_l])});
    }
    return out;
}

}  // namespace rndkit
