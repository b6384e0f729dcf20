#pragma once

// Quote, exposure and fire-event files; slice assembly; treatment calendars.

#include "rndkit/dates.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rndkit {

struct OptionQuote {
    std::string ticker;
    Day quote_date = 0;
    Day expiry = 0;
    double strike = 0.0;
    bool is_call = true;
    double bid = 0.0;
    double ask = 0.0;
    double mid = 0.0;
    double forward = 0.0;
    double rate = 0.0;
    double div_yield = 0.0;
    std::optional<double> iv_raw;

    [[nodiscard]] double maturity_years() const { return year_fraction(quote_date, expiry); }
};

struct RejectRecord {
    std::size_t row = 0;  // 1-based line number in the file, header is line 1
    std::string reason;
    std::string line;
};

struct QuoteFile {
    std::vector<OptionQuote> quotes;
    std::vector<RejectRecord> rejects;
};

/// Header: ticker,quote_date,expiry,strike,cp_flag,bid,ask,forward,rate,div_yield,iv
/// (any column order, extra columns ignored). A missing column throws
/// DataError; bad rows are collected as rejects.
QuoteFile parse_quotes(std::istream& in, const std::string& source = "<stream>");
QuoteFile load_quotes(const std::filesystem::path& path);
void write_quotes(std::ostream& out, const std::vector<OptionQuote>& quotes);
void write_rejects(std::ostream& out, const std::vector<RejectRecord>& rejects);

struct SurfaceSlice {
    std::string ticker;
    Day quote_date = 0;
    Day expiry = 0;
    double maturity_years = 0.0;
    std::vector<double> strikes;
    std::vector<double> calls;
    double forward = 0.0;
    double rate = 0.0;
    double div_yield = 0.0;

    void validate() const;
    [[nodiscard]] double discount() const;
};

/// Groups quotes by (ticker, quote_date, expiry). Where a strike has both a
/// call and a put, the out-of-the-money one is kept; puts are mapped to calls
/// by parity. Slices come back sorted by key.
std::vector<SurfaceSlice> build_slices(const std::vector<OptionQuote>& quotes);

/// Inverse of build_slices for writing: one call quote per strike with
/// bid = ask = price.
std::vector<OptionQuote> slices_to_quotes(const std::vector<SurfaceSlice>& slices);

struct ExposureRecord {
    std::string ticker;
    std::string zip;
    double share_estabs = 0.0;
    double share_emp = 0.0;
    double share_sales = 0.0;
    std::optional<int> year;  // snapshot year, when the file carries one
};

struct FireEvent {
    std::string zip;
    Day start_date = 0;
    Day end_date = 0;
};

struct TreatmentCalendar {
    std::string ticker;
    Day date = 0;
    bool treated_now = false;
    bool after_first = false;
    bool after_last = false;

    friend bool operator==(const TreatmentCalendar&, const TreatmentCalendar&) = default;
};

enum class SnapshotMode { Latest, Contemporaneous };
SnapshotMode parse_snapshot_mode(const std::string& name);
std::string snapshot_mode_name(SnapshotMode mode);

struct TreatmentOptions {
    double threshold = 0.10;
    SnapshotMode snapshot = SnapshotMode::Latest;
};

struct TreatmentResult {
    std::vector<TreatmentCalendar> rows;  // sorted by (ticker, date)
    std::size_t unknown_zip_fires = 0;
};

/// treated_now on day t: for some share measure, the firm's summed share
/// over zips with an active fire (start <= t <= end) reaches the threshold.
/// after_first: treated on some date <= t. after_last: t is on or after the
/// first day of the firm's last run of consecutive treated dates.
TreatmentResult compute_treatment(const std::vector<ExposureRecord>& exposures, const std::vector<FireEvent>& fires,
                                  const std::vector<Day>& dates, const TreatmentOptions& opts = {});

std::vector<ExposureRecord> parse_exposures(std::istream& in, const std::string& source = "<stream>");
std::vector<ExposureRecord> load_exposures(const std::filesystem::path& path);
std::vector<FireEvent> parse_fires(std::istream& in, const std::string& source = "<stream>");
std::vector<FireEvent> load_fires(const std::filesystem::path& path);
void write_treatment(std::ostream& out, const std::vector<TreatmentCalendar>& rows);
std::vector<TreatmentCalendar> parse_treatment(std::istream& in, const std::string& source = "<stream>");

}  // namespace rndkit
