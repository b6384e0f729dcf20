#include <doctest.h>

#include "rndkit/error.hpp"
#include "rndkit/pricing_core.hpp"
#include "rndkit/quotes_io.hpp"
#include "rndkit/surface_repair.hpp"
#include "rndkit/synth.hpp"

#include <algorithm>
#include <random>
#include <sstream>

using namespace rndkit;

namespace {
const char* kHeader = "ticker,quote_date,expiry,strike,cp_flag,bid,ask,forward,rate,div_yield,iv\n";
}

TEST_CASE("quote row parses with midpoint") {
    std::istringstream in(std::string(kHeader) + "ACME,2017-10-12,2017-11-17,40,C,1.10,1.20,42.5,0.01,0.0,\n");
    const QuoteFile f = parse_quotes(in);
    REQUIRE(f.quotes.size() == 1);
    CHECK(f.quotes[0].mid == doctest::Approx(1.15));
    CHECK(f.quotes[0].is_call);
    CHECK_FALSE(f.quotes[0].iv_raw.has_value());
    CHECK(f.quotes[0].maturity_years() == doctest::Approx(36.0 / 365.0));
}

TEST_CASE("invalid rows are rejected with row numbers") {
    std::istringstream in(std::string(kHeader) +
                          "ACME,2017-10-12,2017-11-17,40,C,1.10,1.20,42.5,0.01,0.0,\n"
                          "ACME,2017-10-12,2017-11-17,45,C,2,1,42.5,0.01,0.0,\n"
                          "ACME,2017-10-12,2017-11-17,35,P,0.5,0.6,42.5,0.01,0.0,0.3\n"
                          "ACME,2017-10-12,2017-11-17,50,C,0.1,0.2,42.5,0.01,0.0,\n");
    const QuoteFile f = parse_quotes(in);
    CHECK(f.quotes.size() == 3);
    REQUIRE(f.rejects.size() == 1);
    CHECK(f.rejects[0].row == 3);
    CHECK(f.rejects[0].reason.find("ask < bid") != std::string::npos);
}

TEST_CASE("other bad rows are rejects, not fatal") {
    std::istringstream in(std::string(kHeader) +
                          "ACME,2017-13-12,2017-11-17,40,C,1.10,1.20,42.5,0.01,0.0,\n"
                          "ACME,2017-10-12,2017-10-12,40,C,1.10,1.20,42.5,0.01,0.0,\n"
                          "ACME,2017-10-12,2017-11-17,abc,C,1.10,1.20,42.5,0.01,0.0,\n"
                          "ACME,2017-10-12,2017-11-17,40,X,1.10,1.20,42.5,0.01,0.0,\n"
                          "ACME,2017-10-12,2017-11-17,40,C,1.10,1.20,0,0.01,0.0,\n");
    const QuoteFile f = parse_quotes(in);
    CHECK(f.quotes.empty());
    CHECK(f.rejects.size() == 5);
}

TEST_CASE("missing column is fatal") {
    std::istringstream in("ticker,quote_date,expiry,strike,cp_flag,bid,ask,forward,rate,iv\n");
    CHECK_THROWS_AS(parse_quotes(in), DataError);
}

TEST_CASE("write then load round trip") {
    const std::string text = std::string(kHeader) +
                             "ACME,2017-10-12,2017-11-17,40,C,1.1,1.2,42.5,0.01,0,\n"
                             "ACME,2017-10-12,2017-11-17,35,P,0.5,0.6,42.5,0.01,0,0.3\n";
    std::istringstream in(text);
    const QuoteFile f = parse_quotes(in);
    std::ostringstream out;
    write_quotes(out, f.quotes);
    CHECK(out.str() == text);
}

TEST_CASE("build_slices keeps OTM side and maps puts by parity") {
    const double F = 100.0;
    const double r = 0.02;
    const double T = 182.0 / 365.0;
    std::vector<OptionQuote> quotes;
    for (double K : {80.0, 90.0, 100.0, 110.0, 120.0}) {
        for (bool call : {true, false}) {
            OptionQuote q;
            q.ticker = "ACME";
            q.quote_date = parse_iso_date("2017-01-02");
            q.expiry = q.quote_date + 182;
            q.strike = K;
            q.is_call = call;
            q.forward = F;
            q.rate = r;
            q.bid = q.ask = q.mid = bs_price({F, K, r, T, 0.25, call});
            quotes.push_back(q);
        }
    }
    std::reverse(quotes.begin(), quotes.end());
    const auto slices = build_slices(quotes);
    REQUIRE(slices.size() == 1);
    const auto& s = slices[0];
    REQUIRE(s.strikes.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(s.calls[i] == doctest::Approx(bs_price({F, s.strikes[i], r, T, 0.25, true})).epsilon(1e-12));
    }
}

TEST_CASE("treatment rule per measure") {
    const Day d0 = parse_iso_date("2017-10-08");
    std::vector<Day> dates;
    for (int i = 0; i < 10; ++i) dates.push_back(d0 + i);
    const std::vector<FireEvent> fires{{"95401", d0 + 2, d0 + 4}, {"95402", d0 + 7, d0 + 7}, {"00000", d0, d0 + 9}};
    SUBCASE("employment share above threshold") {
        const std::vector<ExposureRecord> ex{{"PCG", "95401", 0.0, 0.12, 0.0, std::nullopt}};
        const auto res = compute_treatment(ex, fires, dates);
        CHECK(res.unknown_zip_fires == 2);
        for (const auto& row : res.rows) CHECK(row.treated_now == (row.date >= d0 + 2 && row.date <= d0 + 4));
    }
    SUBCASE("no exposure never treated") {
        const std::vector<ExposureRecord> ex{{"ZERO", "95401", 0.0, 0.0, 0.0, std::nullopt}};
        for (const auto& row : compute_treatment(ex, fires, dates).rows) CHECK_FALSE(row.after_first);
    }
    SUBCASE("below threshold on each measure separately") {
        const std::vector<ExposureRecord> ex{{"SPLIT", "95401", 0.06, 0.0, 0.06, std::nullopt}};
        for (const auto& row : compute_treatment(ex, fires, dates).rows) CHECK_FALSE(row.treated_now);
    }
    SUBCASE("shares add across burning zips and episodes define flags") {
        const std::vector<ExposureRecord> ex{{"TWO", "95401", 0.05, 0.0, 0.0, std::nullopt},
                                             {"TWO", "95402", 0.05, 0.0, 0.0, std::nullopt},
                                             {"TWO", "95403", 0.05, 0.0, 0.0, std::nullopt}};
        std::vector<FireEvent> f{{"95401", d0 + 1, d0 + 2}, {"95402", d0 + 2, d0 + 2}, {"95403", d0 + 5, d0 + 6},
                                 {"95401", d0 + 6, d0 + 6}};
        const auto rows = compute_treatment(ex, f, dates).rows;
        std::vector<bool> now;
        std::vector<bool> first;
        std::vector<bool> last;
        for (const auto& r : rows) {
            now.push_back(r.treated_now);
            first.push_back(r.after_first);
            last.push_back(r.after_last);
        }
        CHECK(now == std::vector<bool>{0, 0, 1, 0, 0, 0, 1, 0, 0, 0});
        CHECK(first == std::vector<bool>{0, 0, 1, 1, 1, 1, 1, 1, 1, 1});
        CHECK(last == std::vector<bool>{0, 0, 0, 0, 0, 0, 1, 1, 1, 1});
    }
}

TEST_CASE("treatment is order independent and idempotent") {
    const Day d0 = parse_iso_date("2018-07-01");
    std::vector<Day> dates;
    for (int i = 0; i < 40; ++i) dates.push_back(d0 + i);
    std::vector<ExposureRecord> ex;
    std::vector<FireEvent> fires;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int f = 0; f < 6; ++f) {
        for (int z = 0; z < 5; ++z) {
            ex.push_back({"T" + std::to_string(f), "Z" + std::to_string(z), 0.19 * u(rng), 0.19 * u(rng),
                          0.19 * u(rng), std::nullopt});
        }
    }
    for (int i = 0; i < 8; ++i) {
        const Day s = d0 + static_cast<Day>(40 * u(rng));
        fires.push_back({"Z" + std::to_string(i % 5), s, s + static_cast<Day>(5 * u(rng))});
    }
    const auto a = compute_treatment(ex, fires, dates).rows;
    std::shuffle(ex.begin(), ex.end(), rng);
    std::shuffle(fires.begin(), fires.end(), rng);
    std::shuffle(dates.begin(), dates.end(), rng);
    const auto b = compute_treatment(ex, fires, dates).rows;
    CHECK(a == b);
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].treated_now) CHECK(a[i].after_first);
        if (a[i].after_last) CHECK(a[i].after_first);
        if (i > 0 && a[i].ticker == a[i - 1].ticker && a[i - 1].after_first) CHECK(a[i].after_first);
    }
    std::ostringstream out;
    write_treatment(out, a);
    std::istringstream in(out.str());
    CHECK(parse_treatment(in) == a);
}

TEST_CASE("snapshot selection") {
    const Day d2017 = parse_iso_date("2017-10-09");
    const Day d2018 = parse_iso_date("2018-11-09");
    const std::vector<ExposureRecord> ex{{"A", "Z1", 0.2, 0.0, 0.0, 2017}, {"A", "Z1", 0.0, 0.0, 0.0, 2018}};
    const std::vector<FireEvent> fires{{"Z1", d2017, d2017}, {"Z1", d2018, d2018}};
    TreatmentOptions latest;
    TreatmentOptions contemporaneous;
    contemporaneous.snapshot = SnapshotMode::Contemporaneous;
    const auto a = compute_treatment(ex, fires, {d2017, d2018}, latest).rows;
    const auto b = compute_treatment(ex, fires, {d2017, d2018}, contemporaneous).rows;
    CHECK_FALSE(a[0].treated_now);
    CHECK(b[0].treated_now);
    CHECK_FALSE(b[1].treated_now);
}

TEST_CASE("exposure sums above one are rejected") {
    const std::vector<ExposureRecord> ex{{"A", "Z1", 0.7, 0.0, 0.0, std::nullopt}, {"A", "Z2", 0.4, 0.0, 0.0, std::nullopt}};
    CHECK_THROWS_AS(compute_treatment(ex, {}, {0}), DataError);
    CHECK_THROWS_AS(compute_treatment({}, {}, {0}, TreatmentOptions{0.0, SnapshotMode::Latest}), ParameterError);
}

TEST_CASE("synth_surface reference values") {
    std::vector<double> k;
    for (double K = 50; K <= 150; K += 5) k.push_back(K);
    const SurfaceSlice flat = synth_surface(FlatVol{0.2, 0.0, 0.0}, k, 1.0, 100.0, 0.0);
    CHECK(std::abs(flat.calls[10] - 7.9656) < 1e-4);
    const SurfaceSlice tiny = synth_surface(FlatVol{0.2, 0.0, 0.0}, {1e-8, 50.0}, 1.0, 100.0, 0.03);
    CHECK(tiny.calls[0] == doctest::Approx(100.0 * std::exp(-0.03)).epsilon(1e-9));
    const SurfaceSlice m0 = synth_surface(MertonParams{0.2, 0.0, -0.3, 0.2, 0.0, 0.0}, k, 1.0, 100.0, 0.0);
    for (std::size_t i = 0; i < k.size(); ++i) CHECK(std::abs(m0.calls[i] - flat.calls[i]) < 1e-8);
}

TEST_CASE("synth_panel is seeded and degenerates cleanly") {
    SynthPanelConfig cfg;
    cfg.n_firms = 4;
    cfg.n_days = 6;
    cfg.moneyness = {0.8, 0.9, 1.0, 1.1, 1.2};
    cfg.maturities = {0.25};
    cfg.noise = 0.01;
    cfg.firm_vol_sd = 0.02;
    cfg.rule.episode_first_day = 1;
    cfg.rule.episode_last_day = 3;
    cfg.rule.episode_length = 2;
    const auto a = synth_panel(cfg);
    const auto b = synth_panel(cfg);
    cfg.seed = 2;
    const auto c = synth_panel(cfg);
    CHECK(a.ivs == b.ivs);
    CHECK(a.ivs != c.ivs);
    CHECK(a.slices.size() == 24);
    cfg.noise = 0.0;
    cfg.firm_vol_sd = 0.0;
    const auto d = synth_panel(cfg);
    for (const auto& s : d.slices) CHECK(s.calls == d.slices[0].calls);
}
