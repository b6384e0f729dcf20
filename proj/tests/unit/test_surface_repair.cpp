#include <doctest.h>

#include "oracles/qp_enum.hpp"
#include "rndkit/error.hpp"
#include "rndkit/pricing_core.hpp"
#include "rndkit/surface_repair.hpp"
#include "rndkit/synth.hpp"

#include <cmath>
#include <random>

using namespace rndkit;

namespace {

SurfaceSlice bs_slice(std::vector<double> strikes, double vol = 0.2, double T = 1.0, double r = 0.0) {
    return synth_surface(FlatVol{vol, r, 0.0}, strikes, T, 100.0, r);
}

SurfaceSlice random_infeasible(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int n = 5 + static_cast<int>(u(rng) * 3);  // 5..7
    std::vector<double> k;
    double x = 70.0 + 10.0 * u(rng);
    for (int i = 0; i < n; ++i) {
        k.push_back(x);
        x += 3.0 + 10.0 * u(rng);  // unequal grid
    }
    SurfaceSlice s = bs_slice(k, 0.15 + 0.3 * u(rng), 0.1 + u(rng), 0.03 * u(rng));
    while (true) {
        SurfaceSlice t = s;
        for (auto& c : t.calls) c += (u(rng) - 0.5) * 2.0;
        if (check_arbitrage(t, {}, 0.0).counts.per_maturity() > 0) return t;
    }
}

}  // namespace

TEST_CASE("synthetic surfaces are arbitrage free") {
    std::vector<double> k;
    for (double K = 50; K <= 150; K += 5) k.push_back(K);
    CHECK(check_arbitrage(bs_slice(k)).counts.total() == 0);
    const SurfaceSlice merton = synth_surface(MertonParams{0.2, 0.5, -0.3, 0.25, 0.0, 0.0}, k, 0.5, 100.0, 0.02);
    const SurfaceSlice kou = synth_surface(KouParams{0.1, 0.6, 0.75, 1.1, 2.6, 0.0, 0.0}, k, 0.25, 100.0, 0.02);
    CHECK(check_arbitrage(merton).counts.total() == 0);
    CHECK(check_arbitrage(kou).counts.total() == 0);
    // calendar: longer maturity at matched moneyness
    const SurfaceSlice longer = synth_surface(MertonParams{0.2, 0.5, -0.3, 0.25, 0.0, 0.0}, k, 1.0, 100.0, 0.02);
    CHECK(check_arbitrage(merton, {longer}).counts.calendar == 0);
    CHECK(check_arbitrage(longer, {merton}).counts.calendar == 0);
}

TEST_CASE("calendar violation detected") {
    std::vector<double> k{80, 90, 100, 110, 120};
    const SurfaceSlice short_slice = bs_slice(k, 0.3, 0.5);
    const SurfaceSlice long_slice = bs_slice(k, 0.15, 1.0);
    CHECK(check_arbitrage(short_slice, {long_slice}).counts.calendar > 0);
}

TEST_CASE("kink at one strike is exactly one butterfly violation") {
    SurfaceSlice s = bs_slice({80, 85, 90, 95, 100, 105, 110, 115, 120});
    s.calls[4] *= 1.05;
    const ArbitrageReport rep = check_arbitrage(s);
    CHECK(rep.counts.butterfly == 1);
    REQUIRE(rep.butterfly_at.size() == 1);
    CHECK(rep.butterfly_at[0] == 4);
}

TEST_CASE("increasing calls flag call spreads") {
    SurfaceSlice s = bs_slice({80, 90, 100, 110, 120});
    s.calls[2] = s.calls[1] + 0.5;
    s.calls[4] = s.calls[3] + 0.1;
    const ArbitrageReport rep = check_arbitrage(s);
    CHECK(rep.counts.call_spread == 2);
    CHECK(rep.call_spread_at == std::vector<std::size_t>{1, 3});
}

TEST_CASE("feasible slice repairs to itself") {
    const SurfaceSlice s = bs_slice({60, 70, 80, 90, 100, 110, 120, 130});
    const RepairedSlice r = repair_slice(s);
    CHECK(r.max_abs_adjust == 0.0);
    CHECK(r.slice.calls == s.calls);
}

TEST_CASE("repair matches exhaustive enumeration") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 40; ++trial) {
        const SurfaceSlice s = random_infeasible(rng);
        const RepairedSlice r = repair_slice(s);
        const ConstraintSet cs = repair_constraints(s);
        const Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(s.calls.data(), static_cast<Eigen::Index>(s.calls.size()));
        const auto best = oracle::enumerate_active_sets(cs.a, cs.b, c);
        CHECK(std::abs(r.objective - best.objective) <= 1e-8);
        CHECK(r.primal_violation <= 1e-10);
        CHECK(r.stationarity <= 1e-8);
        CHECK(check_arbitrage(r.slice, {}, 1e-10).counts.per_maturity() == 0);
    }
}

TEST_CASE("repair is idempotent") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 30; ++trial) {
        const RepairedSlice once = repair_slice(random_infeasible(rng));
        const RepairedSlice twice = repair_slice(once.slice);
        for (std::size_t i = 0; i < once.slice.calls.size(); ++i) {
            CHECK(std::abs(once.slice.calls[i] - twice.slice.calls[i]) <= 1e-10);
        }
    }
}

TEST_CASE("tiny perturbations give tiny adjustments") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-1e-12, 1e-12);
    SurfaceSlice s = bs_slice({70, 80, 90, 100, 110, 120, 130});
    for (auto& c : s.calls) c *= 1.0;
    for (auto& c : s.calls) c += u(rng);
    CHECK(repair_slice(s).max_abs_adjust <= 1e-9);
}

TEST_CASE("kinked slice repairs only locally and gaps follow") {
    SurfaceSlice s = bs_slice({80, 85, 90, 95, 100, 105, 110, 115, 120});
    s.calls[4] *= 1.05;
    const RepairedSlice r = repair_slice(s);
    const auto gaps = arbitrage_gap_panel({r});
    REQUIRE(gaps.size() == 9);
    CHECK(gaps[0].delta == 0.0);
    CHECK_FALSE(gaps[0].log_abs_delta.has_value());
    CHECK(gaps[8].delta == 0.0);
    CHECK(gaps[4].delta < 0.0);
    CHECK(gaps[4].log_abs_delta.has_value());
    for (std::size_t i = 0; i < gaps.size(); ++i) {
        if (gaps[i].delta != 0.0) CHECK((i >= 3 && i <= 5));
    }
    const auto feasible = arbitrage_gap_panel({repair_slice(bs_slice({80, 90, 100, 110}))});
    for (const auto& g : feasible) CHECK(g.abs_delta == 0.0);
}

TEST_CASE("repair needs three strikes") {
    CHECK_THROWS_AS(repair_slice(bs_slice({90, 110})), DataError);
}
