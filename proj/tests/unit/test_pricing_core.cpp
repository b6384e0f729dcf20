#include <doctest.h>

#include "oracles/quadrature.hpp"
#include "rndkit/error.hpp"
#include "rndkit/pricing_core.hpp"

#include <cmath>
#include <random>

using namespace rndkit;

TEST_CASE("bs_price matches payoff quadrature") {
    const BsInputs in{100.0, 100.0, 0.0, 1.0, 0.2, true};
    const double quad = oracle::lognormal_call_quadrature(100.0, 100.0, 0.2);
    CHECK(bs_price(in) == doctest::Approx(quad).epsilon(1e-9));
    CHECK(std::abs(bs_price(in) - 7.9656) < 1e-4);
}

TEST_CASE("bs_price zero vol is discounted intrinsic") {
    CHECK(bs_price({110.0, 100.0, 0.0, 1.0, 0.0, true}) == doctest::Approx(10.0));
    CHECK(bs_price({110.0, 100.0, 0.05, 2.0, 0.0, false}) == 0.0);
    CHECK(bs_price({90.0, 100.0, 0.05, 2.0, 0.0, false}) == doctest::Approx(10.0 * std::exp(-0.1)));
}

TEST_CASE("put-call parity on random inputs") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 500; ++i) {
        const double F = 20.0 + 200.0 * u(rng);
        const double K = F * (0.3 + 1.5 * u(rng));
        const double r = -0.01 + 0.1 * u(rng);
        const double T = 0.01 + 3.0 * u(rng);
        const double vol = 0.01 + 1.5 * u(rng);
        const double c = bs_price({F, K, r, T, vol, true});
        const double p = bs_price({F, K, r, T, vol, false});
        const double rhs = std::exp(-r * T) * (F - K);
        CHECK(std::abs((c - p) - rhs) <= 1e-12 * std::max({c, p, std::abs(rhs), 1.0}) * 8);
    }
}

TEST_CASE("bs_price increasing in vol and implied_vol increasing in price") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        BsInputs in{100.0, 60.0 + 80.0 * u(rng), 0.02, 0.1 + u(rng), 0.0, u(rng) < 0.5};
        double prev_price = -1.0;
        double prev_iv = -1.0;
        for (double vol = 0.05; vol < 1.5; vol += 0.05) {
            in.vol = vol;
            const double p = bs_price(in);
            CHECK(p >= prev_price);
            const double iv = implied_vol(p, in);
            if (p > prev_price + 1e-10 * in.forward) {
                CHECK(p > prev_price);
                CHECK(iv > prev_iv);
            }
            prev_price = p;
            prev_iv = iv;
        }
    }
}

TEST_CASE("implied_vol round trip") {
    BsInputs in{100.0, 105.0, 0.03, 0.75, 0.37, true};
    const double p = bs_price(in);
    CHECK(std::abs(implied_vol(p, in) - 0.37) < 1e-8);
    in.is_call = false;
    CHECK(std::abs(implied_vol(bs_price(in), in) - 0.37) < 1e-8);
    // tolerance contract on the price
    for (double vol : {0.01, 0.1, 0.8, 2.5, 7.0}) {
        in.vol = vol;
        const double price = bs_price(in);
        BsInputs check = in;
        check.vol = implied_vol(price, in);
        CHECK(std::abs(bs_price(check) - price) <= 1e-10 * in.forward);
    }
}

TEST_CASE("implied_vol band errors") {
    const BsInputs in{100.0, 90.0, 0.0, 1.0, 0.0, true};
    try {
        implied_vol(5.0, in);
        FAIL("expected OutOfBand");
    } catch (const OutOfBand& e) {
        CHECK(e.violated() == OutOfBand::Bound::Lower);
        CHECK(e.bound() == doctest::Approx(10.0));
    }
    CHECK_THROWS_AS(implied_vol(100.5, in), OutOfBand);
}

TEST_CASE("implied_vol deep OTM terminates near lower bracket") {
    const BsInputs in{100.0, 300.0, 0.0, 0.1, 0.0, true};
    const double iv = implied_vol(1e-12, in);
    // bisection-only oracle on the same bracket
    double lo = 1e-6;
    double hi = 10.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        BsInputs q = in;
        q.vol = mid;
        (bs_price(q) < 1e-12 ? lo : hi) = mid;
    }
    BsInputs q = in;
    q.vol = iv;
    CHECK(std::abs(bs_price(q) - 1e-12) <= 1e-10 * in.forward);
    CHECK(iv < 0.5);
    CHECK(std::abs(iv - lo) < 1e-3);
}

TEST_CASE("crr european converges to bs") {
    // CRR's leading error is O(1/n) with an oscillating constant; at n = 1000
    // it is ~2e-3 at the money and below 1e-3 away from it.
    const BsInputs far{100.0, 80.0, 0.0, 1.0, 0.2, true};
    CHECK(std::abs(crr_price(far, 1000, false, 100.0, 0.0) - bs_price(far)) < 1e-3);
    for (double K : {90.0, 95.0, 100.0, 110.0, 120.0}) {
        for (bool call : {true, false}) {
            const BsInputs in{100.0 * std::exp(0.03), K, 0.03, 1.0, 0.2, call};
            CHECK(std::abs(crr_price(in, 1000, false, 100.0, 0.0) - bs_price(in)) < 2.5e-3);
        }
    }
}

TEST_CASE("crr american call without dividends equals european") {
    const BsInputs in{0.0, 95.0, 0.05, 1.0, 0.3, true};
    CHECK(std::abs(crr_price(in, 400, true, 100.0, 0.0) - crr_price(in, 400, false, 100.0, 0.0)) < 1e-10);
}

TEST_CASE("american put dominates european put") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 50; ++i) {
        const BsInputs in{0.0, 60.0 + 80.0 * u(rng), 0.1 * u(rng), 0.1 + 2.0 * u(rng), 0.05 + 0.6 * u(rng), false};
        const double q = 0.05 * u(rng);
        CHECK(crr_price(in, 200, true, 100.0, q) >= crr_price(in, 200, false, 100.0, q) - 1e-14);
    }
}

TEST_CASE("crr successive differences shrink") {
    for (double vol : {0.15, 0.3, 0.6}) {
        for (double T : {0.25, 1.0, 2.0}) {
            const BsInputs in{100.0, 100.0, 0.0, T, vol, true};
            double prev = 1e9;
            for (int n : {25, 50, 100, 200, 400, 800}) {
                const double diff =
                    std::abs(crr_price(in, n, false, 100.0, 0.0) - crr_price(in, 2 * n, false, 100.0, 0.0));
                CHECK(diff < prev);
                prev = diff;
            }
        }
    }
}

TEST_CASE("crr recentres when the up probability leaves [0,1]") {
    const BsInputs in{0.0, 100.0, 0.08, 1.0, 1e-4, false};
    const double p = crr_price(in, 50, false, 100.0, 0.0);
    CHECK(std::isfinite(p));
    CHECK(p >= 0.0);
}

TEST_CASE("de_americanize recovers bs european price") {
    for (bool call : {true, false}) {
        for (double K : {80.0, 100.0, 120.0}) {
            MarketFields m{100.0, K, 0.04, 0.02, 0.8, call};
            const double sigma = 0.3;
            BsInputs lattice{m.forward(), K, m.rate, m.maturity, sigma, call};
            const double am = crr_price(lattice, 500, true, m.spot, m.div_yield);
            const DeAmericanized out = de_americanize(am, m, 500);
            const double target = bs_price(lattice);
            CHECK(std::abs(out.european_price - target) <= 1e-4 * target);
            CHECK(std::abs(out.implied_vol - sigma) < 1e-6);
        }
    }
}

TEST_CASE("de_americanize call without dividends is near identity") {
    MarketFields m{100.0, 100.0, 0.03, 0.0, 0.5, true};
    BsInputs lattice{m.forward(), 100.0, m.rate, m.maturity, 0.25, true};
    const double am = crr_price(lattice, 500, true, m.spot, 0.0);
    CHECK(std::abs(de_americanize(am, m, 500).european_price - am) < 5e-3);
}

TEST_CASE("de_americanize rejects prices outside american bounds") {
    MarketFields m{100.0, 90.0, 0.03, 0.0, 0.5, false};
    CHECK_THROWS_AS(de_americanize(95.0, m, 200), OutOfBand);
    MarketFields c{100.0, 90.0, 0.03, 0.0, 0.5, true};
    CHECK_THROWS_AS(de_americanize(5.0, c, 200), OutOfBand);
}
