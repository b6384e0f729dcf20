#include <doctest.h>

#include "rndkit/error.hpp"
#include "rndkit/physical_density.hpp"
#include "rndkit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace rndkit;

namespace {

const MarketGarchParams kMarket{0.0003, 1e-6, 0.9, 0.05};
const GarchWildfireParams kStock{0.0002, 0.8, -0.03, 1.3e-5, 0.85, 0.08, 0.001, 5e-5, 1};

double ks_vs_normal(std::vector<double> x, double sd) {
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double f = norm_cdf(x[i] / sd);
        d = std::max({d, std::abs(f - static_cast<double>(i) / n), std::abs(f - static_cast<double>(i + 1) / n)});
    }
    return d;
}

}  // namespace

TEST_CASE("market GARCH recovers simulated parameters within 3 SEs") {
    const ReturnSeries s = simulate_garch_wildfire(kMarket, kStock, 20000, 0, 0, 17);
    const MarketGarchFit fit = fit_market_garch(s.market_returns);
    CHECK(std::abs(fit.params.omega - 1e-6) <= 3.0 * fit.se[1]);
    CHECK(std::abs(fit.params.zeta - 0.9) <= 3.0 * fit.se[2]);
    CHECK(std::abs(fit.params.xi - 0.05) <= 3.0 * fit.se[3]);
    CHECK(fit.loglik >= fit.loglik_start);
}

TEST_CASE("iid market returns: small persistence and iid-normal likelihood") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z(0.0, 0.01);
    std::vector<double> r(5000);
    for (double& v : r) v = z(rng);
    const MarketGarchFit fit = fit_market_garch(r);
    const double m = mean(r);
    double ss = 0.0;
    for (double v : r) ss += (v - m) * (v - m);
    const double s2 = ss / static_cast<double>(r.size());
    const double iid = -0.5 * static_cast<double>(r.size()) * (std::log(2.0 * std::numbers::pi * s2) + 1.0);
    CHECK(std::abs(fit.loglik - iid) < 5.0);
    CHECK((fit.params.xi < 0.05 || fit.params.zeta + fit.params.xi < 0.5));
}

TEST_CASE("constant or short series are rejected") {
    CHECK_THROWS_AS(fit_market_garch(std::vector<double>(300, 0.001)), DataError);
    CHECK_THROWS_AS(fit_market_garch(std::vector<double>(100, 0.001)), DataError);
}

TEST_CASE("GARCH-Wildfire recovery including beta and the fire terms") {
    const ReturnSeries s = simulate_garch_wildfire(kMarket, kStock, 20000, 8, 5, 99);
    const MarketGarchFit mf = fit_market_garch(s.market_returns);
    const GarchWildfireFit f = fit_garch_wildfire(s, mf.params, 1);
    CHECK_FALSE(f.unidentified);
    CHECK(std::abs(f.params.beta - 0.8) <= 3.0 * f.se[1]);
    CHECK(std::abs(f.params.delta + 0.03) <= 3.0 * f.se[2]);
    CHECK(std::abs(f.params.gamma_vol - 5e-5) <= 3.0 * f.se[7]);
    CHECK(f.loglik >= f.loglik_start);
    CHECK(garch_wildfire_loglik(s, mf.params, f.params) == doctest::Approx(f.loglik).epsilon(1e-9));
}

TEST_CASE("no fire days: unidentified and fire terms fixed at zero") {
    const ReturnSeries s = simulate_garch_wildfire(kMarket, kStock, 3000, 0, 0, 5);
    const MarketGarchFit mf = fit_market_garch(s.market_returns);
    const GarchWildfireFit f = fit_garch_wildfire(s, mf.params, 1);
    CHECK(f.unidentified);
    CHECK(f.params.delta == 0.0);
    CHECK(f.params.gamma_vol == 0.0);
    CHECK(std::isnan(f.se[2]));
}

TEST_CASE("wildfire regressor lags") {
    const std::vector<bool> flags{false, true, false, false, true, false};
    CHECK(wildfire_regressor(flags, 1) == std::vector<double>{0, 0, 1, 0, 0, 1});
    CHECK(wildfire_regressor(flags, 2) == std::vector<double>{0, 0, 1, 1, 0, 1});
}

TEST_CASE("pure random walk forecast matches the normal law") {
    const MarketGarchParams m{0.0, 1e-6, 0.0, 0.0};
    const double s2 = 4e-4;
    const GarchWildfireParams p{0.0, 0.0, 0.0, s2, 0.0, 0.0, 0.0, 0.0, 1};
    ForecastState st;
    st.price = 100.0;
    st.stock_variance = s2;
    st.market_variance = 1e-6;
    ForecastConfig cfg;
    cfg.horizon_days = 20;
    cfg.n_paths = 100000;
    const std::vector<double> x = simulate_log_returns(m, p, st, cfg);
    CHECK(ks_vs_normal(x, std::sqrt(20 * s2)) <= 0.01);
}

TEST_CASE("forecast: deterministic, hazard lowers the mean, mass on a wide grid") {
    ForecastState st;
    st.price = 50.0;
    st.stock_variance = 2.5e-4;
    st.market_variance = 2e-5;
    st.recent_fires = {false};
    GarchWildfireParams p = kStock;
    p.delta = -0.05;
    ForecastConfig cfg;
    cfg.horizon_days = 21;
    cfg.n_paths = 40000;
    cfg.seed = 3;
    const std::vector<double> a = simulate_log_returns(kMarket, p, st, cfg);
    CHECK(a == simulate_log_returns(kMarket, p, st, cfg));
    ForecastConfig hot = cfg;
    hot.hazard = 0.5;
    const std::vector<double> b = simulate_log_returns(kMarket, p, st, hot);
    const double se = std::hypot(stddev(a), stddev(b)) / std::sqrt(static_cast<double>(a.size()));
    CHECK(mean(b) < mean(a) - 3.0 * se);

    const double sd = stddev(a);
    const std::vector<double> grid = equal_grid(st.price * std::exp(-6 * sd), st.price * std::exp(6 * sd), 200);
    const DensityCurve c = forecast_density(kMarket, p, st, cfg, grid);
    CHECK(c.kind == DensityKind::Physical);
    CHECK(c.mass >= 0.95);
    for (double v : c.values) CHECK(v >= 0.0);
}

TEST_CASE("forecast argument checks") {
    ForecastState st;
    st.stock_variance = 1e-4;
    st.market_variance = 1e-5;
    ForecastConfig cfg;
    cfg.hazard = 1.5;
    CHECK_THROWS_AS(simulate_log_returns(kMarket, kStock, st, cfg), ParameterError);
    cfg.hazard = 0.1;
    cfg.n_paths = 500;
    CHECK_THROWS_AS(forecast_density(kMarket, kStock, st, cfg, {1.0, 2.0}), ParameterError);
}

TEST_CASE("Silverman bandwidth shrinks like n^-1/5") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> big(320000);
    for (double& v : big) v = z(rng);
    const std::vector<double> small(big.begin(), big.begin() + 10000);
    const double ratio = silverman_bandwidth(small) / silverman_bandwidth(big);
    CHECK(ratio == doctest::Approx(std::pow(32.0, 0.2)).epsilon(0.03));
}

TEST_CASE("wildfire hazard with Laplace smoothing") {
    std::vector<TreatmentCalendar> cal;
    for (int d = 0; d < 1000; ++d) cal.push_back({"A", d, d < 5, d >= 0, false});
    for (int d = 0; d < 1000; ++d) cal.push_back({"B", d, true, true, false});
    CHECK(wildfire_hazard(cal, "A").probability == doctest::Approx(6.0 / 1002.0));
    CHECK(wildfire_hazard(cal, "B").probability == doctest::Approx(1001.0 / 1002.0));
    const Hazard none = wildfire_hazard(cal, "C");
    CHECK(none.degenerate);
    CHECK(none.probability == 0.5);
}

TEST_CASE("regime samples and JSON round trip") {
    ReturnSeries s = simulate_garch_wildfire(kMarket, kStock, 400, 1, 5, 2);
    const ReturnSeries before = regime_sample(s, Regime::Myopic, 200, 0);
    const ReturnSeries after = regime_sample(s, Regime::Foresight, 200, 50);
    CHECK(before.size() == 200);
    CHECK(after.size() == 50);
    CHECK(after.dates.front() == 200);
    CHECK(regime_sample(s, Regime::Stationary, 200, 0).size() == 400);
    CHECK(parse_regime(regime_name(Regime::Foresight)) == Regime::Foresight);

    const nlohmann::json j = kStock;
    const auto back = j.get<GarchWildfireParams>();
    CHECK(back.delta == kStock.delta);
    CHECK(back.gamma_vol == kStock.gamma_vol);
}

TEST_CASE("a couple of fire days is not enough to identify the fire terms") {
    ReturnSeries s = simulate_garch_wildfire(kMarket, kStock, 3000, 0, 0, 6);
    s.wildfire_flags[1000] = true;
    s.wildfire_flags[2000] = true;
    const MarketGarchFit mf = fit_market_garch(s.market_returns);
    const GarchWildfireFit f = fit_garch_wildfire(s, mf.params, 1);
    CHECK(f.unidentified);
    CHECK(f.params.delta == 0.0);
}
