#include <doctest.h>

#include "oracles/dummy_ols.hpp"
#include "rndkit/error.hpp"
#include "rndkit/panel_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace rndkit;

namespace {

// Unbalanced random panel with firm and date effects and k regressors.
PanelData random_panel(std::uint64_t seed, int firms, int dates, int k, bool weighted) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.2, 2.0);
    std::bernoulli_distribution keep(0.8);
    std::vector<double> fe(static_cast<std::size_t>(firms)), de(static_cast<std::size_t>(dates));
    for (double& v : fe) v = z(rng);
    for (double& v : de) v = z(rng);
    PanelData d;
    for (int j = 0; j < k; ++j) d.names.push_back("x" + std::to_string(j));
    for (int f = 0; f < firms; ++f) {
        for (int t = 0; t < dates; ++t) {
            const int reps = 1 + static_cast<int>(rng() % 3);
            for (int r = 0; r < reps; ++r) {
                if (!keep(rng)) continue;
                PanelObs o;
                o.firm = 10 + f;
                o.date = 100 + t;
                double y = fe[static_cast<std::size_t>(f)] + de[static_cast<std::size_t>(t)] + 0.5 * z(rng);
                for (int j = 0; j < k; ++j) {
                    const double x = z(rng) + 0.3 * fe[static_cast<std::size_t>(f)];
                    o.x.push_back(x);
                    y += (j + 1) * 0.7 * x;
                }
                o.y = y;
                o.weight = weighted ? u(rng) : 1.0;
                d.obs.push_back(o);
            }
        }
    }
    return d;
}

void to_eigen(const PanelData& d, Eigen::VectorXd& y, Eigen::MatrixXd& x, Eigen::VectorXd& w, std::vector<int>& firm,
              std::vector<int>& date) {
    const auto n = static_cast<Eigen::Index>(d.obs.size());
    const auto k = static_cast<Eigen::Index>(d.names.size());
    y.resize(n);
    x.resize(n, k);
    w.resize(n);
    firm.clear();
    date.clear();
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& o = d.obs[static_cast<std::size_t>(i)];
        y[i] = o.y;
        for (Eigen::Index j = 0; j < k; ++j) x(i, j) = o.x[static_cast<std::size_t>(j)];
        w[i] = o.weight;
        firm.push_back(o.firm);
        date.push_back(o.date);
    }
}

// sorted copy as twoway_fe_fit sorts internally
PanelData sorted(PanelData d) {
    std::stable_sort(d.obs.begin(), d.obs.end(), [](const PanelObs& a, const PanelObs& b) {
        return a.firm != b.firm ? a.firm < b.firm : a.date < b.date;
    });
    return d;
}

}  // namespace

TEST_CASE("two-way FE equals dummy-variable OLS, double-clustered SEs equal brute force") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const PanelData d = sorted(random_panel(seed, 5, 6, 2, seed % 2 == 0));
        const FEResult fit = twoway_fe_fit(d, Absorb::FirmDate);
        Eigen::VectorXd y, w;
        Eigen::MatrixXd x;
        std::vector<int> firm, date;
        to_eigen(d, y, x, w, firm, date);
        const oracle::DummyFit ref = oracle::dummy_ols(y, x, w, firm, date);
        REQUIRE(fit.coefs.size() == 2);
        CHECK((fit.coefs - ref.slopes).cwiseAbs().maxCoeff() < 1e-10);
        const Eigen::MatrixXd vref = oracle::brute_dcluster(ref, firm, date, 2);
        CHECK((fit.vcov - vref).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("hand panel: 2 firms x 2 dates x 3 obs") {
    PanelData d;
    d.names = {"x"};
    const double xs[12] = {0.1, 0.5, 0.9, 1.3, -0.2, 0.4, 2.0, 1.1, 0.3, -0.7, 0.8, 1.9};
    const double ys[12] = {1.0, 1.7, 2.1, 3.0, 0.2, 1.1, 4.4, 3.0, 1.2, -0.9, 1.8, 3.9};
    int i = 0;
    for (int f = 0; f < 2; ++f) {
        for (int t = 0; t < 2; ++t) {
            for (int r = 0; r < 3; ++r, ++i) d.obs.push_back({f, t, ys[i], {xs[i]}, 1.0, 0, 0});
        }
    }
    const FEResult fit = twoway_fe_fit(d, Absorb::FirmDate);
    Eigen::VectorXd y, w;
    Eigen::MatrixXd x;
    std::vector<int> firm, date;
    to_eigen(d, y, x, w, firm, date);
    const oracle::DummyFit ref = oracle::dummy_ols(y, x, w, firm, date);
    CHECK(std::abs(fit.coefs[0] - ref.slopes[0]) < 1e-10);
}

TEST_CASE("outcome that is firm mean plus date mean gives zero slopes") {
    PanelData d = random_panel(7, 6, 5, 2, false);
    for (auto& o : d.obs) o.y = 0.3 * o.firm - 0.01 * o.date * o.date;
    const FEResult fit = twoway_fe_fit(d, Absorb::FirmDate);
    CHECK(fit.coefs.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("equal weights match unweighted") {
    PanelData a = random_panel(3, 5, 5, 2, false);
    PanelData b = a;
    for (auto& o : b.obs) o.weight = 3.7;
    const FEResult fa = twoway_fe_fit(a, Absorb::FirmDate);
    const FEResult fb = twoway_fe_fit(b, Absorb::FirmDate);
    CHECK((fa.coefs - fb.coefs).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((fa.vcov - fb.vcov).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("estimates invariant to adding firm- or date-constant terms to the outcome") {
    PanelData a = random_panel(11, 6, 6, 2, true);
    PanelData b = a;
    for (auto& o : b.obs) o.y += std::sin(o.firm) * 5.0 + std::cos(o.date) * 2.0;
    const FEResult fa = twoway_fe_fit(a, Absorb::FirmDate);
    const FEResult fb = twoway_fe_fit(b, Absorb::FirmDate);
    CHECK((fa.coefs - fb.coefs).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("estimates do not depend on input row order") {
    PanelData a = random_panel(12, 5, 6, 2, true);
    PanelData b = a;
    std::mt19937_64 rng(5);
    std::shuffle(b.obs.begin(), b.obs.end(), rng);
    // ties within (firm, date) keep relative order in a, so shuffle only across cells
    b = sorted(b);
    a = sorted(a);
    const FEResult fa = twoway_fe_fit(a, Absorb::FirmDate);
    const FEResult fb = twoway_fe_fit(b, Absorb::FirmDate);
    CHECK((fa.coefs - fb.coefs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("collinear column is dropped and named") {
    PanelData d = random_panel(2, 5, 5, 1, false);
    d.names.push_back("firm_const");
    for (auto& o : d.obs) o.x.push_back(0.5 * o.firm);
    const FEResult fit = twoway_fe_fit(d, Absorb::FirmDate);
    REQUIRE(fit.dropped.size() == 1);
    CHECK(fit.dropped[0] == "firm_const");
    CHECK(fit.names == std::vector<std::string>{"x0"});
}

TEST_CASE("single firm is rejected") {
    PanelData d = random_panel(2, 1, 5, 1, false);
    CHECK_THROWS_AS(twoway_fe_fit(d, Absorb::Date), DataError);
}

TEST_CASE("double clustering with singleton second dimension reduces to one-way") {
    PanelData d = random_panel(4, 8, 6, 2, false);
    // give every row its own date
    for (std::size_t i = 0; i < d.obs.size(); ++i) d.obs[i].date = static_cast<int>(i);
    const FEResult fit = twoway_fe_fit(d, Absorb::Firm);
    const Eigen::MatrixXd one = cluster_cov(fit.xt, fit.resid, fit.w, fit.firm);
    // with singleton dates V_date and V_firm&date are the same HC term up to scaling
    std::vector<int> ids(fit.firm.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    const ClusterCov two = dcluster_cov(fit.xt, fit.resid, fit.w, fit.firm, ids);
    CHECK((two.vcov - one).cwiseAbs().maxCoeff() < 1e-12 * std::max(1.0, one.cwiseAbs().maxCoeff()));
}

TEST_CASE("double clustering: homoskedastic iid data close to classical SEs on average") {
    double ratio_sum = 0.0;
    const int reps = 200;
    for (int r = 0; r < reps; ++r) {
        std::mt19937_64 rng(1000 + r);
        std::normal_distribution<double> z(0.0, 1.0);
        PanelData d;
        d.names = {"x"};
        for (int f = 0; f < 30; ++f) {
            for (int t = 0; t < 30; ++t) {
                const double x = z(rng);
                d.obs.push_back({f, t, 0.5 * x + z(rng), {x}, 1.0, 0, 0});
            }
        }
        const FEResult fit = twoway_fe_fit(d, Absorb::None);
        const double s2 = fit.resid.squaredNorm() / static_cast<double>(fit.n - 2);
        const Eigen::MatrixXd classical = s2 * (fit.xt.transpose() * fit.xt).inverse();
        ratio_sum += std::sqrt(fit.vcov(1, 1) / classical(1, 1));
    }
    CHECK(std::abs(ratio_sum / reps - 1.0) < 0.25);
}

TEST_CASE("double clustering: firm random effects make classical SEs anticonservative") {
    double ratio_dc_firm = 0.0, ratio_cl = 0.0;
    const int reps = 50;
    for (int r = 0; r < reps; ++r) {
        std::mt19937_64 rng(5000 + r);
        std::normal_distribution<double> z(0.0, 1.0);
        PanelData d;
        d.names = {"x"};
        for (int f = 0; f < 40; ++f) {
            const double ux = z(rng), ue = z(rng);
            for (int t = 0; t < 25; ++t) {
                const double x = ux + 0.3 * z(rng);
                d.obs.push_back({f, t, 0.5 * x + ue + 0.3 * z(rng), {x}, 1.0, 0, 0});
            }
        }
        const FEResult fit = twoway_fe_fit(d, Absorb::None);
        const Eigen::MatrixXd firm_only = cluster_cov(fit.xt, fit.resid, fit.w, fit.firm);
        const double s2 = fit.resid.squaredNorm() / static_cast<double>(fit.n - 2);
        const Eigen::MatrixXd classical = s2 * (fit.xt.transpose() * fit.xt).inverse();
        ratio_dc_firm += std::sqrt(fit.vcov(1, 1) / firm_only(1, 1));
        ratio_cl += std::sqrt(classical(1, 1) / fit.vcov(1, 1));
    }
    CHECK(std::abs(ratio_dc_firm / reps - 1.0) < 0.10);
    CHECK(ratio_cl / reps < 0.8);
}

TEST_CASE("duplicating rows within clusters leaves clustered SEs unchanged up to scaling") {
    const PanelData d = random_panel(9, 6, 6, 1, false);
    PanelData dup = d;
    for (const auto& o : d.obs) dup.obs.push_back(o);
    const FEResult a = twoway_fe_fit(d, Absorb::FirmDate);
    const FEResult b = twoway_fe_fit(dup, Absorb::FirmDate);
    CHECK(std::abs(a.coefs[0] - b.coefs[0]) < 1e-10);
    // scores double and the bread halves; only (N-1)/(N-K) moves
    const double k = 1.0;
    auto f = [k](double n) { return (n - 1.0) / (n - k); };
    const double expected = a.vcov(0, 0) * f(static_cast<double>(b.n)) / f(static_cast<double>(a.n));
    CHECK(b.vcov(0, 0) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("quantile bins have counts differing by at most one") {
    std::vector<DensityObs> panel;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.1, 1.8);
    for (int i = 0; i < 997; ++i) panel.push_back({i % 7, i % 11, u(rng), 0.0, false});
    BinnedOptions opts;
    opts.n_bins = 30;
    const std::vector<int> bins = moneyness_bins(panel, opts);
    std::vector<int> counts(30, 0);
    for (int b : bins) ++counts[static_cast<std::size_t>(b)];
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    CHECK(*hi - *lo <= 1);
}

namespace {

std::vector<DensityObs> density_panel(std::uint64_t seed, double shift, bool tail_effect) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<DensityObs> p;
    const int firms = 16, dates = 12;
    for (int f = 0; f < firms; ++f) {
        const double fe = 0.05 * z(rng);
        for (int t = 0; t < dates; ++t) {
            const bool treated = f < firms / 2 && t >= 4 && t < 8;
            for (int g = 0; g < 40; ++g) {
                const double m = 0.1 + 1.7 * g / 39.0;
                double dens = std::exp(-0.5 * std::pow((m - 1.0) / 0.25, 2)) / (0.25 * 2.5066) + fe + 0.02 * t;
                if (treated) dens += shift + (tail_effect && m < 0.7 ? 0.3 * (0.7 - m) : 0.0);
                p.push_back({f, t, m, dens + 0.05 * z(rng), treated});
            }
        }
    }
    return p;
}

}  // namespace

TEST_CASE("binned TE: null DGP covers zero, tail DGP positive on the left") {
    BinnedOptions opts;
    opts.n_bins = 30;
    int covered = 0, total = 0;
    for (std::uint64_t s = 1; s <= 5; ++s) {
        const TEProfile te = rnd_te_binned(density_panel(s, 0.0, false), opts);
        for (std::size_t i = 0; i < te.delta.size(); ++i) {
            ++total;
            covered += te.ci_low[i] <= 0.0 && 0.0 <= te.ci_high[i];
        }
    }
    CHECK(covered >= 0.9 * total);
    const TEProfile te = rnd_te_binned(density_panel(9, 0.0, true), opts);
    for (std::size_t i = 0; i < te.points.size(); ++i) {
        if (te.points[i] < 0.55) CHECK(te.delta[i] > 0.0);
    }
}

TEST_CASE("kernel TE: constant shift gives a flat profile at the shift") {
    std::vector<DensityObs> p = density_panel(4, 0.2, false);
    for (auto& o : p) o.density = (o.treated ? 0.2 : 0.0) + 0.01 * o.firm + 0.02 * o.date;
    KernelTeOptions opts;
    for (double m = 0.2; m <= 1.7; m += 0.1) opts.points.push_back(m);
    opts.bandwidth = 0.1;
    const TEProfile te = rnd_te_kernel(p, opts);
    for (double d : te.delta) CHECK(d == doctest::Approx(0.2).epsilon(1e-9));
}

TEST_CASE("kernel TE: wider bandwidth gives a smoother profile and agrees with bins") {
    const std::vector<DensityObs> p = density_panel(21, 0.0, true);
    KernelTeOptions opts;
    for (double m = 0.15; m <= 1.75; m += 0.05) opts.points.push_back(m);
    double prev = 1e300;
    for (double h : {0.03, 0.06, 0.12, 0.24}) {
        opts.bandwidth = h;
        const double tv = total_variation(rnd_te_kernel(p, opts).delta);
        CHECK(tv <= prev);
        prev = tv;
    }
    BinnedOptions bo;
    bo.n_bins = 30;
    const TEProfile binned = rnd_te_binned(p, bo);
    opts.points = binned.points;
    opts.bandwidth = 0.03;
    const TEProfile kern = rnd_te_kernel(p, opts);
    int agree = 0;
    for (std::size_t i = 0; i < binned.points.size(); ++i) {
        const double gap = std::abs(binned.delta[i] - kern.delta[i]);
        agree += gap <= 1.96 * std::hypot(binned.se[i], kern.se[i]);
    }
    CHECK(agree >= static_cast<int>(0.9 * binned.points.size()));
}

namespace {

std::vector<IvObs> iv_panel(std::uint64_t seed, double b, double c, bool any_treated, std::size_t reps = 1) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<IvObs> p;
    for (int f = 0; f < 20; ++f) {
        const double fe = 0.05 * z(rng);
        for (int t = 0; t < 15; ++t) {
            const double de = 0.02 * z(rng);
            const bool treated = any_treated && f % 2 == 0 && t >= 5 && t < 10;
            for (std::size_t r = 0; r < reps; ++r) {
                for (double ks : {0.7, 0.8, 0.9, 1.0}) {
                    for (double T : {0.1, 0.3, 0.6}) {
                        double iv = 0.5 - b * ks + fe + de + 0.005 * z(rng);
                        if (treated) iv += -c * ks + 0.02;
                        IvObs o;
                        o.firm = f;
                        o.date = t;
                        o.moneyness = ks;
                        o.maturity = T;
                        o.iv = iv;
                        o.is_call = false;
                        o.treated_now = treated;
                        o.after_first = any_treated && f % 2 == 0 && t >= 5;
                        o.after_last = o.after_first;
                        p.push_back(o);
                    }
                }
            }
        }
    }
    return p;
}

}  // namespace

TEST_CASE("smile regression recovers constructed skew and treated slope") {
    const SmileTable tab = smile_regression(iv_panel(1, 0.4, 0.15, true), false);
    const FEResult& both = tab.both;
    for (const auto& [name, truth] : std::vector<std::pair<std::string, double>>{{"KS", -0.4}, {"treated_x_KS", -0.15}}) {
        const double est = both.coef(name), se = both.se(name);
        CHECK(std::abs(est - truth) <= 3.0 * se);
    }
    CHECK(both.coef("treated_x_KS") < 0.0);
    CHECK(tab.none.index("const").has_value());
    CHECK_FALSE(tab.both.index("const").has_value());
}

TEST_CASE("smile regression without treated rows drops the interaction columns") {
    const SmileTable tab = smile_regression(iv_panel(2, 0.4, 0.15, false), false);
    const auto& dropped = tab.both.dropped;
    for (const char* n : {"treated", "treated_x_KS", "treated_x_sqrt_T", "treated_x_sqrt_T_x_KS"}) {
        CHECK(std::find(dropped.begin(), dropped.end(), n) != dropped.end());
    }
}

TEST_CASE("permanent effect uses the persistent flag") {
    std::vector<IvObs> p = iv_panel(3, 0.4, 0.0, true);
    for (auto& o : p) {
        if (o.after_first) o.iv += -0.1 * o.moneyness;
    }
    const SmileTable tab = permanent_effect_regression(p, false, TreatFlag::AfterFirst);
    CHECK(std::abs(tab.both.coef("treated_x_KS") + 0.1) <= 3.0 * tab.both.se("treated_x_KS"));
    CHECK_THROWS_AS(permanent_effect_regression(p, false, TreatFlag::TreatedNow), ParameterError);
    for (const auto& o : p) CHECK((!o.after_last || o.after_first));
}

TEST_CASE("crossover maturity") {
    const auto t = crossover_maturity(-0.152, 0.013);
    REQUIRE(t.has_value());
    CHECK(*t == doctest::Approx(136.71).epsilon(1e-4));
    CHECK_FALSE(crossover_maturity(0.152, 0.013).has_value());
}

TEST_CASE("FWL global-linear fit equals two-way FE") {
    const std::vector<IvObs> p = iv_panel(5, 0.4, 0.15, true, 2);
    FwlOptions opts;
    opts.global_linear = true;
    opts.min_group_obs = 100;
    const FwlSurface s = fwl_surface(p, opts);
    PanelData d;
    d.names = s.linear_names;
    for (const auto& o : p) {
        const double tr = o.treated_now ? 1.0 : 0.0, st = std::sqrt(o.maturity);
        d.obs.push_back({o.firm, o.date, o.iv, {o.moneyness, st, tr, tr * o.moneyness, tr * st}, 1.0, 0, 0});
    }
    const FEResult fe = twoway_fe_fit(d, Absorb::FirmDate);
    REQUIRE(fe.coefs.size() == 5);
    CHECK((fe.coefs - s.linear_coefs).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("FWL surface: identical groups give a near-zero delta, tail effect positive") {
    FwlOptions opts;
    opts.min_group_obs = 1000;
    opts.moneyness_grid = {0.75, 0.85, 0.95};
    opts.maturity_grid = {0.1, 0.3};
    opts.h_moneyness = 0.08;
    opts.h_maturity = 0.15;
    std::vector<IvObs> p = iv_panel(6, 0.4, 0.0, true, 3);
    for (auto& o : p) {
        if (o.treated_now) o.iv -= 0.02;  // remove the level shift used by iv_panel
    }
    const FwlSurface same = fwl_surface(p, opts);
    CHECK(same.delta_g.cwiseAbs().maxCoeff() < 0.01);
    for (auto& o : p) {
        if (o.treated_now) o.iv += 0.2 * std::max(0.0, 1.0 - o.moneyness);
    }
    const FwlSurface tail = fwl_surface(p, opts);
    // firm and date effects soak up part of the level shift, so look deep in the tail
    CHECK(tail.delta_g(0, 0) > 0.0);
    CHECK(tail.delta_g(0, 0) > tail.delta_g(2, 0));
    CHECK_THROWS_AS(fwl_surface(iv_panel(6, 0.4, 0.0, true, 1), opts), DataError);
}
