#include "rndkit/physical_density.hpp"

#include "rndkit/optim.hpp"
#include "rndkit/parallel.hpp"
#include "rndkit/simd/kernels.hpp"
#include "rndkit/stats.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace rndkit {

void MarketGarchParams::validate() const {
    if (!(omega > 0.0) || !(zeta >= 0.0) || !(xi >= 0.0) || !(zeta + xi < 1.0) || !std::isfinite(mu)) {
        throw ParameterError("market GARCH parameters violate omega > 0, zeta, xi >= 0, zeta + xi < 1");
    }
}

void GarchWildfireParams::validate() const {
    if (!(omega > 0.0) || !(zeta >= 0.0) || !(xi >= 0.0) || !(zeta + xi < 1.0)) {
        throw ParameterError("GARCH-Wildfire parameters violate omega > 0, zeta, xi >= 0, zeta + xi < 1");
    }
    for (double v : {alpha, beta, delta, rho_vol, gamma_vol}) {
        if (!std::isfinite(v)) throw ParameterError("GARCH-Wildfire parameter not finite");
    }
    if (n_lags < 1) throw ParameterError("n_lags must be >= 1");
}

void ReturnSeries::validate() const {
    const std::size_t n = log_returns.size();
    if (market_returns.size() != n || wildfire_flags.size() != n || (!dates.empty() && dates.size() != n)) {
        throw DataError("return series '" + ticker + "': misaligned columns");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(log_returns[i]) || !std::isfinite(market_returns[i])) {
            throw DataError("return series '" + ticker + "': non-finite value at row " + std::to_string(i));
        }
    }
}

std::vector<double> wildfire_regressor(const std::vector<bool>& flags, int n_lags) {
    std::vector<double> w(flags.size(), 0.0);
    for (std::size_t t = 0; t < flags.size(); ++t) {
        for (int k = 1; k <= n_lags && static_cast<std::size_t>(k) <= t; ++k) {
            if (flags[t - static_cast<std::size_t>(k)]) {
                w[t] = 1.0;
                break;
            }
        }
    }
    return w;
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kVarianceFloor = 1e-12;

// Parameter slots shared by the market and stock equations.
enum Slot { A = 0, B, D, Om, Ze, Xi, Rh, Ga, kSlots };
using Theta = std::array<double, kSlots>;

// Everything in scaled units: returns divided by their sample SD.
struct Design {
    std::vector<double> y;
    std::vector<double> x;  // market return regressor, empty for the market equation
    std::vector<double> w;  // wildfire regressor, empty when absent
    std::vector<double> s;  // market volatility, empty when absent
    double h0 = 1.0;
    double floor = kVarianceFloor;
};

double at(const std::vector<double>& v, std::size_t t) { return v.empty() ? 0.0 : v[t]; }

// Gaussian log-likelihood with its analytic gradient and per-observation
// scores. Returns -inf when the variance path drops below the floor.
double loglik_pass(const Design& d, const Theta& th, Theta* grad, std::vector<Theta>* scores) {
    const std::size_t n = d.y.size();
    const bool want = grad != nullptr || scores != nullptr;
    Theta dh{};
    Theta de_prev{};
    double h = d.h0;
    double e_prev = 0.0;
    double total = 0.0;
    if (grad) grad->fill(0.0);
    if (scores) scores->assign(n, Theta{});
    for (std::size_t t = 0; t < n; ++t) {
        const double xt = at(d.x, t);
        const double wt = at(d.w, t);
        const double st = at(d.s, t);
        if (t > 0) {
            const double h_prev = h;
            h = th[Om] + th[Ze] * h_prev + th[Xi] * e_prev * e_prev + th[Rh] * st + th[Ga] * wt;
            if (!(h >= d.floor)) return -std::numeric_limits<double>::infinity();
            if (want) {
                Theta dn{};
                for (int k = 0; k < kSlots; ++k) dn[k] = th[Ze] * dh[k] + 2.0 * th[Xi] * e_prev * de_prev[k];
                dn[Om] += 1.0;
                dn[Ze] += h_prev;
                dn[Xi] += e_prev * e_prev;
                dn[Rh] += st;
                dn[Ga] += wt;
                dh = dn;
            }
        }
        const double e = d.y[t] - th[A] - th[B] * xt - th[D] * wt;
        total += -0.5 * (kLog2Pi + std::log(h) + e * e / h);
        if (want) {
            Theta de{};
            de[A] = -1.0;
            de[B] = -xt;
            de[D] = -wt;
            const double c_h = -0.5 * (1.0 / h - e * e / (h * h));
            const double c_e = -e / h;
            Theta lt{};
            for (int k = 0; k < kSlots; ++k) lt[k] = c_h * dh[k] + c_e * de[k];
            if (grad) {
                for (int k = 0; k < kSlots; ++k) (*grad)[k] += lt[k];
            }
            if (scores) (*scores)[t] = lt;
            de_prev = de;
        }
        e_prev = e;
    }
    return total;
}

// Optimizer coordinates: identity for location/loading slots, log for omega,
// a two-logit simplex for (zeta, xi).
struct Reparam {
    std::vector<int> active;  // slots optimised, always containing Om, Ze, Xi
    Theta fixed{};

    Theta theta(const Eigen::VectorXd& u) const {
        Theta th = fixed;
        double a = 0.0, b = 0.0;
        for (std::size_t i = 0; i < active.size(); ++i) {
            const int k = active[i];
            const double v = u[static_cast<Eigen::Index>(i)];
            if (k == Om) th[k] = std::exp(v);
            else if (k == Ze) a = v;
            else if (k == Xi) b = v;
            else th[k] = v;
        }
        const double m = std::max({0.0, a, b});
        const double ea = std::exp(a - m), eb = std::exp(b - m), e0 = std::exp(-m);
        th[Ze] = ea / (e0 + ea + eb);
        th[Xi] = eb / (e0 + ea + eb);
        return th;
    }

    Eigen::VectorXd coords(const Theta& th) const {
        Eigen::VectorXd u(static_cast<Eigen::Index>(active.size()));
        const double rest = 1.0 - th[Ze] - th[Xi];
        for (std::size_t i = 0; i < active.size(); ++i) {
            const int k = active[i];
            double v = th[k];
            if (k == Om) v = std::log(th[k]);
            else if (k == Ze) v = std::log(th[Ze] / rest);
            else if (k == Xi) v = std::log(th[Xi] / rest);
            u[static_cast<Eigen::Index>(i)] = v;
        }
        return u;
    }

    // Chain rule from slot gradient to coordinate gradient.
    Eigen::VectorXd pullback(const Theta& th, const Theta& g) const {
        Eigen::VectorXd out(static_cast<Eigen::Index>(active.size()));
        for (std::size_t i = 0; i < active.size(); ++i) {
            const int k = active[i];
            double v = g[k];
            if (k == Om) v = g[Om] * th[Om];
            else if (k == Ze) v = g[Ze] * th[Ze] * (1.0 - th[Ze]) - g[Xi] * th[Ze] * th[Xi];
            else if (k == Xi) v = g[Xi] * th[Xi] * (1.0 - th[Xi]) - g[Ze] * th[Ze] * th[Xi];
            out[static_cast<Eigen::Index>(i)] = v;
        }
        return out;
    }
};

struct PassResult {
    Theta theta{};
    double loglik = 0.0;
    double loglik_start = 0.0;
    double gradient_norm = 0.0;
    int iterations = 0;
    std::vector<double> se;  // per active slot, scaled units
};

std::vector<double> sandwich_se(const Design& d, const Theta& th, const std::vector<int>& active) {
    const auto k = static_cast<Eigen::Index>(active.size());
    std::vector<Theta> scores;
    loglik_pass(d, th, nullptr, &scores);
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
    Eigen::VectorXd s(k);
    for (const Theta& sc : scores) {
        for (Eigen::Index i = 0; i < k; ++i) s[i] = sc[active[static_cast<std::size_t>(i)]];
        meat.selfadjointView<Eigen::Lower>().rankUpdate(s);
    }
    meat = meat.selfadjointView<Eigen::Lower>();

    Eigen::MatrixXd hess(k, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const int slot = active[static_cast<std::size_t>(j)];
        const double step = 1e-5 * std::max(std::abs(th[slot]), 0.1);
        Theta tp = th, tm = th;
        tp[slot] += step;
        tm[slot] -= step;
        Theta gp{}, gm{};
        const double lp = loglik_pass(d, tp, &gp, nullptr);
        const double lm = loglik_pass(d, tm, &gm, nullptr);
        if (!std::isfinite(lp) || !std::isfinite(lm)) {
            return std::vector<double>(active.size(), std::numeric_limits<double>::quiet_NaN());
        }
        for (Eigen::Index i = 0; i < k; ++i) {
            const int si = active[static_cast<std::size_t>(i)];
            hess(i, j) = (gp[si] - gm[si]) / (2.0 * step);
        }
    }
    hess = 0.5 * (hess + hess.transpose()).eval();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(hess);
    std::vector<double> out(active.size(), std::numeric_limits<double>::quiet_NaN());
    if (!lu.isInvertible()) return out;
    const Eigen::MatrixXd hinv = lu.inverse();
    const Eigen::MatrixXd v = hinv * meat * hinv;
    for (Eigen::Index i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = std::sqrt(std::max(v(i, i), 0.0));
    return out;
}

PassResult run_fit(const Design& d, const Reparam& rp, const Theta& start, const GarchOptions& opts,
                   const std::string& label) {
    const double n = static_cast<double>(d.y.size());
    optim::Objective f = [&](const Eigen::VectorXd& u, Eigen::VectorXd* g) {
        const Theta th = rp.theta(u);
        Theta gt{};
        const double ll = loglik_pass(d, th, g ? &gt : nullptr, nullptr);
        if (!std::isfinite(ll)) return std::numeric_limits<double>::infinity();
        if (g) *g = -rp.pullback(th, gt) / n;
        return -ll / n;
    };
    const Eigen::VectorXd u0 = rp.coords(start);
    PassResult out;
    out.loglik_start = loglik_pass(d, rp.theta(u0), nullptr, nullptr);
    if (!std::isfinite(out.loglik_start)) throw NumericError(label + ": variance path not positive at start");
    optim::BfgsOptions bo;
    bo.max_iterations = opts.max_iterations;
    bo.gradient_tolerance = opts.gradient_tolerance;
    optim::BfgsResult res = optim::minimize_bfgs(f, u0, bo);
    // A stalled line search close to the optimum is retried from the best point
    // with a fresh metric before giving up.
    for (int restart = 0; restart < 3 && !res.converged; ++restart) {
        optim::BfgsResult again = optim::minimize_bfgs(f, res.x, bo);
        again.iterations += res.iterations;
        res = again;
    }
    out.theta = rp.theta(res.x);
    out.loglik = -res.value * n;
    out.gradient_norm = res.gradient_norm;
    out.iterations = res.iterations;
    if (!res.converged) {
        std::vector<double> best(out.theta.begin(), out.theta.end());
        throw FitNotConverged(label + ": optimizer stopped with gradient norm " + std::to_string(res.gradient_norm) +
                                  " (" + res.message + ")",
                              std::move(best), res.gradient_norm);
    }
    out.se = sandwich_se(d, out.theta, rp.active);
    return out;
}

double sample_variance(const std::vector<double>& v) {
    const double s = stddev(v);
    return s * s;
}

double max_abs(const std::vector<double>& x) {
    double m = 0.0;
    for (double v : x) m = std::max(m, std::abs(v));
    return m;
}

}  // namespace

MarketGarchFit fit_market_garch(const std::vector<double>& market_returns, const GarchOptions& opts) {
    if (market_returns.size() < opts.min_observations) {
        throw DataError("market GARCH needs at least " + std::to_string(opts.min_observations) + " observations");
    }
    const double sd = stddev(market_returns);
    if (!(sd > 1e-12 * (1e-300 + max_abs(market_returns))) || !std::isfinite(sd)) throw DataError("market returns have zero variance");
    Design d;
    d.y.resize(market_returns.size());
    for (std::size_t i = 0; i < d.y.size(); ++i) d.y[i] = market_returns[i] / sd;
    d.h0 = 1.0;
    d.floor = kVarianceFloor / (sd * sd);

    Reparam rp;
    rp.active = {A, Om, Ze, Xi};
    Theta start{};
    start[A] = mean(d.y);
    start[Ze] = 0.85;
    start[Xi] = 0.10;
    start[Om] = 0.05;
    const PassResult r = run_fit(d, rp, start, opts, "market GARCH");

    MarketGarchFit fit;
    fit.params.mu = r.theta[A] * sd;
    fit.params.omega = r.theta[Om] * sd * sd;
    fit.params.zeta = r.theta[Ze];
    fit.params.xi = r.theta[Xi];
    // log-likelihood of the original data differs by the Jacobian of scaling
    const double jac = static_cast<double>(d.y.size()) * std::log(sd);
    fit.loglik = r.loglik - jac;
    fit.loglik_start = r.loglik_start - jac;
    fit.se = {r.se[0] * sd, r.se[1] * sd * sd, r.se[2], r.se[3]};
    fit.gradient_norm = r.gradient_norm;
    fit.iterations = r.iterations;
    return fit;
}

std::vector<double> market_volatility_path(const std::vector<double>& market_returns, const MarketGarchParams& p) {
    std::vector<double> out(market_returns.size() + 1);
    double h = sample_variance(market_returns);
    for (std::size_t t = 0; t <= market_returns.size(); ++t) {
        if (t > 0) {
            const double e = market_returns[t - 1] - p.mu;
            h = p.omega + p.zeta * h + p.xi * e * e;
        }
        out[t] = std::sqrt(h);
    }
    return out;
}

namespace {

struct StockScales {
    double sj = 1.0;  // stock return SD
    double sm = 1.0;  // market return SD
};

// slot -> multiplier taking scaled units to original units
Theta unscale_factors(const StockScales& sc) {
    Theta f{};
    f[A] = sc.sj;
    f[B] = sc.sj / sc.sm;
    f[D] = sc.sj;
    f[Om] = sc.sj * sc.sj;
    f[Ze] = 1.0;
    f[Xi] = 1.0;
    f[Rh] = sc.sj * sc.sj / sc.sm;
    f[Ga] = sc.sj * sc.sj;
    return f;
}

Design stock_design(const ReturnSeries& series, const MarketGarchParams& market, int n_lags, StockScales& sc,
                    std::vector<double>* ols_out) {
    series.validate();
    sc.sj = stddev(series.log_returns);
    sc.sm = stddev(series.market_returns);
    if (!(sc.sj > 1e-12 * (1e-300 + max_abs(series.log_returns))) ||
        !(sc.sm > 1e-12 * (1e-300 + max_abs(series.market_returns)))) throw DataError("return series '" + series.ticker + "' has zero variance");
    const std::size_t n = series.size();
    Design d;
    d.y.resize(n);
    d.x.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        d.y[i] = series.log_returns[i] / sc.sj;
        d.x[i] = series.market_returns[i] / sc.sm;
    }
    d.w = wildfire_regressor(series.wildfire_flags, n_lags);
    const std::vector<double> vol = market_volatility_path(series.market_returns, market);
    d.s.resize(n);
    for (std::size_t i = 0; i < n; ++i) d.s[i] = vol[i] / sc.sm;
    d.floor = kVarianceFloor / (sc.sj * sc.sj);

    // Initial OLS for the mean equation; its residual variance seeds the recursion.
    Eigen::MatrixXd X(static_cast<Eigen::Index>(n), 3);
    Eigen::VectorXd Y(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        X(r, 0) = 1.0;
        X(r, 1) = d.x[i];
        X(r, 2) = d.w[i];
        Y[r] = d.y[i];
    }
    Eigen::VectorXd b = X.colPivHouseholderQr().solve(Y);
    if (!b.allFinite()) b.setZero();
    const Eigen::VectorXd resid = Y - X * b;
    d.h0 = resid.squaredNorm() / static_cast<double>(n > 1 ? n - 1 : 1);
    if (!(d.h0 > d.floor)) throw DataError("return series '" + series.ticker + "' is explained exactly by the market");
    if (ols_out) *ols_out = {b[0], b[1], b[2], d.h0};
    return d;
}

Theta stock_theta(const GarchWildfireParams& p, const StockScales& sc) {
    const Theta f = unscale_factors(sc);
    Theta th{p.alpha, p.beta, p.delta, p.omega, p.zeta, p.xi, p.rho_vol, p.gamma_vol};
    for (int k = 0; k < kSlots; ++k) th[k] /= f[k];
    return th;
}

}  // namespace

GarchWildfireFit fit_garch_wildfire(const ReturnSeries& series, const MarketGarchParams& market, int n_lags,
                                    const GarchOptions& opts) {
    if (series.size() < opts.min_observations) {
        throw DataError("return series '" + series.ticker + "' needs at least " +
                        std::to_string(opts.min_observations) + " observations");
    }
    market.validate();
    if (n_lags < 1) throw ParameterError("n_lags must be >= 1");
    StockScales sc;
    std::vector<double> ols;
    const Design d = stock_design(series, market, n_lags, sc, &ols);
    // With one or two active days delta fits those returns exactly and
    // gamma_vol can drive their variance to the floor: the likelihood has no
    // interior maximum.
    const auto active_days = static_cast<std::size_t>(std::count_if(d.w.begin(), d.w.end(), [](double v) { return v != 0.0; }));
    const bool any_fire = active_days >= opts.min_fire_days;

    Reparam rp;
    rp.active = any_fire ? std::vector<int>{A, B, D, Om, Ze, Xi, Rh, Ga} : std::vector<int>{A, B, Om, Ze, Xi, Rh};
    Theta start{};
    start[A] = ols[0];
    start[B] = ols[1];
    start[D] = any_fire ? ols[2] : 0.0;
    start[Om] = 0.05 * ols[3];
    start[Ze] = 0.85;
    start[Xi] = 0.10;
    const PassResult r = run_fit(d, rp, start, opts, "GARCH-Wildfire '" + series.ticker + "'");

    const Theta f = unscale_factors(sc);
    GarchWildfireFit fit;
    fit.unidentified = !any_fire;
    Theta th = r.theta;
    for (int k = 0; k < kSlots; ++k) th[k] *= f[k];
    fit.params = {th[A], th[B], th[D], th[Om], th[Ze], th[Xi], th[Rh], th[Ga], n_lags};
    const double jac = static_cast<double>(d.y.size()) * std::log(sc.sj);
    fit.loglik = r.loglik - jac;
    fit.loglik_start = r.loglik_start - jac;
    fit.se.assign(kSlots, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < rp.active.size(); ++i) {
        const int k = rp.active[i];
        fit.se[static_cast<std::size_t>(k)] = r.se[i] * f[k];
    }
    fit.gradient_norm = r.gradient_norm;
    fit.iterations = r.iterations;
    return fit;
}

double garch_wildfire_loglik(const ReturnSeries& series, const MarketGarchParams& market,
                             const GarchWildfireParams& p) {
    StockScales sc;
    const Design d = stock_design(series, market, p.n_lags, sc, nullptr);
    const double ll = loglik_pass(d, stock_theta(p, sc), nullptr, nullptr);
    return ll - static_cast<double>(d.y.size()) * std::log(sc.sj);
}

Regime parse_regime(const std::string& name) {
    if (name == "myopic") return Regime::Myopic;
    if (name == "foresight") return Regime::Foresight;
    if (name == "stationary") return Regime::Stationary;
    throw ParameterError("unknown regime '" + name + "' (myopic|foresight|stationary)");
}

std::string regime_name(Regime r) {
    switch (r) {
        case Regime::Myopic: return "myopic";
        case Regime::Foresight: return "foresight";
        case Regime::Stationary: return "stationary";
    }
    return "?";
}

ReturnSeries regime_sample(const ReturnSeries& series, Regime regime, Day event, int foresight_window) {
    series.validate();
    if (series.dates.size() != series.size()) throw DataError("regime selection needs dated returns");
    if (regime == Regime::Stationary) return series;
    if (regime == Regime::Foresight && foresight_window < 1) throw ParameterError("foresight window must be >= 1");
    ReturnSeries out;
    out.ticker = series.ticker;
    int taken = 0;
    for (std::size_t i = 0; i < series.size(); ++i) {
        const bool keep = regime == Regime::Myopic ? series.dates[i] < event
                                                   : (series.dates[i] >= event && taken < foresight_window);
        if (!keep) continue;
        if (regime == Regime::Foresight) ++taken;
        out.dates.push_back(series.dates[i]);
        out.log_returns.push_back(series.log_returns[i]);
        out.wildfire_flags.push_back(series.wildfire_flags[i]);
        out.market_returns.push_back(series.market_returns[i]);
    }
    return out;
}

ForecastState forecast_state(const ReturnSeries& series, const MarketGarchParams& market,
                             const GarchWildfireParams& p, double last_price) {
    series.validate();
    if (series.size() == 0) throw DataError("empty return series");
    if (!(last_price > 0.0)) throw ParameterError("last price must be positive");
    const std::vector<double> vol = market_volatility_path(series.market_returns, market);
    const std::vector<double> w = wildfire_regressor(series.wildfire_flags, p.n_lags);
    const std::size_t n = series.size();

    std::vector<double> resid(n);
    for (std::size_t t = 0; t < n; ++t) {
        resid[t] = series.log_returns[t] - p.alpha - p.beta * series.market_returns[t] - p.delta * w[t];
    }
    double h = sample_variance(resid);
    for (std::size_t t = 1; t < n; ++t) {
        h = p.omega + p.zeta * h + p.xi * resid[t - 1] * resid[t - 1] + p.rho_vol * vol[t] + p.gamma_vol * w[t];
        h = std::max(h, kVarianceFloor);
    }
    ForecastState st;
    st.price = last_price;
    st.stock_variance = h;
    st.stock_residual = resid[n - 1];
    st.market_variance = vol[n - 1] * vol[n - 1];
    st.market_residual = series.market_returns[n - 1] - market.mu;
    const std::size_t keep = std::min<std::size_t>(n, static_cast<std::size_t>(p.n_lags));
    st.recent_fires.assign(series.wildfire_flags.end() - static_cast<std::ptrdiff_t>(keep), series.wildfire_flags.end());
    return st;
}

std::vector<double> simulate_log_returns(const MarketGarchParams& m, const GarchWildfireParams& p,
                                         const ForecastState& state, const ForecastConfig& cfg) {
    if (!(cfg.hazard >= 0.0 && cfg.hazard <= 1.0)) throw ParameterError("hazard must lie in [0, 1]");
    if (cfg.horizon_days < 1) throw ParameterError("horizon must be at least one day");
    if (cfg.n_paths < 1) throw ParameterError("n_paths must be positive");
    m.validate();
    p.validate();

    constexpr std::size_t kBlock = 4096;
    const std::size_t n_blocks = (cfg.n_paths + kBlock - 1) / kBlock;
    std::vector<double> out(cfg.n_paths);
    const auto lags = static_cast<std::size_t>(p.n_lags);

    parallel_for(n_blocks, [&](std::size_t b) {
        std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                          static_cast<std::uint32_t>(b)};
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> z(0.0, 1.0);
        std::bernoulli_distribution fire(cfg.hazard);
        std::vector<bool> hist(lags, false);
        const std::size_t first = b * kBlock;
        const std::size_t last = std::min(cfg.n_paths, first + kBlock);
        for (std::size_t i = first; i < last; ++i) {
            // ring of the last n_lags fire flags, hist[(pos + k) % lags] for k-th oldest
            std::fill(hist.begin(), hist.end(), false);
            const std::size_t have = state.recent_fires.size();
            for (std::size_t k = 0; k < std::min(have, lags); ++k) hist[lags - 1 - k] = state.recent_fires[have - 1 - k];
            std::size_t pos = 0;
            double hm = state.market_variance, em = state.market_residual;
            double hs = state.stock_variance, es = state.stock_residual;
            double acc = 0.0;
            for (int day = 0; day < cfg.horizon_days; ++day) {
                double w = 0.0;
                for (std::size_t k = 0; k < lags; ++k) {
                    if (hist[k]) {
                        w = 1.0;
                        break;
                    }
                }
                hm = m.omega + m.zeta * hm + m.xi * em * em;
                em = std::sqrt(hm) * z(rng);
                const double R = m.mu + em;
                hs = p.omega + p.zeta * hs + p.xi * es * es + p.rho_vol * std::sqrt(hm) + p.gamma_vol * w;
                hs = std::max(hs, kVarianceFloor);
                es = std::sqrt(hs) * z(rng);
                acc += p.alpha + p.beta * R + p.delta * w + es;
                hist[pos] = fire(rng);
                pos = (pos + 1) % lags;
            }
            out[i] = acc;
        }
    });
    return out;
}

double silverman_bandwidth(std::vector<double> sample) {
    const std::size_t n = sample.size();
    if (n < 2) throw ParameterError("bandwidth needs at least two samples");
    const double sd = stddev(sample);
    std::sort(sample.begin(), sample.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(n - 1);
        const auto lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, n - 1);
        return sample[lo] + (pos - static_cast<double>(lo)) * (sample[hi] - sample[lo]);
    };
    const double iqr = quantile(0.75) - quantile(0.25);
    double spread = sd;
    if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
    return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

DensityCurve forecast_density(const MarketGarchParams& market, const GarchWildfireParams& stock,
                              const ForecastState& state, const ForecastConfig& cfg, const std::vector<double>& grid) {
    if (cfg.n_paths < 10000) throw ParameterError("forecast density needs at least 10^4 paths");
    if (grid.size() < 2 || !std::is_sorted(grid.begin(), grid.end())) throw ParameterError("grid must be ascending");
    std::vector<double> terminal = simulate_log_returns(market, stock, state, cfg);
    for (double& v : terminal) v = state.price * std::exp(v);
    const double h = silverman_bandwidth(terminal);
    if (!(h > 0.0)) throw NumericError("simulated terminal prices are degenerate");
    DensityCurve c;
    c.grid = grid;
    c.values.assign(grid.size(), 0.0);
    simd::gaussian_kde(terminal, grid, h, c.values);
    c.kind = DensityKind::Physical;
    c.maturity = cfg.horizon_days / kTradingDaysPerYear;
    c.discount = 1.0;
    c.forward = mean(terminal);
    c.bandwidth = h;
    c.mass = trapezoid(c.grid, c.values);
    c.unsupported.assign(grid.size(), false);
    return c;
}

Hazard wildfire_hazard(const std::vector<TreatmentCalendar>& calendar, const std::string& ticker) {
    std::size_t days = 0, treated = 0;
    for (const auto& row : calendar) {
        if (row.ticker != ticker) continue;
        ++days;
        if (row.treated_now) ++treated;
    }
    Hazard h;
    h.degenerate = days == 0;
    h.probability = (static_cast<double>(treated) + 1.0) / (static_cast<double>(days) + 2.0);
    return h;
}

void to_json(nlohmann::json& j, const MarketGarchParams& p) {
    j = {{"mu", p.mu}, {"omega", p.omega}, {"zeta", p.zeta}, {"xi", p.xi}};
}

void from_json(const nlohmann::json& j, MarketGarchParams& p) {
    p.mu = j.at("mu").get<double>();
    p.omega = j.at("omega").get<double>();
    p.zeta = j.at("zeta").get<double>();
    p.xi = j.at("xi").get<double>();
}

void to_json(nlohmann::json& j, const GarchWildfireParams& p) {
    j = {{"alpha", p.alpha}, {"beta", p.beta},       {"delta", p.delta},         {"omega", p.omega},
         {"zeta", p.zeta},   {"xi", p.xi},           {"rho_vol", p.rho_vol},     {"gamma_vol", p.gamma_vol},
         {"n_lags", p.n_lags}};
}

void from_json(const nlohmann::json& j, GarchWildfireParams& p) {
    p.alpha = j.at("alpha").get<double>();
    p.beta = j.at("beta").get<double>();
    p.delta = j.at("delta").get<double>();
    p.omega = j.at("omega").get<double>();
    p.zeta = j.at("zeta").get<double>();
    p.xi = j.at("xi").get<double>();
    p.rho_vol = j.at("rho_vol").get<double>();
    p.gamma_vol = j.at("gamma_vol").get<double>();
    p.n_lags = j.value("n_lags", 1);
}

namespace {

nlohmann::json se_json(const std::vector<double>& se, const std::vector<std::string>& names) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < names.size() && i < se.size(); ++i) {
        j[names[i]] = std::isfinite(se[i]) ? nlohmann::json(se[i]) : nlohmann::json(nullptr);
    }
    return j;
}

}  // namespace

nlohmann::json fit_to_json(const MarketGarchFit& fit) {
    return {{"params", fit.params},
            {"loglik", fit.loglik},
            {"loglik_start", fit.loglik_start},
            {"se", se_json(fit.se, {"mu", "omega", "zeta", "xi"})},
            {"gradient_norm", fit.gradient_norm},
            {"iterations", fit.iterations}};
}

nlohmann::json fit_to_json(const GarchWildfireFit& fit) {
    return {{"params", fit.params},
            {"loglik", fit.loglik},
            {"loglik_start", fit.loglik_start},
            {"se", se_json(fit.se, {"alpha", "beta", "delta", "omega", "zeta", "xi", "rho_vol", "gamma_vol"})},
            {"unidentified", fit.unidentified},
            {"gradient_norm", fit.gradient_norm},
            {"iterations", fit.iterations}};
}

ReturnSeries simulate_garch_wildfire(const MarketGarchParams& m, const GarchWildfireParams& p, std::size_t n,
                                     int n_episodes, int episode_length, std::uint64_t seed) {
    m.validate();
    p.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    ReturnSeries s;
    s.ticker = "SIM";
    s.wildfire_flags.assign(n, false);
    if (n_episodes > 0 && episode_length > 0) {
        // non-overlapping episodes in equal-width strata, away from the ends
        const std::size_t stratum = n / static_cast<std::size_t>(n_episodes);
        const auto len = static_cast<std::size_t>(episode_length);
        if (stratum <= len + 2) throw ParameterError("too many fire episodes for the series length");
        for (int e = 0; e < n_episodes; ++e) {
            std::uniform_int_distribution<std::size_t> off(1, stratum - len - 1);
            const std::size_t start = static_cast<std::size_t>(e) * stratum + off(rng);
            for (std::size_t k = 0; k < len; ++k) s.wildfire_flags[start + k] = true;
        }
    }
    const std::vector<double> w = wildfire_regressor(s.wildfire_flags, p.n_lags);
    s.log_returns.resize(n);
    s.market_returns.resize(n);
    s.dates.resize(n);
    double hm = m.omega / (1.0 - m.zeta - m.xi), em = 0.0;
    double hs = (p.omega + p.rho_vol * std::sqrt(hm)) / (1.0 - p.zeta - p.xi), es = 0.0;
    // burn-in so the first observation is close to the stationary law
    for (int t = -500; t < static_cast<int>(n); ++t) {
        hm = m.omega + m.zeta * hm + m.xi * em * em;
        em = std::sqrt(hm) * z(rng);
        const double wt = t >= 0 ? w[static_cast<std::size_t>(t)] : 0.0;
        hs = std::max(p.omega + p.zeta * hs + p.xi * es * es + p.rho_vol * std::sqrt(hm) + p.gamma_vol * wt,
                      kVarianceFloor);
        es = std::sqrt(hs) * z(rng);
        if (t < 0) continue;
        const auto i = static_cast<std::size_t>(t);
        s.market_returns[i] = m.mu + em;
        s.log_returns[i] = p.alpha + p.beta * s.market_returns[i] + p.delta * wt + es;
        s.dates[i] = static_cast<Day>(t);
    }
    return s;
}

}  // namespace rndkit
