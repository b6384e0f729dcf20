#include "rndkit/kernel_ra.hpp"

#include "rndkit/error.hpp"
#include "rndkit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace rndkit {

PricingKernelCurve pricing_kernel(const DensityCurve& rnd, const DensityCurve& phys, double rate, double maturity) {
    if (rnd.grid.size() != phys.grid.size() || rnd.values.size() != rnd.grid.size() ||
        phys.values.size() != phys.grid.size()) {
        throw ParameterError("pricing kernel needs both densities on the same grid");
    }
    for (std::size_t i = 0; i < rnd.grid.size(); ++i) {
        if (std::abs(rnd.grid[i] - phys.grid[i]) > 1e-9 * std::max(1.0, std::abs(rnd.grid[i]))) {
            throw ParameterError("pricing kernel needs both densities on the same grid");
        }
    }
    if (!(maturity > 0.0)) throw ParameterError("maturity must be positive");
    const double forward = rnd.forward > 0.0 ? rnd.forward : phys.forward;
    if (!(forward > 0.0)) throw ParameterError("density carries no forward price");

    PricingKernelCurve k;
    k.forward = forward;
    k.maturity = maturity;
    k.rate = rate;
    const double growth = std::exp(rate * maturity);
    for (std::size_t i = 0; i < rnd.grid.size(); ++i) {
        const bool ok_r = rnd.values[i] > kDensityFloor && (rnd.unsupported.empty() || !rnd.unsupported[i]);
        const bool ok_p = phys.values[i] > kDensityFloor && (phys.unsupported.empty() || !phys.unsupported[i]);
        if (!ok_r || !ok_p || !(rnd.grid[i] > 0.0)) {
            ++k.n_dropped;
            continue;
        }
        k.grid.push_back(rnd.grid[i]);
        k.values.push_back(growth * rnd.values[i] / phys.values[i]);
        k.log_moneyness.push_back(std::log(rnd.grid[i] / forward));
    }
    if (k.grid.empty()) throw NumericError("risk-neutral and physical densities have no common support");
    if (k.grid.size() < 10) {
        throw NumericError("common support has only " + std::to_string(k.grid.size()) + " points (need 10)");
    }
    return k;
}

RiskAversionEstimate estimate_gamma_w(const PricingKernelCurve& kernel) {
    const std::size_t n = kernel.grid.size();
    if (n < 2) throw DataError("kernel has fewer than two points");
    double mx = 0.0, my = 0.0;
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(kernel.values[i] > 0.0)) throw DataError("kernel values must be positive");
        x[i] = -std::log(kernel.grid[i]);
        y[i] = std::log(kernel.values[i]);
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (!(sxx > 0.0)) throw NumericError("regressor -log S has no variation");
    RiskAversionEstimate est;
    est.n_points = n;
    est.gamma_w = sxy / sxx;
    const double a = my - est.gamma_w * mx;
    double meat = 0.0, rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = y[i] - a - est.gamma_w * x[i];
        meat += (x[i] - mx) * (x[i] - mx) * e * e;
        rss += e * e;
    }
    if (n > 2) est.se = std::sqrt(static_cast<double>(n) / static_cast<double>(n - 2) * meat) / sxx;
    est.t_stat = est.se > 0.0 ? est.gamma_w / est.se : 0.0;
    est.puzzle = est.gamma_w < 0.0;
    est.r2 = syy > 0.0 ? 1.0 - rss / syy : 1.0;
    return est;
}

std::vector<int> maturity_bins(const std::vector<double>& maturities, int n_bins) {
    if (n_bins < 1) throw ParameterError("maturity bin count must be positive");
    std::vector<std::size_t> order(maturities.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return maturities[a] < maturities[b]; });
    std::vector<int> bin(maturities.size());
    const std::size_t n = maturities.size();
    for (std::size_t r = 0; r < n; ++r) bin[order[r]] = static_cast<int>(r * static_cast<std::size_t>(n_bins) / n);
    // equal maturities must share a bin
    for (std::size_t r = 1; r < n; ++r) {
        if (maturities[order[r]] == maturities[order[r - 1]]) bin[order[r]] = bin[order[r - 1]];
    }
    return bin;
}

RiskAversionEstimate estimate_gamma_w(const std::vector<KernelObs>& kernels, int n_maturity_bins) {
    if (kernels.empty()) throw DataError("no kernels to pool");
    std::vector<double> mats;
    for (const auto& k : kernels) mats.push_back(k.curve.maturity);
    const std::vector<int> bins = maturity_bins(mats, n_maturity_bins);

    PanelData data;
    data.names = {"neg_log_price"};
    for (std::size_t j = 0; j < kernels.size(); ++j) {
        const auto& c = kernels[j].curve;
        for (std::size_t i = 0; i < c.grid.size(); ++i) {
            if (!(c.values[i] > 0.0)) throw DataError("kernel values must be positive");
            data.obs.push_back({kernels[j].firm, kernels[j].date, std::log(c.values[i]), {-std::log(c.grid[i])}, 1.0, 0,
                                bins[j]});
        }
    }
    const FEResult fit = twoway_fe_fit(data, Absorb::FirmDateExtra);
    if (!fit.index("neg_log_price")) {
        throw NumericError("regressor neg_log_price is absorbed by the firm, date and maturity effects");
    }
    RiskAversionEstimate est;
    est.gamma_w = fit.coef("neg_log_price");
    est.se = fit.se("neg_log_price");
    est.t_stat = est.se > 0.0 ? est.gamma_w / est.se : 0.0;
    est.puzzle = est.gamma_w < 0.0;
    est.n_points = fit.n;
    est.r2 = fit.r2_within;
    return est;
}

double correlation_from_beta(double beta, double sigma, double sigma_w) {
    if (!(sigma > 0.0) || !(sigma_w > 0.0)) throw ParameterError("sigma and sigma_w must be positive");
    return beta * sigma / std::sqrt(beta * beta * sigma * sigma + sigma_w * sigma_w);
}

PortfolioDecomposition PortfolioDecomposition::make(double q, double q_w, double beta, double sigma, double sigma_w) {
    PortfolioDecomposition p;
    p.q = q;
    p.q_w = q_w;
    p.beta = beta;
    p.sigma = sigma;
    p.sigma_w = sigma_w;
    p.rho = correlation_from_beta(beta, sigma, sigma_w);
    return p;
}

double PortfolioDecomposition::effective_exposure() const { return q_w + rho * sigma / sigma_w * q; }

double gamma_from_gamma_w(double gamma_w, double effective_exposure) {
    if (effective_exposure == 0.0 || !std::isfinite(effective_exposure)) {
        throw NumericError("unidentified: zero effective exposure");
    }
    return gamma_w / effective_exposure;
}

double gamma_from_gamma_w(double gamma_w, const PortfolioDecomposition& p) {
    return gamma_from_gamma_w(gamma_w, p.effective_exposure());
}

ImpliedShare implied_portfolio_share(double gamma_w, double gamma, double rho, double sigma, double sigma_w, double q) {
    if (!(gamma > 0.0)) throw ParameterError("gamma must be positive");
    if (!(sigma_w > 0.0)) throw ParameterError("sigma_w must be positive");
    ImpliedShare s;
    s.q_w = gamma_w / gamma - rho * sigma / sigma_w * q;
    s.negative = s.q_w < 0.0;
    return s;
}

OptimalShares merton_optimal_shares(double mu, double alpha, double beta, double sigma, double sigma_w, double r,
                                    double gamma) {
    if (!(gamma > 0.0) || !(sigma > 0.0) || !(sigma_w > 0.0)) {
        throw ParameterError("gamma, sigma and sigma_w must be positive");
    }
    OptimalShares s;
    s.q_w = (alpha + beta * mu - r) / (gamma * sigma_w * sigma_w);
    s.q = (mu - r) / (gamma * sigma * sigma) - s.q_w * beta;
    return s;
}

namespace {

struct Moments {
    double n = 0.0, mx = 0.0, my = 0.0, cxx = 0.0, cxy = 0.0, cyy = 0.0;

    void add(double x, double y) {
        n += 1.0;
        const double dx = x - mx;
        mx += dx / n;
        const double dy = y - my;
        my += dy / n;
        cxx += dx * (x - mx);
        cxy += dx * (y - my);
        cyy += dy * (y - my);
    }

    void merge(const Moments& o) {
        if (o.n == 0.0) return;
        const double nn = n + o.n;
        const double dx = o.mx - mx, dy = o.my - my;
        cxx += o.cxx + dx * dx * n * o.n / nn;
        cxy += o.cxy + dx * dy * n * o.n / nn;
        cyy += o.cyy + dy * dy * n * o.n / nn;
        mx += dx * o.n / nn;
        my += dy * o.n / nn;
        n = nn;
    }
};

}  // namespace

Prop1Report verify_prop1_mc(const Prop1Config& c) {
    if (c.n_paths < 100000) throw ParameterError("Monte Carlo check needs at least 10^5 paths");
    if (!(c.gamma > 0.0) || !(c.maturity > 0.0)) throw ParameterError("gamma and maturity must be positive");
    Prop1Report rep;
    rep.rho = correlation_from_beta(c.beta, c.sigma, c.sigma_w);
    rep.closed_form = -(c.q_w + rep.rho * c.sigma / c.sigma_w * c.q) * c.gamma;
    const double bs2 = c.beta * c.beta * c.sigma * c.sigma;
    rep.projection = -c.gamma * ((c.q + c.beta * c.q_w) * c.beta * c.sigma * c.sigma + c.q_w * c.sigma_w * c.sigma_w) /
                     (bs2 + c.sigma_w * c.sigma_w);
    rep.n_paths = c.n_paths;

    const double t = c.maturity;
    const double sq = std::sqrt(t);
    const double wealth_drift =
        (c.q * (c.mu - c.r) + c.q_w * (c.alpha + c.beta * c.mu - c.r) + c.r - 0.5 * c.q * c.q * c.sigma * c.sigma) * t;
    const double stock_drift = (c.alpha + c.beta * c.mu - 0.5 * bs2 - 0.5 * c.sigma_w * c.sigma_w) * t;
    const double load_b = (c.q + c.beta * c.q_w) * c.sigma;
    const double load_bw = c.q_w * c.sigma_w;

    constexpr std::size_t kBlock = 1 << 16;
    const std::size_t n_blocks = (c.n_paths + kBlock - 1) / kBlock;
    std::vector<Moments> parts(n_blocks);
    parallel_for(n_blocks, [&](std::size_t b) {
        std::seed_seq seq{static_cast<std::uint32_t>(c.seed), static_cast<std::uint32_t>(c.seed >> 32),
                          static_cast<std::uint32_t>(b)};
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> z(0.0, 1.0);
        const std::size_t end = std::min(c.n_paths, (b + 1) * kBlock);
        Moments m;
        for (std::size_t i = b * kBlock; i < end; ++i) {
            const double db = sq * z(rng);
            const double dbw = sq * z(rng);
            const double log_w = wealth_drift + load_b * db + load_bw * dbw;  // W_0 = 1
            const double log_zeta = -c.gamma * log_w;
            const double log_sw = stock_drift + c.beta * c.sigma * db + c.sigma_w * dbw;  // S_0^w = 1
            m.add(log_sw, log_zeta);
        }
        parts[b] = m;
    });
    Moments all;
    for (const auto& m : parts) all.merge(m);
    rep.slope = all.cxy / all.cxx;
    const double resid = std::max(all.cyy - rep.slope * all.cxy, 0.0) / (all.n - 2.0);
    rep.se = std::sqrt(resid / all.cxx);
    rep.ci_low = rep.slope - 1.959963984540054 * rep.se;
    rep.ci_high = rep.slope + 1.959963984540054 * rep.se;
    return rep;
}

}  // namespace rndkit
