#include "rndkit/rnd_extract.hpp"

#include "rndkit/error.hpp"
#include "rndkit/pricing_core.hpp"
#include "rndkit/simd/kernels.hpp"
#include "rndkit/stats.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace rndkit {

namespace {

constexpr int kDegree = 4;

// Solves the weighted normal equations in scaled units u = (K - K0)/h.
// Returns false when the system is numerically rank deficient.
bool solve_scaled(const double* s, const double* t, bool drop_quadratic, Eigen::Matrix<double, 5, 1>& gamma) {
    Eigen::Matrix<double, 5, 5> m;
    for (int p = 0; p <= kDegree; ++p) {
        for (int q = 0; q <= kDegree; ++q) m(p, q) = s[p + q];
    }
    Eigen::Matrix<double, 5, 1> rhs;
    for (int p = 0; p <= kDegree; ++p) rhs[p] = t[p];
    std::vector<int> cols;
    for (int p = 0; p <= kDegree; ++p) {
        if (!(drop_quadratic && p == 2)) cols.push_back(p);
    }
    const auto k = static_cast<Eigen::Index>(cols.size());
    Eigen::MatrixXd a(k, k);
    Eigen::VectorXd b(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        b[i] = rhs[cols[i]];
        for (Eigen::Index j = 0; j < k; ++j) a(i, j) = m(cols[i], cols[j]);
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
    const double hi = eig.eigenvalues().maxCoeff();
    const double lo = eig.eigenvalues().minCoeff();
    if (!(hi > 0.0) || lo <= 1e-11 * hi) return false;
    const Eigen::VectorXd sol = a.ldlt().solve(b);
    gamma.setZero();
    for (Eigen::Index i = 0; i < k; ++i) gamma[cols[i]] = sol[i];
    return true;
}

}  // namespace

double rule_of_thumb_bandwidth(const std::vector<double>& strikes, double multiplier) {
    if (strikes.size() < 2) throw DataError("bandwidth rule needs at least 2 strikes");
    if (!(multiplier > 0.0)) throw ParameterError("bandwidth multiplier must be positive");
    return multiplier * 1.06 * stddev(strikes) * std::pow(static_cast<double>(strikes.size()), -0.2);
}

LocalFit local_poly_fit(const std::vector<double>& strikes, const std::vector<double>& calls, double center,
                        double bandwidth) {
    if (!(bandwidth > 0.0)) throw ParameterError("bandwidth must be positive");
    LocalFit fit;
    double h = bandwidth;
    for (int widen = 0; widen <= 3; ++widen, h *= 2.0) {
        double s[2 * kDegree + 1];
        double t[kDegree + 1];
        simd::local_poly_moments(strikes, calls, center, h, kDegree, s, t);
        Eigen::Matrix<double, 5, 1> gamma;
        if (!solve_scaled(s, t, false, gamma)) continue;
        fit.bandwidth = h;
        if (gamma[2] < 0.0) {
            if (!solve_scaled(s, t, true, gamma)) continue;
            fit.constrained = true;
        }
        fit.beta0 = gamma[0];
        fit.beta1 = gamma[1] / h;
        fit.beta2 = gamma[2] / (h * h);
        return fit;
    }
    fit.supported = false;
    fit.bandwidth = h / 2.0;
    return fit;
}

std::vector<double> equal_grid(double lo, double hi, int n) {
    if (n < 2) throw ParameterError("grid needs at least 2 points");
    std::vector<double> g(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) g[i] = lo + (hi - lo) * i / (n - 1);
    g.back() = hi;
    return g;
}

namespace {

double resolve_bandwidth(const SurfaceSlice& s, const BandwidthSpec& bw) {
    if (bw.value) {
        if (!(*bw.value > 0.0)) throw ParameterError("bandwidth must be positive");
        return *bw.value;
    }
    return rule_of_thumb_bandwidth(s.strikes, bw.multiplier);
}

}  // namespace

DensityCurve extract_rnd(const SurfaceSlice& s, const BandwidthSpec& bw, int grid_size) {
    s.validate();
    if (s.strikes.size() < 5) throw DataError(s.ticker + ": density extraction needs at least 5 strikes");
    const double h = resolve_bandwidth(s, bw);
    DensityCurve out;
    out.grid = equal_grid(s.strikes.front(), s.strikes.back(), grid_size);
    out.values.assign(out.grid.size(), 0.0);
    out.unsupported.assign(out.grid.size(), false);
    out.maturity = s.maturity_years;
    out.discount = s.discount();
    out.forward = s.forward;
    out.bandwidth = h;
    const double growth = 1.0 / out.discount;
    for (std::size_t g = 0; g < out.grid.size(); ++g) {
        const LocalFit fit = local_poly_fit(s.strikes, s.calls, out.grid[g], h);
        if (!fit.supported) {
            out.unsupported[g] = true;
            continue;
        }
        out.values[g] = fit.constrained ? 0.0 : growth * 2.0 * fit.beta2;
    }
    out.mass = trapezoid(out.grid, out.values);
    return out;
}

DensityCurve extract_rnd(const RepairedSlice& r, const BandwidthSpec& bw, int grid_size) {
    return extract_rnd(r.slice, bw, grid_size);
}

CdfCurve rnd_cdf(const SurfaceSlice& s, const std::vector<double>& grid, const BandwidthSpec& bw) {
    s.validate();
    if (s.strikes.size() < 5) throw DataError(s.ticker + ": CDF extraction needs at least 5 strikes");
    const double h = resolve_bandwidth(s, bw);
    const double growth = 1.0 / s.discount();
    CdfCurve out;
    out.grid = grid;
    double running = 0.0;
    for (double k : grid) {
        const LocalFit fit = local_poly_fit(s.strikes, s.calls, k, h);
        const double raw = fit.supported ? 1.0 + growth * fit.beta1 : std::numeric_limits<double>::quiet_NaN();
        out.raw.push_back(raw);
        const double clamped = std::isnan(raw) ? running : std::clamp(raw, 0.0, 1.0);
        running = std::max(running, clamped);
        out.values.push_back(running);
    }
    return out;
}

RndMoments rnd_moments(const DensityCurve& c) {
    if (!(c.mass > 0.5)) throw DataError("density mass " + std::to_string(c.mass) + " <= 0.5");
    const auto n = c.grid.size();
    std::vector<double> w(n);
    RndMoments m;
    m.support_lo = c.grid.front();
    m.support_hi = c.grid.back();
    for (std::size_t i = 0; i < n; ++i) w[i] = c.values[i] * c.grid[i];
    m.mean = trapezoid(c.grid, w) / c.mass;
    std::array<double, 3> central{};
    for (int p = 2; p <= 4; ++p) {
        for (std::size_t i = 0; i < n; ++i) w[i] = c.values[i] * std::pow(c.grid[i] - m.mean, p);
        central[p - 2] = trapezoid(c.grid, w) / c.mass;
    }
    m.variance = std::max(central[0], 0.0);
    if (m.variance <= 1e-14 * std::max(1.0, m.mean * m.mean)) {
        m.degenerate = true;
        m.skewness = m.excess_kurtosis = std::numeric_limits<double>::quiet_NaN();
        return m;
    }
    m.skewness = central[1] / std::pow(m.variance, 1.5);
    m.excess_kurtosis = central[2] / (m.variance * m.variance) - 3.0;
    return m;
}

double interpolate(const std::vector<double>& x, const std::vector<double>& y, double at) {
    if (x.empty()) throw ParameterError("interpolate on empty grid");
    if (at <= x.front()) return y.front();
    if (at >= x.back()) return y.back();
    const auto it = std::upper_bound(x.begin(), x.end(), at);
    const auto j = static_cast<std::size_t>(it - x.begin());
    const double w = (at - x[j - 1]) / (x[j] - x[j - 1]);
    return (1.0 - w) * y[j - 1] + w * y[j];
}

std::vector<IvSlopeRow> iv_slope_diagnostic(const SurfaceSlice& s, const CdfCurve& cdf) {
    s.validate();
    const auto n = s.strikes.size();
    std::vector<double> iv(n, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < n; ++i) {
        try {
            iv[i] = implied_vol(s.calls[i], {s.forward, s.strikes[i], s.rate, s.maturity_years, 0.0, true});
        } catch (const NumericError&) {
        }
    }
    std::vector<IvSlopeRow> rows;
    const double df = s.discount();
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (std::isnan(iv[i - 1]) || std::isnan(iv[i]) || std::isnan(iv[i + 1])) continue;
        const double hl = s.strikes[i] - s.strikes[i - 1];
        const double hr = s.strikes[i + 1] - s.strikes[i];
        // three-point derivative on an unequal grid
        const double fd = -hr / (hl * (hl + hr)) * iv[i - 1] + (hr - hl) / (hl * hr) * iv[i]
                          + hl / (hr * (hl + hr)) * iv[i + 1];
        const BsInputs in{s.forward, s.strikes[i], s.rate, s.maturity_years, iv[i], true};
        const double vega = bs_vega(in);
        if (!(vega > 1e-12 * s.forward)) continue;
        const double cdf_k = interpolate(cdf.grid, cdf.values, s.strikes[i]);
        const double div_dc = 1.0 / vega;
        const double div_dk = -bs_dstrike(in) / vega;
        const double predicted = -df * (1.0 - cdf_k) * div_dc + div_dk;
        rows.push_back({s.strikes[i], iv[i], fd, predicted, fd - predicted});
    }
    return rows;
}

}  // namespace rndkit
