#pragma once

// Risk-neutral density and CDF from call prices by constrained local
// polynomial regression in strike.

#include "rndkit/quotes_io.hpp"
#include "rndkit/surface_repair.hpp"

#include <optional>
#include <vector>

namespace rndkit {

enum class DensityKind { RiskNeutral, Physical };

struct DensityCurve {
    std::vector<double> grid;    // equally spaced strikes
    std::vector<double> values;  // density per currency unit, >= 0
    double maturity = 0.0;
    double discount = 1.0;
    double forward = 0.0;
    DensityKind kind = DensityKind::RiskNeutral;
    double mass = 0.0;  // trapezoid integral over the grid
    double bandwidth = 0.0;
    std::vector<bool> unsupported;  // grid points where the local fit failed
};

struct BandwidthSpec {
    std::optional<double> value;  // explicit bandwidth in currency units
    double multiplier = 0.35;     // scales the rule-of-thumb bandwidth
};

/// 1.06 sd(strikes) n^{-1/5} times the multiplier.
double rule_of_thumb_bandwidth(const std::vector<double>& strikes, double multiplier);

/// Local fit at one point: C(K) ~ sum_p beta_p (K - K0)^p, p <= 4, Gaussian
/// kernel weights, beta2 >= 0.
struct LocalFit {
    double beta0 = 0.0;
    double beta1 = 0.0;
    double beta2 = 0.0;
    bool constrained = false;  // beta2 >= 0 was active
    bool supported = true;
    double bandwidth = 0.0;    // after any widening
};

LocalFit local_poly_fit(const std::vector<double>& strikes, const std::vector<double>& calls, double center,
                        double bandwidth);

std::vector<double> equal_grid(double lo, double hi, int n);

/// Density on grid_size equally spaced strikes spanning the slice's strikes:
/// e^{rT} 2 beta2. Unsupported points carry value 0 and a flag.
DensityCurve extract_rnd(const SurfaceSlice& slice, const BandwidthSpec& bw = {}, int grid_size = 100);
DensityCurve extract_rnd(const RepairedSlice& slice, const BandwidthSpec& bw = {}, int grid_size = 100);

struct CdfCurve {
    std::vector<double> grid;
    std::vector<double> values;  // clamped to [0, 1] and monotone
    std::vector<double> raw;     // 1 + e^{rT} beta1 before clamping
};

/// CDF from the slope coefficient of the same local fit.
CdfCurve rnd_cdf(const SurfaceSlice& slice, const std::vector<double>& grid, const BandwidthSpec& bw = {});

struct RndMoments {
    double mean = 0.0;
    double variance = 0.0;
    double skewness = 0.0;
    double excess_kurtosis = 0.0;
    double support_lo = 0.0;
    double support_hi = 0.0;
    bool degenerate = false;  // zero variance; skewness and kurtosis are NaN
};

/// Moments of the curve renormalised to unit mass. Requires mass > 0.5.
RndMoments rnd_moments(const DensityCurve& curve);

struct IvSlopeRow {
    double strike = 0.0;
    double iv = 0.0;
    double fd_slope = 0.0;   // finite-difference dIV/dK of the observed smile
    double predicted = 0.0;  // -e^{-rT}(1 - F*) dIV/dC + dIV/dK from the CDF
    double residual = 0.0;
};

/// Chain-rule consistency between the smile slope and the extracted CDF at
/// interior strikes. Strikes whose IV cannot be computed are skipped.
std::vector<IvSlopeRow> iv_slope_diagnostic(const SurfaceSlice& slice, const CdfCurve& cdf);

/// Linear interpolation on an ascending grid, flat outside.
double interpolate(const std::vector<double>& x, const std::vector<double>& y, double at);

}  // namespace rndkit
