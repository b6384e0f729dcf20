#pragma once

// Pricing kernels from density ratios, the stock-price elasticity gamma_w,
// its mapping to wealth risk aversion and portfolio shares, and a Monte Carlo
// check of that mapping in the two-asset lognormal economy.

#include "rndkit/panel_metrics.hpp"
#include "rndkit/rnd_extract.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rndkit {

inline constexpr double kDensityFloor = 1e-10;

struct PricingKernelCurve {
    std::vector<double> grid;  // prices where both densities exceed the floor
    std::vector<double> values;  // e^{rT} f* / f
    std::vector<double> log_moneyness;  // log(K / F)
    std::size_t n_dropped = 0;
    double forward = 0.0;
    double maturity = 0.0;
    double rate = 0.0;
};

/// Both curves must share the grid. Fewer than 10 overlapping points throws.
PricingKernelCurve pricing_kernel(const DensityCurve& rnd, const DensityCurve& phys, double rate, double maturity);

struct RiskAversionEstimate {
    double gamma_w = 0.0;
    double se = 0.0;
    double t_stat = 0.0;
    bool puzzle = false;  // gamma_w < 0
    std::size_t n_points = 0;
    double r2 = 0.0;
};

/// Single slice: OLS of log kernel on -log S with intercept, HC1 errors.
RiskAversionEstimate estimate_gamma_w(const PricingKernelCurve& kernel);

struct KernelObs {
    int firm = 0;
    int date = 0;
    PricingKernelCurve curve;
};

/// Pooled: firm, date and maturity-bin effects absorbed (n_bins quantile
/// bins of maturity), errors double-clustered by firm and date.
RiskAversionEstimate estimate_gamma_w(const std::vector<KernelObs>& kernels, int n_maturity_bins = 10);

/// Maturity-bin index per kernel, equal counts up to one.
std::vector<int> maturity_bins(const std::vector<double>& maturities, int n_bins);

struct PortfolioDecomposition {
    double q = 0.0;        // wealth share in the index
    double q_w = 0.0;      // wealth share in the exposed stock
    double beta = 0.0;
    double sigma = 0.0;    // index volatility
    double sigma_w = 0.0;  // idiosyncratic volatility of the exposed stock
    double rho = 0.0;      // beta sigma / sqrt(beta^2 sigma^2 + sigma_w^2)
    std::optional<double> gamma;

    static PortfolioDecomposition make(double q, double q_w, double beta, double sigma, double sigma_w);
    /// q_w + rho sigma / sigma_w q
    [[nodiscard]] double effective_exposure() const;
};

double correlation_from_beta(double beta, double sigma, double sigma_w);

/// gamma = gamma_w / exposure. Zero exposure throws.
double gamma_from_gamma_w(double gamma_w, double effective_exposure);
double gamma_from_gamma_w(double gamma_w, const PortfolioDecomposition& p);

struct ImpliedShare {
    double q_w = 0.0;
    bool negative = false;  // reported as a puzzle case
};

/// q_w = gamma_w / gamma - rho sigma / sigma_w q.
ImpliedShare implied_portfolio_share(double gamma_w, double gamma, double rho, double sigma, double sigma_w, double q);

struct OptimalShares {
    double q = 0.0;
    double q_w = 0.0;
};

OptimalShares merton_optimal_shares(double mu, double alpha, double beta, double sigma, double sigma_w, double r,
                                    double gamma);

struct Prop1Config {
    double gamma = 4.0;
    double q = 0.5;
    double q_w = 0.1;
    double beta = 0.8;
    double sigma = 0.15;
    double sigma_w = 0.3;
    double mu = 0.07;
    double alpha = 0.01;
    double r = 0.02;
    double maturity = 1.0;
    std::size_t n_paths = 1000000;
    std::uint64_t seed = 1;
};

struct Prop1Report {
    double slope = 0.0;  // OLS of log zeta_T on log S_T^w
    double se = 0.0;
    double ci_low = 0.0;  // 95%
    double ci_high = 0.0;
    double closed_form = 0.0;  // -(q_w + rho sigma / sigma_w q) gamma
    double projection = 0.0;   // exact population slope of the simulated model
    double rho = 0.0;
    std::size_t n_paths = 0;
};

/// Simulates (B_T, B_T^w), terminal wealth and S_T^w, zeta_T = W_T^{-gamma},
/// and regresses. Path blocks are seeded from (seed, block) and reduced in
/// block order.
Prop1Report verify_prop1_mc(const Prop1Config& cfg);

}  // namespace rndkit
