#pragma once

// GARCH market model, GARCH-Wildfire stock model (two-step Gaussian QMLE) and
// Monte Carlo physical densities of the stock price.

#include "rndkit/dates.hpp"
#include "rndkit/error.hpp"
#include "rndkit/quotes_io.hpp"
#include "rndkit/rnd_extract.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace rndkit {

/// R_t = mu + s_t eps_t,  s_t^2 = omega + zeta s_{t-1}^2 + xi (R_{t-1} - mu)^2
struct MarketGarchParams {
    double mu = 0.0;
    double omega = 1e-6;
    double zeta = 0.9;
    double xi = 0.05;

    void validate() const;
};

/// r_t = alpha + beta R_t + delta W_t + sigma_t eps_t
/// sigma_t^2 = omega + zeta sigma_{t-1}^2 + xi e_{t-1}^2 + rho_vol s_t + gamma_vol W_t
/// W_t is 1 when a fire was flagged on any of the n_lags days before t. s_t is
/// the market conditional volatility (not variance).
struct GarchWildfireParams {
    double alpha = 0.0;
    double beta = 0.0;
    double delta = 0.0;
    double omega = 1e-6;
    double zeta = 0.9;
    double xi = 0.05;
    double rho_vol = 0.0;
    double gamma_vol = 0.0;
    int n_lags = 1;

    void validate() const;
};

struct ReturnSeries {
    std::string ticker;
    std::vector<Day> dates;
    std::vector<double> log_returns;
    std::vector<bool> wildfire_flags;  // fire on that day
    std::vector<double> market_returns;

    void validate() const;
    [[nodiscard]] std::size_t size() const { return log_returns.size(); }
};

/// Lagged wildfire regressor for each day (see GarchWildfireParams).
std::vector<double> wildfire_regressor(const std::vector<bool>& flags, int n_lags);

struct MarketGarchFit {
    MarketGarchParams params;
    double loglik = 0.0;
    double loglik_start = 0.0;
    std::vector<double> se;  // mu, omega, zeta, xi (sandwich)
    double gradient_norm = 0.0;
    int iterations = 0;
};

struct GarchWildfireFit {
    GarchWildfireParams params;
    double loglik = 0.0;
    double loglik_start = 0.0;
    std::vector<double> se;  // alpha, beta, delta, omega, zeta, xi, rho_vol, gamma_vol
    bool unidentified = false;  // too few wildfire days: delta, gamma_vol fixed at 0, se NaN
    double gradient_norm = 0.0;
    int iterations = 0;
};

/// Raised when the optimizer stops above the gradient tolerance. Carries the
/// best point found, in the fit's parameter order.
class FitNotConverged : public NumericError {
public:
    FitNotConverged(const std::string& what, std::vector<double> best, double gradient_norm)
        : NumericError(what), best_(std::move(best)), gradient_norm_(gradient_norm) {}
    [[nodiscard]] const std::vector<double>& best() const noexcept { return best_; }
    [[nodiscard]] double gradient_norm() const noexcept { return gradient_norm_; }

private:
    std::vector<double> best_;
    double gradient_norm_;
};

struct GarchOptions {
    int max_iterations = 2000;
    double gradient_tolerance = 1e-6;  // on the mean negative log-likelihood, optimizer coordinates
    std::size_t min_observations = 250;
    std::size_t min_fire_days = 5;  // days with W_t = 1 needed to estimate delta and gamma_vol
};

MarketGarchFit fit_market_garch(const std::vector<double>& market_returns, const GarchOptions& opts = {});

/// Conditional market volatility s_t implied by fitted parameters, one entry
/// per return (and one extra for the day after the sample).
std::vector<double> market_volatility_path(const std::vector<double>& market_returns, const MarketGarchParams& p);

GarchWildfireFit fit_garch_wildfire(const ReturnSeries& series, const MarketGarchParams& market, int n_lags = 1,
                                    const GarchOptions& opts = {});

/// Log-likelihood of the stock equation at given parameters.
double garch_wildfire_loglik(const ReturnSeries& series, const MarketGarchParams& market,
                             const GarchWildfireParams& p);

enum class Regime { Myopic, Foresight, Stationary };
Regime parse_regime(const std::string& name);
std::string regime_name(Regime r);

/// Estimation sample for a regime around an event date: myopic keeps days
/// before the event, foresight the first `foresight_window` days from the
/// event on, stationary the whole series.
ReturnSeries regime_sample(const ReturnSeries& series, Regime regime, Day event, int foresight_window);

/// State at the end of the observed sample, from which simulation starts.
struct ForecastState {
    double price = 1.0;
    double stock_variance = 0.0;   // sigma_T^2
    double stock_residual = 0.0;   // e_T
    double market_variance = 0.0;  // s_T^2
    double market_residual = 0.0;  // R_T - mu
    std::vector<bool> recent_fires;  // most recent last
};

ForecastState forecast_state(const ReturnSeries& series, const MarketGarchParams& market,
                             const GarchWildfireParams& stock, double last_price);

struct ForecastConfig {
    int horizon_days = 21;
    std::size_t n_paths = 100000;
    Regime regime = Regime::Stationary;  // recorded only; the caller picks the fit
    double hazard = 0.0;                 // daily wildfire probability
    std::uint64_t seed = 1;
};

inline constexpr double kTradingDaysPerYear = 252.0;

/// Simulated log(S_T / S_0), path order fixed by the seed.
std::vector<double> simulate_log_returns(const MarketGarchParams& market, const GarchWildfireParams& stock,
                                         const ForecastState& state, const ForecastConfig& cfg);

/// 0.9 min(sd, IQR/1.34) n^{-1/5}.
double silverman_bandwidth(std::vector<double> sample);

/// Kernel density of simulated terminal prices on `grid`.
DensityCurve forecast_density(const MarketGarchParams& market, const GarchWildfireParams& stock,
                              const ForecastState& state, const ForecastConfig& cfg, const std::vector<double>& grid);

struct Hazard {
    double probability = 0.5;
    bool degenerate = false;  // no days observed
};

/// (treated days + 1) / (days + 2) over the ticker's calendar rows.
Hazard wildfire_hazard(const std::vector<TreatmentCalendar>& calendar, const std::string& ticker);

void to_json(nlohmann::json& j, const MarketGarchParams& p);
void from_json(const nlohmann::json& j, MarketGarchParams& p);
void to_json(nlohmann::json& j, const GarchWildfireParams& p);
void from_json(const nlohmann::json& j, GarchWildfireParams& p);
nlohmann::json fit_to_json(const MarketGarchFit& fit);
nlohmann::json fit_to_json(const GarchWildfireFit& fit);

/// Simulates the two-step model itself; used by tests and synthetic runs.
/// Fires are placed as `n_episodes` runs of `episode_length` days.
ReturnSeries simulate_garch_wildfire(const MarketGarchParams& market, const GarchWildfireParams& stock,
                                     std::size_t n, int n_episodes, int episode_length, std::uint64_t seed);

}  // namespace rndkit
