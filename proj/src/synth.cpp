#include "rndkit/synth.hpp"

#include "rndkit/error.hpp"
#include "rndkit/pricing_core.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>

namespace rndkit {

namespace {

ModelParams with_rate(ModelParams model, double rate) {
    std::visit([rate](auto& m) { m.rate = rate; }, model);
    return model;
}

std::string firm_ticker(int i) {
    std::string s = std::to_string(i);
    return "F" + std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

}  // namespace

SurfaceSlice synth_surface(const ModelParams& model, const std::vector<double>& strikes, double maturity,
                           double forward, double rate) {
    if (!(maturity > 0.0) || !(forward > 0.0)) throw ParameterError("maturity and forward must be positive");
    const ModelParams m = with_rate(model, rate);
    SurfaceSlice s;
    s.ticker = "SYN";
    s.maturity_years = maturity;
    s.quote_date = 0;
    s.expiry = static_cast<Day>(std::lround(maturity * 365.0));
    s.strikes = strikes;
    s.forward = forward;
    s.rate = rate;
    s.div_yield = std::visit([](const auto& p) { return p.div_yield; }, m);
    s.calls.reserve(strikes.size());
    const bool flat = std::holds_alternative<FlatVol>(m);
    for (double K : strikes) {
        if (flat) {
            s.calls.push_back(bs_price({forward, K, rate, maturity, std::get<FlatVol>(m).sigma, true}));
        } else {
            s.calls.push_back(model_price(m, K, forward, maturity, true));
        }
    }
    s.validate();
    return s;
}

SynthPanel synth_panel(const SynthPanelConfig& cfg) {
    if (cfg.n_firms < 1 || cfg.n_days < 1) throw ParameterError("panel needs at least one firm and one day");
    if (cfg.moneyness.empty() || cfg.maturities.empty()) throw ParameterError("panel needs strikes and maturities");
    if (cfg.noise < 0.0 || cfg.firm_vol_sd < 0.0 || cfg.date_vol_sd < 0.0) throw ParameterError("noise must be >= 0");
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    std::vector<double> firm_effect(static_cast<std::size_t>(cfg.n_firms));
    std::vector<int> episode_start(static_cast<std::size_t>(cfg.n_firms), -1);
    const int n_treated = static_cast<int>(std::lround(cfg.rule.treated_firm_fraction * cfg.n_firms));
    for (int f = 0; f < cfg.n_firms; ++f) {
        firm_effect[f] = cfg.firm_vol_sd * normal(rng);
        if (f < n_treated) {
            const int span = std::max(0, cfg.rule.episode_last_day - cfg.rule.episode_first_day);
            episode_start[f] = cfg.rule.episode_first_day + static_cast<int>(unif(rng) * (span + 1));
        }
    }
    std::vector<double> date_effect(static_cast<std::size_t>(cfg.n_days));
    for (auto& d : date_effect) d = cfg.date_vol_sd * normal(rng);

    std::vector<double> strikes;
    for (double m : cfg.moneyness) strikes.push_back(m * cfg.forward);
    std::sort(strikes.begin(), strikes.end());

    // Model vols are shared by every firm-day with the same regime.
    const auto regime_ivs = [&](const ModelParams& model) {
        const ModelParams m = with_rate(model, cfg.rate);
        std::vector<std::vector<double>> out;
        for (double T : cfg.maturities) {
            std::vector<double> row;
            for (double K : strikes) {
                double iv;
                if (const auto* flat = std::get_if<FlatVol>(&m)) {
                    iv = flat->sigma;
                } else {
                    const bool call = K >= cfg.forward;
                    const double p = model_price(m, K, cfg.forward, T, call);
                    iv = implied_vol(p, {cfg.forward, K, cfg.rate, T, 0.0, call});
                }
                row.push_back(iv);
            }
            out.push_back(std::move(row));
        }
        return out;
    };
    const auto control_iv = regime_ivs(cfg.control);
    const auto treated_iv = regime_ivs(cfg.treatment);

    SynthPanel panel;
    std::vector<Day> dates;
    for (int d = 0; d < cfg.n_days; ++d) dates.push_back(cfg.first_date + d);
    for (int f = 0; f < cfg.n_firms; ++f) {
        const std::string ticker = firm_ticker(f);
        bool ever = false;
        for (int d = 0; d < cfg.n_days; ++d) {
            const int start = episode_start[f];
            const bool treated = start >= 0 && d >= start && d < start + cfg.rule.episode_length;
            ever = ever || treated;
            panel.calendar.push_back({ticker, dates[d], treated, ever, start >= 0 && d >= start});
            const auto& base = treated ? treated_iv : control_iv;
            for (std::size_t t = 0; t < cfg.maturities.size(); ++t) {
                SurfaceSlice s;
                s.ticker = ticker;
                s.quote_date = dates[d];
                s.maturity_years = cfg.maturities[t];
                s.expiry = dates[d] + static_cast<Day>(std::lround(cfg.maturities[t] * 365.0));
                s.strikes = strikes;
                s.forward = cfg.forward;
                s.rate = cfg.rate;
                std::vector<double> ivs;
                for (std::size_t k = 0; k < strikes.size(); ++k) {
                    double iv = base[t][k] + firm_effect[f] + date_effect[d];
                    if (cfg.noise > 0.0) iv += cfg.noise * normal(rng);
                    iv = std::max(iv, 1e-3);
                    ivs.push_back(iv);
                    s.calls.push_back(bs_price({cfg.forward, strikes[k], cfg.rate, cfg.maturities[t], iv, true}));
                }
                panel.slices.push_back(std::move(s));
                panel.ivs.push_back(std::move(ivs));
            }
        }
    }
    return panel;
}

}  // namespace rndkit
