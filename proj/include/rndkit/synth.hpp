#pragma once

// Synthetic surfaces and panels with known generating models.

#include "rndkit/jump_models.hpp"
#include "rndkit/quotes_io.hpp"

#include <cstdint>
#include <vector>

namespace rndkit {

/// Call prices on `strikes` from the model (Black for FlatVol, Fourier for
/// jump models). The model's own rate is replaced by `rate`.
SurfaceSlice synth_surface(const ModelParams& model, const std::vector<double>& strikes, double maturity,
                           double forward, double rate);

struct TreatmentRule {
    double treated_firm_fraction = 0.5;
    int episode_first_day = 5;   // earliest start of a firm's fire episode
    int episode_last_day = 20;   // latest start
    int episode_length = 5;      // treated days per episode
};

struct SynthPanelConfig {
    int n_firms = 20;
    int n_days = 30;
    std::vector<double> moneyness;   // K / F per slice
    std::vector<double> maturities;  // years, one slice per maturity per firm-day
    double forward = 100.0;
    double rate = 0.0;
    ModelParams control = FlatVol{};
    ModelParams treatment = FlatVol{};
    TreatmentRule rule;
    double firm_vol_sd = 0.0;  // firm effect on implied vols
    double date_vol_sd = 0.0;  // date effect on implied vols
    double noise = 0.0;        // iid implied-vol noise
    std::uint64_t seed = 1;
    Day first_date = 17167;    // 2017-01-02
};

struct SynthPanel {
    std::vector<SurfaceSlice> slices;
    std::vector<std::vector<double>> ivs;  // per slice, per strike, as generated
    std::vector<TreatmentCalendar> calendar;
};

/// Firm-days on treated days price off `treatment`, all others off
/// `control`. Deterministic in the seed.
SynthPanel synth_panel(const SynthPanelConfig& cfg);

}  // namespace rndkit
