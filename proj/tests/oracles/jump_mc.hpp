#pragma once

// Monte Carlo oracle for Kou jump-diffusion European prices.

#include "rndkit/jump_models.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace oracle {

struct McPrice {
    double price;
    double se;
};

inline McPrice kou_mc_call(const rndkit::KouParams& p, double strike, double forward, double T, std::uint64_t n_paths,
                           std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::poisson_distribution<int> poisson(p.lambda * T);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::exponential_distribution<double> up(p.eta2);
    std::exponential_distribution<double> down(p.eta1);
    const double drift = (-0.5 * p.sigma * p.sigma - p.lambda * p.zeta()) * T;
    const double sd = p.sigma * std::sqrt(T);
    double sum = 0.0;
    double sum2 = 0.0;
    for (std::uint64_t i = 0; i < n_paths; ++i) {
        double x = drift + sd * normal(rng);
        const int n = poisson(rng);
        for (int j = 0; j < n; ++j) x += unif(rng) < p.p_up ? up(rng) : -down(rng);
        const double payoff = std::max(forward * std::exp(x) - strike, 0.0);
        sum += payoff;
        sum2 += payoff * payoff;
    }
    const double m = sum / static_cast<double>(n_paths);
    const double var = sum2 / static_cast<double>(n_paths) - m * m;
    const double disc = std::exp(-p.rate * T);
    return {disc * m, disc * std::sqrt(var / static_cast<double>(n_paths))};
}

}  // namespace oracle
