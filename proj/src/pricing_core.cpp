#include "rndkit/pricing_core.hpp"

#include "rndkit/error.hpp"
#include "rndkit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace rndkit {

void BsInputs::validate() const {
    if (!(forward > 0.0) || !(strike > 0.0)) throw ParameterError("forward and strike must be positive");
    if (!(maturity > 0.0)) throw ParameterError("maturity must be positive");
    if (!(vol >= 0.0)) throw ParameterError("volatility must be nonnegative");
}

double BsInputs::discount() const { return std::exp(-rate * maturity); }

double bs_price(const BsInputs& in) {
    in.validate();
    const double df = in.discount();
    const double sd = in.vol * std::sqrt(in.maturity);
    if (sd < 1e-300) {
        const double intrinsic = in.is_call ? in.forward - in.strike : in.strike - in.forward;
        return df * std::max(intrinsic, 0.0);
    }
    const double d1 = (std::log(in.forward / in.strike) + 0.5 * sd * sd) / sd;
    const double d2 = d1 - sd;
    if (in.is_call) return df * (in.forward * norm_cdf(d1) - in.strike * norm_cdf(d2));
    return df * (in.strike * norm_cdf(-d2) - in.forward * norm_cdf(-d1));
}

double bs_vega(const BsInputs& in) {
    const double sd = in.vol * std::sqrt(in.maturity);
    if (sd < 1e-300) return 0.0;
    const double d1 = (std::log(in.forward / in.strike) + 0.5 * sd * sd) / sd;
    return in.discount() * in.forward * norm_pdf(d1) * std::sqrt(in.maturity);
}

double bs_dstrike(const BsInputs& in) {
    const double df = in.discount();
    const double sd = in.vol * std::sqrt(in.maturity);
    if (sd < 1e-300) {
        if (in.is_call) return in.forward > in.strike ? -df : 0.0;
        return in.forward < in.strike ? df : 0.0;
    }
    const double d2 = (std::log(in.forward / in.strike) - 0.5 * sd * sd) / sd;
    return in.is_call ? -df * norm_cdf(d2) : df * norm_cdf(-d2);
}

PriceBand bs_price_band(const BsInputs& in) {
    const double df = in.discount();
    if (in.is_call) return {df * std::max(in.forward - in.strike, 0.0), df * in.forward};
    return {df * std::max(in.strike - in.forward, 0.0), df * in.strike};
}

double safeguarded_increasing_root(const std::function<double(double)>& f,
                                   const std::function<double(double)>* df, double lo, double hi, double tol,
                                   int max_iterations, double target) {
    if (target < 0.0) target = 1e-3 * tol;
    double f_lo = f(lo);
    double f_hi = f(hi);
    if (std::abs(f_lo) <= target) return lo;
    if (std::abs(f_hi) <= target) return hi;
    if (f_lo > 0.0 || f_hi < 0.0) throw NumericError("root not bracketed");
    double x = 0.5 * (lo + hi);
    double fx = f(x);
    double best_x = x;
    double best_f = std::abs(fx);
    bool force_bisect = false;
    for (int it = 0; it < max_iterations; ++it) {
        if (std::abs(fx) < best_f) {
            best_f = std::abs(fx);
            best_x = x;
        }
        if (std::abs(fx) <= target) return x;
        if (fx < 0.0) {
            lo = x;
            f_lo = fx;
        } else {
            hi = x;
            f_hi = fx;
        }
        const double width = hi - lo;
        if (width <= 1e-15 * std::max(1.0, std::abs(x))) break;
        double candidate = std::numeric_limits<double>::quiet_NaN();
        if (!force_bisect) {
            if (df != nullptr) {
                const double d = (*df)(x);
                if (d > 0.0) candidate = x - fx / d;
            } else {
                candidate = lo - f_lo * width / (f_hi - f_lo);
            }
        }
        if (!(candidate > lo && candidate < hi)) candidate = 0.5 * (lo + hi);
        const double previous = std::abs(fx);
        x = candidate;
        fx = f(x);
        force_bisect = std::abs(fx) > 0.5 * previous;
    }
    if (best_f <= tol) return best_x;
    throw NumericError("root finder stalled with residual " + std::to_string(best_f));
}

double implied_vol(double price, const BsInputs& in, VolBracket bracket) {
    BsInputs q = in;
    q.vol = 0.0;
    q.validate();
    const double tol = 1e-10 * in.forward;
    const PriceBand band = bs_price_band(q);
    if (price < band.lower - tol) throw OutOfBand(OutOfBand::Bound::Lower, band.lower, price);
    if (price > band.upper + tol) throw OutOfBand(OutOfBand::Bound::Upper, band.upper, price);
    auto f = [&](double v) {
        q.vol = v;
        return bs_price(q) - price;
    };
    const std::function<double(double)> vega = [&](double v) {
        q.vol = v;
        return bs_vega(q);
    };
    if (f(bracket.lo) >= 0.0) return bracket.lo;
    const double top = f(bracket.hi);
    if (top < -tol) throw OutOfBand(OutOfBand::Bound::Upper, top + price, price);
    if (top <= 0.0) return bracket.hi;
    // Small prices get a relative target so deep out-of-the-money vols stay
    // informative; tol is still the acceptance criterion.
    return safeguarded_increasing_root(f, &vega, bracket.lo, bracket.hi, tol, 200, std::min(1e-3 * tol, 1e-9 * price));
}

double crr_price(const BsInputs& in, int n_steps, bool american, double spot, double div_yield) {
    if (n_steps < 1) throw ParameterError("n_steps must be >= 1");
    if (!(spot > 0.0) || !(in.strike > 0.0) || !(in.maturity > 0.0) || !(in.vol >= 0.0)) {
        throw ParameterError("invalid lattice inputs");
    }
    const double dt = in.maturity / n_steps;
    const double growth = std::exp((in.rate - div_yield) * dt);
    const double disc = std::exp(-in.rate * dt);
    double up = std::exp(in.vol * std::sqrt(dt));
    double down = 1.0 / up;
    double p = (growth - down) / (up - down);
    if (!(p >= 0.0 && p <= 1.0)) {
        const double centre = std::log(growth) - 0.5 * in.vol * in.vol * dt;
        up = std::exp(centre + in.vol * std::sqrt(dt));
        down = std::exp(centre - in.vol * std::sqrt(dt));
        p = up > down ? (growth - down) / (up - down) : 0.5;
    }
    const double sign = in.is_call ? 1.0 : -1.0;
    std::vector<double> values(static_cast<std::size_t>(n_steps) + 1);
    // Terminal node j has j up-moves.
    for (int j = 0; j <= n_steps; ++j) {
        const double s = spot * std::pow(up, j) * std::pow(down, n_steps - j);
        values[j] = std::max(sign * (s - in.strike), 0.0);
    }
    for (int step = n_steps - 1; step >= 0; --step) {
        double s = spot * std::pow(down, step);
        const double ratio = up / down;
        for (int j = 0; j <= step; ++j) {
            double v = disc * (p * values[j + 1] + (1.0 - p) * values[j]);
            if (american) v = std::max(v, sign * (s - in.strike));
            values[j] = v;
            s *= ratio;
        }
    }
    return values[0];
}

double MarketFields::forward() const { return spot * std::exp((rate - div_yield) * maturity); }

DeAmericanized de_americanize(double american_price, const MarketFields& m, int n_steps, VolBracket bracket) {
    if (!(m.spot > 0.0) || !(m.strike > 0.0) || !(m.maturity > 0.0)) throw ParameterError("invalid market fields");
    BsInputs in{m.forward(), m.strike, m.rate, m.maturity, 0.0, m.is_call};
    // American static bounds
    const double lower = m.is_call ? std::max(0.0, m.spot - m.strike) : std::max(0.0, m.strike - m.spot);
    const double upper = m.is_call ? m.spot : m.strike;
    const double tol = 1e-10 * m.spot;
    if (american_price < lower - tol) throw OutOfBand(OutOfBand::Bound::Lower, lower, american_price);
    if (american_price > upper + tol) throw OutOfBand(OutOfBand::Bound::Upper, upper, american_price);
    auto f = [&](double v) {
        BsInputs q = in;
        q.vol = v;
        return crr_price(q, n_steps, true, m.spot, m.div_yield) - american_price;
    };
    const double at_lo = f(bracket.lo);
    if (at_lo > tol) throw OutOfBand(OutOfBand::Bound::Lower, at_lo + american_price, american_price);
    const double at_hi = f(bracket.hi);
    if (at_hi < -tol) throw OutOfBand(OutOfBand::Bound::Upper, at_hi + american_price, american_price);
    const double vol = at_lo >= 0.0 ? bracket.lo : safeguarded_increasing_root(f, nullptr, bracket.lo, bracket.hi, tol);
    in.vol = vol;
    return {bs_price(in), vol};
}

}  // namespace rndkit
