#pragma once

// Black-Scholes pricing on the forward, implied volatility, CRR lattices and
// the American-to-European price conversion.

#include <functional>
#include <optional>

namespace rndkit {

struct BsInputs {
    double forward = 0.0;
    double strike = 0.0;
    double rate = 0.0;      // continuously compounded
    double maturity = 0.0;  // years
    double vol = 0.0;       // annualized
    bool is_call = true;

    void validate() const;
    [[nodiscard]] double discount() const;
};

/// Black formula on the forward, discounted at `rate`. vol == 0 gives the
/// discounted intrinsic value on the forward.
double bs_price(const BsInputs& in);

/// dPrice/dvol.
double bs_vega(const BsInputs& in);

/// dPrice/dStrike at fixed volatility.
double bs_dstrike(const BsInputs& in);

struct VolBracket {
    double lo = 1e-6;
    double hi = 10.0;
};

/// Static band [discounted intrinsic, discounted forward (call) or strike (put)].
struct PriceBand {
    double lower;
    double upper;
};
PriceBand bs_price_band(const BsInputs& in);

/// Inverts bs_price for volatility (in.vol is ignored). Safeguarded Newton
/// with bisection fallback; |bs_price(result) - price| <= 1e-10 * forward.
/// Prices below the lower bracket's price map to bracket.lo. Throws OutOfBand
/// if the price is outside the static band or above the bracket's top price.
double implied_vol(double price, const BsInputs& in, VolBracket bracket = {});

/// Cox-Ross-Rubinstein lattice (u = exp(vol sqrt(dt))) started at `spot` with
/// continuous dividend yield. in.forward is not used. When the CRR
/// probability leaves [0, 1] (vol below |r - q| sqrt(dt)) the lattice is
/// recentred on the drift.
double crr_price(const BsInputs& in, int n_steps, bool american, double spot, double div_yield);

/// Market description of a listed (American) option.
struct MarketFields {
    double spot = 0.0;
    double strike = 0.0;
    double rate = 0.0;
    double div_yield = 0.0;
    double maturity = 0.0;
    bool is_call = true;

    [[nodiscard]] double forward() const;
};

struct DeAmericanized {
    double european_price;
    double implied_vol;
};

/// Inverts the American CRR price for volatility and reprices the European
/// option at that volatility. Throws OutOfBand when the American price lies
/// outside the lattice's attainable range.
DeAmericanized de_americanize(double american_price, const MarketFields& market, int n_steps = 500,
                              VolBracket bracket = {});

/// Root of an increasing function on [lo, hi]: Newton (when df is given) or
/// secant steps, falling back to bisection whenever a step leaves the
/// bracket or fails to halve |f|. Iterates until |f| <= target (default
/// 1e-3 tol) or the bracket collapses; throws NumericError unless the best
/// point found has |f| <= tol.
double safeguarded_increasing_root(const std::function<double(double)>& f,
                                   const std::function<double(double)>* df, double lo, double hi, double tol,
                                   int max_iterations = 200, double target = -1.0);

}  // namespace rndkit
