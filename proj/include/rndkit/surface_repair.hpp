#pragma once

// No-arbitrage diagnostics and least-squares projection of call slices.

#include "rndkit/quotes_io.hpp"

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rndkit {

struct ViolationCounts {
    int butterfly = 0;
    int call_spread = 0;
    int bounds = 0;
    int calendar = 0;

    [[nodiscard]] int per_maturity() const { return butterfly + call_spread + bounds; }
    [[nodiscard]] int total() const { return per_maturity() + calendar; }
};

struct ArbitrageReport {
    ViolationCounts counts;
    std::vector<std::size_t> butterfly_at;    // middle strike of a non-convex triple
    std::vector<std::size_t> call_spread_at;  // left strike of an offending pair
    std::vector<std::size_t> bounds_at;
    std::vector<std::size_t> calendar_at;     // strike of this slice
};

/// Per-maturity tests with an absolute price tolerance:
///   butterfly   C2 <= w C1 + (1 - w) C3,  w = (K3 - K2)/(K3 - K1)
///   call spread -D (K2 - K1) <= C2 - C1 <= 0
///   bounds      max(0, D (F - K)) <= C <= D F
/// and, for every neighbour slice, normalised calls C/(D F) compared at
/// matched moneyness K/F (longer maturity must not be cheaper).
ArbitrageReport check_arbitrage(const SurfaceSlice& slice, const std::vector<SurfaceSlice>& neighbours = {},
                                double price_tol = 1e-8);

/// Linear constraints A c >= b equivalent to the per-maturity conditions.
struct ConstraintSet {
    Eigen::MatrixXd a;
    Eigen::VectorXd b;
    std::vector<std::string> names;
};
ConstraintSet repair_constraints(const SurfaceSlice& slice);

struct RepairedSlice {
    SurfaceSlice slice;                 // repaired prices
    std::vector<double> observed;       // input prices
    std::vector<double> delta_prices;   // repaired - observed
    ViolationCounts violations_before;
    double max_abs_adjust = 0.0;
    double objective = 0.0;             // sum of squared adjustments
    double primal_violation = 0.0;      // max(b - A c, 0)
    double stationarity = 0.0;          // |c - C - A_W' lambda|_inf
    int iterations = 0;
};

/// min sum (c_i - C_i)^2 subject to the constraint set, by a primal
/// active-set method started at the discounted intrinsic curve. Feasible
/// input comes back unchanged.
RepairedSlice repair_slice(const SurfaceSlice& slice);

struct GapRecord {
    std::string ticker;
    Day date = 0;
    Day expiry = 0;
    double strike = 0.0;
    double delta = 0.0;
    double abs_delta = 0.0;
    std::optional<double> log_abs_delta;  // missing when the gap is zero
    std::optional<bool> treated_now;      // filled when a calendar is supplied
};

std::vector<GapRecord> arbitrage_gap_panel(const std::vector<RepairedSlice>& repaired,
                                           const std::vector<TreatmentCalendar>& calendar = {});
void write_gaps(std::ostream& out, const std::vector<GapRecord>& gaps);

}  // namespace rndkit
