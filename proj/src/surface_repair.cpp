#include "rndkit/surface_repair.hpp"

#include "rndkit/csv.hpp"
#include "rndkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <sstream>

namespace rndkit {

namespace {

/// Linear interpolation of normalised calls in moneyness; nullopt outside.
std::optional<double> normalised_call_at(const SurfaceSlice& s, double moneyness) {
    const double scale = s.discount() * s.forward;
    const auto n = s.strikes.size();
    if (n == 0) return std::nullopt;
    const double k = moneyness * s.forward;
    if (k < s.strikes.front() || k > s.strikes.back()) return std::nullopt;
    const auto it = std::lower_bound(s.strikes.begin(), s.strikes.end(), k);
    const auto j = static_cast<std::size_t>(it - s.strikes.begin());
    if (s.strikes[j] == k || j == 0) return s.calls[j] / scale;
    const double w = (k - s.strikes[j - 1]) / (s.strikes[j] - s.strikes[j - 1]);
    return ((1.0 - w) * s.calls[j - 1] + w * s.calls[j]) / scale;
}

}  // namespace

ArbitrageReport check_arbitrage(const SurfaceSlice& s, const std::vector<SurfaceSlice>& neighbours, double tol) {
    s.validate();
    ArbitrageReport rep;
    const double df = s.discount();
    const auto n = s.strikes.size();
    const auto& K = s.strikes;
    const auto& C = s.calls;
    for (std::size_t i = 0; i < n; ++i) {
        const double lower = std::max(0.0, df * (s.forward - K[i]));
        if (C[i] < lower - tol || C[i] > df * s.forward + tol) rep.bounds_at.push_back(i);
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double diff = C[i + 1] - C[i];
        if (diff > tol || diff < -df * (K[i + 1] - K[i]) - tol) rep.call_spread_at.push_back(i);
    }
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double w = (K[i + 1] - K[i]) / (K[i + 1] - K[i - 1]);
        if (C[i] - (w * C[i - 1] + (1.0 - w) * C[i + 1]) > tol) rep.butterfly_at.push_back(i);
    }
    const double scale = df * s.forward;
    for (const auto& nb : neighbours) {
        if (nb.maturity_years == s.maturity_years) continue;
        const bool longer = nb.maturity_years > s.maturity_years;
        for (std::size_t i = 0; i < n; ++i) {
            const auto other = normalised_call_at(nb, K[i] / s.forward);
            if (!other) continue;
            const double mine = C[i] / scale;
            const double gap = longer ? *other - mine : mine - *other;
            if (gap < -tol / scale) rep.calendar_at.push_back(i);
        }
    }
    std::sort(rep.calendar_at.begin(), rep.calendar_at.end());
    rep.calendar_at.erase(std::unique(rep.calendar_at.begin(), rep.calendar_at.end()), rep.calendar_at.end());
    rep.counts = {static_cast<int>(rep.butterfly_at.size()), static_cast<int>(rep.call_spread_at.size()),
                  static_cast<int>(rep.bounds_at.size()), static_cast<int>(rep.calendar_at.size())};
    return rep;
}

ConstraintSet repair_constraints(const SurfaceSlice& s) {
    s.validate();
    const auto n = static_cast<Eigen::Index>(s.strikes.size());
    if (n < 2) throw DataError(s.ticker + ": need at least 2 strikes");
    const double df = s.discount();
    const double F = s.forward;
    const auto& K = s.strikes;
    const Eigen::Index m = n + 3;
    ConstraintSet cs;
    cs.a = Eigen::MatrixXd::Zero(m, n);
    cs.b = Eigen::VectorXd::Zero(m);
    cs.names.reserve(static_cast<std::size_t>(m));
    Eigen::Index r = 0;
    cs.a(r, 0) = -1.0;
    cs.b[r] = -df * F;
    cs.names.emplace_back("c1 <= D F");
    ++r;
    cs.a(r, 0) = 1.0;
    cs.b[r] = df * (F - K[0]);
    cs.names.emplace_back("c1 >= D (F - K1)");
    ++r;
    cs.a(r, n - 1) = 1.0;
    cs.names.emplace_back("cn >= 0");
    ++r;
    const double h0 = K[1] - K[0];
    cs.a(r, 0) = -1.0 / h0;
    cs.a(r, 1) = 1.0 / h0;
    cs.b[r] = -df;
    cs.names.emplace_back("slope(K1,K2) >= -D");
    ++r;
    const double hl = K[n - 1] - K[n - 2];
    cs.a(r, n - 2) = 1.0 / hl;
    cs.a(r, n - 1) = -1.0 / hl;
    cs.names.emplace_back("slope(Kn-1,Kn) <= 0");
    ++r;
    for (Eigen::Index i = 1; i + 1 < n; ++i, ++r) {
        const double hl_i = K[i] - K[i - 1];
        const double hr_i = K[i + 1] - K[i];
        cs.a(r, i - 1) = 1.0 / hl_i;
        cs.a(r, i) = -1.0 / hl_i - 1.0 / hr_i;
        cs.a(r, i + 1) = 1.0 / hr_i;
        cs.names.push_back("convex at K" + std::to_string(i + 1));
    }
    // n == 2 has no convexity rows
    cs.a.conservativeResize(r, n);
    cs.b.conservativeResize(r);
    return cs;
}

namespace {

[[noreturn]] void dump_and_throw(const std::string& what, const ConstraintSet& cs, const Eigen::VectorXd& x) {
    std::ostringstream os;
    os << what << "; constraint slacks:";
    const Eigen::VectorXd slack = cs.a * x - cs.b;
    for (Eigen::Index j = 0; j < slack.size(); ++j) os << " [" << cs.names[j] << "] " << slack[j];
    throw NumericError(os.str());
}

}  // namespace

RepairedSlice repair_slice(const SurfaceSlice& s) {
    if (s.strikes.size() < 3) throw DataError(s.ticker + ": repair needs at least 3 strikes");
    const ConstraintSet cs = repair_constraints(s);
    const auto n = static_cast<Eigen::Index>(s.strikes.size());
    const Eigen::Index m = cs.a.rows();
    const Eigen::VectorXd target = Eigen::Map<const Eigen::VectorXd>(s.calls.data(), n);

    RepairedSlice out;
    out.observed = s.calls;
    out.violations_before = check_arbitrage(s).counts;
    out.slice = s;

    if (((cs.a * target - cs.b).array() >= 0.0).all()) {
        out.delta_prices.assign(s.calls.size(), 0.0);
        return out;
    }

    // Discounted intrinsic value satisfies every row.
    const double df = s.discount();
    Eigen::VectorXd x(n);
    for (Eigen::Index i = 0; i < n; ++i) x[i] = df * std::max(s.forward - s.strikes[i], 0.0);

    std::vector<Eigen::Index> work;
    Eigen::VectorXd lambda;
    const int max_iterations = static_cast<int>(50 * (m + n));
    int it = 0;
    bool optimal = false;
    for (; it < max_iterations; ++it) {
        const Eigen::VectorXd g = x - target;
        const auto w = static_cast<Eigen::Index>(work.size());
        Eigen::MatrixXd aw(w, n);
        for (Eigen::Index j = 0; j < w; ++j) aw.row(j) = cs.a.row(work[j]);
        Eigen::VectorXd mu = Eigen::VectorXd::Zero(w);
        if (w > 0) mu = (aw * aw.transpose()).ldlt().solve(aw * g);
        Eigen::VectorXd p = -g;
        if (w > 0) p += aw.transpose() * mu;
        if (p.lpNorm<Eigen::Infinity>() <= 1e-13 * (1.0 + x.lpNorm<Eigen::Infinity>())) {
            Eigen::Index worst = -1;
            double most_negative = -1e-14;
            for (Eigen::Index j = 0; j < w; ++j) {
                if (mu[j] < most_negative) {
                    most_negative = mu[j];
                    worst = j;
                }
            }
            if (worst < 0) {
                lambda = mu;
                optimal = true;
                break;
            }
            work.erase(work.begin() + worst);
            continue;
        }
        double alpha = 1.0;
        Eigen::Index blocking = -1;
        for (Eigen::Index j = 0; j < m; ++j) {
            if (std::find(work.begin(), work.end(), j) != work.end()) continue;
            const double ap = cs.a.row(j).dot(p);
            if (ap >= -1e-300) continue;
            const double step = std::max(0.0, (cs.b[j] - cs.a.row(j).dot(x)) / ap);
            if (step < alpha) {
                alpha = step;
                blocking = j;
            }
        }
        x += alpha * p;
        if (blocking >= 0) work.push_back(blocking);
    }
    if (!optimal) dump_and_throw(s.ticker + ": active-set repair did not converge", cs, x);

    // Rebuild from the multipliers so strikes outside every active row keep
    // their observed price exactly.
    Eigen::VectorXd c = target;
    std::vector<bool> touched(static_cast<std::size_t>(n), false);
    for (std::size_t j = 0; j < work.size(); ++j) {
        const auto row = cs.a.row(work[j]);
        c += lambda[static_cast<Eigen::Index>(j)] * row.transpose();
        for (Eigen::Index i = 0; i < n; ++i) touched[i] = touched[i] || row[i] != 0.0;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (touched[i]) {
            // keep the iterate where it is the better-conditioned value
            if (std::abs(c[i] - x[i]) > 1e-9 * (1.0 + std::abs(x[i]))) {
                dump_and_throw(s.ticker + ": multiplier reconstruction disagrees with iterate", cs, x);
            }
            c[i] = x[i];
        }
    }
    const Eigen::VectorXd slack = cs.a * c - cs.b;
    out.primal_violation = std::max(0.0, -slack.minCoeff());
    Eigen::VectorXd stat = c - target;
    for (std::size_t j = 0; j < work.size(); ++j) stat -= lambda[static_cast<Eigen::Index>(j)] * cs.a.row(work[j]).transpose();
    out.stationarity = stat.lpNorm<Eigen::Infinity>();
    if (out.primal_violation > 1e-10) dump_and_throw(s.ticker + ": repaired slice infeasible", cs, c);
    out.iterations = it;
    for (Eigen::Index i = 0; i < n; ++i) {
        out.slice.calls[i] = c[i];
        const double d = c[i] - target[i];
        out.delta_prices.push_back(d);
        out.max_abs_adjust = std::max(out.max_abs_adjust, std::abs(d));
        out.objective += d * d;
    }
    return out;
}

std::vector<GapRecord> arbitrage_gap_panel(const std::vector<RepairedSlice>& repaired,
                                           const std::vector<TreatmentCalendar>& calendar) {
    std::map<std::pair<std::string, Day>, bool> treated;
    for (const auto& c : calendar) treated[{c.ticker, c.date}] = c.treated_now;
    std::vector<GapRecord> out;
    for (const auto& r : repaired) {
        const auto& s = r.slice;
        std::optional<bool> flag;
        if (!calendar.empty()) {
            const auto it = treated.find({s.ticker, s.quote_date});
            if (it != treated.end()) flag = it->second;
        }
        for (std::size_t i = 0; i < s.strikes.size(); ++i) {
            GapRecord g;
            g.ticker = s.ticker;
            g.date = s.quote_date;
            g.expiry = s.expiry;
            g.strike = s.strikes[i];
            g.delta = r.delta_prices[i];
            g.abs_delta = std::abs(g.delta);
            if (g.abs_delta > 0.0) g.log_abs_delta = std::log(g.abs_delta);
            g.treated_now = flag;
            out.push_back(std::move(g));
        }
    }
    return out;
}

void write_gaps(std::ostream& out, const std::vector<GapRecord>& gaps) {
    out << "ticker,date,expiry,strike,delta,abs_delta,log_abs_delta\n";
    for (const auto& g : gaps) {
        csv::write_row(out, {g.ticker, format_iso_date(g.date), format_iso_date(g.expiry), csv::format(g.strike),
                             csv::format(g.delta), csv::format(g.abs_delta),
                             g.log_abs_delta ? csv::format(*g.log_abs_delta) : ""});
    }
}

}  // namespace rndkit
