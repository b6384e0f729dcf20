#include "rndkit/jump_models.hpp"

#include "rndkit/error.hpp"
#include "rndkit/optim.hpp"
#include "rndkit/parallel.hpp"
#include "rndkit/pricing_core.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace rndkit {

namespace {

constexpr cplx I{0.0, 1.0};

struct GaussLegendre16 {
    std::array<double, 16> node{};
    std::array<double, 16> weight{};
    GaussLegendre16() {
        constexpr int n = 16;
        for (int i = 0; i < n; ++i) {
            double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
            double dp = 0.0;
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0;
                double p1 = x;
                for (int k = 2; k <= n; ++k) {
                    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n * (x * p1 - p0) / (x * x - 1.0);
                const double dx = p1 / dp;
                x -= dx;
                if (std::abs(dx) < 1e-16) break;
            }
            node[i] = x;
            weight[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
    }
};

const GaussLegendre16& gauss_legendre() {
    static const GaussLegendre16 gl;
    return gl;
}

cplx expm1c(cplx z) {
    if (std::abs(z) < 1e-3) return z * (1.0 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0)));
    return std::exp(z) - 1.0;
}

cplx merton_jump_cf(cplx u, double mu, double sd) { return std::exp(I * u * mu - 0.5 * sd * sd * u * u); }

cplx kou_jump_cf(cplx u, double p, double eta1, double eta2) {
    return p * eta2 / (eta2 - I * u) + (1.0 - p) * eta1 / (eta1 + I * u);
}

/// Undiscounted Black price per unit forward notional.
double black_unit(double fwd, double strike, double sd, bool is_call) {
    if (sd < 1e-300) return std::max(is_call ? fwd - strike : strike - fwd, 0.0);
    BsInputs in{fwd, strike, 0.0, 1.0, sd, is_call};
    return bs_price(in);
}

}  // namespace

void MertonParams::validate() const {
    if (!(sigma >= 0.0) || !(sigma_s >= 0.0) || !(lambda_s >= 0.0) || !std::isfinite(mu_s)) {
        throw ParameterError("Merton parameters require sigma, sigma_s, lambda_s >= 0");
    }
}

double MertonParams::kappa() const { return std::exp(mu_s + 0.5 * sigma_s * sigma_s) - 1.0; }

void KouParams::validate() const {
    if (!(sigma >= 0.0) || !(lambda >= 0.0) || !(p_up >= 0.0 && p_up <= 1.0) || !(eta1 > 0.0) || !(eta2 > 1.0)) {
        throw ParameterError("Kou parameters require sigma, lambda >= 0, p in [0,1], eta1 > 0, eta2 > 1");
    }
}

double KouParams::zeta() const {
    return p_up * eta2 / (eta2 - 1.0) + (1.0 - p_up) * eta1 / (eta1 + 1.0) - 1.0;
}

std::string model_kind_name(ModelKind kind) { return kind == ModelKind::Merton ? "merton" : "kou"; }

ModelKind parse_model_kind(const std::string& name) {
    if (name == "merton") return ModelKind::Merton;
    if (name == "kou") return ModelKind::Kou;
    throw ParameterError("unknown model '" + name + "' (expected merton or kou)");
}

cplx merton_cf(cplx u, const MertonParams& p, double T) {
    const double drift = p.rate - p.div_yield - p.lambda_s * p.kappa() - 0.5 * p.sigma * p.sigma;
    return std::exp(I * u * drift * T - 0.5 * p.sigma * p.sigma * T * u * u
                    + p.lambda_s * T * (merton_jump_cf(u, p.mu_s, p.sigma_s) - 1.0));
}

cplx kou_cf(cplx u, const KouParams& p, double T) {
    const double drift = p.rate - p.div_yield - p.lambda * p.zeta() - 0.5 * p.sigma * p.sigma;
    return std::exp(I * u * drift * T - 0.5 * p.sigma * p.sigma * T * u * u
                    + p.lambda * T * (kou_jump_cf(u, p.p_up, p.eta1, p.eta2) - 1.0));
}

double JumpDiffusion::kappa() const {
    if (lambda == 0.0 || !jump_cf) return 0.0;
    return std::real(jump_cf(cplx(0.0, -1.0))) - 1.0;
}

cplx JumpDiffusion::forward_cf(cplx u, double T) const {
    const double drift = -0.5 * sigma * sigma - lambda * kappa();
    cplx expo = I * u * drift * T - 0.5 * sigma * sigma * T * u * u;
    if (lambda > 0.0) expo += lambda * T * (jump_cf(u) - 1.0);
    return std::exp(expo);
}

JumpDiffusion make_jump_diffusion(const ModelParams& model) {
    JumpDiffusion jd;
    if (const auto* f = std::get_if<FlatVol>(&model)) {
        if (!(f->sigma >= 0.0)) throw ParameterError("flat vol must be nonnegative");
        jd.sigma = f->sigma;
    } else if (const auto* m = std::get_if<MertonParams>(&model)) {
        m->validate();
        jd.sigma = m->sigma;
        jd.lambda = m->lambda_s;
        const double mu = m->mu_s;
        const double sd = m->sigma_s;
        jd.jump_cf = [mu, sd](cplx u) { return merton_jump_cf(u, mu, sd); };
        jd.jump_second_moment = mu * mu + sd * sd;
    } else {
        const auto& k = std::get<KouParams>(model);
        k.validate();
        jd.sigma = k.sigma;
        jd.lambda = k.lambda;
        const double p = k.p_up;
        const double e1 = k.eta1;
        const double e2 = k.eta2;
        jd.jump_cf = [p, e1, e2](cplx u) { return kou_jump_cf(u, p, e1, e2); };
        jd.moment_lo = -e1;
        jd.moment_hi = e2;
        jd.jump_second_moment = 2.0 * p / (e2 * e2) + 2.0 * (1.0 - p) / (e1 * e1);
    }
    return jd;
}

double price_cf(const JumpDiffusion& model, double strike, double forward, double rate, double T, bool is_call,
                const FourierOptions& opts) {
    if (!(strike > 0.0) || !(forward > 0.0) || !(T > 0.0)) throw ParameterError("strike, forward, T must be positive");
    const double k = std::log(strike / forward);
    const double unit_strike = strike / forward;
    const bool call_side = k >= 0.0;
    const double lt = model.lambda * T;
    const bool has_jumps = lt > 0.0 && model.jump_cf;

    // Damping inside the exponential-moment strip of x = log(S_T/F).
    double alpha;
    if (call_side) {
        alpha = model.moment_hi > 1e299 ? 1.5 : std::min(1.5, 0.5 * (model.moment_hi - 1.0));
    } else {
        alpha = -1.0 - (model.moment_lo < -1e299 ? 1.5 : std::min(1.5, 0.5 * (-model.moment_lo)));
    }
    if (!has_jumps) alpha = call_side ? 1.5 : -2.5;

    const double sd = model.sigma * std::sqrt(T);
    const double drift_t = (-0.5 * model.sigma * model.sigma - model.lambda * model.kappa()) * T;
    const bool split = opts.split_no_jump || !has_jumps;
    double closed = 0.0;
    if (split) {
        // Paths with no jump: lognormal with mean exp(-lambda kappa T).
        const double weight = has_jumps ? std::exp(-lt) : 1.0;
        closed = weight * black_unit(std::exp(drift_t + 0.5 * sd * sd), unit_strike, sd, call_side);
    }

    double integral = 0.0;
    if (has_jumps) {
        const auto measure_cf = [&](cplx u) -> cplx {
            const cplx diffusion = std::exp(I * u * drift_t - 0.5 * sd * sd * u * u);
            if (split) return diffusion * std::exp(-lt) * expm1c(lt * model.jump_cf(u));
            return diffusion * std::exp(lt * (model.jump_cf(u) - 1.0));
        };
        const auto integrand = [&](double v) {
            const cplx z(v, -(alpha + 1.0));
            const cplx denom = (alpha + I * v) * (alpha + 1.0 + I * v);
            return std::real(std::exp(-I * v * k) * measure_cf(z) / denom);
        };
        const double scale = std::sqrt(model.sigma * model.sigma * T + lt * model.jump_second_moment);
        double width = scale > 0.0 ? 1.0 / scale : 50.0;
        if (std::abs(k) > 1e-12) width = std::min(width, 0.5 * std::numbers::pi / std::abs(k));
        width = std::clamp(width, 0.05, 50.0);
        // The damped integrand has a peak of width ~dist near v = 0 when the
        // damping sits close to a pole.
        const double dist = std::min(std::abs(alpha), std::abs(alpha + 1.0));
        double panel = std::min(width, 2.0 * dist);
        const auto& gl = gauss_legendre();
        double a = 0.0;
        bool done = false;
        while (a < opts.max_frequency) {
            const double b = a + panel;
            double sum = 0.0;
            double peak = 0.0;
            for (int i = 0; i < 16; ++i) {
                const double v = 0.5 * (a + b) + 0.5 * (b - a) * gl.node[i];
                const double f = integrand(v);
                sum += gl.weight[i] * f;
                peak = std::max(peak, std::abs(f));
            }
            integral += 0.5 * (b - a) * sum;
            a = b;
            panel = std::min(width, 2.0 * panel);
            if (peak * b * std::exp(-alpha * k) / std::numbers::pi < opts.tail_tolerance) {
                done = true;
                break;
            }
        }
        if (!done) {
            throw NumericError("Fourier integrand tail above " + std::to_string(opts.tail_tolerance)
                               + " at frequency " + std::to_string(opts.max_frequency));
        }
        integral *= std::exp(-alpha * k) / std::numbers::pi;
    }

    double unit_price = closed + integral;
    // Parity for the in-the-money side.
    if (call_side != is_call) unit_price += is_call ? 1.0 - unit_strike : unit_strike - 1.0;
    return std::max(unit_price, 0.0) * std::exp(-rate * T) * forward;
}

double model_price(const ModelParams& model, double strike, double forward, double T, bool is_call,
                   const FourierOptions& opts) {
    const double rate = std::visit([](const auto& m) { return m.rate; }, model);
    return price_cf(make_jump_diffusion(model), strike, forward, rate, T, is_call, opts);
}

double merton_series_price(const MertonParams& p, double strike, double forward, double T, bool is_call) {
    p.validate();
    if (!(strike > 0.0) || !(forward > 0.0) || !(T > 0.0)) throw ParameterError("strike, forward, T must be positive");
    const double lt = p.lambda_s * T;
    const double disc = std::exp(-p.rate * T);
    if (lt == 0.0) return bs_price({forward, strike, p.rate, T, p.sigma, is_call});
    const double kappa = p.kappa();
    double total = 0.0;
    for (int n = 0; n < 100000; ++n) {
        const double log_w = -lt + n * std::log(lt) - std::lgamma(n + 1.0);
        const double w = std::exp(log_w);
        const double fwd_n = forward * std::exp(-lt * kappa + n * p.mu_s + 0.5 * n * p.sigma_s * p.sigma_s);
        const double sd_n = std::sqrt(p.sigma * p.sigma * T + n * p.sigma_s * p.sigma_s);
        const double term = w * disc * black_unit(fwd_n, strike, sd_n, is_call);
        total += term;
        if (n > lt && term < 1e-12 && w < 1e-12) break;
    }
    return total;
}

IvSurface model_iv_surface(const ModelParams& model, const std::vector<double>& strikes,
                           const std::vector<double>& maturities, double forward, double rate) {
    const auto n_t = static_cast<Eigen::Index>(maturities.size());
    const auto n_k = static_cast<Eigen::Index>(strikes.size());
    IvSurface out;
    out.iv = Eigen::MatrixXd::Constant(n_t, n_k, std::numeric_limits<double>::quiet_NaN());
    out.out_of_band = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n_t, n_k, false);
    const JumpDiffusion jd = make_jump_diffusion(model);
    parallel_for(static_cast<std::size_t>(n_t * n_k), [&](std::size_t idx) {
        const auto i = static_cast<Eigen::Index>(idx) / n_k;
        const auto j = static_cast<Eigen::Index>(idx) % n_k;
        const double K = strikes[j];
        const double T = maturities[i];
        const bool call = K >= forward;
        const double price = price_cf(jd, K, forward, rate, T, call);
        try {
            out.iv(i, j) = implied_vol(price, {forward, K, rate, T, 0.0, call});
        } catch (const OutOfBand&) {
            out.out_of_band(i, j) = true;
        }
    });
    out.n_flagged = static_cast<int>(out.out_of_band.count());
    return out;
}

ParamBounds default_bounds(ModelKind kind) {
    ParamBounds b;
    if (kind == ModelKind::Merton) {
        b.lower = Eigen::Vector4d(1e-4, 0.0, -3.0, 1e-4);
        b.upper = Eigen::Vector4d(3.0, 5.0, 3.0, 3.0);
    } else {
        b.lower.resize(5);
        b.upper.resize(5);
        b.lower << 1e-4, 0.0, 0.0, 0.05, 1.0001;
        b.upper << 3.0, 5.0, 1.0, 50.0, 50.0;
    }
    return b;
}

std::vector<std::string> parameter_names(ModelKind kind) {
    if (kind == ModelKind::Merton) return {"sigma", "lambda_s", "mu_s", "sigma_s"};
    return {"sigma", "lambda", "p_up", "eta1", "eta2"};
}

ModelParams params_from_vector(ModelKind kind, const Eigen::VectorXd& t, double rate, double div_yield) {
    if (kind == ModelKind::Merton) {
        if (t.size() != 4) throw ParameterError("Merton parameter vector must have 4 entries");
        return MertonParams{t[0], t[1], t[2], t[3], rate, div_yield};
    }
    if (t.size() != 5) throw ParameterError("Kou parameter vector must have 5 entries");
    return KouParams{t[0], t[1], t[2], t[3], t[4], rate, div_yield};
}

Eigen::VectorXd params_to_vector(const ModelParams& model) {
    if (const auto* m = std::get_if<MertonParams>(&model)) return Eigen::Vector4d(m->sigma, m->lambda_s, m->mu_s, m->sigma_s);
    if (const auto* k = std::get_if<KouParams>(&model)) {
        Eigen::VectorXd v(5);
        v << k->sigma, k->lambda, k->p_up, k->eta1, k->eta2;
        return v;
    }
    throw ParameterError("flat-vol model has no calibration vector");
}

namespace {

struct IvEval {
    Eigen::VectorXd residuals;
    int clamped = 0;
};

IvEval iv_residuals(ModelKind kind, const Eigen::VectorXd& theta, const std::vector<IvQuote>& quotes,
                    const CalibrationOptions& opts, double weight_total) {
    const ModelParams model = params_from_vector(kind, theta, opts.rate, opts.div_yield);
    const JumpDiffusion jd = make_jump_diffusion(model);
    IvEval out;
    out.residuals.resize(static_cast<Eigen::Index>(quotes.size()));
    constexpr VolBracket bracket{};
    for (std::size_t i = 0; i < quotes.size(); ++i) {
        const IvQuote& q = quotes[i];
        const bool call = q.strike >= q.forward;
        double iv;
        try {
            const double price = price_cf(jd, q.strike, q.forward, opts.rate, q.maturity, call);
            iv = implied_vol(price, {q.forward, q.strike, opts.rate, q.maturity, 0.0, call}, bracket);
        } catch (const OutOfBand& e) {
            // Continue the loss past the band edges so it stays continuous.
            iv = e.violated() == OutOfBand::Bound::Lower ? bracket.lo : bracket.hi;
            ++out.clamped;
        } catch (const Error&) {
            // extreme parameters (e.g. a vanishing compensated forward)
            iv = bracket.hi;
            ++out.clamped;
        }
        out.residuals[static_cast<Eigen::Index>(i)] = std::sqrt(q.weight / weight_total) * (iv - q.iv);
    }
    return out;
}

Eigen::VectorXd centre_guess(ModelKind kind) {
    if (kind == ModelKind::Merton) return Eigen::Vector4d(0.2, 0.5, -0.1, 0.2);
    Eigen::VectorXd v(5);
    v << 0.2, 0.5, 0.5, 5.0, 5.0;
    return v;
}

ParamBounds start_box(ModelKind kind) {
    ParamBounds b;
    if (kind == ModelKind::Merton) {
        b.lower = Eigen::Vector4d(0.05, 0.0, -1.0, 0.05);
        b.upper = Eigen::Vector4d(0.8, 2.0, 0.5, 0.8);
    } else {
        b.lower.resize(5);
        b.upper.resize(5);
        b.lower << 0.05, 0.0, 0.1, 1.0, 2.0;
        b.upper << 0.8, 2.0, 0.9, 20.0, 20.0;
    }
    return b;
}

}  // namespace

CalibrationResult calibrate(ModelKind kind, const std::vector<IvQuote>& quotes, const ParamBounds& bounds,
                            const CalibrationOptions& opts) {
    const auto n_params = static_cast<std::size_t>(kind == ModelKind::Merton ? 4 : 5);
    if (bounds.lower.size() != static_cast<Eigen::Index>(n_params) || bounds.upper.size() != bounds.lower.size()) {
        throw ParameterError("bounds have the wrong dimension for " + model_kind_name(kind));
    }
    if (!bounds.lower.allFinite() || !bounds.upper.allFinite() || (bounds.upper.array() < bounds.lower.array()).any()) {
        throw ParameterError("calibration bounds must be finite with lower <= upper");
    }
    if (quotes.size() < n_params) throw DataError("fewer quotes than parameters");
    if (opts.n_starts < 1) throw ParameterError("n_starts must be >= 1");
    double weight_total = 0.0;
    for (const auto& q : quotes) {
        if (!(q.weight >= 0.0) || !(q.iv > 0.0) || !(q.strike > 0.0) || !(q.forward > 0.0) || !(q.maturity > 0.0)) {
            throw DataError("invalid calibration quote");
        }
        weight_total += q.weight;
    }
    if (!(weight_total > 0.0)) throw DataError("calibration weights sum to zero");

    std::vector<Eigen::VectorXd> starts(static_cast<std::size_t>(opts.n_starts));
    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const ParamBounds box = start_box(kind);
    for (int s = 0; s < opts.n_starts; ++s) {
        Eigen::VectorXd x(static_cast<Eigen::Index>(n_params));
        if (s == 0) {
            x = centre_guess(kind);
        } else {
            for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = box.lower[j] + unif(rng) * (box.upper[j] - box.lower[j]);
        }
        starts[static_cast<std::size_t>(s)] = x.cwiseMax(bounds.lower).cwiseMin(bounds.upper);
    }

    std::vector<StartDiagnostics> diag(starts.size());
    parallel_for(starts.size(), [&](std::size_t s) {
        StartDiagnostics& d = diag[s];
        d.start = starts[s];
        try {
            const optim::Residuals res = [&](const Eigen::VectorXd& theta) {
                return iv_residuals(kind, theta, quotes, opts, weight_total).residuals;
            };
            optim::LmOptions lm;
            lm.max_iterations = opts.max_iterations;
            lm.gradient_tolerance = 1e-12;
            lm.step_tolerance = 1e-12;
            lm.cost_tolerance = 1e-20;
            const optim::LmResult r = optim::minimize_lm(res, starts[s], bounds.lower, bounds.upper, lm);
            d.end = r.x;
            d.mse = 2.0 * r.cost;
            d.gradient_norm = r.gradient_norm;
            d.iterations = r.iterations;
            // Gradient of the mse, not of the half sum of squares.
            d.converged = r.converged || 2.0 * r.gradient_norm <= 1e-5;
        } catch (const std::exception& e) {
            d.error = e.what();
            d.mse = std::numeric_limits<double>::infinity();
        }
    });

    std::size_t best = diag.size();
    for (std::size_t s = 0; s < diag.size(); ++s) {
        if (!diag[s].error.empty() || !std::isfinite(diag[s].mse)) continue;
        if (best == diag.size() || diag[s].mse < diag[best].mse) best = s;
    }
    if (best == diag.size()) {
        std::string msg = "all calibration starts failed:";
        for (std::size_t s = 0; s < diag.size(); ++s) msg += " [" + std::to_string(s) + "] " + diag[s].error;
        throw NumericError(msg);
    }
    CalibrationResult out;
    out.kind = kind;
    out.params = params_from_vector(kind, diag[best].end, opts.rate, opts.div_yield);
    out.mse = diag[best].mse;
    out.n_quotes = static_cast<int>(quotes.size());
    out.n_clamped = iv_residuals(kind, diag[best].end, quotes, opts, weight_total).clamped;
    out.converged = diag[best].converged;
    out.multistart_rank = static_cast<int>(best);
    out.starts = std::move(diag);
    return out;
}

std::string calibration_summary_json(const CalibrationResult& r) {
    nlohmann::ordered_json j;
    j["model"] = model_kind_name(r.kind);
    if (const auto* m = std::get_if<MertonParams>(&r.params)) {
        j["volatility"] = m->sigma;
        j["jump_intensity"] = m->lambda_s;
        j["mean_jump_magnitude"] = m->mu_s;
        j["sd_jump_magnitude"] = m->sigma_s;
    } else if (const auto* k = std::get_if<KouParams>(&r.params)) {
        j["volatility"] = k->sigma;
        j["jump_intensity"] = k->lambda;
        j["p"] = k->p_up;
        j["mean_downward_jump"] = -1.0 / k->eta1;
        j["mean_upward_jump"] = 1.0 / k->eta2;
        j["eta1"] = k->eta1;
        j["eta2"] = k->eta2;
    }
    j["mse"] = r.mse;
    j["n_quotes"] = r.n_quotes;
    j["n_clamped"] = r.n_clamped;
    j["converged"] = r.converged;
    j["multistart_rank"] = r.multistart_rank;
    nlohmann::ordered_json starts = nlohmann::ordered_json::array();
    for (const auto& s : r.starts) {
        nlohmann::ordered_json d;
        d["mse"] = std::isfinite(s.mse) ? nlohmann::ordered_json(s.mse) : nlohmann::ordered_json(nullptr);
        d["iterations"] = s.iterations;
        d["gradient_norm"] = s.gradient_norm;
        d["converged"] = s.converged;
        if (!s.error.empty()) d["error"] = s.error;
        starts.push_back(d);
    }
    j["starts"] = starts;
    return j.dump(2);
}

}  // namespace rndkit
