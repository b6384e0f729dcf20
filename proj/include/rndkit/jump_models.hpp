#pragma once

// Merton and Kou jump-diffusions: characteristic functions, Fourier pricing,
// model implied-volatility surfaces and least-squares calibration.

#include <complex>
#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace rndkit {

using cplx = std::complex<double>;

struct MertonParams {
    double sigma = 0.2;
    double lambda_s = 0.0;  // jumps per year
    double mu_s = 0.0;      // mean log-jump
    double sigma_s = 0.0;   // sd of log-jump
    double rate = 0.0;
    double div_yield = 0.0;

    void validate() const;
    /// E[e^Y] - 1
    [[nodiscard]] double kappa() const;
};

/// Down-jumps have rate eta1 (mean -1/eta1), up-jumps rate eta2 (mean 1/eta2).
struct KouParams {
    double sigma = 0.2;
    double lambda = 0.0;
    double p_up = 0.5;
    double eta1 = 10.0;
    double eta2 = 10.0;
    double rate = 0.0;
    double div_yield = 0.0;

    void validate() const;
    /// Compensator p eta2/(eta2-1) + (1-p) eta1/(eta1+1) - 1.
    [[nodiscard]] double zeta() const;
};

struct FlatVol {
    double sigma = 0.2;
    double rate = 0.0;
    double div_yield = 0.0;
};

using ModelParams = std::variant<FlatVol, MertonParams, KouParams>;

enum class ModelKind { Merton, Kou };
std::string model_kind_name(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// CF of log(S_T/S_0) under the pricing measure, drift r - q - lambda kappa - sigma^2/2.
cplx merton_cf(cplx u, const MertonParams& p, double T);
cplx kou_cf(cplx u, const KouParams& p, double T);

/// Jump-diffusion in the form consumed by the Fourier pricer: diffusion vol,
/// jump intensity and the CF of a single log-jump. The log-jump must have
/// finite exponential moments on (moment_lo, moment_hi).
struct JumpDiffusion {
    double sigma = 0.0;
    double lambda = 0.0;
    std::function<cplx(cplx)> jump_cf;  // E[exp(i u Y)]
    double moment_lo = -1e300;
    double moment_hi = 1e300;
    double jump_second_moment = 0.0;  // E[Y^2]

    [[nodiscard]] double kappa() const;
    /// CF of log(S_T / F_T) (martingale normalised).
    [[nodiscard]] cplx forward_cf(cplx u, double T) const;
};

JumpDiffusion make_jump_diffusion(const ModelParams& model);

struct FourierOptions {
    /// Price the jump-free part in closed form and invert only the rest.
    bool split_no_jump = true;
    double tail_tolerance = 1e-10;
    double max_frequency = 1e6;
};

/// European option by Carr-Madan damped Fourier inversion with adaptive
/// Gauss-Legendre panels. Out-of-the-money side is inverted (call damping
/// up to 1.5, put damping mirrored), the other side follows by parity.
/// Throws NumericError when the integrand tail does not fall below the
/// tolerance before max_frequency.
double price_cf(const JumpDiffusion& model, double strike, double forward, double rate, double T, bool is_call,
                const FourierOptions& opts = {});

/// Convenience overload: forward of the model at T from spot.
double model_price(const ModelParams& model, double strike, double forward, double T, bool is_call,
                   const FourierOptions& opts = {});

/// Poisson mixture of Black prices, truncated once terms drop below 1e-12
/// after the Poisson mode. Discounts at params.rate.
double merton_series_price(const MertonParams& p, double strike, double forward, double T, bool is_call = true);

struct IvSurface {
    Eigen::MatrixXd iv;  // maturities x strikes, NaN where flagged
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> out_of_band;
    int n_flagged = 0;
};

/// Model implied vols on a strikes x maturities grid for a common forward.
IvSurface model_iv_surface(const ModelParams& model, const std::vector<double>& strikes,
                           const std::vector<double>& maturities, double forward, double rate);

struct IvQuote {
    double strike = 0.0;
    double maturity = 0.0;
    double forward = 0.0;
    double iv = 0.0;
    double weight = 1.0;
    bool is_call = true;
};

struct ParamBounds {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
};

/// Merton: (sigma, lambda, mu_s, sigma_s). Kou: (sigma, lambda, p, eta1, eta2).
ParamBounds default_bounds(ModelKind kind);
std::vector<std::string> parameter_names(ModelKind kind);
ModelParams params_from_vector(ModelKind kind, const Eigen::VectorXd& theta, double rate, double div_yield);
Eigen::VectorXd params_to_vector(const ModelParams& model);

struct StartDiagnostics {
    Eigen::VectorXd start;
    Eigen::VectorXd end;
    double mse = 0.0;
    double gradient_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    std::string error;
};

struct CalibrationResult {
    ModelKind kind = ModelKind::Merton;
    ModelParams params;
    double mse = 0.0;
    int n_quotes = 0;
    int n_clamped = 0;  // quotes whose model price left the IV band at the optimum
    bool converged = false;
    int multistart_rank = 0;  // index of the winning start
    std::vector<StartDiagnostics> starts;
};

struct CalibrationOptions {
    int n_starts = 10;
    std::uint64_t seed = 1;
    double rate = 0.0;
    double div_yield = 0.0;
    int max_iterations = 200;
};

/// Weighted least squares on implied vols, multistart box-constrained
/// Levenberg-Marquardt. Start 0 is the centre guess, the rest are uniform
/// draws in the bounds.
CalibrationResult calibrate(ModelKind kind, const std::vector<IvQuote>& quotes, const ParamBounds& bounds,
                            const CalibrationOptions& opts);

/// Table-style JSON summary (volatility, jump intensity, jump moments, MSE).
std::string calibration_summary_json(const CalibrationResult& result);

}  // namespace rndkit
