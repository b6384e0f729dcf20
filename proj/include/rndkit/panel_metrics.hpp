#pragma once

// Fixed-effects regressions with alternating-projection absorption and
// firm/date double-clustered covariance, plus the treatment-effect
// estimators built on them.

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace rndkit {

struct PanelObs {
    int firm = 0;
    int date = 0;
    double y = 0.0;
    std::vector<double> x;  // aligned with PanelData::names
    double weight = 1.0;
    int cell = 0;  // extra grouping, e.g. moneyness bin for firm x cell effects
    int extra = 0;  // third absorbed factor (maturity bin) when requested
};

struct PanelData {
    std::vector<std::string> names;
    std::vector<PanelObs> obs;
};

enum class Absorb {
    None,          // pooled OLS; an intercept column is added
    Firm,
    Date,
    FirmDate,
    FirmCellDate,  // firm x cell and date
    FirmDateExtra  // firm, date and the extra factor
};

struct FeOptions {
    double demean_tolerance = 1e-13;  // max |weighted group mean|, relative to column scale
    int max_sweeps = 20000;
    double collinearity_tolerance = 1e-10;
};

struct FEResult {
    std::vector<std::string> names;  // retained regressors
    Eigen::VectorXd coefs;
    Eigen::MatrixXd vcov;             // double-clustered by firm and date
    std::vector<std::string> dropped;  // collinear after absorption
    std::size_t n = 0;
    std::size_t n_firms = 0;
    std::size_t n_dates = 0;
    double r2_within = 0.0;
    bool vcov_floored = false;  // negative eigenvalues were set to 0
    int sweeps = 0;

    [[nodiscard]] std::optional<std::size_t> index(const std::string& name) const;
    [[nodiscard]] double coef(const std::string& name) const;  // NaN if dropped
    [[nodiscard]] double se(const std::string& name) const;

    // Kept for covariance work and the FWL checks.
    Eigen::MatrixXd xt;  // absorbed design, retained columns
    Eigen::VectorXd yt;
    Eigen::VectorXd resid;
    Eigen::VectorXd w;
    std::vector<int> firm;
    std::vector<int> date;
};

/// Weighted least squares of y on x after absorbing the requested effects.
/// Observations with zero weight are dropped first.
FEResult twoway_fe_fit(const PanelData& data, Absorb absorb, const FeOptions& opts = {});

/// Demeans each column of m within every factor in turn until the largest
/// weighted group mean is below tol * scale. Returns the sweeps used.
int absorb_factors(Eigen::MatrixXd& m, const Eigen::VectorXd& w, const std::vector<std::vector<int>>& factors,
                   double tol, int max_sweeps);

struct ClusterCov {
    Eigen::MatrixXd vcov;
    bool floored = false;
};

/// V = V_a + V_b - V_ab with sandwich terms (X'WX)^{-1} M (X'WX)^{-1},
/// M = sum_c s_c s_c', s_c = sum_{i in c} w_i x_i e_i, each term scaled by
/// C/(C-1) (N-1)/(N-K). K counts the columns of xt. Throws when a
/// dimension has a single cluster.
ClusterCov dcluster_cov(const Eigen::MatrixXd& xt, const Eigen::VectorXd& resid, const Eigen::VectorXd& w,
                        const std::vector<int>& cluster_a, const std::vector<int>& cluster_b);

/// One-way version of the same sandwich.
Eigen::MatrixXd cluster_cov(const Eigen::MatrixXd& xt, const Eigen::VectorXd& resid, const Eigen::VectorXd& w,
                            const std::vector<int>& cluster);

struct TEProfile {
    std::vector<double> points;  // bin centre or evaluation moneyness
    std::vector<double> delta;
    std::vector<double> se;
    std::vector<double> ci_low;
    std::vector<double> ci_high;
    std::vector<bool> flagged;  // merged bin, thin support or unidentified point
    std::vector<std::size_t> counts;
};

/// Long-format density panel row; density is per unit of moneyness.
struct DensityObs {
    int firm = 0;
    int date = 0;
    double moneyness = 0.0;
    double density = 0.0;
    bool treated = false;
};

enum class BinMode { Quantile, EqualWidth };

struct BinnedOptions {
    int n_bins = 30;
    BinMode mode = BinMode::Quantile;
    double lo = 0.1;  // moneyness window
    double hi = 1.8;
};

/// Per-bin treatment coefficients with firm x bin and date effects absorbed.
TEProfile rnd_te_binned(const std::vector<DensityObs>& panel, const BinnedOptions& opts = {});

/// Bin index per observation (quantile mode: sorted by moneyness, then firm,
/// then date; counts differ by at most one). -1 outside the window.
std::vector<int> moneyness_bins(const std::vector<DensityObs>& panel, const BinnedOptions& opts);

struct KernelTeOptions {
    std::vector<double> points;
    double bandwidth = 0.05;  // moneyness units
    double min_effective_n = 30.0;
};

/// Gaussian-kernel-weighted firm+date regression of density on the treated
/// flag at each evaluation moneyness.
TEProfile rnd_te_kernel(const std::vector<DensityObs>& panel, const KernelTeOptions& opts);

/// Total variation of a profile's delta.
double total_variation(const std::vector<double>& v);

struct IvObs {
    int firm = 0;
    int date = 0;
    double moneyness = 0.0;  // K / F
    double maturity = 0.0;   // years
    double iv = 0.0;
    bool is_call = true;
    bool treated_now = false;
    bool after_first = false;
    bool after_last = false;
};

enum class TreatFlag { TreatedNow, AfterFirst, AfterLast };

/// Four columns as in the usual smile table: no effects, firm, date, both.
struct SmileTable {
    FEResult none;
    FEResult firm;
    FEResult date;
    FEResult both;
};

/// IV on K/S, sqrt_T, sqrt_T_x_KS and their treated interactions, for the
/// calls (is_call) or puts in the panel.
SmileTable smile_regression(const std::vector<IvObs>& panel, bool is_call, TreatFlag flag = TreatFlag::TreatedNow);

/// Same design with after_first or after_last as the flag.
SmileTable permanent_effect_regression(const std::vector<IvObs>& panel, bool is_call, TreatFlag flag);

/// Maturity (in the units of sqrt_T squared) at which beta_tau + delta_tau
/// sqrt(T) = 0, when that root is positive.
std::optional<double> crossover_maturity(double beta_tau, double delta_tau);

struct FwlOptions {
    std::vector<double> moneyness_grid;
    std::vector<double> maturity_grid;
    double h_moneyness = 0.1;
    double h_maturity = 0.1;
    std::size_t min_group_obs = 1000;
    double min_effective_n = 20.0;
    bool global_linear = false;  // also residualize the regressors and fit one linear model
};

struct FwlSurface {
    std::vector<double> moneyness_grid;
    std::vector<double> maturity_grid;
    Eigen::MatrixXd g;        // control fit, rows moneyness, cols maturity
    Eigen::MatrixXd g_treated;
    Eigen::MatrixXd delta_g;  // treated - control
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> sparse;
    std::vector<double> residualized;  // IV orthogonal to firm and date effects
    // global_linear only: coefficients on KS, sqrt_T, treated, treated_x_KS, treated_x_sqrt_T
    std::vector<std::string> linear_names;
    Eigen::VectorXd linear_coefs;
};

/// Orthogonalizes IV on firm and date effects, then fits degree-2 local
/// polynomials in (K/S, T) separately for control and treated observations.
FwlSurface fwl_surface(const std::vector<IvObs>& panel, const FwlOptions& opts, TreatFlag flag = TreatFlag::TreatedNow);

}  // namespace rndkit
