#pragma once

// Batch orchestration: run configuration, stage runner with manifests, and
// the CSV/JSON artifact formats shared with the command line tool.

#include "rndkit/jump_models.hpp"
#include "rndkit/kernel_ra.hpp"
#include "rndkit/panel_metrics.hpp"
#include "rndkit/physical_density.hpp"
#include "rndkit/quotes_io.hpp"
#include "rndkit/rnd_extract.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace rndkit {

inline constexpr const char* kVersion = "0.1.0";

struct RunConfig {
    std::filesystem::path quotes;
    std::filesystem::path exposures;  // optional, with fires
    std::filesystem::path fires;
    std::filesystem::path returns;    // ticker,date,log_return,market_return
    std::filesystem::path output_dir = "out";
    double threshold = 0.10;
    SnapshotMode snapshot = SnapshotMode::Latest;
    int n_steps = 500;
    double bandwidth_multiplier = 0.35;
    int grid_size = 100;
    std::size_t n_paths = 100000;
    std::uint64_t seed = 1;
    int maturity_bins = 10;
    int garch_lags = 1;
    Regime regime = Regime::Stationary;
    int foresight_window = 21;
    int n_starts = 10;
    std::size_t calibration_max_quotes = 400;
    std::map<std::string, ParamBounds> bounds;  // "merton", "kou"; defaults when absent
    int te_bins = 30;
    int threads = 0;  // 0: RND_THREADS or hardware

    /// Paths exist, grid_size >= 20 and so on. Throws ParameterError.
    void validate() const;
};

nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

/// SHA-256 of the canonical configuration, leaving out the fields that do
/// not affect results (output_dir, threads).
std::string config_hash(const RunConfig& cfg);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

enum class Stage { Ingest, Deamericanize, Repair, Rnd, Garch, Kernel, Calibrate, Panel };
const std::vector<Stage>& all_stages();
std::string stage_name(Stage s);
Stage parse_stage(const std::string& name);
std::vector<Stage> parse_stages(const std::string& comma_list);  // "all" or "a,b,c"

struct StageReport {
    Stage stage;
    nlohmann::json manifest;
    double wall_seconds = 0.0;
};

struct RunReport {
    std::vector<StageReport> stages;
    int exit_code = 0;
    std::string error;
};

/// Runs the stages in pipeline order. Each stage writes
/// <output_dir>/<stage>/..., then manifest.json (version, config hash, seed,
/// input and output hashes) and timing.json (wall time). Outputs are written
/// as <name>.partial and renamed when the stage succeeds, so a failed stage
/// leaves only .partial files. A stage whose input artifact is missing fails
/// with a DataError naming it. Library errors are caught and mapped to the
/// exit code; the report carries the message.
RunReport run_pipeline(const RunConfig& cfg, const std::vector<Stage>& stages);

// ---- artifact formats ----------------------------------------------------

struct DensityRecord {
    std::string ticker;
    Day date = 0;
    Day expiry = 0;
    DensityCurve curve;
    std::vector<double> cdf;
};

/// ticker,date,expiry,grid_k,moneyness,density,cdf,mass
void write_densities(std::ostream& out, const std::vector<DensityRecord>& records);
std::vector<DensityRecord> read_densities(std::istream& in, const std::string& source, DensityKind kind);

/// maturity,grid_k,density
void write_density_surface(std::ostream& out, const std::vector<DensityRecord>& records);

/// point,delta,ci_low,ci_high
void write_te_profile(std::ostream& out, const TEProfile& te);

/// ticker,date,expiry,grid_k,log_moneyness,kernel
struct KernelRecord {
    std::string ticker;
    Day date = 0;
    Day expiry = 0;
    PricingKernelCurve curve;
};
void write_kernel_curves(std::ostream& out, const std::vector<KernelRecord>& records);

/// ticker,date,log_return,market_return
std::map<std::string, ReturnSeries> read_returns(std::istream& in, const std::string& source);
void write_returns(std::ostream& out, const std::vector<ReturnSeries>& series);

/// Fire flags from treated_now; days absent from the calendar count as no
/// fire.
void attach_fire_flags(ReturnSeries& series, const std::vector<TreatmentCalendar>& calendar);

/// Cumulative trapezoid of a density, capped at 1.
std::vector<double> cumulative_mass(const std::vector<double>& grid, const std::vector<double>& density);

/// One row per quote with the Black implied vol of its European price, for
/// calibration and the smile regressions. Quotes whose price sits outside
/// the band are skipped.
struct IvRow {
    std::string ticker;
    Day date = 0;
    double rate = 0.0;
    IvQuote quote;
};
std::vector<IvRow> implied_vols(const std::vector<OptionQuote>& quotes);

/// American mid -> European mid; quotes outside the lattice range become
/// rejects (row = position in the input, 1-based).
struct DeamericanizeResult {
    std::vector<OptionQuote> quotes;
    std::vector<RejectRecord> rejects;
};
DeamericanizeResult deamericanize_quotes(const std::vector<OptionQuote>& quotes, int n_steps);

/// Merges quotes with the calendar into the smile-regression panel. Puts are
/// kept below the forward and calls at or above it.
std::vector<IvObs> iv_panel(const std::vector<IvRow>& rows, const std::vector<TreatmentCalendar>& calendar);

/// Moneyness-indexed density panel for the treatment-effect profiles.
std::vector<DensityObs> density_panel(const std::vector<DensityRecord>& rnd,
                                      const std::vector<TreatmentCalendar>& calendar);

/// Bundled synthetic fixture: American option quotes from jump-diffusion
/// surfaces (treated firm-days use the treatment model), exposures, fires
/// and GARCH-Wildfire return histories.
struct FixtureConfig {
    int n_firms = 6;
    int n_days = 10;
    int history_days = 1500;
    std::uint64_t seed = 7;
};
void write_fixture(const std::filesystem::path& dir, const FixtureConfig& cfg);

}  // namespace rndkit
