#include "rndkit/error.hpp"
#include "rndkit/jump_models.hpp"
#include "rndkit/kernel_ra.hpp"
#include "rndkit/panel_metrics.hpp"
#include "rndkit/physical_density.hpp"
#include "rndkit/pipeline.hpp"
#include "rndkit/quotes_io.hpp"
#include "rndkit/rnd_extract.hpp"
#include "rndkit/surface_repair.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <functional>
#include <iostream>
#include <set>

using namespace rndkit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// "-" means stdout.
void emit(const std::string& path, const std::function<void(std::ostream&)>& body) {
    if (path.empty() || path == "-") {
        body(std::cout);
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    body(out);
}

void emit_json(const std::string& path, const json& j) {
    emit(path, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
}

template <class F>
auto read(const std::string& path, F&& parse) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path);
    return parse(in, path);
}

std::vector<TreatmentCalendar> read_calendar(const std::string& path) {
    if (path.empty()) return {};
    return read(path, [](std::istream& in, const std::string& s) { return parse_treatment(in, s); });
}

TreatFlag parse_flag(const std::string& s) {
    if (s == "treated_now") return TreatFlag::TreatedNow;
    if (s == "after_first") return TreatFlag::AfterFirst;
    if (s == "after_last") return TreatFlag::AfterLast;
    throw ParameterError("unknown treatment flag '" + s + "'");
}

json fe_json(const FEResult& r) {
    json coefs = json::object();
    for (std::size_t i = 0; i < r.names.size(); ++i) {
        coefs[r.names[i]] = {{"coef", r.coefs[static_cast<Eigen::Index>(i)]}, {"se", r.se(r.names[i])}};
    }
    return {{"coefficients", coefs}, {"dropped", r.dropped}, {"n", r.n}, {"r2_within", r.r2_within},
            {"vcov_floored", r.vcov_floored}};
}

json smile_json(const SmileTable& t) {
    return {{"none", fe_json(t.none)}, {"firm", fe_json(t.firm)}, {"date", fe_json(t.date)}, {"both", fe_json(t.both)}};
}

std::vector<IvObs> load_iv_panel(const std::string& quotes, const std::string& treatment) {
    const QuoteFile qf = load_quotes(quotes);
    return iv_panel(implied_vols(qf.quotes), read_calendar(treatment));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Option-implied densities, pricing kernels and panel treatment effects"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Load quotes, report rejects, compute treatment calendar");
    std::string in_quotes, in_exposures, in_fires, in_returns, out_dir = ".", snapshot = "latest";
    double threshold = 0.10;
    ingest->add_option("--quotes", in_quotes, "quotes CSV")->required();
    ingest->add_option("--exposures", in_exposures, "exposure CSV");
    ingest->add_option("--fires", in_fires, "fire events CSV");
    ingest->add_option("--returns", in_returns, "returns CSV; its dates join the calendar");
    ingest->add_option("--threshold", threshold, "treatment share threshold")->capture_default_str();
    ingest->add_option("--snapshot", snapshot, "latest|contemporaneous")->capture_default_str();
    ingest->add_option("--out-dir", out_dir, "directory for quotes.csv, rejects.csv, treatment.csv")->capture_default_str();

    // deamericanize
    auto* deam = app.add_subcommand("deamericanize", "American mids to European mids");
    std::string out_path = "-", rejects_path;
    int n_steps = 500;
    deam->add_option("--quotes", in_quotes)->required();
    deam->add_option("--out", out_path)->capture_default_str();
    deam->add_option("--rejects", rejects_path);
    deam->add_option("--steps", n_steps, "CRR steps")->capture_default_str();

    // repair
    auto* repair = app.add_subcommand("repair", "Project slices onto the no-arbitrage set");
    std::string gaps_path = "gaps.csv", treatment_path;
    repair->add_option("--quotes", in_quotes)->required();
    repair->add_option("--out", out_path)->capture_default_str();
    repair->add_option("--gaps", gaps_path)->capture_default_str();
    repair->add_option("--treatment", treatment_path, "treatment CSV to tag gaps");

    // rnd
    auto* rnd = app.add_subcommand("rnd", "Risk-neutral densities per slice");
    int grid = 100;
    double bw_mult = 0.35, bandwidth = 0.0;
    std::string surface_path;
    rnd->add_option("--quotes", in_quotes)->required();
    rnd->add_option("--out", out_path)->capture_default_str();
    rnd->add_option("--grid", grid)->capture_default_str()->check(CLI::Range(20, 100000));
    rnd->add_option("--bw-mult", bw_mult)->capture_default_str();
    rnd->add_option("--bandwidth", bandwidth, "explicit bandwidth in strike units");
    rnd->add_option("--surface", surface_path, "also write maturity,grid_k,density");

    // garch
    auto* garch = app.add_subcommand("garch", "GARCH-Wildfire fit and forecast");
    garch->require_subcommand(1);
    auto* gfit = garch->add_subcommand("fit", "Fit market then stock equations for one ticker");
    std::string ticker, regime = "stationary", event;
    int lags = 1, window = 21;
    gfit->add_option("--returns", in_returns)->required();
    gfit->add_option("--ticker", ticker)->required();
    gfit->add_option("--treatment", treatment_path, "fire flags from treated_now");
    gfit->add_option("--lags", lags)->capture_default_str();
    gfit->add_option("--regime", regime, "myopic|foresight|stationary")->capture_default_str();
    gfit->add_option("--event", event, "event date for myopic/foresight samples");
    gfit->add_option("--window", window, "foresight window in days")->capture_default_str();
    gfit->add_option("--out", out_path)->capture_default_str();

    auto* gfc = garch->add_subcommand("forecast", "Physical density on a strike grid");
    std::string params_path, date_text, expiry_text;
    double price = 0.0, forward = 0.0, hazard = -1.0, grid_lo = 0.0, grid_hi = 0.0;
    int horizon = 21;
    std::size_t n_paths = 100000;
    std::uint64_t seed = 1;
    gfc->add_option("--params", params_path, "JSON from garch fit")->required();
    gfc->add_option("--returns", in_returns)->required();
    gfc->add_option("--ticker", ticker)->required();
    gfc->add_option("--treatment", treatment_path, "fire flags and hazard");
    gfc->add_option("--price", price, "current price")->required();
    gfc->add_option("--forward", forward, "forward for the moneyness column (default: price)");
    gfc->add_option("--horizon", horizon, "trading days")->capture_default_str();
    gfc->add_option("--paths", n_paths)->capture_default_str();
    gfc->add_option("--seed", seed)->capture_default_str();
    gfc->add_option("--hazard", hazard, "daily fire probability (default: from treatment, else 0)");
    gfc->add_option("--grid-lo", grid_lo)->required();
    gfc->add_option("--grid-hi", grid_hi)->required();
    gfc->add_option("--grid", grid)->capture_default_str();
    gfc->add_option("--date", date_text, "quote date for the output rows");
    gfc->add_option("--expiry", expiry_text, "expiry for the output rows");
    gfc->add_option("--out", out_path)->capture_default_str();

    // kernel
    auto* kernel = app.add_subcommand("kernel", "Pricing kernel and gamma_w from density pairs");
    std::string rnd_path, phys_path, curves_path;
    double rate = 0.0, exposure = 0.0;
    int bins = 10;
    kernel->add_option("--rnd", rnd_path)->required();
    kernel->add_option("--phys", phys_path)->required();
    kernel->add_option("--rate", rate)->capture_default_str();
    kernel->add_option("--bins", bins, "maturity bins for the pooled fit")->capture_default_str();
    kernel->add_option("--exposure", exposure, "effective wildfire exposure for gamma");
    kernel->add_option("--curves", curves_path, "ticker,date,expiry,grid_k,log_moneyness,kernel");
    kernel->add_option("--out", out_path)->capture_default_str();

    // prop1-verify
    auto* prop1 = app.add_subcommand("prop1-verify", "Monte Carlo slope of log pricing kernel on log wildfire price");
    Prop1Config pc;
    prop1->add_option("--gamma", pc.gamma)->capture_default_str();
    prop1->add_option("--q", pc.q)->capture_default_str();
    prop1->add_option("--q-w", pc.q_w)->capture_default_str();
    prop1->add_option("--beta", pc.beta)->capture_default_str();
    prop1->add_option("--sigma", pc.sigma)->capture_default_str();
    prop1->add_option("--sigma-w", pc.sigma_w)->capture_default_str();
    prop1->add_option("--mu", pc.mu)->capture_default_str();
    prop1->add_option("--alpha", pc.alpha)->capture_default_str();
    prop1->add_option("--r", pc.r)->capture_default_str();
    prop1->add_option("--maturity", pc.maturity)->capture_default_str();
    prop1->add_option("--paths", pc.n_paths)->capture_default_str();
    prop1->add_option("--seed", pc.seed)->capture_default_str();
    prop1->add_option("--out", out_path)->capture_default_str();

    // calibrate
    auto* calib = app.add_subcommand("calibrate", "Jump-diffusion calibration on implied vols");
    std::string model = "merton", group = "control";
    int n_starts = 10;
    std::size_t max_quotes = 0;
    calib->add_option("--model", model, "merton|kou")->capture_default_str();
    calib->add_option("--group", group, "control|treatment|all")->capture_default_str();
    calib->add_option("--quotes", in_quotes, "European quotes")->required();
    calib->add_option("--treatment", treatment_path, "required unless --group all");
    calib->add_option("--starts", n_starts)->capture_default_str();
    calib->add_option("--seed", seed)->capture_default_str();
    calib->add_option("--max-quotes", max_quotes, "thin to at most this many quotes (0: all)");
    calib->add_option("--out", out_path)->capture_default_str();

    // panel
    auto* panel = app.add_subcommand("panel", "Panel treatment-effect estimators");
    panel->require_subcommand(1);
    std::string flag_text = "treated_now", te_csv, densities_path, mode = "quantile";
    bool puts = false;
    double kernel_bw = 0.0;
    auto* smile = panel->add_subcommand("smile", "IV smile regression with treated interactions");
    smile->add_option("--quotes", in_quotes)->required();
    smile->add_option("--treatment", treatment_path)->required();
    smile->add_flag("--puts", puts, "puts (K < F) instead of calls");
    smile->add_option("--flag", flag_text)->capture_default_str();
    smile->add_option("--out", out_path)->capture_default_str();
    auto* perm = panel->add_subcommand("permanent", "Smile regression on after_first or after_last");
    perm->add_option("--quotes", in_quotes)->required();
    perm->add_option("--treatment", treatment_path)->required();
    perm->add_flag("--puts", puts);
    perm->add_option("--flag", flag_text, "after_first|after_last");
    perm->add_option("--out", out_path)->capture_default_str();
    auto* te = panel->add_subcommand("rnd-te", "Treatment effect on the density across moneyness");
    int te_bins = 30;
    te->add_option("--densities", densities_path)->required();
    te->add_option("--treatment", treatment_path)->required();
    te->add_option("--bins", te_bins)->capture_default_str();
    te->add_option("--mode", mode, "quantile|equal")->capture_default_str();
    te->add_option("--kernel-bw", kernel_bw, "use the kernel estimator with this moneyness bandwidth");
    te->add_option("--csv", te_csv, "point,delta,ci_low,ci_high");
    te->add_option("--out", out_path)->capture_default_str();
    auto* fwl = panel->add_subcommand("fwl", "Residualized local-polynomial IV surfaces");
    FwlOptions fo;
    fwl->add_option("--quotes", in_quotes)->required();
    fwl->add_option("--treatment", treatment_path)->required();
    fwl->add_option("--flag", flag_text)->capture_default_str();
    fwl->add_option("--h-moneyness", fo.h_moneyness)->capture_default_str();
    fwl->add_option("--h-maturity", fo.h_maturity)->capture_default_str();
    fwl->add_option("--min-group-obs", fo.min_group_obs)->capture_default_str();
    fwl->add_option("--out", out_path)->capture_default_str();

    // run / config / synth
    auto* run = app.add_subcommand("run", "Run pipeline stages from a config file");
    std::string config_path, stages = "all";
    run->add_option("--config", config_path)->required();
    run->add_option("--stages", stages, "comma list or all")->capture_default_str();
    auto* config = app.add_subcommand("config", "Configuration helpers");
    config->require_subcommand(1);
    auto* defaults = config->add_subcommand("print-defaults", "Print the default run configuration");
    auto* synth = app.add_subcommand("synth", "Write the synthetic fixture (quotes, exposures, fires, returns, config)");
    FixtureConfig fx;
    synth->add_option("--out-dir", out_dir)->required();
    synth->add_option("--firms", fx.n_firms)->capture_default_str();
    synth->add_option("--days", fx.n_days)->capture_default_str();
    synth->add_option("--history", fx.history_days)->capture_default_str();
    synth->add_option("--seed", fx.seed)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*ingest) {
            const QuoteFile qf = load_quotes(in_quotes);
            fs::create_directories(out_dir);
            emit((fs::path(out_dir) / "quotes.csv").string(), [&](std::ostream& o) { write_quotes(o, qf.quotes); });
            emit((fs::path(out_dir) / "rejects.csv").string(), [&](std::ostream& o) { write_rejects(o, qf.rejects); });
            if (in_exposures.empty() != in_fires.empty()) throw ParameterError("--exposures and --fires go together");
            if (!in_exposures.empty()) {
                std::set<Day> days;
                for (const auto& q : qf.quotes) days.insert(q.quote_date);
                if (!in_returns.empty()) {
                    for (const auto& [t, s] : read(in_returns, read_returns)) days.insert(s.dates.begin(), s.dates.end());
                }
                const TreatmentResult tr = compute_treatment(load_exposures(in_exposures), load_fires(in_fires),
                                                             {days.begin(), days.end()},
                                                             {threshold, parse_snapshot_mode(snapshot)});
                emit((fs::path(out_dir) / "treatment.csv").string(), [&](std::ostream& o) { write_treatment(o, tr.rows); });
                if (tr.unknown_zip_fires > 0) std::cerr << "warning: " << tr.unknown_zip_fires << " fires in unknown zips\n";
            }
            std::cerr << qf.quotes.size() << " quotes, " << qf.rejects.size() << " rejects\n";
        } else if (*deam) {
            const DeamericanizeResult r = deamericanize_quotes(load_quotes(in_quotes).quotes, n_steps);
            emit(out_path, [&](std::ostream& o) { write_quotes(o, r.quotes); });
            if (!rejects_path.empty()) emit(rejects_path, [&](std::ostream& o) { write_rejects(o, r.rejects); });
            std::cerr << r.quotes.size() << " converted, " << r.rejects.size() << " rejected\n";
        } else if (*repair) {
            const auto slices = build_slices(load_quotes(in_quotes).quotes);
            std::vector<RepairedSlice> repaired;
            std::vector<SurfaceSlice> out;
            for (const auto& s : slices) {
                repaired.push_back(repair_slice(s));
                out.push_back(repaired.back().slice);
            }
            emit(out_path, [&](std::ostream& o) { write_quotes(o, slices_to_quotes(out)); });
            emit(gaps_path, [&](std::ostream& o) { write_gaps(o, arbitrage_gap_panel(repaired, read_calendar(treatment_path))); });
        } else if (*rnd) {
            BandwidthSpec bw;
            bw.multiplier = bw_mult;
            if (bandwidth > 0.0) bw.value = bandwidth;
            std::vector<DensityRecord> records;
            for (const auto& s : build_slices(load_quotes(in_quotes).quotes)) {
                DensityRecord r{s.ticker, s.quote_date, s.expiry, extract_rnd(s, bw, grid), {}};
                r.cdf = rnd_cdf(s, r.curve.grid, bw).values;
                records.push_back(std::move(r));
            }
            emit(out_path, [&](std::ostream& o) { write_densities(o, records); });
            if (!surface_path.empty()) emit(surface_path, [&](std::ostream& o) { write_density_surface(o, records); });
        } else if (*gfit) {
            auto all = read(in_returns, read_returns);
            if (!all.count(ticker)) throw DataError("no returns for ticker " + ticker);
            ReturnSeries s = all.at(ticker);
            attach_fire_flags(s, read_calendar(treatment_path));
            const Regime rg = parse_regime(regime);
            if (rg != Regime::Stationary) {
                if (event.empty()) throw ParameterError("--event is required for regime " + regime);
                s = regime_sample(s, rg, parse_iso_date(event), window);
            }
            const MarketGarchFit mf = fit_market_garch(s.market_returns);
            const GarchWildfireFit sf = fit_garch_wildfire(s, mf.params, lags);
            emit_json(out_path, {{"ticker", ticker}, {"regime", regime}, {"observations", s.size()},
                                 {"market", fit_to_json(mf)}, {"stock", fit_to_json(sf)}});
        } else if (*gfc) {
            const json p = read(params_path, [](std::istream& in, const std::string&) { return json::parse(in); });
            const auto market = p.at("market").at("params").get<MarketGarchParams>();
            const auto stock = p.at("stock").at("params").get<GarchWildfireParams>();
            auto all = read(in_returns, read_returns);
            if (!all.count(ticker)) throw DataError("no returns for ticker " + ticker);
            ReturnSeries s = all.at(ticker);
            const auto calendar = read_calendar(treatment_path);
            attach_fire_flags(s, calendar);
            ForecastConfig fc;
            fc.horizon_days = horizon;
            fc.n_paths = n_paths;
            fc.seed = seed;
            if (hazard >= 0.0) {
                fc.hazard = hazard;
            } else if (!calendar.empty()) {
                const Hazard h = wildfire_hazard(calendar, ticker);
                fc.hazard = h.degenerate ? 0.0 : h.probability;
            }
            const ForecastState st = forecast_state(s, market, stock, price);
            DensityRecord r;
            r.ticker = ticker;
            r.date = date_text.empty() ? s.dates.back() : parse_iso_date(date_text);
            r.expiry = expiry_text.empty() ? r.date + static_cast<Day>(std::lround(horizon * 365.0 / kTradingDaysPerYear))
                                           : parse_iso_date(expiry_text);
            r.curve = forecast_density(market, stock, st, fc, equal_grid(grid_lo, grid_hi, grid));
            r.curve.forward = forward > 0.0 ? forward : price;
            emit(out_path, [&](std::ostream& o) { write_densities(o, {r}); });
        } else if (*kernel) {
            const auto rn = read(rnd_path, [](std::istream& in, const std::string& s) {
                return read_densities(in, s, DensityKind::RiskNeutral);
            });
            const auto ph = read(phys_path, [](std::istream& in, const std::string& s) {
                return read_densities(in, s, DensityKind::Physical);
            });
            std::map<std::tuple<std::string, Day, Day>, const DensityRecord*> by_key;
            for (const auto& r : ph) by_key[{r.ticker, r.date, r.expiry}] = &r;
            std::map<std::string, int> firms;
            std::vector<KernelRecord> curves;
            std::vector<KernelObs> obs;
            json slices = json::array();
            for (const auto& r : rn) {
                const auto it = by_key.find({r.ticker, r.date, r.expiry});
                if (it == by_key.end()) continue;
                KernelRecord k{r.ticker, r.date, r.expiry, pricing_kernel(r.curve, it->second->curve, rate, r.curve.maturity)};
                const RiskAversionEstimate e = estimate_gamma_w(k.curve);
                json row{{"ticker", r.ticker}, {"date", format_iso_date(r.date)}, {"expiry", format_iso_date(r.expiry)},
                         {"gamma_w", e.gamma_w}, {"se", e.se}, {"t_stat", e.t_stat}, {"puzzle", e.puzzle},
                         {"n_points", e.n_points}};
                if (exposure != 0.0) row["gamma"] = gamma_from_gamma_w(e.gamma_w, exposure);
                slices.push_back(row);
                firms.emplace(r.ticker, static_cast<int>(firms.size()));
                obs.push_back({firms.at(r.ticker), r.date, k.curve});
                curves.push_back(std::move(k));
            }
            if (curves.empty()) throw DataError("no matching (ticker, date, expiry) between the density files");
            json result{{"slices", slices}};
            try {
                const RiskAversionEstimate p = estimate_gamma_w(obs, bins);
                result["pooled"] = {{"gamma_w", p.gamma_w}, {"se", p.se}, {"t_stat", p.t_stat}, {"n_points", p.n_points}};
                if (exposure != 0.0) result["pooled"]["gamma"] = gamma_from_gamma_w(p.gamma_w, exposure);
            } catch (const NumericError& e) {
                result["pooled"] = {{"error", e.what()}};
            }
            if (!curves_path.empty()) emit(curves_path, [&](std::ostream& o) { write_kernel_curves(o, curves); });
            emit_json(out_path, result);
        } else if (*prop1) {
            const Prop1Report r = verify_prop1_mc(pc);
            emit_json(out_path, {{"slope", r.slope}, {"se", r.se}, {"ci_low", r.ci_low}, {"ci_high", r.ci_high},
                                 {"closed_form", r.closed_form}, {"projection", r.projection}, {"rho", r.rho},
                                 {"n_paths", r.n_paths}});
        } else if (*calib) {
            const ModelKind kind = parse_model_kind(model);
            if (group != "control" && group != "treatment" && group != "all") throw ParameterError("unknown group '" + group + "'");
            if (group != "all" && treatment_path.empty()) throw ParameterError("--treatment is required for --group " + group);
            const QuoteFile qf = load_quotes(in_quotes);
            const auto rows = implied_vols(qf.quotes);
            const auto panel_rows = iv_panel(rows, read_calendar(treatment_path));
            std::vector<IvQuote> quotes;
            double rate_sum = 0.0;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const bool treated = panel_rows[i].treated_now;
                if (group == "all" || (group == "treatment") == treated) {
                    quotes.push_back(rows[i].quote);
                    rate_sum += rows[i].rate;
                }
            }
            if (quotes.empty()) throw DataError("no quotes in group " + group);
            const double mean_rate = rate_sum / static_cast<double>(quotes.size());
            if (max_quotes > 0 && quotes.size() > max_quotes) {
                std::vector<IvQuote> thin;
                for (std::size_t k = 0; k < max_quotes; ++k) thin.push_back(quotes[k * quotes.size() / max_quotes]);
                quotes = std::move(thin);
            }
            CalibrationOptions co;
            co.n_starts = n_starts;
            co.seed = seed;
            co.rate = mean_rate;
            const CalibrationResult res = calibrate(kind, quotes, default_bounds(kind), co);
            emit(out_path, [&](std::ostream& o) { o << calibration_summary_json(res) << '\n'; });
        } else if (*smile || *perm) {
            const auto p = load_iv_panel(in_quotes, treatment_path);
            if (*smile) {
                emit_json(out_path, smile_json(smile_regression(p, !puts, parse_flag(flag_text))));
            } else {
                const std::string f = flag_text == "treated_now" ? "after_first" : flag_text;
                emit_json(out_path, smile_json(permanent_effect_regression(p, !puts, parse_flag(f))));
            }
        } else if (*te) {
            const auto dens = read(densities_path, [](std::istream& in, const std::string& s) {
                return read_densities(in, s, DensityKind::RiskNeutral);
            });
            const auto obs = density_panel(dens, read_calendar(treatment_path));
            TEProfile prof;
            if (kernel_bw > 0.0) {
                KernelTeOptions ko;
                ko.bandwidth = kernel_bw;
                for (int i = 0; i < te_bins; ++i) ko.points.push_back(0.1 + 1.7 * (i + 0.5) / te_bins);
                prof = rnd_te_kernel(obs, ko);
            } else {
                BinnedOptions bo;
                bo.n_bins = te_bins;
                if (mode == "equal") bo.mode = BinMode::EqualWidth;
                else if (mode != "quantile") throw ParameterError("unknown bin mode '" + mode + "'");
                prof = rnd_te_binned(obs, bo);
            }
            if (!te_csv.empty()) emit(te_csv, [&](std::ostream& o) { write_te_profile(o, prof); });
            json rows = json::array();
            for (std::size_t i = 0; i < prof.points.size(); ++i) {
                rows.push_back({{"point", prof.points[i]}, {"delta", prof.delta[i]}, {"se", prof.se[i]},
                                {"ci_low", prof.ci_low[i]}, {"ci_high", prof.ci_high[i]},
                                {"flagged", static_cast<bool>(prof.flagged[i])}, {"count", prof.counts[i]}});
            }
            emit_json(out_path, {{"profile", rows}, {"total_variation", total_variation(prof.delta)}});
        } else if (*fwl) {
            const auto p = load_iv_panel(in_quotes, treatment_path);
            for (int i = 0; i <= 16; ++i) fo.moneyness_grid.push_back(0.6 + 0.05 * i);
            for (int i = 0; i <= 8; ++i) fo.maturity_grid.push_back(0.05 + 0.05 * i);
            const FwlSurface s = fwl_surface(p, fo, parse_flag(flag_text));
            json cells = json::array();
            for (Eigen::Index a = 0; a < s.delta_g.rows(); ++a) {
                for (Eigen::Index b = 0; b < s.delta_g.cols(); ++b) {
                    cells.push_back({{"moneyness", s.moneyness_grid[a]}, {"maturity", s.maturity_grid[b]},
                                     {"g", s.g(a, b)}, {"g_treated", s.g_treated(a, b)},
                                     {"delta_g", s.delta_g(a, b)}, {"sparse", static_cast<bool>(s.sparse(a, b))}});
                }
            }
            emit_json(out_path, {{"surface", cells}});
        } else if (*run) {
            const RunConfig cfg = load_config(config_path);
            const RunReport rep = run_pipeline(cfg, parse_stages(stages));
            for (const auto& s : rep.stages) {
                std::cout << stage_name(s.stage) << " ok " << s.wall_seconds << "s " << s.manifest.at("outputs").size()
                          << " outputs\n";
            }
            if (rep.exit_code != 0) {
                std::cerr << "error: " << rep.error << '\n';
                return rep.exit_code;
            }
        } else if (*defaults) {
            RunConfig cfg;
            cfg.quotes = "quotes.csv";
            std::cout << config_to_json(cfg).dump(2) << '\n';
        } else if (*synth) {
            write_fixture(out_dir, fx);
            std::cerr << "fixture written to " << out_dir << '\n';
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    }
    return 0;
}
