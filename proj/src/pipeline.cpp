#include "rndkit/pipeline.hpp"

#include "rndkit/csv.hpp"
#include "rndkit/error.hpp"
#include "rndkit/parallel.hpp"
#include "rndkit/pricing_core.hpp"
#include "rndkit/stats.hpp"
#include "rndkit/surface_repair.hpp"
#include "rndkit/synth.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <tuple>

namespace rndkit {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- hashing -------------------------------------------------------------

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw NumericError("SHA-256 failed");
    }
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return out.str();
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return sha256_hex(buf.str());
}

// ---- configuration -------------------------------------------------------

namespace {

json bounds_json(const ParamBounds& b) {
    return {{"lower", std::vector<double>(b.lower.data(), b.lower.data() + b.lower.size())},
            {"upper", std::vector<double>(b.upper.data(), b.upper.data() + b.upper.size())}};
}

ParamBounds bounds_from(const json& j) {
    const auto lo = j.at("lower").get<std::vector<double>>();
    const auto hi = j.at("upper").get<std::vector<double>>();
    ParamBounds b;
    b.lower = Eigen::Map<const Eigen::VectorXd>(lo.data(), static_cast<Eigen::Index>(lo.size()));
    b.upper = Eigen::Map<const Eigen::VectorXd>(hi.data(), static_cast<Eigen::Index>(hi.size()));
    return b;
}

ParamBounds bounds_for(const RunConfig& cfg, ModelKind kind) {
    const auto it = cfg.bounds.find(model_kind_name(kind));
    return it == cfg.bounds.end() ? default_bounds(kind) : it->second;
}

}  // namespace

void RunConfig::validate() const {
    const auto need = [](const fs::path& p, const char* what) {
        if (p.empty()) throw ParameterError(std::string("config: ") + what + " path is required");
        if (!fs::exists(p)) throw ParameterError(std::string("config: ") + what + " not found: " + p.string());
    };
    need(quotes, "quotes");
    if (exposures.empty() != fires.empty()) throw ParameterError("config: exposures and fires go together");
    if (!exposures.empty()) {
        need(exposures, "exposures");
        need(fires, "fires");
    }
    if (!returns.empty()) need(returns, "returns");
    if (output_dir.empty()) throw ParameterError("config: output_dir is required");
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ParameterError("config: threshold must be in (0, 1]");
    if (n_steps < 10) throw ParameterError("config: n_steps must be >= 10");
    if (!(bandwidth_multiplier > 0.0)) throw ParameterError("config: bandwidth_multiplier must be positive");
    if (grid_size < 20) throw ParameterError("config: grid_size must be >= 20");
    if (n_paths < 10000) throw ParameterError("config: n_paths must be >= 10000");
    if (maturity_bins < 1) throw ParameterError("config: maturity_bins must be >= 1");
    if (garch_lags < 1) throw ParameterError("config: garch_lags must be >= 1");
    if (foresight_window < 1) throw ParameterError("config: foresight_window must be >= 1");
    if (n_starts < 1) throw ParameterError("config: n_starts must be >= 1");
    if (calibration_max_quotes < 10) throw ParameterError("config: calibration_max_quotes must be >= 10");
    if (te_bins < 2) throw ParameterError("config: te_bins must be >= 2");
    if (threads < 0) throw ParameterError("config: threads must be >= 0");
    for (const auto& [name, b] : bounds) {
        const auto n = static_cast<Eigen::Index>(parameter_names(parse_model_kind(name)).size());
        if (b.lower.size() != n || b.upper.size() != n) throw ParameterError("config: bounds for " + name + " need " + std::to_string(n) + " entries");
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!(b.lower[i] < b.upper[i])) throw ParameterError("config: empty bound interval for " + name);
        }
    }
}

json config_to_json(const RunConfig& cfg) {
    json bounds = json::object();
    for (ModelKind k : {ModelKind::Merton, ModelKind::Kou}) bounds[model_kind_name(k)] = bounds_json(bounds_for(cfg, k));
    return {
        {"quotes", cfg.quotes.string()},
        {"exposures", cfg.exposures.string()},
        {"fires", cfg.fires.string()},
        {"returns", cfg.returns.string()},
        {"output_dir", cfg.output_dir.string()},
        {"threshold", cfg.threshold},
        {"snapshot", snapshot_mode_name(cfg.snapshot)},
        {"n_steps", cfg.n_steps},
        {"bandwidth_multiplier", cfg.bandwidth_multiplier},
        {"grid_size", cfg.grid_size},
        {"n_paths", cfg.n_paths},
        {"seed", cfg.seed},
        {"maturity_bins", cfg.maturity_bins},
        {"garch_lags", cfg.garch_lags},
        {"regime", regime_name(cfg.regime)},
        {"foresight_window", cfg.foresight_window},
        {"n_starts", cfg.n_starts},
        {"calibration_max_quotes", cfg.calibration_max_quotes},
        {"bounds", bounds},
        {"te_bins", cfg.te_bins},
        {"threads", cfg.threads},
    };
}

RunConfig config_from_json(const json& j) {
    static const std::set<std::string> known{"quotes", "exposures", "fires", "returns", "output_dir", "threshold",
                                             "snapshot", "n_steps", "bandwidth_multiplier", "grid_size", "n_paths",
                                             "seed", "maturity_bins", "garch_lags", "regime", "foresight_window",
                                             "n_starts", "calibration_max_quotes", "bounds", "te_bins", "threads"};
    if (!j.is_object()) throw ParameterError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw ParameterError("config: unknown key '" + key + "'");
    }
    RunConfig c;
    try {
        const auto path = [&](const char* k, fs::path& p) {
            if (j.contains(k)) p = j.at(k).get<std::string>();
        };
        path("quotes", c.quotes);
        path("exposures", c.exposures);
        path("fires", c.fires);
        path("returns", c.returns);
        path("output_dir", c.output_dir);
        c.threshold = j.value("threshold", c.threshold);
        if (j.contains("snapshot")) c.snapshot = parse_snapshot_mode(j.at("snapshot").get<std::string>());
        c.n_steps = j.value("n_steps", c.n_steps);
        c.bandwidth_multiplier = j.value("bandwidth_multiplier", c.bandwidth_multiplier);
        c.grid_size = j.value("grid_size", c.grid_size);
        c.n_paths = j.value("n_paths", c.n_paths);
        c.seed = j.value("seed", c.seed);
        c.maturity_bins = j.value("maturity_bins", c.maturity_bins);
        c.garch_lags = j.value("garch_lags", c.garch_lags);
        if (j.contains("regime")) c.regime = parse_regime(j.at("regime").get<std::string>());
        c.foresight_window = j.value("foresight_window", c.foresight_window);
        c.n_starts = j.value("n_starts", c.n_starts);
        c.calibration_max_quotes = j.value("calibration_max_quotes", c.calibration_max_quotes);
        if (j.contains("bounds")) {
            for (const auto& [name, b] : j.at("bounds").items()) {
                parse_model_kind(name);
                c.bounds[name] = bounds_from(b);
            }
        }
        c.te_bins = j.value("te_bins", c.te_bins);
        c.threads = j.value("threads", c.threads);
    } catch (const json::exception& e) {
        throw ParameterError(std::string("config: ") + e.what());
    }
    return c;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParameterError("cannot read config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParameterError("config " + path.string() + ": " + e.what());
    }
    RunConfig c = config_from_json(j);
    // Relative paths are relative to the config file.
    const fs::path base = path.parent_path();
    for (fs::path* p : {&c.quotes, &c.exposures, &c.fires, &c.returns, &c.output_dir}) {
        if (!p->empty() && p->is_relative()) *p = base / *p;
    }
    return c;
}

std::string config_hash(const RunConfig& cfg) {
    json j = config_to_json(cfg);
    j.erase("output_dir");
    j.erase("threads");
    // Input files enter through their content hashes, not their location.
    for (const char* k : {"quotes", "exposures", "fires", "returns"}) j[k] = !j[k].get<std::string>().empty();
    return sha256_hex(j.dump());
}

// ---- stages --------------------------------------------------------------

const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> s{Stage::Ingest, Stage::Deamericanize, Stage::Repair, Stage::Rnd,
                                      Stage::Garch,  Stage::Kernel,        Stage::Calibrate, Stage::Panel};
    return s;
}

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::Ingest: return "ingest";
        case Stage::Deamericanize: return "deamericanize";
        case Stage::Repair: return "repair";
        case Stage::Rnd: return "rnd";
        case Stage::Garch: return "garch";
        case Stage::Kernel: return "kernel";
        case Stage::Calibrate: return "calibrate";
        case Stage::Panel: return "panel";
    }
    return "?";
}

Stage parse_stage(const std::string& name) {
    for (Stage s : all_stages()) {
        if (stage_name(s) == name) return s;
    }
    throw ParameterError("unknown stage '" + name + "'");
}

std::vector<Stage> parse_stages(const std::string& comma_list) {
    if (comma_list.empty() || comma_list == "all") return all_stages();
    std::set<Stage> chosen;
    for (const auto& part : csv::split(comma_list)) chosen.insert(parse_stage(part));
    std::vector<Stage> out;
    for (Stage s : all_stages()) {
        if (chosen.contains(s)) out.push_back(s);
    }
    return out;
}

// ---- artifact formats ----------------------------------------------------

std::vector<double> cumulative_mass(const std::vector<double>& grid, const std::vector<double>& density) {
    std::vector<double> out(grid.size(), 0.0);
    for (std::size_t i = 1; i < grid.size(); ++i) {
        out[i] = std::min(1.0, out[i - 1] + 0.5 * (density[i] + density[i - 1]) * (grid[i] - grid[i - 1]));
    }
    return out;
}

void write_densities(std::ostream& out, const std::vector<DensityRecord>& records) {
    out << "ticker,date,expiry,grid_k,moneyness,density,cdf,mass\n";
    for (const auto& r : records) {
        const auto& c = r.curve;
        const std::vector<double> cdf = r.cdf.empty() ? cumulative_mass(c.grid, c.values) : r.cdf;
        for (std::size_t i = 0; i < c.grid.size(); ++i) {
            csv::write_row(out, {r.ticker, format_iso_date(r.date), format_iso_date(r.expiry), csv::format(c.grid[i]),
                                 csv::format(c.grid[i] / c.forward), csv::format(c.values[i]), csv::format(cdf[i]),
                                 csv::format(c.mass)});
        }
    }
}

std::vector<DensityRecord> read_densities(std::istream& in, const std::string& source, DensityKind kind) {
    const csv::Header h = csv::read_header(in, source);
    const std::size_t it = h.require("ticker", source), id = h.require("date", source),
                      ie = h.require("expiry", source), ik = h.require("grid_k", source),
                      im = h.require("moneyness", source), iv = h.require("density", source),
                      ic = h.require("cdf", source), ia = h.require("mass", source);
    std::vector<DensityRecord> out;
    std::string line;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto f = csv::split(line);
        if (f.size() < h.names.size()) throw DataError(source + ": short row " + std::to_string(row));
        const Day date = parse_iso_date(f[id]);
        const Day expiry = parse_iso_date(f[ie]);
        if (out.empty() || out.back().ticker != f[it] || out.back().date != date || out.back().expiry != expiry) {
            DensityRecord r;
            r.ticker = f[it];
            r.date = date;
            r.expiry = expiry;
            r.curve.kind = kind;
            r.curve.maturity = year_fraction(date, expiry);
            r.curve.mass = csv::parse_double(f[ia]);
            out.push_back(std::move(r));
        }
        auto& r = out.back();
        const double k = csv::parse_double(f[ik]);
        if (r.curve.grid.empty()) r.curve.forward = k / csv::parse_double(f[im]);
        r.curve.grid.push_back(k);
        r.curve.values.push_back(csv::parse_double(f[iv]));
        r.curve.unsupported.push_back(false);
        r.cdf.push_back(csv::parse_double(f[ic]));
    }
    return out;
}

void write_density_surface(std::ostream& out, const std::vector<DensityRecord>& records) {
    out << "maturity,grid_k,density\n";
    for (const auto& r : records) {
        for (std::size_t i = 0; i < r.curve.grid.size(); ++i) {
            csv::write_row(out, {csv::format(r.curve.maturity), csv::format(r.curve.grid[i]), csv::format(r.curve.values[i])});
        }
    }
}

void write_te_profile(std::ostream& out, const TEProfile& te) {
    out << "point,delta,ci_low,ci_high\n";
    for (std::size_t i = 0; i < te.points.size(); ++i) {
        csv::write_row(out, {csv::format(te.points[i]), csv::format(te.delta[i]), csv::format(te.ci_low[i]),
                             csv::format(te.ci_high[i])});
    }
}

void write_kernel_curves(std::ostream& out, const std::vector<KernelRecord>& records) {
    out << "ticker,date,expiry,grid_k,log_moneyness,kernel\n";
    for (const auto& r : records) {
        for (std::size_t i = 0; i < r.curve.grid.size(); ++i) {
            csv::write_row(out, {r.ticker, format_iso_date(r.date), format_iso_date(r.expiry), csv::format(r.curve.grid[i]),
                                 csv::format(r.curve.log_moneyness[i]), csv::format(r.curve.values[i])});
        }
    }
}

std::map<std::string, ReturnSeries> read_returns(std::istream& in, const std::string& source) {
    const csv::Header h = csv::read_header(in, source);
    const std::size_t it = h.require("ticker", source), id = h.require("date", source),
                      ir = h.require("log_return", source), im = h.require("market_return", source);
    std::map<std::string, std::vector<std::tuple<Day, double, double>>> rows;
    std::string line;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto f = csv::split(line);
        if (f.size() < h.names.size()) throw DataError(source + ": short row " + std::to_string(row));
        rows[f[it]].emplace_back(parse_iso_date(f[id]), csv::parse_double(f[ir]), csv::parse_double(f[im]));
    }
    std::map<std::string, ReturnSeries> out;
    for (auto& [ticker, v] : rows) {
        std::sort(v.begin(), v.end());
        ReturnSeries s;
        s.ticker = ticker;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const auto& [d, r, m] = v[i];
            if (i > 0 && d == std::get<0>(v[i - 1])) throw DataError(source + ": duplicate date for " + ticker);
            s.dates.push_back(d);
            s.log_returns.push_back(r);
            s.market_returns.push_back(m);
        }
        s.wildfire_flags.assign(s.dates.size(), false);
        s.validate();
        out.emplace(ticker, std::move(s));
    }
    return out;
}

void write_returns(std::ostream& out, const std::vector<ReturnSeries>& series) {
    out << "ticker,date,log_return,market_return\n";
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            csv::write_row(out, {s.ticker, format_iso_date(s.dates[i]), csv::format(s.log_returns[i]),
                                 csv::format(s.market_returns[i])});
        }
    }
}

void attach_fire_flags(ReturnSeries& series, const std::vector<TreatmentCalendar>& calendar) {
    std::set<Day> fire_days;
    for (const auto& c : calendar) {
        if (c.ticker == series.ticker && c.treated_now) fire_days.insert(c.date);
    }
    series.wildfire_flags.assign(series.size(), false);
    for (std::size_t i = 0; i < series.size(); ++i) series.wildfire_flags[i] = fire_days.contains(series.dates[i]);
}

std::vector<IvRow> implied_vols(const std::vector<OptionQuote>& quotes) {
    std::vector<std::optional<IvRow>> slots(quotes.size());
    parallel_for(quotes.size(), [&](std::size_t i) {
        const OptionQuote& q = quotes[i];
        const double T = q.maturity_years();
        try {
            const double iv = implied_vol(q.mid, {q.forward, q.strike, q.rate, T, 0.0, q.is_call});
            if (iv > 1e-4) slots[i] = IvRow{q.ticker, q.quote_date, q.rate, {q.strike, T, q.forward, iv, 1.0, q.is_call}};
        } catch (const NumericError&) {
        }
    });
    std::vector<IvRow> out;
    for (auto& s : slots) {
        if (s) out.push_back(std::move(*s));
    }
    return out;
}

DeamericanizeResult deamericanize_quotes(const std::vector<OptionQuote>& quotes, int n_steps) {
    std::vector<std::optional<OptionQuote>> ok(quotes.size());
    std::vector<std::string> why(quotes.size());
    parallel_for(quotes.size(), [&](std::size_t i) {
        const OptionQuote& q = quotes[i];
        const double T = q.maturity_years();
        MarketFields m;
        m.spot = q.forward * std::exp(-(q.rate - q.div_yield) * T);
        m.strike = q.strike;
        m.rate = q.rate;
        m.div_yield = q.div_yield;
        m.maturity = T;
        m.is_call = q.is_call;
        try {
            const DeAmericanized d = de_americanize(q.mid, m, n_steps);
            OptionQuote e = q;
            // The spread is carried over around the European mid.
            const double half = 0.5 * (q.ask - q.bid);
            e.mid = d.european_price;
            e.bid = std::max(0.0, d.european_price - half);
            e.ask = d.european_price + half;
            e.iv_raw = d.implied_vol;
            ok[i] = e;
        } catch (const NumericError& err) {
            why[i] = err.what();
        }
    });
    DeamericanizeResult out;
    for (std::size_t i = 0; i < quotes.size(); ++i) {
        if (ok[i]) {
            out.quotes.push_back(*ok[i]);
        } else {
            std::ostringstream line;
            write_quotes(line, {quotes[i]});
            std::string text = line.str();
            text = text.substr(text.find('\n') + 1);
            if (!text.empty() && text.back() == '\n') text.pop_back();
            out.rejects.push_back({i + 1, why[i], text});
        }
    }
    return out;
}

namespace {

using DayKey = std::pair<std::string, Day>;

std::map<DayKey, const TreatmentCalendar*> calendar_index(const std::vector<TreatmentCalendar>& calendar) {
    std::map<DayKey, const TreatmentCalendar*> idx;
    for (const auto& c : calendar) idx[{c.ticker, c.date}] = &c;
    return idx;
}

std::map<std::string, int> firm_ids(const std::set<std::string>& tickers) {
    std::map<std::string, int> ids;
    for (const auto& t : tickers) ids.emplace(t, static_cast<int>(ids.size()));
    return ids;
}

}  // namespace

std::vector<IvObs> iv_panel(const std::vector<IvRow>& rows, const std::vector<TreatmentCalendar>& calendar) {
    const auto idx = calendar_index(calendar);
    std::set<std::string> tickers;
    for (const auto& r : rows) tickers.insert(r.ticker);
    const auto ids = firm_ids(tickers);
    std::vector<IvObs> out;
    for (const auto& r : rows) {
        IvObs o;
        o.firm = ids.at(r.ticker);
        o.date = r.date;
        o.moneyness = r.quote.strike / r.quote.forward;
        o.maturity = r.quote.maturity;
        o.iv = r.quote.iv;
        o.is_call = o.moneyness >= 1.0;
        if (const auto it = idx.find({r.ticker, r.date}); it != idx.end()) {
            o.treated_now = it->second->treated_now;
            o.after_first = it->second->after_first;
            o.after_last = it->second->after_last;
        }
        out.push_back(o);
    }
    return out;
}

std::vector<DensityObs> density_panel(const std::vector<DensityRecord>& rnd, const std::vector<TreatmentCalendar>& calendar) {
    const auto idx = calendar_index(calendar);
    std::set<std::string> tickers;
    for (const auto& r : rnd) tickers.insert(r.ticker);
    const auto ids = firm_ids(tickers);
    std::vector<DensityObs> out;
    for (const auto& r : rnd) {
        const auto it = idx.find({r.ticker, r.date});
        const bool treated = it != idx.end() && it->second->treated_now;
        for (std::size_t i = 0; i < r.curve.grid.size(); ++i) {
            // density of K/F rather than of K
            out.push_back({ids.at(r.ticker), r.date, r.curve.grid[i] / r.curve.forward,
                           r.curve.values[i] * r.curve.forward, treated});
        }
    }
    return out;
}

// ---- stage runner --------------------------------------------------------

namespace {

class StageContext {
public:
    StageContext(const RunConfig& cfg, Stage stage) : cfg_(cfg), stage_(stage), dir_(cfg.output_dir / stage_name(stage)) {
        // A rerun starts from an empty stage directory; other stages are untouched.
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }

    /// Artifact written by an earlier stage, relative to the output dir.
    fs::path artifact(const std::string& rel) {
        const fs::path p = cfg_.output_dir / rel;
        if (!fs::exists(p)) {
            throw DataError("stage " + stage_name(stage_) + " needs artifact " + rel + " (missing: " + p.string() + ")");
        }
        inputs_[rel] = sha256_file(p);
        return p;
    }

    fs::path external(const std::string& role, const fs::path& p) {
        inputs_["config:" + role] = sha256_file(p);
        return p;
    }

    void write(const std::string& name, const std::function<void(std::ostream&)>& body) {
        const fs::path p = dir_ / (name + ".partial");
        {
            std::ofstream out(p, std::ios::binary);
            if (!out) throw DataError("cannot write " + p.string());
            body(out);
            if (!out) throw DataError("write failed: " + p.string());
        }
        outputs_.push_back(name);
    }

    void write_json(const std::string& name, const json& j) {
        write(name, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
    }

    json commit(double wall_seconds) {
        json outputs = json::object();
        for (const auto& name : outputs_) {
            const fs::path final_path = dir_ / name;
            fs::rename(dir_ / (name + ".partial"), final_path);
            outputs[name] = sha256_file(final_path);
        }
        json manifest{{"stage", stage_name(stage_)},
                      {"version", kVersion},
                      {"config_hash", config_hash(cfg_)},
                      {"seed", cfg_.seed},
                      {"inputs", inputs_},
                      {"outputs", outputs}};
        std::ofstream(dir_ / "manifest.json", std::ios::binary) << manifest.dump(2) << '\n';
        std::ofstream(dir_ / "timing.json", std::ios::binary) << json{{"wall_seconds", wall_seconds}}.dump(2) << '\n';
        return manifest;
    }

private:
    const RunConfig& cfg_;
    Stage stage_;
    fs::path dir_;
    json inputs_ = json::object();
    std::vector<std::string> outputs_;
};

template <class F>
auto read_file(const fs::path& p, F&& parse) {
    std::ifstream in(p);
    if (!in) throw DataError("cannot read " + p.string());
    return parse(in, p.string());
}

std::vector<TreatmentCalendar> read_calendar(const fs::path& p) {
    return read_file(p, [](std::istream& in, const std::string& src) { return parse_treatment(in, src); });
}

std::vector<DensityRecord> read_density_file(const fs::path& p, DensityKind kind) {
    return read_file(p, [kind](std::istream& in, const std::string& src) { return read_densities(in, src, kind); });
}

using SliceKey = std::tuple<std::string, Day, Day>;

json fe_json(const FEResult& r) {
    json coefs = json::object();
    for (std::size_t i = 0; i < r.names.size(); ++i) {
        coefs[r.names[i]] = {{"coef", r.coefs[static_cast<Eigen::Index>(i)]}, {"se", r.se(r.names[i])}};
    }
    return {{"coefficients", coefs}, {"dropped", r.dropped}, {"n", r.n},
            {"n_firms", r.n_firms},  {"n_dates", r.n_dates}, {"r2_within", r.r2_within},
            {"vcov_floored", r.vcov_floored}};
}

json smile_json(const SmileTable& t) {
    return {{"none", fe_json(t.none)}, {"firm", fe_json(t.firm)}, {"date", fe_json(t.date)}, {"both", fe_json(t.both)}};
}

json te_json(const TEProfile& te) {
    json rows = json::array();
    for (std::size_t i = 0; i < te.points.size(); ++i) {
        rows.push_back({{"point", te.points[i]}, {"delta", te.delta[i]}, {"se", te.se[i]}, {"ci_low", te.ci_low[i]},
                        {"ci_high", te.ci_high[i]}, {"flagged", static_cast<bool>(te.flagged[i])},
                        {"count", te.counts[i]}});
    }
    return rows;
}

// ---- individual stages ---------------------------------------------------

void stage_ingest(const RunConfig& cfg, StageContext& ctx) {
    const QuoteFile qf = load_quotes(ctx.external("quotes", cfg.quotes));
    ctx.write("quotes.csv", [&](std::ostream& o) { write_quotes(o, qf.quotes); });
    ctx.write("rejects.csv", [&](std::ostream& o) { write_rejects(o, qf.rejects); });

    std::set<Day> days;
    std::set<std::string> tickers;
    for (const auto& q : qf.quotes) {
        days.insert(q.quote_date);
        tickers.insert(q.ticker);
    }
    if (!cfg.returns.empty()) {
        const auto returns = read_file(ctx.external("returns", cfg.returns), read_returns);
        for (const auto& [t, s] : returns) days.insert(s.dates.begin(), s.dates.end());
    }
    const std::vector<Day> dates(days.begin(), days.end());
    std::vector<TreatmentCalendar> rows;
    std::size_t unknown = 0;
    if (!cfg.exposures.empty()) {
        const auto exposures = load_exposures(ctx.external("exposures", cfg.exposures));
        const auto fires = load_fires(ctx.external("fires", cfg.fires));
        TreatmentResult tr = compute_treatment(exposures, fires, dates, {cfg.threshold, cfg.snapshot});
        rows = std::move(tr.rows);
        unknown = tr.unknown_zip_fires;
    }
    // Quoted tickers without exposure records are never treated.
    std::set<std::string> covered;
    for (const auto& r : rows) covered.insert(r.ticker);
    for (const auto& t : tickers) {
        if (covered.contains(t)) continue;
        for (Day d : dates) rows.push_back({t, d, false, false, false});
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return std::tie(a.ticker, a.date) < std::tie(b.ticker, b.date); });
    ctx.write("treatment.csv", [&](std::ostream& o) { write_treatment(o, rows); });
    ctx.write_json("summary.json", {{"quotes", qf.quotes.size()},
                                    {"rejects", qf.rejects.size()},
                                    {"tickers", tickers.size()},
                                    {"calendar_rows", rows.size()},
                                    {"unknown_zip_fires", unknown}});
}

void stage_deamericanize(const RunConfig& cfg, StageContext& ctx) {
    const QuoteFile qf = load_quotes(ctx.artifact("ingest/quotes.csv"));
    const DeamericanizeResult r = deamericanize_quotes(qf.quotes, cfg.n_steps);
    ctx.write("quotes.csv", [&](std::ostream& o) { write_quotes(o, r.quotes); });
    ctx.write("rejects.csv", [&](std::ostream& o) { write_rejects(o, r.rejects); });
}

void stage_repair(const RunConfig&, StageContext& ctx) {
    const QuoteFile qf = load_quotes(ctx.artifact("deamericanize/quotes.csv"));
    const auto calendar = read_calendar(ctx.artifact("ingest/treatment.csv"));
    const std::vector<SurfaceSlice> slices = build_slices(qf.quotes);
    std::vector<RepairedSlice> repaired(slices.size());
    parallel_for(slices.size(), [&](std::size_t i) { repaired[i] = repair_slice(slices[i]); });
    std::vector<SurfaceSlice> out;
    int violations = 0;
    double max_adjust = 0.0;
    for (const auto& r : repaired) {
        out.push_back(r.slice);
        violations += r.violations_before.per_maturity();
        max_adjust = std::max(max_adjust, r.max_abs_adjust);
    }
    ctx.write("quotes.csv", [&](std::ostream& o) { write_quotes(o, slices_to_quotes(out)); });
    ctx.write("gaps.csv", [&](std::ostream& o) { write_gaps(o, arbitrage_gap_panel(repaired, calendar)); });
    ctx.write_json("summary.json", {{"slices", slices.size()}, {"violations_before", violations}, {"max_abs_adjust", max_adjust}});
}

void stage_rnd(const RunConfig& cfg, StageContext& ctx) {
    const QuoteFile qf = load_quotes(ctx.artifact("repair/quotes.csv"));
    const std::vector<SurfaceSlice> slices = build_slices(qf.quotes);
    const BandwidthSpec bw{std::nullopt, cfg.bandwidth_multiplier};
    std::vector<std::optional<DensityRecord>> slots(slices.size());
    std::vector<std::string> errors(slices.size());
    parallel_for(slices.size(), [&](std::size_t i) {
        const SurfaceSlice& s = slices[i];
        try {
            DensityRecord r{s.ticker, s.quote_date, s.expiry, extract_rnd(s, bw, cfg.grid_size), {}};
            r.cdf = rnd_cdf(s, r.curve.grid, bw).values;
            slots[i] = std::move(r);
        } catch (const NumericError& e) {
            errors[i] = e.what();
        }
    });
    std::vector<DensityRecord> records;
    json failed = json::array();
    for (std::size_t i = 0; i < slices.size(); ++i) {
        if (slots[i]) {
            records.push_back(std::move(*slots[i]));
        } else {
            failed.push_back({{"ticker", slices[i].ticker}, {"date", format_iso_date(slices[i].quote_date)},
                              {"expiry", format_iso_date(slices[i].expiry)}, {"error", errors[i]}});
        }
    }
    if (records.empty() && !slices.empty()) throw NumericError("rnd: extraction failed on every slice");
    ctx.write("densities.csv", [&](std::ostream& o) { write_densities(o, records); });
    ctx.write("surface.csv", [&](std::ostream& o) { write_density_surface(o, records); });
    ctx.write_json("summary.json", {{"slices", slices.size()}, {"failed", failed}});
}

struct TickerModel {
    MarketGarchParams market;
    GarchWildfireParams stock;
    ReturnSeries series;  // full history with fire flags
};

void stage_garch(const RunConfig& cfg, StageContext& ctx) {
    if (cfg.returns.empty()) throw DataError("stage garch needs a returns file (config key 'returns')");
    auto returns = read_file(ctx.external("returns", cfg.returns), read_returns);
    const auto calendar = read_calendar(ctx.artifact("ingest/treatment.csv"));
    const auto rnd = read_density_file(ctx.artifact("rnd/densities.csv"), DensityKind::RiskNeutral);
    // rates come from the repaired slices
    const QuoteFile qf = load_quotes(ctx.artifact("repair/quotes.csv"));
    std::map<SliceKey, std::pair<double, double>> rate_div;
    for (const auto& q : qf.quotes) rate_div[{q.ticker, q.quote_date, q.expiry}] = {q.rate, q.div_yield};

    std::vector<std::string> tickers;
    for (auto& [t, s] : returns) {
        attach_fire_flags(s, calendar);
        tickers.push_back(t);
    }
    std::vector<json> fit_json(tickers.size());
    std::vector<std::optional<TickerModel>> models(tickers.size());
    std::vector<std::string> errors(tickers.size());
    const GarchOptions opts;
    parallel_for(tickers.size(), [&](std::size_t i) {
        const ReturnSeries& full = returns.at(tickers[i]);
        try {
            // Event: first treated day inside the quoted window.
            std::optional<Day> event;
            Day first_quote = std::numeric_limits<Day>::max();
            for (const auto& r : rnd) {
                if (r.ticker == tickers[i]) first_quote = std::min(first_quote, r.date);
            }
            for (const auto& c : calendar) {
                if (c.ticker == tickers[i] && c.treated_now && c.date >= first_quote) {
                    event = c.date;
                    break;
                }
            }
            const Regime regime = event ? cfg.regime : Regime::Stationary;
            const ReturnSeries sample = event ? regime_sample(full, regime, *event, cfg.foresight_window) : full;
            const MarketGarchFit mf = fit_market_garch(sample.market_returns, opts);
            const GarchWildfireFit sf = fit_garch_wildfire(sample, mf.params, cfg.garch_lags, opts);
            fit_json[i] = {{"ticker", tickers[i]},
                           {"regime", regime_name(regime)},
                           {"event", event ? json(format_iso_date(*event)) : json(nullptr)},
                           {"observations", sample.size()},
                           {"market", fit_to_json(mf)},
                           {"stock", fit_to_json(sf)}};
            models[i] = TickerModel{mf.params, sf.params, full};
        } catch (const FitNotConverged& e) {
            errors[i] = std::string(e.what()) + " (gradient norm " + csv::format(e.gradient_norm()) + ")";
        } catch (const Error& e) {
            errors[i] = e.what();
        }
    });

    std::map<std::string, std::size_t> model_index;
    json failed = json::object();
    for (std::size_t i = 0; i < tickers.size(); ++i) {
        if (models[i]) {
            model_index[tickers[i]] = i;
            ctx.write_json("params_" + tickers[i] + ".json", fit_json[i]);
        } else {
            failed[tickers[i]] = errors[i];
        }
    }

    std::vector<std::optional<DensityRecord>> slots(rnd.size());
    std::vector<std::string> slice_errors(rnd.size());
    parallel_for(rnd.size(), [&](std::size_t i) {
        const DensityRecord& r = rnd[i];
        const auto it = model_index.find(r.ticker);
        if (it == model_index.end()) {
            slice_errors[i] = "no fitted model for " + r.ticker;
            return;
        }
        const TickerModel& m = *models[it->second];
        try {
            ReturnSeries prefix = m.series;
            const auto cut = static_cast<std::size_t>(
                std::lower_bound(prefix.dates.begin(), prefix.dates.end(), r.date) - prefix.dates.begin());
            if (cut < 2) throw DataError("no return history before " + format_iso_date(r.date));
            prefix.dates.resize(cut);
            prefix.log_returns.resize(cut);
            prefix.market_returns.resize(cut);
            prefix.wildfire_flags.resize(cut);
            const auto [rate, div] = rate_div.count({r.ticker, r.date, r.expiry})
                                         ? rate_div.at({r.ticker, r.date, r.expiry})
                                         : std::pair<double, double>{0.0, 0.0};
            const double T = r.curve.maturity;
            const double spot = r.curve.forward * std::exp(-(rate - div) * T);
            ForecastConfig fc;
            fc.horizon_days = std::max(1, static_cast<int>(std::lround(T * kTradingDaysPerYear)));
            fc.n_paths = cfg.n_paths;
            fc.regime = cfg.regime;
            const Hazard hz = wildfire_hazard(calendar, r.ticker);
            fc.hazard = hz.degenerate ? 0.0 : hz.probability;
            fc.seed = cfg.seed ^ static_cast<std::uint64_t>(i);
            const ForecastState st = forecast_state(prefix, m.market, m.stock, spot);
            DensityRecord out{r.ticker, r.date, r.expiry, forecast_density(m.market, m.stock, st, fc, r.curve.grid), {}};
            out.curve.forward = r.curve.forward;
            out.curve.maturity = T;
            slots[i] = std::move(out);
        } catch (const Error& e) {
            slice_errors[i] = e.what();
        }
    });
    std::vector<DensityRecord> phys;
    json skipped = json::array();
    for (std::size_t i = 0; i < rnd.size(); ++i) {
        if (slots[i]) {
            phys.push_back(std::move(*slots[i]));
        } else {
            skipped.push_back({{"ticker", rnd[i].ticker}, {"date", format_iso_date(rnd[i].date)},
                               {"expiry", format_iso_date(rnd[i].expiry)}, {"error", slice_errors[i]}});
        }
    }
    if (phys.empty() && !rnd.empty()) throw NumericError("garch: no physical density could be produced");
    ctx.write("densities.csv", [&](std::ostream& o) { write_densities(o, phys); });
    ctx.write_json("summary.json", {{"tickers", tickers.size()}, {"failed_fits", failed}, {"skipped_slices", skipped}});
}

void stage_kernel(const RunConfig& cfg, StageContext& ctx) {
    const auto rnd = read_density_file(ctx.artifact("rnd/densities.csv"), DensityKind::RiskNeutral);
    const auto phys = read_density_file(ctx.artifact("garch/densities.csv"), DensityKind::Physical);
    const QuoteFile qf = load_quotes(ctx.artifact("repair/quotes.csv"));
    std::map<SliceKey, double> rates;
    for (const auto& q : qf.quotes) rates[{q.ticker, q.quote_date, q.expiry}] = q.rate;
    std::map<SliceKey, const DensityRecord*> by_key;
    for (const auto& p : phys) by_key[{p.ticker, p.date, p.expiry}] = &p;

    std::vector<std::optional<KernelRecord>> curves(rnd.size());
    std::vector<std::optional<RiskAversionEstimate>> est(rnd.size());
    std::vector<std::string> errors(rnd.size());
    parallel_for(rnd.size(), [&](std::size_t i) {
        const DensityRecord& r = rnd[i];
        const SliceKey key{r.ticker, r.date, r.expiry};
        const auto it = by_key.find(key);
        if (it == by_key.end()) {
            errors[i] = "no physical density";
            return;
        }
        try {
            const double rate = rates.count(key) ? rates.at(key) : 0.0;
            KernelRecord k{r.ticker, r.date, r.expiry, pricing_kernel(r.curve, it->second->curve, rate, r.curve.maturity)};
            est[i] = estimate_gamma_w(k.curve);
            curves[i] = std::move(k);
        } catch (const Error& e) {
            errors[i] = e.what();
        }
    });

    std::vector<KernelRecord> kept;
    std::set<std::string> tickers;
    for (const auto& c : curves) {
        if (c) tickers.insert(c->ticker);
    }
    const auto ids = firm_ids(tickers);
    std::vector<KernelObs> pooled_obs;
    json skipped = json::array();
    std::ostringstream per_slice;
    per_slice << "ticker,date,expiry,maturity,gamma_w,se,t_stat,puzzle,n_points,r2\n";
    for (std::size_t i = 0; i < rnd.size(); ++i) {
        if (!curves[i]) {
            skipped.push_back({{"ticker", rnd[i].ticker}, {"date", format_iso_date(rnd[i].date)},
                               {"expiry", format_iso_date(rnd[i].expiry)}, {"error", errors[i]}});
            continue;
        }
        const auto& e = *est[i];
        csv::write_row(per_slice, {rnd[i].ticker, format_iso_date(rnd[i].date), format_iso_date(rnd[i].expiry),
                                   csv::format(rnd[i].curve.maturity), csv::format(e.gamma_w), csv::format(e.se),
                                   csv::format(e.t_stat), e.puzzle ? "1" : "0", std::to_string(e.n_points),
                                   csv::format(e.r2)});
        pooled_obs.push_back({ids.at(curves[i]->ticker), curves[i]->date, curves[i]->curve});
        kept.push_back(std::move(*curves[i]));
    }
    json pooled;
    try {
        const RiskAversionEstimate p = estimate_gamma_w(pooled_obs, cfg.maturity_bins);
        pooled = {{"gamma_w", p.gamma_w}, {"se", p.se}, {"t_stat", p.t_stat}, {"puzzle", p.puzzle}, {"n_points", p.n_points}};
    } catch (const Error& e) {
        pooled = {{"error", e.what()}};
    }
    ctx.write("curves.csv", [&](std::ostream& o) { write_kernel_curves(o, kept); });
    ctx.write("gamma_w.csv", [&](std::ostream& o) { o << per_slice.str(); });
    ctx.write_json("summary.json", {{"slices", kept.size()}, {"pooled", pooled}, {"skipped", skipped}});
}

void stage_calibrate(const RunConfig& cfg, StageContext& ctx) {
    const QuoteFile qf = load_quotes(ctx.artifact("repair/quotes.csv"));
    const auto calendar = read_calendar(ctx.artifact("ingest/treatment.csv"));
    const auto idx = calendar_index(calendar);
    const std::vector<IvRow> rows = implied_vols(qf.quotes);
    std::map<std::string, std::vector<IvQuote>> groups{{"control", {}}, {"treatment", {}}};
    std::map<std::string, std::vector<double>> rates{{"control", {}}, {"treatment", {}}};
    for (const auto& r : rows) {
        const auto it = idx.find({r.ticker, r.date});
        const std::string g = it != idx.end() && it->second->treated_now ? "treatment" : "control";
        groups[g].push_back(r.quote);
        rates[g].push_back(r.rate);
    }
    json summary = json::object();
    for (auto& [group, quotes] : groups) {
        if (quotes.size() < 10) {
            summary[group] = "skipped: fewer than 10 quotes";
            continue;
        }
        // Deterministic thinning keeps the fit cost bounded.
        if (quotes.size() > cfg.calibration_max_quotes) {
            std::vector<IvQuote> thin;
            const double stride = static_cast<double>(quotes.size()) / static_cast<double>(cfg.calibration_max_quotes);
            for (std::size_t k = 0; k < cfg.calibration_max_quotes; ++k) {
                thin.push_back(quotes[static_cast<std::size_t>(std::floor(static_cast<double>(k) * stride))]);
            }
            quotes = std::move(thin);
        }
        const double rate = rates[group].empty() ? 0.0 : mean(rates[group]);
        for (ModelKind kind : {ModelKind::Merton, ModelKind::Kou}) {
            CalibrationOptions co;
            co.n_starts = cfg.n_starts;
            co.seed = cfg.seed;
            co.rate = rate;
            const CalibrationResult res = calibrate(kind, quotes, bounds_for(cfg, kind), co);
            const std::string name = model_kind_name(kind) + "_" + group + ".json";
            ctx.write(name, [&](std::ostream& o) { o << calibration_summary_json(res) << '\n'; });
            summary[group][model_kind_name(kind)] = {{"mse", res.mse}, {"converged", res.converged}, {"quotes", res.n_quotes}};
        }
    }
    ctx.write_json("summary.json", summary);
}

void stage_panel(const RunConfig& cfg, StageContext& ctx) {
    const QuoteFile qf = load_quotes(ctx.artifact("repair/quotes.csv"));
    const auto rnd = read_density_file(ctx.artifact("rnd/densities.csv"), DensityKind::RiskNeutral);
    const auto calendar = read_calendar(ctx.artifact("ingest/treatment.csv"));
    const std::vector<IvRow> rows = implied_vols(qf.quotes);
    const std::vector<IvObs> ivp = iv_panel(rows, calendar);

    ctx.write("iv_cross_section.csv", [&](std::ostream& o) {
        o << "ticker,date,maturity,moneyness,iv,treated_now\n";
        for (std::size_t i = 0; i < rows.size(); ++i) {
            csv::write_row(o, {rows[i].ticker, format_iso_date(rows[i].date), csv::format(ivp[i].maturity),
                               csv::format(ivp[i].moneyness), csv::format(ivp[i].iv), ivp[i].treated_now ? "1" : "0"});
        }
    });
    ctx.write_json("smile_calls.json", smile_json(smile_regression(ivp, true)));
    ctx.write_json("smile_puts.json", smile_json(smile_regression(ivp, false)));

    BinnedOptions bo;
    bo.n_bins = cfg.te_bins;
    const TEProfile te = rnd_te_binned(density_panel(rnd, calendar), bo);
    ctx.write("rnd_te.csv", [&](std::ostream& o) { write_te_profile(o, te); });
    ctx.write_json("rnd_te.json", te_json(te));
}

void run_stage(const RunConfig& cfg, Stage s, StageContext& ctx) {
    switch (s) {
        case Stage::Ingest: return stage_ingest(cfg, ctx);
        case Stage::Deamericanize: return stage_deamericanize(cfg, ctx);
        case Stage::Repair: return stage_repair(cfg, ctx);
        case Stage::Rnd: return stage_rnd(cfg, ctx);
        case Stage::Garch: return stage_garch(cfg, ctx);
        case Stage::Kernel: return stage_kernel(cfg, ctx);
        case Stage::Calibrate: return stage_calibrate(cfg, ctx);
        case Stage::Panel: return stage_panel(cfg, ctx);
    }
}

}  // namespace

RunReport run_pipeline(const RunConfig& cfg, const std::vector<Stage>& stages) {
    RunReport report;
    try {
        cfg.validate();
        if (cfg.threads > 0) {
            const char* env = std::getenv("RND_THREADS");
            if (env == nullptr || std::atol(env) < 1 || std::atol(env) > cfg.threads) {
                ::setenv("RND_THREADS", std::to_string(cfg.threads).c_str(), 1);
            }
        }
        fs::create_directories(cfg.output_dir);
        for (Stage s : stages) {
            const auto t0 = std::chrono::steady_clock::now();
            StageContext ctx(cfg, s);
            run_stage(cfg, s, ctx);
            const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            report.stages.push_back({s, ctx.commit(wall), wall});
        }
    } catch (const Error& e) {
        report.exit_code = e.exit_code();
        report.error = e.what();
    } catch (const fs::filesystem_error& e) {
        report.exit_code = 3;
        report.error = e.what();
    }
    return report;
}

// ---- bundled fixture -----------------------------------------------------

void write_fixture(const fs::path& dir, const FixtureConfig& cfg) {
    if (cfg.n_firms < 2 || cfg.n_days < 2) throw ParameterError("fixture needs at least 2 firms and 2 days");
    if (cfg.history_days < 300) throw ParameterError("fixture needs at least 300 days of return history");
    fs::create_directories(dir);
    const double rate = 0.02;
    const int n_steps = 200;

    SynthPanelConfig pc;
    pc.n_firms = cfg.n_firms;
    pc.n_days = cfg.n_days;
    for (double m = 0.5; m <= 1.6 + 1e-9; m += 0.05) pc.moneyness.push_back(m);
    pc.maturities = {30.0 / 365.0, 61.0 / 365.0, 91.0 / 365.0};
    pc.rate = rate;
    pc.control = KouParams{0.2, 0.3, 0.5, 1.0 / 0.908, 1.0 / 0.378, rate, 0.0};
    pc.treatment = KouParams{0.2, 0.6, 0.5, 1.0 / 1.765, 1.0 / 0.383, rate, 0.0};
    pc.rule = {0.5, 1, std::max(1, cfg.n_days / 2), std::max(1, cfg.n_days / 3)};
    pc.firm_vol_sd = 0.01;
    pc.date_vol_sd = 0.005;
    pc.noise = 0.002;
    pc.seed = cfg.seed;
    const SynthPanel panel = synth_panel(pc);

    std::vector<OptionQuote> quotes;
    for (std::size_t s = 0; s < panel.slices.size(); ++s) {
        const SurfaceSlice& sl = panel.slices[s];
        const double spot = sl.forward * std::exp(-rate * sl.maturity_years);
        for (std::size_t k = 0; k < sl.strikes.size(); ++k) {
            const double K = sl.strikes[k];
            const bool call = K >= sl.forward;
            const BsInputs in{sl.forward, K, rate, sl.maturity_years, panel.ivs[s][k], call};
            const double price = crr_price(in, n_steps, true, spot, 0.0);
            if (price < 0.01) continue;
            OptionQuote q;
            q.ticker = sl.ticker;
            q.quote_date = sl.quote_date;
            q.expiry = sl.expiry;
            q.strike = K;
            q.is_call = call;
            q.bid = price * 0.98;
            q.ask = price * 1.02;
            q.mid = 0.5 * (q.bid + q.ask);
            q.forward = sl.forward;
            q.rate = rate;
            quotes.push_back(q);
        }
    }
    std::ofstream(dir / "quotes.csv") << [&] {
        std::ostringstream o;
        write_quotes(o, quotes);
        return o.str();
    }();

    // Returns: a simulated history with fire episodes, then the quoted window.
    const MarketGarchParams market{0.0003, 2e-6, 0.88, 0.08};
    const GarchWildfireParams stock{0.0001, 0.9, -0.02, 4e-6, 0.85, 0.08, 5e-4, 3e-5, 1};
    const Day first = pc.first_date;
    std::vector<ReturnSeries> series;
    std::ofstream exposures(dir / "exposures.csv");
    std::ofstream fires(dir / "fires.csv");
    exposures << "ticker,zip,share_estabs,share_emp,share_sales\n";
    fires << "zip,start_date,end_date\n";
    const auto add_fires = [&](const std::string& zip, const std::vector<Day>& days) {
        for (std::size_t i = 0; i < days.size();) {
            std::size_t j = i;
            while (j + 1 < days.size() && days[j + 1] == days[j] + 1) ++j;
            fires << zip << ',' << format_iso_date(days[i]) << ',' << format_iso_date(days[j]) << '\n';
            i = j + 1;
        }
    };
    for (int f = 0; f < cfg.n_firms; ++f) {
        const std::string ticker = panel.slices[static_cast<std::size_t>(f * cfg.n_days) * pc.maturities.size()].ticker;
        const std::string hot = std::to_string(90000 + f), cold = std::to_string(91000 + f);
        exposures << ticker << ',' << hot << ",0.4,0.3,0.3\n" << ticker << ',' << cold << ",0.6,0.7,0.7\n";
        const std::uint64_t seed = cfg.seed * 1000 + static_cast<std::uint64_t>(f);
        const ReturnSeries hist = simulate_garch_wildfire(market, stock, cfg.history_days, 8, 5, seed);
        const ReturnSeries tail = simulate_garch_wildfire(market, stock, cfg.n_days, 0, 0, seed + 500);
        ReturnSeries s;
        s.ticker = ticker;
        std::vector<Day> fire_days;
        for (std::size_t i = 0; i < hist.size(); ++i) {
            const Day d = first - cfg.history_days + static_cast<Day>(i);
            s.dates.push_back(d);
            s.log_returns.push_back(hist.log_returns[i]);
            s.market_returns.push_back(hist.market_returns[i]);
            if (hist.wildfire_flags[i]) fire_days.push_back(d);
        }
        for (std::size_t i = 0; i < tail.size(); ++i) {
            s.dates.push_back(first + static_cast<Day>(i));
            s.log_returns.push_back(tail.log_returns[i]);
            s.market_returns.push_back(tail.market_returns[i]);
        }
        for (const auto& c : panel.calendar) {
            if (c.ticker == ticker && c.treated_now) fire_days.push_back(c.date);
        }
        std::sort(fire_days.begin(), fire_days.end());
        add_fires(hot, fire_days);
        s.wildfire_flags.assign(s.size(), false);
        series.push_back(std::move(s));
    }
    std::ofstream(dir / "returns.csv") << [&] {
        std::ostringstream o;
        write_returns(o, series);
        return o.str();
    }();

    RunConfig rc;
    rc.quotes = "quotes.csv";
    rc.exposures = "exposures.csv";
    rc.fires = "fires.csv";
    rc.returns = "returns.csv";
    rc.output_dir = "out";
    rc.n_steps = n_steps;
    rc.grid_size = 60;
    rc.n_paths = 20000;
    rc.n_starts = 4;
    rc.maturity_bins = 3;
    rc.te_bins = 15;
    std::ofstream(dir / "config.json") << config_to_json(rc).dump(2) << '\n';
}

}  // namespace rndkit
