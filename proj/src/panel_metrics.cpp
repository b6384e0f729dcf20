#include "rndkit/panel_metrics.hpp"

#include "rndkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_map>

namespace rndkit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kZ95 = 1.959963984540054;

// Maps arbitrary ids to 0..L-1 in order of first appearance after sorting.
std::vector<int> dense_ids(const std::vector<long long>& raw, std::size_t* levels) {
    std::vector<long long> uniq = raw;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    std::vector<int> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        out[i] = static_cast<int>(std::lower_bound(uniq.begin(), uniq.end(), raw[i]) - uniq.begin());
    }
    if (levels) *levels = uniq.size();
    return out;
}

std::vector<int> dense_ids(const std::vector<int>& raw, std::size_t* levels) {
    return dense_ids(std::vector<long long>(raw.begin(), raw.end()), levels);
}

long long pair_key(int a, int b) { return (static_cast<long long>(a) << 32) ^ static_cast<unsigned int>(b); }

}  // namespace

std::optional<std::size_t> FEResult::index(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return i;
    }
    return std::nullopt;
}

double FEResult::coef(const std::string& name) const {
    const auto i = index(name);
    return i ? coefs[static_cast<Eigen::Index>(*i)] : kNaN;
}

double FEResult::se(const std::string& name) const {
    const auto i = index(name);
    if (!i) return kNaN;
    const auto k = static_cast<Eigen::Index>(*i);
    return std::sqrt(std::max(vcov(k, k), 0.0));
}

int absorb_factors(Eigen::MatrixXd& m, const Eigen::VectorXd& w, const std::vector<std::vector<int>>& factors,
                   double tol, int max_sweeps) {
    if (factors.empty() || m.rows() == 0) return 0;
    const Eigen::Index n = m.rows(), k = m.cols();
    std::vector<std::vector<int>> ids;
    std::vector<std::size_t> levels;
    for (const auto& f : factors) {
        if (static_cast<Eigen::Index>(f.size()) != n) throw ParameterError("factor length does not match the data");
        std::size_t l = 0;
        ids.push_back(dense_ids(f, &l));
        levels.push_back(l);
    }
    Eigen::VectorXd scale(k);
    for (Eigen::Index c = 0; c < k; ++c) scale[c] = std::max(m.col(c).cwiseAbs().maxCoeff(), 1e-300);

    std::vector<Eigen::VectorXd> wsum(ids.size());
    for (std::size_t f = 0; f < ids.size(); ++f) {
        wsum[f] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(levels[f]));
        for (Eigen::Index i = 0; i < n; ++i) wsum[f][ids[f][static_cast<std::size_t>(i)]] += w[i];
    }
    // A single factor is exact after one pass; more need alternating sweeps.
    const int sweeps_cap = ids.size() == 1 ? 1 : max_sweeps;
    int sweep = 0;
    Eigen::MatrixXd sums;
    for (; sweep < sweeps_cap; ++sweep) {
        double worst = 0.0;
        for (std::size_t f = 0; f < ids.size(); ++f) {
            sums.setZero(static_cast<Eigen::Index>(levels[f]), k);
            const auto& id = ids[f];
            for (Eigen::Index i = 0; i < n; ++i) sums.row(id[static_cast<std::size_t>(i)]) += w[i] * m.row(i);
            for (Eigen::Index g = 0; g < sums.rows(); ++g) {
                if (wsum[f][g] > 0.0) sums.row(g) /= wsum[f][g];
                else sums.row(g).setZero();
            }
            for (Eigen::Index c = 0; c < k; ++c) worst = std::max(worst, sums.col(c).cwiseAbs().maxCoeff() / scale[c]);
            for (Eigen::Index i = 0; i < n; ++i) m.row(i) -= sums.row(id[static_cast<std::size_t>(i)]);
        }
        if (worst <= tol) {
            ++sweep;
            break;
        }
    }
    if (ids.size() > 1 && sweep >= sweeps_cap) {
        throw NumericError("fixed-effect absorption did not converge in " + std::to_string(max_sweeps) + " sweeps");
    }
    return sweep;
}

namespace {

Eigen::MatrixXd one_way_meat(const Eigen::MatrixXd& xt, const Eigen::VectorXd& resid, const Eigen::VectorXd& w,
                             const std::vector<int>& cluster, std::size_t* n_clusters) {
    std::size_t levels = 0;
    const std::vector<int> id = dense_ids(cluster, &levels);
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(levels), xt.cols());
    for (Eigen::Index i = 0; i < xt.rows(); ++i) s.row(id[static_cast<std::size_t>(i)]) += (w[i] * resid[i]) * xt.row(i);
    if (n_clusters) *n_clusters = levels;
    return s.transpose() * s;
}

Eigen::MatrixXd bread(const Eigen::MatrixXd& xt, const Eigen::VectorXd& w) {
    const Eigen::MatrixXd xtwx = xt.transpose() * w.asDiagonal() * xt;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(xtwx);
    if (ldlt.info() != Eigen::Success) throw NumericError("singular design in covariance");
    return ldlt.solve(Eigen::MatrixXd::Identity(xt.cols(), xt.cols()));
}

double small_sample(std::size_t c, std::size_t n, std::size_t k) {
    const double cc = static_cast<double>(c), nn = static_cast<double>(n), kk = static_cast<double>(k);
    if (c < 2 || nn <= kk) return kNaN;
    return cc / (cc - 1.0) * (nn - 1.0) / (nn - kk);
}

}  // namespace

Eigen::MatrixXd cluster_cov(const Eigen::MatrixXd& xt, const Eigen::VectorXd& resid, const Eigen::VectorXd& w,
                            const std::vector<int>& cluster) {
    std::size_t c = 0;
    const Eigen::MatrixXd meat = one_way_meat(xt, resid, w, cluster, &c);
    if (c < 2) throw NumericError("clustered covariance needs at least two clusters");
    const Eigen::MatrixXd b = bread(xt, w);
    return small_sample(c, static_cast<std::size_t>(xt.rows()), static_cast<std::size_t>(xt.cols())) * (b * meat * b);
}

ClusterCov dcluster_cov(const Eigen::MatrixXd& xt, const Eigen::VectorXd& resid, const Eigen::VectorXd& w,
                        const std::vector<int>& cluster_a, const std::vector<int>& cluster_b) {
    const auto n = static_cast<std::size_t>(xt.rows());
    const auto k = static_cast<std::size_t>(xt.cols());
    if (cluster_a.size() != n || cluster_b.size() != n) throw ParameterError("cluster ids do not match the data");
    std::vector<long long> both(n);
    for (std::size_t i = 0; i < n; ++i) both[i] = pair_key(cluster_a[i], cluster_b[i]);
    std::size_t levels_ab = 0;
    const std::vector<int> ab = dense_ids(both, &levels_ab);

    std::size_t ca = 0, cb = 0, cab = 0;
    const Eigen::MatrixXd ma = one_way_meat(xt, resid, w, cluster_a, &ca);
    const Eigen::MatrixXd mb = one_way_meat(xt, resid, w, cluster_b, &cb);
    const Eigen::MatrixXd mab = one_way_meat(xt, resid, w, ab, &cab);
    if (ca < 2 || cb < 2) throw NumericError("double clustering needs at least two clusters in each dimension");
    const Eigen::MatrixXd b = bread(xt, w);
    const Eigen::MatrixXd meat = small_sample(ca, n, k) * ma + small_sample(cb, n, k) * mb -
                                 (cab >= 2 ? small_sample(cab, n, k) : 1.0) * mab;
    ClusterCov out;
    out.vcov = b * meat * b;
    out.vcov = 0.5 * (out.vcov + out.vcov.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out.vcov);
    if (eig.info() == Eigen::Success && eig.eigenvalues().minCoeff() < 0.0) {
        const Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(0.0);
        out.vcov = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
        out.floored = true;
    }
    return out;
}

FEResult twoway_fe_fit(const PanelData& data, Absorb absorb, const FeOptions& opts) {
    const std::size_t k_in = data.names.size();
    std::vector<const PanelObs*> rows;
    rows.reserve(data.obs.size());
    for (const auto& o : data.obs) {
        if (o.x.size() != k_in) throw DataError("panel row has " + std::to_string(o.x.size()) + " covariates, expected " +
                                                std::to_string(k_in));
        if (!(o.weight >= 0.0) || !std::isfinite(o.weight)) throw DataError("negative or non-finite panel weight");
        if (!std::isfinite(o.y) || !std::all_of(o.x.begin(), o.x.end(), [](double v) { return std::isfinite(v); })) {
            throw DataError("non-finite panel value");
        }
        if (o.weight > 0.0) rows.push_back(&o);
    }
    // Deterministic accumulation order regardless of input order.
    std::stable_sort(rows.begin(), rows.end(), [](const PanelObs* a, const PanelObs* b) {
        if (a->firm != b->firm) return a->firm < b->firm;
        if (a->date != b->date) return a->date < b->date;
        return a->cell < b->cell;
    });

    const bool with_const = absorb == Absorb::None;
    std::vector<std::string> names;
    if (with_const) names.push_back("const");
    names.insert(names.end(), data.names.begin(), data.names.end());
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto k = static_cast<Eigen::Index>(names.size());

    FEResult out;
    out.n = rows.size();
    out.firm.resize(rows.size());
    out.date.resize(rows.size());
    Eigen::MatrixXd m(n, k + 1);
    out.w.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const PanelObs& o = *rows[static_cast<std::size_t>(i)];
        m(i, 0) = o.y;
        Eigen::Index c = 1;
        if (with_const) m(i, c++) = 1.0;
        for (double v : o.x) m(i, c++) = v;
        out.w[i] = o.weight;
        out.firm[static_cast<std::size_t>(i)] = o.firm;
        out.date[static_cast<std::size_t>(i)] = o.date;
    }
    {
        std::size_t nf = 0, nd = 0;
        dense_ids(out.firm, &nf);
        dense_ids(out.date, &nd);
        out.n_firms = nf;
        out.n_dates = nd;
    }
    if (out.n_firms < 2 || out.n_dates < 2) throw DataError("panel needs at least two firms and two dates");

    const Eigen::VectorXd orig_norm2 = (m.array().square().colwise() * out.w.array()).colwise().sum();

    std::vector<std::vector<int>> factors;
    auto column = [&](auto pick) {
        std::vector<long long> raw(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) raw[i] = pick(*rows[i]);
        return dense_ids(raw, nullptr);
    };
    const auto firm_f = column([](const PanelObs& o) { return static_cast<long long>(o.firm); });
    const auto date_f = column([](const PanelObs& o) { return static_cast<long long>(o.date); });
    switch (absorb) {
        case Absorb::None: break;
        case Absorb::Firm: factors = {firm_f}; break;
        case Absorb::Date: factors = {date_f}; break;
        case Absorb::FirmDate: factors = {firm_f, date_f}; break;
        case Absorb::FirmCellDate:
            factors = {column([](const PanelObs& o) { return pair_key(o.firm, o.cell); }), date_f};
            break;
        case Absorb::FirmDateExtra:
            factors = {firm_f, date_f, column([](const PanelObs& o) { return static_cast<long long>(o.extra); })};
            break;
    }
    out.sweeps = absorb_factors(m, out.w, factors, opts.demean_tolerance, opts.max_sweeps);

    // Greedy collinearity screen on the weighted Gram matrix, in column order.
    const Eigen::MatrixXd xall = m.rightCols(k);
    const Eigen::MatrixXd gram = xall.transpose() * out.w.asDiagonal() * xall;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < k; ++j) {
        double r2 = gram(j, j);
        if (!keep.empty()) {
            const auto s = static_cast<Eigen::Index>(keep.size());
            Eigen::MatrixXd gss(s, s);
            Eigen::VectorXd gsj(s);
            for (Eigen::Index a = 0; a < s; ++a) {
                gsj[a] = gram(keep[static_cast<std::size_t>(a)], j);
                for (Eigen::Index b = 0; b < s; ++b) gss(a, b) = gram(keep[static_cast<std::size_t>(a)], keep[static_cast<std::size_t>(b)]);
            }
            r2 -= gsj.dot(gss.ldlt().solve(gsj));
        }
        const double base = orig_norm2[j + 1];
        if (base > 0.0 && r2 > opts.collinearity_tolerance * base) keep.push_back(j);
        else out.dropped.push_back(names[static_cast<std::size_t>(j)]);
    }

    out.xt.resize(n, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c) {
        out.xt.col(static_cast<Eigen::Index>(c)) = xall.col(keep[c]);
        out.names.push_back(names[static_cast<std::size_t>(keep[c])]);
    }
    out.yt = m.col(0);
    const Eigen::VectorXd sw = out.w.cwiseSqrt();
    if (keep.empty()) {
        out.coefs.resize(0);
        out.resid = out.yt;
    } else {
        out.coefs = (sw.asDiagonal() * out.xt).colPivHouseholderQr().solve(sw.asDiagonal() * out.yt);
        out.resid = out.yt - out.xt * out.coefs;
    }
    const double wsum = out.w.sum();
    const double ybar = out.w.dot(out.yt) / wsum;
    const double tss = (out.w.array() * (out.yt.array() - ybar).square()).sum();
    const double rss = (out.w.array() * out.resid.array().square()).sum();
    out.r2_within = tss > 0.0 ? 1.0 - rss / tss : 0.0;
    if (keep.empty()) {
        out.vcov.resize(0, 0);
    } else {
        const ClusterCov cov = dcluster_cov(out.xt, out.resid, out.w, out.firm, out.date);
        out.vcov = cov.vcov;
        out.vcov_floored = cov.floored;
    }
    return out;
}

std::vector<int> moneyness_bins(const std::vector<DensityObs>& panel, const BinnedOptions& opts) {
    if (opts.n_bins < 1) throw ParameterError("n_bins must be positive");
    if (!(opts.hi > opts.lo)) throw ParameterError("empty moneyness window");
    std::vector<int> bin(panel.size(), -1);
    std::vector<std::size_t> inside;
    for (std::size_t i = 0; i < panel.size(); ++i) {
        if (panel[i].moneyness >= opts.lo && panel[i].moneyness <= opts.hi) inside.push_back(i);
    }
    if (opts.mode == BinMode::EqualWidth) {
        const double width = (opts.hi - opts.lo) / opts.n_bins;
        for (std::size_t i : inside) {
            bin[i] = std::min(opts.n_bins - 1, static_cast<int>((panel[i].moneyness - opts.lo) / width));
        }
        return bin;
    }
    std::stable_sort(inside.begin(), inside.end(), [&](std::size_t a, std::size_t b) {
        const DensityObs& x = panel[a];
        const DensityObs& y = panel[b];
        if (x.moneyness != y.moneyness) return x.moneyness < y.moneyness;
        if (x.firm != y.firm) return x.firm < y.firm;
        return x.date < y.date;
    });
    const std::size_t total = inside.size();
    for (std::size_t r = 0; r < total; ++r) {
        bin[inside[r]] = static_cast<int>(r * static_cast<std::size_t>(opts.n_bins) / total);
    }
    return bin;
}

TEProfile rnd_te_binned(const std::vector<DensityObs>& panel, const BinnedOptions& opts) {
    std::vector<int> bin = moneyness_bins(panel, opts);
    const int nb = opts.n_bins;
    std::vector<std::size_t> count(static_cast<std::size_t>(nb), 0);
    for (int b : bin) {
        if (b >= 0) ++count[static_cast<std::size_t>(b)];
    }
    // Empty bins fold into the next non-empty one (or the previous at the end).
    std::vector<int> target(static_cast<std::size_t>(nb));
    std::vector<bool> merged(static_cast<std::size_t>(nb), false);
    for (int b = 0; b < nb; ++b) target[static_cast<std::size_t>(b)] = b;
    for (int b = 0; b < nb; ++b) {
        if (count[static_cast<std::size_t>(b)] > 0) continue;
        int t = b + 1;
        while (t < nb && count[static_cast<std::size_t>(t)] == 0) ++t;
        if (t == nb) {
            t = b - 1;
            while (t >= 0 && count[static_cast<std::size_t>(t)] == 0) --t;
        }
        if (t < 0) throw DataError("no density observations inside the moneyness window");
        merged[static_cast<std::size_t>(t)] = true;
        target[static_cast<std::size_t>(b)] = t;
    }
    std::vector<int> live;
    for (int b = 0; b < nb; ++b) {
        if (count[static_cast<std::size_t>(b)] > 0) live.push_back(b);
    }

    PanelData data;
    for (int b : live) data.names.push_back("treated_bin_" + std::to_string(b));
    std::vector<double> msum(live.size(), 0.0);
    std::vector<std::size_t> mcount(live.size(), 0);
    for (std::size_t i = 0; i < panel.size(); ++i) {
        if (bin[i] < 0) continue;
        const int b = target[static_cast<std::size_t>(bin[i])];
        const auto slot = static_cast<std::size_t>(std::lower_bound(live.begin(), live.end(), b) - live.begin());
        PanelObs o;
        o.firm = panel[i].firm;
        o.date = panel[i].date;
        o.y = panel[i].density;
        o.cell = b;
        o.x.assign(live.size(), 0.0);
        if (panel[i].treated) o.x[slot] = 1.0;
        data.obs.push_back(std::move(o));
        msum[slot] += panel[i].moneyness;
        ++mcount[slot];
    }
    const FEResult fit = twoway_fe_fit(data, Absorb::FirmCellDate);

    TEProfile te;
    for (std::size_t s = 0; s < live.size(); ++s) {
        const std::string& name = data.names[s];
        const double d = fit.coef(name);
        const double se = fit.se(name);
        te.points.push_back(msum[s] / static_cast<double>(mcount[s]));
        te.delta.push_back(d);
        te.se.push_back(se);
        te.ci_low.push_back(d - kZ95 * se);
        te.ci_high.push_back(d + kZ95 * se);
        te.flagged.push_back(merged[static_cast<std::size_t>(live[s])] || !std::isfinite(d));
        te.counts.push_back(mcount[s]);
    }
    return te;
}

TEProfile rnd_te_kernel(const std::vector<DensityObs>& panel, const KernelTeOptions& opts) {
    if (!(opts.bandwidth > 0.0)) throw ParameterError("kernel bandwidth must be positive");
    TEProfile te;
    for (double m0 : opts.points) {
        PanelData data;
        data.names = {"treated"};
        double sw = 0.0, sw2 = 0.0;
        for (const auto& r : panel) {
            const double u = (r.moneyness - m0) / opts.bandwidth;
            const double w = std::exp(-0.5 * u * u);
            if (w < 1e-12) continue;
            sw += w;
            sw2 += w * w;
            data.obs.push_back({r.firm, r.date, r.density, {r.treated ? 1.0 : 0.0}, w, 0, 0});
        }
        const double eff = sw2 > 0.0 ? sw * sw / sw2 : 0.0;
        double d = kNaN, se = kNaN;
        bool flagged = eff < opts.min_effective_n;
        try {
            const FEResult fit = twoway_fe_fit(data, Absorb::FirmDate);
            d = fit.coef("treated");
            se = fit.se("treated");
        } catch (const Error&) {
            flagged = true;
        }
        if (!std::isfinite(d)) flagged = true;
        te.points.push_back(m0);
        te.delta.push_back(d);
        te.se.push_back(se);
        te.ci_low.push_back(d - kZ95 * se);
        te.ci_high.push_back(d + kZ95 * se);
        te.flagged.push_back(flagged);
        te.counts.push_back(static_cast<std::size_t>(std::llround(eff)));
    }
    return te;
}

double total_variation(const std::vector<double>& v) {
    double tv = 0.0;
    for (std::size_t i = 1; i < v.size(); ++i) tv += std::abs(v[i] - v[i - 1]);
    return tv;
}

namespace {

bool flag_of(const IvObs& o, TreatFlag f) {
    switch (f) {
        case TreatFlag::TreatedNow: return o.treated_now;
        case TreatFlag::AfterFirst: return o.after_first;
        case TreatFlag::AfterLast: return o.after_last;
    }
    return false;
}

PanelData smile_design(const std::vector<IvObs>& panel, bool is_call, TreatFlag flag) {
    PanelData d;
    d.names = {"KS", "sqrt_T", "sqrt_T_x_KS", "treated", "treated_x_KS", "treated_x_sqrt_T", "treated_x_sqrt_T_x_KS"};
    for (const auto& o : panel) {
        if (o.is_call != is_call) continue;
        const double ks = o.moneyness, st = std::sqrt(o.maturity);
        const double tr = flag_of(o, flag) ? 1.0 : 0.0;
        d.obs.push_back({o.firm, o.date, o.iv, {ks, st, st * ks, tr, tr * ks, tr * st, tr * st * ks}, 1.0, 0, 0});
    }
    if (d.obs.empty()) throw DataError(std::string("no ") + (is_call ? "call" : "put") + " observations in the panel");
    return d;
}

}  // namespace

SmileTable smile_regression(const std::vector<IvObs>& panel, bool is_call, TreatFlag flag) {
    const PanelData d = smile_design(panel, is_call, flag);
    return {twoway_fe_fit(d, Absorb::None), twoway_fe_fit(d, Absorb::Firm), twoway_fe_fit(d, Absorb::Date),
            twoway_fe_fit(d, Absorb::FirmDate)};
}

SmileTable permanent_effect_regression(const std::vector<IvObs>& panel, bool is_call, TreatFlag flag) {
    if (flag == TreatFlag::TreatedNow) throw ParameterError("permanent-effect regression takes after_first or after_last");
    return smile_regression(panel, is_call, flag);
}

std::optional<double> crossover_maturity(double beta_tau, double delta_tau) {
    if (delta_tau == 0.0) return std::nullopt;
    const double root = -beta_tau / delta_tau;
    if (!(root > 0.0)) return std::nullopt;
    return root * root;
}

FwlSurface fwl_surface(const std::vector<IvObs>& panel, const FwlOptions& opts, TreatFlag flag) {
    if (!(opts.h_moneyness > 0.0) || !(opts.h_maturity > 0.0)) throw ParameterError("FWL bandwidths must be positive");
    std::size_t n_treated = 0;
    for (const auto& o : panel) n_treated += flag_of(o, flag) ? 1 : 0;
    const std::size_t n_control = panel.size() - n_treated;
    if (n_treated < opts.min_group_obs || n_control < opts.min_group_obs) {
        throw DataError("FWL surface needs at least " + std::to_string(opts.min_group_obs) +
                        " observations per group (control " + std::to_string(n_control) + ", treated " +
                        std::to_string(n_treated) + ")");
    }
    const auto n = static_cast<Eigen::Index>(panel.size());
    FwlSurface out;
    out.moneyness_grid = opts.moneyness_grid;
    out.maturity_grid = opts.maturity_grid;

    // Columns: IV, then the linear regressors used by the global-linear check.
    const int cols = opts.global_linear ? 6 : 1;
    Eigen::MatrixXd m(n, cols);
    std::vector<int> firm(panel.size()), date(panel.size());
    double grand = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const IvObs& o = panel[static_cast<std::size_t>(i)];
        m(i, 0) = o.iv;
        grand += o.iv;
        if (opts.global_linear) {
            const double tr = flag_of(o, flag) ? 1.0 : 0.0;
            const double st = std::sqrt(o.maturity);
            m.row(i).tail(5) << o.moneyness, st, tr, tr * o.moneyness, tr * st;
        }
        firm[static_cast<std::size_t>(i)] = o.firm;
        date[static_cast<std::size_t>(i)] = o.date;
    }
    grand /= static_cast<double>(n);
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
    absorb_factors(m, w, {firm, date}, 1e-13, 20000);
    out.residualized.resize(panel.size());
    for (Eigen::Index i = 0; i < n; ++i) out.residualized[static_cast<std::size_t>(i)] = m(i, 0) + grand;

    if (opts.global_linear) {
        out.linear_names = {"KS", "sqrt_T", "treated", "treated_x_KS", "treated_x_sqrt_T"};
        out.linear_coefs = m.rightCols(5).colPivHouseholderQr().solve(m.col(0));
    }

    const auto nm = static_cast<Eigen::Index>(opts.moneyness_grid.size());
    const auto nt = static_cast<Eigen::Index>(opts.maturity_grid.size());
    out.g.setConstant(nm, nt, kNaN);
    out.g_treated.setConstant(nm, nt, kNaN);
    out.sparse.setConstant(nm, nt, false);
    for (int group = 0; group < 2; ++group) {
        Eigen::MatrixXd& target = group == 0 ? out.g : out.g_treated;
        for (Eigen::Index a = 0; a < nm; ++a) {
            for (Eigen::Index b = 0; b < nt; ++b) {
                const double m0 = opts.moneyness_grid[static_cast<std::size_t>(a)];
                const double t0 = opts.maturity_grid[static_cast<std::size_t>(b)];
                Eigen::Matrix<double, 6, 6> xtx = Eigen::Matrix<double, 6, 6>::Zero();
                Eigen::Matrix<double, 6, 1> xty = Eigen::Matrix<double, 6, 1>::Zero();
                double sw = 0.0, sw2 = 0.0;
                for (std::size_t i = 0; i < panel.size(); ++i) {
                    if (flag_of(panel[i], flag) != (group == 1)) continue;
                    const double dm = (panel[i].moneyness - m0) / opts.h_moneyness;
                    const double dt = (panel[i].maturity - t0) / opts.h_maturity;
                    const double wk = std::exp(-0.5 * (dm * dm + dt * dt));
                    if (wk < 1e-14) continue;
                    Eigen::Matrix<double, 6, 1> z;
                    z << 1.0, dm, dt, dm * dm, dm * dt, dt * dt;
                    xtx.selfadjointView<Eigen::Lower>().rankUpdate(z, wk);
                    xty += wk * out.residualized[i] * z;
                    sw += wk;
                    sw2 += wk * wk;
                }
                const double eff = sw2 > 0.0 ? sw * sw / sw2 : 0.0;
                if (eff < opts.min_effective_n) out.sparse(a, b) = true;
                const Eigen::Matrix<double, 6, 6> full = xtx.selfadjointView<Eigen::Lower>();
                Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> es(full);
                if (es.eigenvalues().minCoeff() <= 1e-10 * std::max(es.eigenvalues().maxCoeff(), 1e-300)) {
                    out.sparse(a, b) = true;
                    continue;
                }
                target(a, b) = full.ldlt().solve(xty)[0];
            }
        }
    }
    out.delta_g = out.g_treated - out.g;
    return out;
}

}  // namespace rndkit
