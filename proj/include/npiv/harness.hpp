#pragma once

// Config-driven Monte Carlo rate sweeps, the verification suite and report I/O.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "npiv/error.hpp"
#include "npiv/estimators.hpp"
#include "npiv/funclass.hpp"
#include "npiv/rng.hpp"
#include "npiv/scenario.hpp"
#include "npiv/theory.hpp"

namespace npiv {

inline const std::vector<std::string>& known_estimators()
{
    static const std::vector<std::string> names{"penalized_minimax", "dikkala", "liao", "bennett_flip",
                                                "both_worlds"};
    return names;
}

struct EstimatorSpec {
    std::string name;
    /// liao: alpha_n = c n^(-1/3); both_worlds: mu_n constant
    double c = 1.0;
    /// both_worlds confidence level
    double delta = 0.1;
    /// fixed alpha / mu overriding the schedule
    std::optional<double> fixed;
};

struct FamilySpec {
    /// "sieve" or "realizable"
    std::string kind = "sieve";
    SieveOptions sieve;
    FamilyOptions realizable;
    /// remove h0 from H (guard tests)
    bool drop_anchor = false;
};

struct SlopeCheck {
    std::string estimator;
    /// "l2" or "proj_mse"
    std::string metric;
    double lo = 0.0;
    double hi = 0.0;
};

struct VerifySpec {
    std::size_t random_scenarios = 20;
    Eigen::Index x_size = 6;
    Eigen::Index z_size = 4;
    Eigen::Index spectrum = 2;
    std::size_t distractors = 7;
    std::size_t main_seeds = 1000;
    std::vector<std::size_t> main_n = {50};
    std::vector<double> eps_h = {0.05, 0.1, 0.2};
    std::vector<double> eps_g = {0.0, 0.1};
    std::size_t misspec_reps = 50;
    std::size_t misspec_n = 200;
};

struct RunConfig {
    nlohmann::json scenario;
    std::vector<EstimatorSpec> estimators;
    FamilySpec families;
    std::vector<std::size_t> n_grid;
    std::size_t reps = 50;
    std::uint64_t seed = 0;
    std::string output_dir;
    bool population = false;
    bool bound_checks = true;
    /// single-dataset size for the fit subcommand
    std::size_t fit_n = 1000;
    std::vector<SlopeCheck> slope_checks;
    VerifySpec verify;
    nlohmann::json raw;

    /// FNV-1a of the canonical (key-sorted, compact) config document.
    std::string hash() const
    {
        StableHash h;
        h.add(raw.dump());
        std::ostringstream os;
        os << std::hex << std::setw(16) << std::setfill('0') << h.value();
        return os.str();
    }
};

/// Geometric grid start, start*ratio, ... up to stop inclusive.
inline std::vector<std::size_t> geometric_grid(std::size_t start, std::size_t stop, std::size_t ratio = 2)
{
    if (start == 0 || ratio < 2 || stop < start) {
        throw ConfigError("n grid: need 1 <= start <= stop and ratio >= 2");
    }
    std::vector<std::size_t> g;
    for (std::size_t n = start; n <= stop; n *= ratio) {
        g.push_back(n);
    }
    return g;
}

namespace detail {

inline void check_grid(const std::vector<std::size_t>& g)
{
    if (g.empty()) {
        throw ConfigError("n grid is empty");
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (g[i] == 0 || (i > 0 && g[i] <= g[i - 1])) {
            throw ConfigError("n grid must be positive and strictly increasing");
        }
    }
}

} // namespace detail

/// Parses and validates a run config. `base_dir` resolves a relative scenario_file.
inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {})
{
    RunConfig c;
    try {
        if (!j.is_object()) {
            throw ConfigError("config must be a JSON object");
        }
        c.raw = j;
        if (j.contains("scenario")) {
            c.scenario = j.at("scenario");
        } else if (j.contains("scenario_file")) {
            const auto p = base_dir / j.at("scenario_file").get<std::string>();
            std::ifstream in(p);
            if (!in) {
                throw ConfigError("cannot open scenario file " + p.string());
            }
            // either a bare scenario document or another run config
            const auto doc = nlohmann::json::parse(in);
            c.scenario = doc.contains("scenario") ? doc.at("scenario") : doc;
        } else {
            throw ConfigError("config needs 'scenario' or 'scenario_file'");
        }

        for (const auto& e : j.value("estimators", nlohmann::json::array({{{"name", "penalized_minimax"}}}))) {
            EstimatorSpec s;
            s.name = e.is_string() ? e.get<std::string>() : e.at("name").get<std::string>();
            if (std::find(known_estimators().begin(), known_estimators().end(), s.name) ==
                known_estimators().end()) {
                throw ConfigError("unknown estimator '" + s.name + "'");
            }
            if (e.is_object()) {
                s.c = e.value("c", 1.0);
                s.delta = e.value("delta", 0.1);
                if (e.contains("alpha")) s.fixed = e.at("alpha").get<double>();
                if (e.contains("mu")) s.fixed = e.at("mu").get<double>();
            }
            if (s.c < 0.0 || !(s.delta > 0.0) || (s.fixed && *s.fixed < 0.0)) {
                throw ConfigError("estimator '" + s.name + "': negative constant or nonpositive delta");
            }
            c.estimators.push_back(s);
        }
        if (c.estimators.empty()) {
            throw ConfigError("estimator list is empty");
        }

        const auto fam = j.value("families", nlohmann::json::object());
        c.families.kind = fam.value("kind", std::string("sieve"));
        c.families.drop_anchor = fam.value("drop_anchor", false);
        if (c.families.kind == "sieve") {
            auto& s = c.families.sieve;
            s.directions = fam.value("directions", s.directions);
            s.null_direction = fam.value("null_direction", s.null_direction);
            s.grid = fam.value("grid", s.grid);
            s.g_radius = fam.value("g_radius", s.g_radius);
        } else if (c.families.kind == "realizable") {
            auto& r = c.families.realizable;
            r.distractors = fam.value("distractors", r.distractors);
            r.scale = fam.value("scale", r.scale);
            r.eps_h = fam.value("eps_h", 0.0);
            r.eps_g = fam.value("eps_g", 0.0);
            r.seed = fam.value("seed", std::uint64_t{0});
        } else {
            throw ConfigError("unknown family kind '" + c.families.kind + "'");
        }

        if (j.contains("n_grid")) {
            const auto& g = j.at("n_grid");
            if (g.is_array()) {
                c.n_grid = g.get<std::vector<std::size_t>>();
            } else {
                c.n_grid = geometric_grid(g.value("start", std::size_t{512}), g.value("stop", std::size_t{32768}),
                                          g.value("ratio", std::size_t{2}));
            }
        } else {
            c.n_grid = geometric_grid(512, 32768, 2);
        }
        detail::check_grid(c.n_grid);

        c.reps = j.value("reps", std::size_t{50});
        if (c.reps < 1) {
            throw ConfigError("reps must be at least 1");
        }
        c.seed = j.value("seed", std::uint64_t{0});
        c.output_dir = j.value("output_dir", std::string());
        const auto mode = j.value("mode", std::string("empirical"));
        if (mode != "empirical" && mode != "population") {
            throw ConfigError("mode must be 'empirical' or 'population'");
        }
        c.population = mode == "population";
        c.bound_checks = j.value("bound_checks", true);
        c.fit_n = j.value("fit_n", std::size_t{1000});
        if (c.fit_n < 1) {
            throw ConfigError("fit_n must be at least 1");
        }

        for (const auto& s : j.value("slope_checks", nlohmann::json::array())) {
            SlopeCheck sc{s.at("estimator").get<std::string>(), s.at("metric").get<std::string>(),
                          s.at("lo").get<double>(), s.at("hi").get<double>()};
            if (sc.metric != "l2" && sc.metric != "proj_mse") {
                throw ConfigError("slope check metric must be 'l2' or 'proj_mse'");
            }
            if (sc.lo > sc.hi) {
                throw ConfigError("slope check window is empty");
            }
            c.slope_checks.push_back(sc);
        }

        if (j.contains("verify")) {
            const auto& v = j.at("verify");
            auto& s = c.verify;
            s.random_scenarios = v.value("random_scenarios", s.random_scenarios);
            s.x_size = v.value("x_size", s.x_size);
            s.z_size = v.value("z_size", s.z_size);
            s.spectrum = v.value("spectrum", s.spectrum);
            s.distractors = v.value("distractors", s.distractors);
            s.main_seeds = v.value("main_seeds", s.main_seeds);
            s.main_n = v.value("main_n", s.main_n);
            s.eps_h = v.value("eps_h", s.eps_h);
            s.eps_g = v.value("eps_g", s.eps_g);
            s.misspec_reps = v.value("misspec_reps", s.misspec_reps);
            s.misspec_n = v.value("misspec_n", s.misspec_n);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    // fail early on a bad scenario
    (void)scenario_from_json(c.scenario);
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_run_config(j, path.parent_path());
}

// ---- slopes ------------------------------------------------------------------------

struct SlopeFit {
    double slope = 0.0;
    double std_error = 0.0;
};

/// OLS of log(value) on log(n).
inline SlopeFit fit_loglog_slope(const std::vector<std::pair<double, double>>& points)
{
    if (points.size() < 2) {
        throw InvalidArgument("fit_loglog_slope: need at least two points");
    }
    std::vector<double> lx;
    std::vector<double> ly;
    for (const auto& [n, v] : points) {
        if (!(n > 0.0) || !(v > 0.0)) {
            throw InvalidArgument("fit_loglog_slope: sizes and values must be positive");
        }
        lx.push_back(std::log(n));
        ly.push_back(std::log(v));
    }
    const double k = static_cast<double>(lx.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i] / k;
        my += ly[i] / k;
    }
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    if (!(sxx > 0.0)) {
        throw InvalidArgument("fit_loglog_slope: sizes must not all coincide");
    }
    SlopeFit f;
    f.slope = sxy / sxx;
    if (lx.size() > 2) {
        double rss = 0.0;
        for (std::size_t i = 0; i < lx.size(); ++i) {
            const double e = ly[i] - my - f.slope * (lx[i] - mx);
            rss += e * e;
        }
        f.std_error = std::sqrt(rss / (k - 2.0) / sxx);
    }
    return f;
}

// ---- rate sweep -------------------------------------------------------------------------

namespace detail {

inline bool same_value(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

inline double number_or_nan(const nlohmann::json& j)
{
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

} // namespace detail

struct RateRow {
    std::string estimator;
    std::size_t n = 0;
    /// completed replications
    std::size_t reps = 0;
    std::size_t failures = 0;
    double l2_mean = 0.0;
    double l2_median = 0.0;
    double l2_q10 = 0.0;
    double l2_q90 = 0.0;
    double l2_log_mean = 0.0;
    double proj_mse_mean = 0.0;
    double proj_mse_median = 0.0;
    double proj_mse_log_mean = 0.0;
    std::size_t violations = 0;
    /// both_worlds: fraction of replications with h0 in H_n (-1 otherwise)
    double h0_in_hn_rate = -1.0;
    std::vector<std::uint64_t> seeds;

    bool operator==(const RateRow& o) const
    {
        using detail::same_value;
        return estimator == o.estimator && n == o.n && reps == o.reps && failures == o.failures &&
               same_value(l2_mean, o.l2_mean) && same_value(l2_median, o.l2_median) && same_value(l2_q10, o.l2_q10) &&
               same_value(l2_q90, o.l2_q90) && same_value(l2_log_mean, o.l2_log_mean) &&
               same_value(proj_mse_mean, o.proj_mse_mean) && same_value(proj_mse_median, o.proj_mse_median) &&
               same_value(proj_mse_log_mean, o.proj_mse_log_mean) && violations == o.violations &&
               same_value(h0_in_hn_rate, o.h0_in_hn_rate) && seeds == o.seeds;
    }
};

struct SlopeSummary {
    std::string estimator;
    SlopeFit l2;
    SlopeFit l2_logs;
    SlopeFit proj_mse;
    SlopeFit proj_mse_logs;
    bool complete = true;

    bool operator==(const SlopeSummary& o) const
    {
        auto eq = [](const SlopeFit& a, const SlopeFit& b) {
            return detail::same_value(a.slope, b.slope) && detail::same_value(a.std_error, b.std_error);
        };
        return estimator == o.estimator && eq(l2, o.l2) && eq(l2_logs, o.l2_logs) && eq(proj_mse, o.proj_mse) &&
               eq(proj_mse_logs, o.proj_mse_logs) && complete == o.complete;
    }
};

struct RateReport {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<RateRow> rows;
    std::vector<SlopeSummary> slopes;
    nlohmann::json config;
    nlohmann::json scenario_summary;
    bool incomplete = false;

    bool operator==(const RateReport&) const = default;
};

namespace detail {

inline double quantile(std::vector<double> v, double q)
{
    if (v.empty()) {
        return 0.0;
    }
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double mean(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// NaN when any value is zero: exact recoveries leave the geometric mean undefined
inline double log_mean(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v) {
        if (!(x > 0.0)) return std::numeric_limits<double>::quiet_NaN();
        s += std::log(x);
    }
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline FamilyPair build_families(const Scenario& sc, const FamilySpec& spec, std::uint64_t seed)
{
    FamilyPair fp;
    if (spec.kind == "sieve") {
        fp = make_sieve_families(sc, spec.sieve);
    } else {
        auto opt = spec.realizable;
        opt.seed = opt.seed ^ seed;
        fp = make_realizable_families(sc, opt);
    }
    if (spec.drop_anchor) {
        std::vector<SpaceFun> rest;
        for (const auto& h : fp.h.members()) {
            if ((h - sc.truth.h0).cwiseAbs().maxCoeff() > kWitnessTol) {
                rest.push_back(h);
            }
        }
        if (rest.empty()) {
            rest.push_back(sc.truth.h0 + SpaceFun::Constant(sc.truth.h0.size(), 1.0));
        }
        fp.h = FiniteFamily(std::move(rest));
    }
    return fp;
}

inline FitResult run_estimator(const EstimatorSpec& e, const PayoffTable& t, const FamilyPair& fp, std::size_t n)
{
    if (e.name == "penalized_minimax") {
        return fit_penalized_minimax(t, fp.h, fp.g);
    }
    if (e.name == "dikkala") {
        return fit_dikkala(t, fp.h, fp.g);
    }
    if (e.name == "liao") {
        return fit_liao(t, fp.h, fp.g, e.fixed.value_or(n > 0 ? liao_alpha(n, e.c) : 0.0));
    }
    if (e.name == "bennett_flip") {
        return fit_bennett_flip(t, fp.h, fp.g);
    }
    if (e.name == "both_worlds") {
        const double mu = e.fixed.value_or(
            n > 0 ? both_worlds_mu(fp.h.sup_bound(), fp.g.sup_bound(), fp.h.size(), fp.g.size(), e.delta, n, e.c)
                  : 0.0);
        return fit_both_worlds(t, fp.h, fp.g, mu);
    }
    throw ConfigError("unknown estimator '" + e.name + "'");
}

inline nlohmann::json scenario_summary(const Scenario& sc)
{
    return {{"x_size", sc.x_space().size()},
            {"z_size", sc.z_space().size()},
            {"nullspace_dim", sc.truth.nullspace_dim},
            {"source_norm", sc.truth.source_norm},
            {"singular_values", to_std(sc.dec.values)}};
}

} // namespace detail

/// One fit on one dataset, evaluated, with the main-bound check for the
/// penalized minimax estimator.
struct ReplicationResult {
    bool ok = false;
    std::string error;
    Metrics metrics;
    std::optional<BoundReport> bound;
    std::optional<bool> h0_in_hn;
};

inline ReplicationResult run_replication(const Scenario& sc, const FamilyPair& fp, const EstimatorSpec& e,
                                         const Dataset& ds, bool bound_checks)
{
    ReplicationResult r;
    try {
        const auto m = Moments::from_dataset(ds, fp.h.dim(), fp.g.dim());
        const auto t = PayoffTable::build(m, fp.h, fp.g);
        const auto fit = detail::run_estimator(e, t, fp, ds.size());
        r.metrics = evaluate(fit, sc.truth, sc.op);
        if (bound_checks && e.name == "penalized_minimax") {
            r.bound = check_main_bound(fit, sc, fp.h, fp.g, empirical_sup(sc, m, fp.h, fp.g));
        }
        if (e.name == "both_worlds") {
            const auto anchor = fp.h.find(sc.truth.h0, kWitnessTol);
            const auto& cs = fit.diagnostics.confidence_set;
            r.h0_in_hn = anchor && std::find(cs.begin(), cs.end(), *anchor) != cs.end();
        }
        r.ok = true;
    } catch (const std::exception& ex) {
        r.error = ex.what();
    }
    return r;
}

inline std::vector<SlopeSummary> compute_slopes(const std::vector<RateRow>& rows)
{
    std::vector<std::string> order;
    for (const auto& r : rows) {
        if (std::find(order.begin(), order.end(), r.estimator) == order.end()) {
            order.push_back(r.estimator);
        }
    }
    std::vector<SlopeSummary> out;
    for (const auto& name : order) {
        SlopeSummary s;
        s.estimator = name;
        std::vector<std::pair<double, double>> l2;
        std::vector<std::pair<double, double>> l2l;
        std::vector<std::pair<double, double>> pm;
        std::vector<std::pair<double, double>> pml;
        for (const auto& r : rows) {
            if (r.estimator != name) continue;
            if (r.reps == 0 || r.failures > 0) s.complete = false;
            if (r.reps == 0) continue;
            const double n = static_cast<double>(r.n);
            if (r.l2_mean > 0.0) l2.emplace_back(n, r.l2_mean);
            if (r.proj_mse_mean > 0.0) pm.emplace_back(n, r.proj_mse_mean);
            l2l.emplace_back(n, std::exp(r.l2_log_mean));
            pml.emplace_back(n, std::exp(r.proj_mse_log_mean));
        }
        auto fit = [&](const std::vector<std::pair<double, double>>& p, SlopeFit& dst, bool primary) {
            try {
                dst = fit_loglog_slope(p);
            } catch (const InvalidArgument&) {
                dst.slope = std::numeric_limits<double>::quiet_NaN();
                s.complete = s.complete && !primary;
            }
        };
        fit(l2, s.l2, true);
        fit(l2l, s.l2_logs, false);
        fit(pm, s.proj_mse, true);
        fit(pml, s.proj_mse_logs, false);
        out.push_back(s);
    }
    return out;
}

/// Every (estimator, n, replication) draws its own dataset from
/// derive_seed(seed, estimator, n, replication).
inline RateReport run_rate_sweep(const RunConfig& cfg)
{
    const Scenario sc = scenario_from_json(cfg.scenario);
    const FamilyPair fp = detail::build_families(sc, cfg.families, cfg.seed);
    RateReport rep;
    rep.config_hash = cfg.hash();
    rep.seed = cfg.seed;
    rep.config = cfg.raw;
    rep.scenario_summary = detail::scenario_summary(sc);
    rep.scenario_summary["h_size"] = fp.h.size();
    rep.scenario_summary["g_size"] = fp.g.size();

    for (const auto& e : cfg.estimators) {
        for (std::size_t n : cfg.n_grid) {
            RateRow row;
            row.estimator = e.name;
            row.n = n;
            std::vector<double> l2;
            std::vector<double> pm;
            std::size_t in_hn = 0;
            std::size_t hn_count = 0;
            for (std::size_t k = 0; k < cfg.reps; ++k) {
                const std::uint64_t seed = derive_seed(cfg.seed, e.name, n, k);
                row.seeds.push_back(seed);
                const auto res = run_replication(sc, fp, e, sample(sc, n, seed), cfg.bound_checks);
                if (!res.ok) {
                    ++row.failures;
                    continue;
                }
                l2.push_back(res.metrics.l2_error);
                pm.push_back(res.metrics.projected_mse);
                if (res.bound && res.bound->status == CheckStatus::violated) {
                    ++row.violations;
                }
                if (res.h0_in_hn) {
                    ++hn_count;
                    in_hn += *res.h0_in_hn ? 1 : 0;
                }
            }
            row.reps = l2.size();
            row.l2_mean = detail::mean(l2);
            row.l2_median = detail::quantile(l2, 0.5);
            row.l2_q10 = detail::quantile(l2, 0.1);
            row.l2_q90 = detail::quantile(l2, 0.9);
            row.l2_log_mean = detail::log_mean(l2);
            row.proj_mse_mean = detail::mean(pm);
            row.proj_mse_median = detail::quantile(pm, 0.5);
            row.proj_mse_log_mean = detail::log_mean(pm);
            if (hn_count > 0) {
                row.h0_in_hn_rate = static_cast<double>(in_hn) / static_cast<double>(hn_count);
            }
            rep.incomplete = rep.incomplete || row.failures > 0;
            rep.rows.push_back(std::move(row));
        }
    }
    rep.slopes = compute_slopes(rep.rows);
    return rep;
}

struct SlopeVerdict {
    SlopeCheck check;
    double slope = 0.0;
    bool pass = false;
};

inline std::vector<SlopeVerdict> evaluate_slope_checks(const RateReport& rep, const std::vector<SlopeCheck>& checks)
{
    std::vector<SlopeVerdict> out;
    for (const auto& c : checks) {
        SlopeVerdict v{c, std::numeric_limits<double>::quiet_NaN(), false};
        for (const auto& s : rep.slopes) {
            if (s.estimator == c.estimator) {
                v.slope = c.metric == "l2" ? s.l2.slope : s.proj_mse.slope;
            }
        }
        v.pass = std::isfinite(v.slope) && v.slope >= c.lo && v.slope <= c.hi;
        out.push_back(v);
    }
    return out;
}

/// Merges reports produced from one config (for example per-estimator shards).
inline RateReport aggregate_reports(const std::vector<RateReport>& reports)
{
    if (reports.empty()) {
        throw InvalidArgument("aggregate_reports: nothing to aggregate");
    }
    RateReport out = reports.front();
    out.rows.clear();
    std::set<std::pair<std::string, std::size_t>> seen;
    for (const auto& r : reports) {
        if (r.config_hash != out.config_hash) {
            throw Error("aggregate_reports: config hash mismatch (" + r.config_hash + " vs " + out.config_hash + ")");
        }
        for (const auto& row : r.rows) {
            if (seen.emplace(row.estimator, row.n).second) {
                out.rows.push_back(row);
            }
        }
        out.incomplete = out.incomplete || r.incomplete;
    }
    out.slopes = compute_slopes(out.rows);
    return out;
}

// ---- report I/O --------------------------------------------------------------------------

inline constexpr const char* kRateCsvHeader = "estimator,n,reps,l2_mean,l2_median,proj_mse_mean,violations";

namespace detail {

inline nlohmann::json slope_json(const SlopeFit& f)
{
    return {{"slope", std::isfinite(f.slope) ? nlohmann::json(f.slope) : nlohmann::json(nullptr)},
            {"std_error", f.std_error}};
}

inline SlopeFit slope_from_json(const nlohmann::json& j)
{
    SlopeFit f;
    f.slope = number_or_nan(j.at("slope"));
    f.std_error = number_or_nan(j.at("std_error"));
    return f;
}

} // namespace detail

inline nlohmann::json to_json_doc(const RateReport& r)
{
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& x : r.rows) {
        rows.push_back({{"estimator", x.estimator},
                        {"n", x.n},
                        {"reps", x.reps},
                        {"failures", x.failures},
                        {"l2_mean", x.l2_mean},
                        {"l2_median", x.l2_median},
                        {"l2_q10", x.l2_q10},
                        {"l2_q90", x.l2_q90},
                        {"l2_log_mean", x.l2_log_mean},
                        {"proj_mse_mean", x.proj_mse_mean},
                        {"proj_mse_median", x.proj_mse_median},
                        {"proj_mse_log_mean", x.proj_mse_log_mean},
                        {"violations", x.violations},
                        {"h0_in_hn_rate", x.h0_in_hn_rate},
                        {"seeds", x.seeds}});
    }
    nlohmann::json slopes = nlohmann::json::array();
    for (const auto& s : r.slopes) {
        slopes.push_back({{"estimator", s.estimator},
                          {"l2", detail::slope_json(s.l2)},
                          {"l2_mean_of_logs", detail::slope_json(s.l2_logs)},
                          {"proj_mse", detail::slope_json(s.proj_mse)},
                          {"proj_mse_mean_of_logs", detail::slope_json(s.proj_mse_logs)},
                          {"complete", s.complete}});
    }
    return {{"config_hash", r.config_hash}, {"seed", r.seed},         {"incomplete", r.incomplete},
            {"config", r.config},           {"scenario", r.scenario_summary}, {"rows", rows},
            {"slopes", slopes}};
}

inline RateReport rate_report_from_json(const nlohmann::json& j)
{
    RateReport r;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.incomplete = j.at("incomplete").get<bool>();
    r.config = j.at("config");
    r.scenario_summary = j.at("scenario");
    for (const auto& x : j.at("rows")) {
        RateRow row;
        row.estimator = x.at("estimator").get<std::string>();
        row.n = x.at("n").get<std::size_t>();
        row.reps = x.at("reps").get<std::size_t>();
        row.failures = x.at("failures").get<std::size_t>();
        row.l2_mean = x.at("l2_mean").get<double>();
        row.l2_median = x.at("l2_median").get<double>();
        row.l2_q10 = x.at("l2_q10").get<double>();
        row.l2_q90 = x.at("l2_q90").get<double>();
        row.l2_log_mean = detail::number_or_nan(x.at("l2_log_mean"));
        row.proj_mse_mean = x.at("proj_mse_mean").get<double>();
        row.proj_mse_median = x.at("proj_mse_median").get<double>();
        row.proj_mse_log_mean = detail::number_or_nan(x.at("proj_mse_log_mean"));
        row.violations = x.at("violations").get<std::size_t>();
        row.h0_in_hn_rate = x.at("h0_in_hn_rate").get<double>();
        row.seeds = x.at("seeds").get<std::vector<std::uint64_t>>();
        r.rows.push_back(std::move(row));
    }
    for (const auto& x : j.at("slopes")) {
        SlopeSummary s;
        s.estimator = x.at("estimator").get<std::string>();
        s.l2 = detail::slope_from_json(x.at("l2"));
        s.l2_logs = detail::slope_from_json(x.at("l2_mean_of_logs"));
        s.proj_mse = detail::slope_from_json(x.at("proj_mse"));
        s.proj_mse_logs = detail::slope_from_json(x.at("proj_mse_mean_of_logs"));
        s.complete = x.at("complete").get<bool>();
        r.slopes.push_back(s);
    }
    return r;
}

inline void write_rate_csv(const RateReport& r, std::ostream& os)
{
    os << kRateCsvHeader << '\n';
    os << std::setprecision(17);
    for (const auto& x : r.rows) {
        os << x.estimator << ',' << x.n << ',' << x.reps << ',' << x.l2_mean << ',' << x.l2_median << ','
           << x.proj_mse_mean << ',' << x.violations << '\n';
    }
}

inline void write_text(const std::filesystem::path& p, const std::string& text)
{
    std::ofstream out(p, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + p.string());
    }
    out << text;
    if (!out) {
        throw Error("write failed for " + p.string());
    }
}

/// Writes <dir>/rates.csv and/or <dir>/rates.json; returns the paths written.
inline std::vector<std::filesystem::path> emit_reports(const RateReport& r, const std::filesystem::path& dir,
                                                       const std::vector<std::string>& formats = {"csv", "json"})
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
    }
    std::vector<std::filesystem::path> written;
    for (const auto& f : formats) {
        if (f == "csv") {
            std::ostringstream os;
            write_rate_csv(r, os);
            write_text(dir / "rates.csv", os.str());
            written.push_back(dir / "rates.csv");
        } else if (f == "json") {
            write_text(dir / "rates.json", to_json_doc(r).dump(2) + "\n");
            written.push_back(dir / "rates.json");
        } else {
            throw InvalidArgument("emit_reports: unknown format '" + f + "'");
        }
    }
    return written;
}

inline RateReport load_rate_report(const std::filesystem::path& p)
{
    std::ifstream in(p);
    if (!in) {
        throw Error("cannot open " + p.string());
    }
    return rate_report_from_json(nlohmann::json::parse(in));
}

// ---- verification suite --------------------------------------------------------------------

struct CheckTally {
    std::string name;
    std::size_t passed = 0;
    std::size_t failed = 0;
    std::size_t unmet = 0;
    /// largest observed violation (lhs - rhs or residual), for diagnostics
    double worst = 0.0;
    nlohmann::json details = nlohmann::json::object();

    void record(CheckStatus s)
    {
        if (s == CheckStatus::pass) ++passed;
        else if (s == CheckStatus::violated) ++failed;
        else ++unmet;
    }
};

struct VerifySummary {
    std::string config_hash;
    std::vector<CheckTally> checks;

    bool all_pass() const
    {
        return std::all_of(checks.begin(), checks.end(), [](const CheckTally& c) { return c.failed == 0; });
    }
};

namespace detail {

inline std::vector<Scenario> verify_scenarios(const RunConfig& cfg)
{
    std::vector<Scenario> out{scenario_from_json(cfg.scenario)};
    Rng rng(derive_seed(cfg.seed, "verify_scenarios", 0, 0));
    const auto& v = cfg.verify;
    for (std::size_t i = 0; i < v.random_scenarios; ++i) {
        out.push_back(make_spectral_scenario(random_spectral_spec(rng, v.x_size, v.z_size, v.spectrum)));
    }
    return out;
}

} // namespace detail

/// Runs every registered check over the configured scenario plus random spectral
/// scenarios. The configured family spec is honoured for the main bound, so a
/// spec with drop_anchor yields precondition_unmet rather than a failure.
inline VerifySummary verify_suite(const RunConfig& cfg)
{
    VerifySummary sum;
    sum.config_hash = cfg.hash();
    const auto& v = cfg.verify;
    const auto scenarios = detail::verify_scenarios(cfg);

    CheckTally ident{"identification"};
    CheckTally main{"main_bound"};
    CheckTally misspec{"misspec_bound"};
    CheckTally witness{"lemma2_witness"};
    CheckTally saddle{"saddle"};
    CheckTally counter{"saddle_null_shift_rejected"};
    CheckTally restrict{"restriction_lemma"};
    CheckTally source{"source_identity"};

    double envelope = 0.0;
    for (std::size_t s = 0; s < scenarios.size(); ++s) {
        const Scenario& sc = scenarios[s];
        FamilySpec fam = cfg.families;
        if (s > 0 || fam.kind != "realizable") {
            fam.kind = "realizable";
            fam.realizable.distractors = v.distractors;
        }
        const auto fp0 = detail::build_families(sc, fam, derive_seed(cfg.seed, "families", s, 0));

        // identification in population mode
        {
            const auto pop = Moments::population_of(sc);
            if (realizable(sc, fp0.h, fp0.g)) {
                const auto fit = fit_penalized_minimax(pop, fp0.h, fp0.g);
                const double e = evaluate(fit, sc.truth, sc.op).l2_error;
                ident.record(e < 1e-9 ? CheckStatus::pass : CheckStatus::violated);
                ident.worst = std::max(ident.worst, e);
            } else {
                ident.record(CheckStatus::precondition_unmet);
            }
        }

        // main bound over seeds and sample sizes
        const std::size_t seeds = std::max<std::size_t>(1, v.main_seeds / scenarios.size());
        for (std::size_t n : v.main_n) {
            for (std::size_t k = 0; k < seeds; ++k) {
                const auto fp = detail::build_families(sc, fam, derive_seed(cfg.seed, "families", s, k + 1));
                const auto ds = sample(sc, n, derive_seed(cfg.seed, "main_bound", n, s * 1000003 + k));
                const auto m = Moments::from_dataset(ds, fp.h.dim(), fp.g.dim());
                const auto fit = fit_penalized_minimax(m, fp.h, fp.g);
                const double mm = empirical_sup(sc, m, fp.h, fp.g);
                const auto b = check_main_bound(fit, sc, fp.h, fp.g, mm);
                main.record(b.status);
                if (b.status != CheckStatus::precondition_unmet) {
                    main.worst = std::max(main.worst, b.lhs - b.rhs);
                    if (b.lhs > 0.0) {
                        envelope = std::max(envelope, b.lhs * b.lhs / (2.0 * std::max(mm, 1e-300)));
                    }
                }
            }
        }

        // misspecification bound
        for (double eh : v.eps_h) {
            for (double eg : v.eps_g) {
                const std::size_t reps = std::max<std::size_t>(1, v.misspec_reps / scenarios.size());
                for (std::size_t k = 0; k < reps; ++k) {
                    FamilyOptions opt;
                    opt.distractors = v.distractors;
                    opt.eps_h = eh;
                    opt.eps_g = eg;
                    opt.seed = derive_seed(cfg.seed, "misspec_families", s, k);
                    const auto fp = make_realizable_families(sc, opt);
                    const auto ds = sample(sc, v.misspec_n, derive_seed(cfg.seed, "misspec", s, k));
                    const auto m = Moments::from_dataset(ds, fp.h.dim(), fp.g.dim());
                    const auto fit = fit_penalized_minimax(m, fp.h, fp.g);
                    const auto c = misspec_constants(sc, fp.h, fp.g);
                    const auto b = check_misspec_bound(fit, sc, empirical_sup(sc, m, fp.h, fp.g), c.eps_h,
                                                       c.eps_g, c.c_h, c.c_g);
                    misspec.record(b.status);
                    misspec.worst = std::max(misspec.worst, b.lhs - b.rhs);
                }
            }
        }

        // Lemma-style structural checks
        const auto w = lemma2_witness(sc, 16, derive_seed(cfg.seed, "witness", s, 0));
        witness.record(w.pass ? CheckStatus::pass : CheckStatus::violated);
        witness.worst = std::max({witness.worst, w.forward_residual, w.reverse_residual});

        Rng rng(derive_seed(cfg.seed, "saddle", s, 0));
        std::vector<SpaceFun> hp{sc.truth.h0};
        std::vector<SpaceFun> gp{sc.truth.gbar0};
        for (int i = 0; i < 32; ++i) {
            hp.push_back(sc.truth.h0 + rng.uniform(0.0, 2.0) * detail::random_unit(sc.x_space(), rng));
            gp.push_back(sc.truth.gbar0 + rng.uniform(0.0, 2.0) * detail::random_unit(sc.z_space(), rng));
        }
        const auto sr = check_saddle(sc, sc.truth.h0, sc.truth.gbar0, hp, gp);
        saddle.record(sr.pass ? CheckStatus::pass : CheckStatus::violated);
        const auto null_z = sc.dec.null_basis_z();
        if (!null_z.empty()) {
            const auto sr2 = check_saddle(sc, sc.truth.h0, sc.truth.gbar0 + null_z.front(), hp, gp);
            saddle.record(sr2.pass ? CheckStatus::pass : CheckStatus::violated);
        }
        const auto null_x = sc.dec.null_basis_x();
        if (!null_x.empty()) {
            const auto sr3 = check_saddle(sc, sc.truth.h0 + null_x.front(), sc.truth.gbar0, hp, gp);
            counter.record(!sr3.pass && sr3.h_violation > kSaddleTol ? CheckStatus::pass : CheckStatus::violated);
        }

        const auto rl = check_restriction_lemma(sc, fp0.h, fp0.g);
        restrict.record(rl.status);

        const double gap = source_identity_gap(sc);
        source.record(gap <= 1e-6 ? CheckStatus::pass : CheckStatus::violated);
        source.worst = std::max(source.worst, gap);
    }
    main.details["envelope_constant"] = envelope;
    sum.checks = {ident, main, misspec, witness, saddle, counter, restrict, source};
    return sum;
}

inline nlohmann::json to_json_doc(const VerifySummary& s)
{
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& c : s.checks) {
        checks.push_back({{"name", c.name},
                          {"passed", c.passed},
                          {"failed", c.failed},
                          {"precondition_unmet", c.unmet},
                          {"worst", c.worst},
                          {"details", c.details}});
    }
    return {{"config_hash", s.config_hash}, {"all_pass", s.all_pass()}, {"checks", checks}};
}

} // namespace npiv
