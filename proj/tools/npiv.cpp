// npiv: scenario | fit | rates | verify
//
// Exit status: 0 all checks pass, 1 a check failed, 2 bad configuration.
// Output directory: --out, else $NPIV_OUT_DIR, else the config's output_dir, else ".".

#include <cstdlib>
#include <fstream>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "npiv/harness.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

npiv::RunConfig load(const Common& c)
{
    std::ifstream in(c.config);
    if (!in) {
        throw npiv::ConfigError("cannot open config " + c.config);
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw npiv::ConfigError("config " + c.config + ": " + e.what());
    }
    if (c.seed) {
        j["seed"] = *c.seed;
    }
    return npiv::parse_run_config(j, fs::path(c.config).parent_path());
}

fs::path out_dir(const Common& c, const npiv::RunConfig& cfg)
{
    fs::path p;
    if (!c.out.empty()) {
        p = c.out;
    } else if (const char* env = std::getenv("NPIV_OUT_DIR"); env && *env) {
        p = env;
    } else if (!cfg.output_dir.empty()) {
        p = cfg.output_dir;
    } else {
        p = ".";
    }
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) {
        throw npiv::Error("cannot create output directory " + p.string() + ": " + ec.message());
    }
    return p;
}

int cmd_scenario(const Common& c)
{
    const auto cfg = load(c);
    const auto sc = npiv::scenario_from_json(cfg.scenario);
    const auto fp = npiv::detail::build_families(sc, cfg.families, cfg.seed);
    const auto dir = out_dir(c, cfg);
    auto doc = npiv::to_json_doc(sc);
    doc["config_hash"] = cfg.hash();
    doc["seed"] = cfg.seed;
    npiv::write_text(dir / "scenario.json", doc.dump(2) + "\n");
    npiv::write_text(dir / "families.json",
                     nlohmann::json{{"H", npiv::to_json_doc(fp.h)}, {"G", npiv::to_json_doc(fp.g)}}.dump(2) + "\n");
    std::cout << "scenario: |X|=" << sc.x_space().size() << " |Z|=" << sc.z_space().size()
              << " nullspace_dim=" << sc.truth.nullspace_dim << " source_norm=" << sc.truth.source_norm
              << " |H|=" << fp.h.size() << " |G|=" << fp.g.size() << "\n"
              << "wrote " << (dir / "scenario.json").string() << "\n";
    return kExitPass;
}

int cmd_fit(const Common& c)
{
    const auto cfg = load(c);
    const auto sc = npiv::scenario_from_json(cfg.scenario);
    const auto fp = npiv::detail::build_families(sc, cfg.families, cfg.seed);
    const auto dir = out_dir(c, cfg);

    npiv::Moments m;
    nlohmann::json doc{{"config_hash", cfg.hash()}, {"seed", cfg.seed}};
    if (cfg.population) {
        m = npiv::Moments::population_of(sc);
        doc["mode"] = "population";
    } else {
        const auto seed = npiv::derive_seed(cfg.seed, "fit", cfg.fit_n, 0);
        const auto ds = npiv::sample(sc, cfg.fit_n, seed);
        m = npiv::Moments::from_dataset(ds, fp.h.dim(), fp.g.dim());
        std::ostringstream csv;
        npiv::write_dataset_csv(ds, csv);
        npiv::write_text(dir / "dataset.csv", csv.str());
        doc["mode"] = "empirical";
        doc["n"] = cfg.fit_n;
        doc["dataset_seed"] = seed;
    }
    const auto table = npiv::PayoffTable::build(m, fp.h, fp.g);
    bool ok = true;
    doc["fits"] = nlohmann::json::array();
    for (const auto& e : cfg.estimators) {
        const auto fit = npiv::detail::run_estimator(e, table, fp, m.n);
        const auto met = npiv::evaluate(fit, sc.truth, sc.op);
        nlohmann::json f{{"fit", npiv::to_json_doc(fit)}, {"metrics", npiv::to_json_doc(met)}};
        if (e.name == "penalized_minimax" && cfg.bound_checks) {
            const double mm = m.population() ? 0.0 : npiv::empirical_sup(sc, m, fp.h, fp.g);
            const auto b = npiv::check_main_bound(fit, sc, fp.h, fp.g, mm);
            f["main_bound"] = npiv::to_json_doc(b);
            ok = ok && b.status != npiv::CheckStatus::violated;
        }
        std::cout << std::left << std::setw(20) << e.name << " l2_error=" << met.l2_error
                  << " projected_rmse=" << met.projected_rmse << "\n";
        doc["fits"].push_back(f);
    }
    npiv::write_text(dir / "fit.json", doc.dump(2) + "\n");
    if (!ok) {
        std::cout << "main bound violated\n";
    }
    return ok ? kExitPass : kExitCheckFailed;
}

int cmd_rates(const Common& c)
{
    const auto cfg = load(c);
    const auto dir = out_dir(c, cfg);
    const auto rep = npiv::run_rate_sweep(cfg);
    npiv::emit_reports(rep, dir);

    std::cout << npiv::kRateCsvHeader << "\n";
    for (const auto& r : rep.rows) {
        std::cout << r.estimator << ',' << r.n << ',' << r.reps << ',' << r.l2_mean << ',' << r.l2_median << ','
                  << r.proj_mse_mean << ',' << r.violations << "\n";
    }
    for (const auto& s : rep.slopes) {
        std::cout << "slope " << s.estimator << ": l2 " << s.l2.slope << " (se " << s.l2.std_error << "), proj_mse "
                  << s.proj_mse.slope << " (se " << s.proj_mse.std_error << ")\n";
    }
    bool ok = !rep.incomplete;
    for (const auto& r : rep.rows) {
        ok = ok && r.violations == 0;
    }
    for (const auto& v : npiv::evaluate_slope_checks(rep, cfg.slope_checks)) {
        std::cout << (v.pass ? "PASS" : "FAIL") << " slope " << v.check.estimator << " " << v.check.metric << " = "
                  << v.slope << " in [" << v.check.lo << ", " << v.check.hi << "]\n";
        ok = ok && v.pass;
    }
    return ok ? kExitPass : kExitCheckFailed;
}

int cmd_verify(const Common& c)
{
    const auto cfg = load(c);
    const auto dir = out_dir(c, cfg);
    const auto sum = npiv::verify_suite(cfg);
    npiv::write_text(dir / "verify.json", npiv::to_json_doc(sum).dump(2) + "\n");
    for (const auto& t : sum.checks) {
        std::cout << (t.failed == 0 ? "PASS " : "FAIL ") << std::left << std::setw(28) << t.name
                  << " passed=" << t.passed << " failed=" << t.failed << " unmet=" << t.unmet
                  << " worst=" << t.worst << "\n";
    }
    return sum.all_pass() ? kExitPass : kExitCheckFailed;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Penalized minimax NPIV estimation: scenarios, fits, rate sweeps and checks"};
    app.require_subcommand(1);
    Common common;
    auto add = [&](const char* name, const char* help) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", common.config, "run config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", common.seed, "master seed, overrides the config");
        sub->add_option("--out", common.out, "output directory");
        return sub;
    };
    auto* s_scn = add("scenario", "build a scenario and its families, write scenario.json");
    auto* s_fit = add("fit", "fit every configured estimator on one dataset");
    auto* s_rat = add("rates", "Monte Carlo rate sweep, writes rates.csv and rates.json");
    auto* s_ver = add("verify", "run the verification suite, writes verify.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitPass : kExitConfig;
    }
    try {
        if (s_scn->parsed()) return cmd_scenario(common);
        if (s_fit->parsed()) return cmd_fit(common);
        if (s_rat->parsed()) return cmd_rates(common);
        if (s_ver->parsed()) return cmd_verify(common);
    } catch (const npiv::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheckFailed;
    }
    return kExitConfig;
}
