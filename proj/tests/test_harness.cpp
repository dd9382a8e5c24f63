#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "npiv/harness.hpp"

using namespace npiv;
namespace fs = std::filesystem;

namespace {

nlohmann::json tiny_config()
{
    return {{"scenario",
             {{"kind", "spectral"},
              {"x_size", 5},
              {"z_size", 4},
              {"sigma", {0.3, 0.15}},
              {"beta", {0.5, 0.5}},
              {"null_shift", 0.4}}},
            {"families", {{"kind", "sieve"}, {"directions", 2}, {"grid", {-0.1, 0.0, 0.1}}}},
            {"estimators", {"penalized_minimax", "dikkala", "both_worlds"}},
            {"n_grid", {64, 128, 256}},
            {"reps", 4},
            {"seed", 11}};
}

fs::path scratch(const std::string& name)
{
    const auto p = fs::temp_directory_path() / ("npiv_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fs::path write_json(const fs::path& dir, const std::string& name, const nlohmann::json& j)
{
    const auto p = dir / name;
    std::ofstream(p) << j.dump(2);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args, const std::string& env = "")
{
    const std::string cmd = env + " " + std::string(NPIV_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

} // namespace

TEST(Config, ParsesDefaultsAndGrid)
{
    const auto c = parse_run_config(tiny_config());
    EXPECT_EQ(c.estimators.size(), 3u);
    EXPECT_EQ(c.n_grid, (std::vector<std::size_t>{64, 128, 256}));
    EXPECT_EQ(c.reps, 4u);
    EXPECT_EQ(c.hash().size(), 16u);
    EXPECT_EQ(c.hash(), parse_run_config(tiny_config()).hash());

    auto j = tiny_config();
    j["n_grid"] = {{"start", 512}, {"stop", 32768}};
    EXPECT_EQ(parse_run_config(j).n_grid, (std::vector<std::size_t>{512, 1024, 2048, 4096, 8192, 16384, 32768}));
    EXPECT_NE(parse_run_config(j).hash(), c.hash());
    EXPECT_EQ(geometric_grid(3, 30, 3), (std::vector<std::size_t>{3, 9, 27}));
}

TEST(Config, RejectsInvalidDocuments)
{
    auto bad = [](auto mutate) {
        auto j = tiny_config();
        mutate(j);
        return j;
    };
    EXPECT_THROW(parse_run_config(bad([](auto& j) { j["n_grid"] = {128, 64}; })), ConfigError);
    EXPECT_THROW(parse_run_config(bad([](auto& j) { j["n_grid"] = nlohmann::json::array(); })), ConfigError);
    EXPECT_THROW(parse_run_config(bad([](auto& j) { j["reps"] = 0; })), ConfigError);
    EXPECT_THROW(parse_run_config(bad([](auto& j) { j["estimators"] = {"nope"}; })), ConfigError);
    EXPECT_THROW(parse_run_config(bad([](auto& j) { j["estimators"] = nlohmann::json::array(); })), ConfigError);
    EXPECT_THROW(parse_run_config(bad([](auto& j) { j["mode"] = "both"; })), ConfigError);
    EXPECT_THROW(parse_run_config(bad([](auto& j) { j["families"]["kind"] = "rkhs"; })), ConfigError);
    EXPECT_THROW(parse_run_config(bad([](auto& j) { j.erase("scenario"); })), ConfigError);
    EXPECT_THROW(parse_run_config(bad([](auto& j) { j["scenario"]["sigma"] = {1.5}; })), ConfigError);
    EXPECT_THROW(parse_run_config(bad([](auto& j) { j["reps"] = "many"; })), ConfigError);
    EXPECT_THROW(parse_run_config(nlohmann::json::array()), ConfigError);
    EXPECT_THROW(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, ShippedConfigsLoad)
{
    for (const char* name : {"w1.json", "w2.json", "rates.json", "verify.json"}) {
        EXPECT_NO_THROW(load_run_config(fs::path(NPIV_CONFIG_DIR) / name)) << name;
    }
}

TEST(Slope, Examples)
{
    std::vector<std::pair<double, double>> p;
    for (double n : {512.0, 1024.0, 2048.0, 4096.0}) p.emplace_back(n, std::pow(n, -0.25));
    const auto f = fit_loglog_slope(p);
    EXPECT_NEAR(f.slope, -0.25, 1e-14);
    EXPECT_NEAR(f.std_error, 0.0, 1e-12);
    EXPECT_NEAR(fit_loglog_slope({{10, 3}, {100, 3}, {1000, 3}}).slope, 0.0, 1e-15);
    EXPECT_NEAR(fit_loglog_slope({{100, 1}, {10000, 0.1}}).slope, -0.5, 1e-15);
    EXPECT_THROW(fit_loglog_slope({{100, 1}}), InvalidArgument);
    EXPECT_THROW(fit_loglog_slope({{100, 1}, {200, 0}}), InvalidArgument);
    EXPECT_THROW(fit_loglog_slope({{100, 1}, {100, 2}}), InvalidArgument);
}

TEST(RateSweep, ShapeDeterminismAndSeedIndependence)
{
    const auto cfg = parse_run_config(tiny_config());
    const auto a = run_rate_sweep(cfg);
    EXPECT_EQ(a.rows.size(), 9u);
    EXPECT_FALSE(a.incomplete);
    EXPECT_EQ(a.config_hash, cfg.hash());
    for (const auto& r : a.rows) {
        EXPECT_EQ(r.reps, 4u);
        EXPECT_EQ(r.seeds.size(), 4u);
        EXPECT_EQ(r.violations, 0u);
        EXPECT_LE(r.l2_q10, r.l2_median);
        EXPECT_LE(r.l2_median, r.l2_q90);
        if (r.estimator == "both_worlds") {
            EXPECT_GE(r.h0_in_hn_rate, 0.0);
        } else {
            EXPECT_EQ(r.h0_in_hn_rate, -1.0);
        }
    }
    EXPECT_EQ(a.slopes.size(), 3u);
    const auto b = run_rate_sweep(cfg);
    EXPECT_TRUE(a == b);
    EXPECT_EQ(to_json_doc(a).dump(), to_json_doc(b).dump());

    auto j = tiny_config();
    j["estimators"] = {"dikkala"};
    const auto solo = run_rate_sweep(parse_run_config(j));
    for (const auto& r : solo.rows) {
        const auto it = std::find_if(a.rows.begin(), a.rows.end(),
                                     [&](const RateRow& x) { return x.estimator == r.estimator && x.n == r.n; });
        ASSERT_NE(it, a.rows.end());
        EXPECT_EQ(it->l2_mean, r.l2_mean);
        EXPECT_EQ(it->seeds, r.seeds);
    }
}

TEST(RateSweep, SlopeChecks)
{
    auto j = tiny_config();
    j["slope_checks"] = {{{"estimator", "penalized_minimax"}, {"metric", "l2"}, {"lo", -10}, {"hi", 10}},
                         {{"estimator", "dikkala"}, {"metric", "proj_mse"}, {"lo", 5}, {"hi", 6}}};
    const auto cfg = parse_run_config(j);
    const auto v = evaluate_slope_checks(run_rate_sweep(cfg), cfg.slope_checks);
    ASSERT_EQ(v.size(), 2u);
    EXPECT_TRUE(v[0].pass);
    EXPECT_FALSE(v[1].pass);
}

TEST(Reports, RoundTripCsvAndAggregation)
{
    const auto cfg = parse_run_config(tiny_config());
    const auto r = run_rate_sweep(cfg);
    const auto dir = scratch("reports");
    const auto files = emit_reports(r, dir);
    EXPECT_EQ(files.size(), 2u);
    EXPECT_TRUE(load_rate_report(dir / "rates.json") == r);

    std::istringstream csv(slurp(dir / "rates.csv"));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "estimator,n,reps,l2_mean,l2_median,proj_mse_mean,violations");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    EXPECT_EQ(rows, 9);

    std::ostringstream empty;
    write_rate_csv(RateReport{}, empty);
    EXPECT_EQ(empty.str(), std::string(kRateCsvHeader) + "\n");

    RateReport first = r;
    RateReport second = r;
    first.rows.resize(3);
    second.rows.erase(second.rows.begin(), second.rows.begin() + 3);
    const auto merged = aggregate_reports({first, second});
    EXPECT_EQ(merged.rows, r.rows);
    EXPECT_TRUE(merged.slopes == r.slopes);
    second.config_hash = "0000000000000000";
    EXPECT_THROW(aggregate_reports({first, second}), Error);
    EXPECT_THROW(emit_reports(r, dir, {"xml"}), InvalidArgument);
    fs::remove_all(dir);
}

TEST(Verify, DroppedAnchorIsPreconditionUnmet)
{
    nlohmann::json j = tiny_config();
    j["families"] = {{"kind", "realizable"}, {"drop_anchor", true}};
    j["verify"] = {{"random_scenarios", 0}, {"main_seeds", 5}, {"misspec_reps", 1}, {"eps_h", {0.1}}, {"eps_g", {0.0}}};
    const auto s = verify_suite(parse_run_config(j));
    const auto main = std::find_if(s.checks.begin(), s.checks.end(), [](const auto& c) { return c.name == "main_bound"; });
    ASSERT_NE(main, s.checks.end());
    EXPECT_EQ(main->failed, 0u);
    EXPECT_EQ(main->passed, 0u);
    EXPECT_EQ(main->unmet, 5u);
}

TEST(Verify, SmallSuitePasses)
{
    nlohmann::json j = tiny_config();
    j["families"] = {{"kind", "realizable"}};
    j["verify"] = {{"random_scenarios", 3}, {"main_seeds", 40}, {"misspec_reps", 4}};
    const auto s = verify_suite(parse_run_config(j));
    EXPECT_TRUE(s.all_pass()) << to_json_doc(s).dump(2);
    EXPECT_EQ(s.checks.size(), 8u);
    EXPECT_TRUE(to_json_doc(s).at("all_pass").get<bool>());
}

TEST(Cli, ExitCodesAndOutputs)
{
    const auto dir = scratch("cli");
    const std::string w1 = std::string(NPIV_CONFIG_DIR) + "/w1.json";

    EXPECT_EQ(run_cli("scenario --config " + w1 + " --out " + (dir / "a").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "a" / "scenario.json"));
    EXPECT_TRUE(fs::exists(dir / "a" / "families.json"));

    EXPECT_EQ(run_cli("fit --config " + w1 + " --seed 3 --out " + (dir / "b").string()), 0);
    const auto fit = nlohmann::json::parse(slurp(dir / "b" / "fit.json"));
    EXPECT_EQ(fit.at("seed"), 3);
    EXPECT_EQ(fit.at("fits").size(), 5u);
    EXPECT_EQ(slurp(dir / "b" / "dataset.csv").substr(0, 6), "x,y,z\n");

    // environment override when --out is absent
    EXPECT_EQ(run_cli("scenario --config " + w1, "NPIV_OUT_DIR=" + (dir / "env").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "env" / "scenario.json"));

    auto j = tiny_config();
    j["reps"] = 2;
    j["n_grid"] = {64, 128};
    const auto ok_cfg = write_json(dir, "ok.json", j);
    EXPECT_EQ(run_cli("rates --config " + ok_cfg.string() + " --out " + (dir / "c").string()), 0);
    EXPECT_EQ(slurp(dir / "c" / "rates.csv").substr(0, std::string(kRateCsvHeader).size()), kRateCsvHeader);

    j["slope_checks"] = {{{"estimator", "dikkala"}, {"metric", "l2"}, {"lo", 5}, {"hi", 6}}};
    const auto fail_cfg = write_json(dir, "fail.json", j);
    EXPECT_EQ(run_cli("rates --config " + fail_cfg.string() + " --out " + (dir / "d").string()), 1);

    j = tiny_config();
    j["reps"] = 0;
    const auto bad_cfg = write_json(dir, "bad.json", j);
    EXPECT_EQ(run_cli("rates --config " + bad_cfg.string() + " --out " + (dir / "e").string()), 2);
    std::ofstream(dir / "garbage.json") << "{ not json";
    EXPECT_EQ(run_cli("fit --config " + (dir / "garbage.json").string()), 2);
    EXPECT_EQ(run_cli("fit --config " + (dir / "missing.json").string()), 2);
    EXPECT_EQ(run_cli("fit"), 2);
    EXPECT_EQ(run_cli("bogus --config " + w1), 2);
    EXPECT_EQ(run_cli(""), 2);

    j = tiny_config();
    j["families"] = {{"kind", "realizable"}};
    j["verify"] = {{"random_scenarios", 1}, {"main_seeds", 10}, {"misspec_reps", 2}};
    const auto ver_cfg = write_json(dir, "verify.json", j);
    EXPECT_EQ(run_cli("verify --config " + ver_cfg.string() + " --out " + (dir / "f").string()), 0);
    EXPECT_TRUE(nlohmann::json::parse(slurp(dir / "f" / "verify.json")).at("all_pass").get<bool>());
    fs::remove_all(dir);
}
