#include <bit>
#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "npiv/theory.hpp"

using namespace npiv;
using fixtures::vec;

namespace {

Scenario random_scenario(Rng& rng) { return make_spectral_scenario(random_spectral_spec(rng, 6, 4, 2)); }

// E|sum of n Rademacher signs| / n by enumerating all 2^n patterns
double exact_abs_sign_sum(int n)
{
    double s = 0.0;
    for (unsigned p = 0; p < (1u << n); ++p) {
        const int plus = std::popcount(p);
        s += std::abs(2 * plus - n);
    }
    return s / static_cast<double>(1u << n) / n;
}

} // namespace

TEST(EmpiricalSup, HandComputedThreePointDataset)
{
    // W1 with h* = (1, -1), zero noise; population E[Y g] = <r0, g> = 0.5 (0.6 g(0) - 0.6 g(1))
    const auto sc = attach_truth(fixtures::w1(), vec({1, -1}), NoiseSpec{NoiseSpec::Kind::none, 0.0});
    Dataset ds;
    ds.x = {0, 0, 1};
    ds.z = {0, 1, 1};
    ds.y = {1, 1, -1};
    const SpaceFun g = vec({2, 1});
    // E_n[Y g] = (2 + 1 - 1) / 3
    const double expected = std::abs(2.0 / 3.0 - 0.5 * (0.6 * 2 - 0.6 * 1));
    EXPECT_NEAR(empirical_sup(sc, ds, FiniteFamily({vec({0, 0})}), FiniteFamily({g})), expected, 1e-12);
}

TEST(EmpiricalSup, ZeroAtExactPopulationAndDecays)
{
    const auto sc = attach_truth(fixtures::w2(), vec({1, 2, 3}), NoiseSpec{NoiseSpec::Kind::none, 0.0});
    const auto fp = make_realizable_families(sc);
    Dataset pop;
    // joint table is in multiples of 0.1
    for (int x = 0; x < 3; ++x) {
        for (int z = 0; z < 2; ++z) {
            const int k = static_cast<int>(std::lround(sc.design().joint()(x, z) * 10));
            for (int i = 0; i < k; ++i) {
                pop.x.push_back(x);
                pop.z.push_back(z);
                pop.y.push_back(sc.h_star(x));
            }
        }
    }
    EXPECT_LT(empirical_sup(sc, pop, fp.h, fp.g), 1e-12);

    const auto noisy = attach_truth(fixtures::w2(), vec({1, 2, 3}));
    double small = 0.0;
    double large = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        small += empirical_sup(noisy, sample(noisy, 100, s), fp.h, fp.g);
        large += empirical_sup(noisy, sample(noisy, 1000000, s), fp.h, fp.g);
    }
    EXPECT_LT(large, small);
    EXPECT_LT(large / 5, 0.02);
    EXPECT_GE(empirical_sup(noisy, sample(noisy, 10, 1), fp.h, fp.g), 0.0);
}

TEST(MainBound, PopulationAndStatus)
{
    const auto sc = attach_truth(fixtures::w2(), vec({1, 2, 3}));
    const auto fp = make_realizable_families(sc);
    const auto fit = fit_penalized_minimax(Moments::population_of(sc), fp.h, fp.g);
    const auto r = check_main_bound(fit, sc, 0.0);
    EXPECT_TRUE(r.pass());
    EXPECT_EQ(r.lhs, 0.0);
    EXPECT_EQ(r.rhs, 0.0);

    const auto off = check_main_bound(vec({2.6, 3.6, 3.1}), sc, 0.1);
    EXPECT_EQ(off.status, CheckStatus::violated);
    EXPECT_NEAR(off.rhs, std::sqrt(0.2), 1e-15);
    EXPECT_LT(off.slack, 0.0);
    EXPECT_EQ(check_main_bound(vec({2.6, 3.6, 3.1}), sc, 0.5).status, CheckStatus::pass);

    const FiniteFamily no_h0({vec({0, 0, 0}), vec({1, 1, 1})});
    EXPECT_EQ(check_main_bound(fit, sc, no_h0, fp.g, 0.1).status, CheckStatus::precondition_unmet);
    EXPECT_TRUE(realizable(sc, fp.h, fp.g));
    EXPECT_FALSE(realizable(sc, no_h0, fp.g));
}

TEST(MainBound, ReplicationsOnW2StyleScenarios)
{
    const auto sc = attach_truth(fixtures::w2(), vec({1, 2, 3}));
    int violations = 0;
    for (std::uint64_t s = 0; s < 200; ++s) {
        FamilyOptions opt;
        opt.seed = s;
        const auto fp = make_realizable_families(sc, opt);
        const auto ds = sample(sc, 50, derive_seed(3, "main", 50, s));
        const auto fit = fit_penalized_minimax(ds, fp.h, fp.g);
        const auto r = check_main_bound(fit, sc, fp.h, fp.g, empirical_sup(sc, ds, fp.h, fp.g));
        ASSERT_NE(r.status, CheckStatus::precondition_unmet);
        violations += r.status == CheckStatus::violated;
    }
    EXPECT_EQ(violations, 0);
}

TEST(MisspecBound, ReductionMonotonicityAndReplications)
{
    EXPECT_DOUBLE_EQ(misspec_rhs(0.3, 0, 0, 2, 3), std::sqrt(0.6));
    for (double e : {0.0, 0.05, 0.1, 0.4}) {
        EXPECT_GE(misspec_rhs(0.1, 2 * e, 0.1, 2, 3), misspec_rhs(0.1, e, 0.1, 2, 3));
        EXPECT_GE(misspec_rhs(0.1, 0.1, 2 * e, 2, 3), misspec_rhs(0.1, 0.1, e, 2, 3));
    }
    const auto sc = attach_truth(fixtures::w2(), vec({1, 2, 3}));
    int violations = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        FamilyOptions opt;
        opt.seed = s;
        opt.eps_h = 0.1;
        const auto fp = make_realizable_families(sc, opt);
        const auto c = misspec_constants(sc, fp.h, fp.g);
        EXPECT_NEAR(c.eps_h, std::min(0.1, c.eps_h), 1e-12);
        EXPECT_LT(c.eps_g, 1e-9);
        const auto ds = sample(sc, 200, derive_seed(4, "misspec", 200, s));
        const auto fit = fit_penalized_minimax(ds, fp.h, fp.g);
        const auto r =
            check_misspec_bound(fit, sc, empirical_sup(sc, ds, fp.h, fp.g), c.eps_h, c.eps_g, c.c_h, c.c_g);
        violations += r.status == CheckStatus::violated;
    }
    EXPECT_EQ(violations, 0);
}

TEST(Rademacher, SingletonAndExactEnumeration)
{
    const auto xs = WeightedSpace::uniform(2);
    const auto single = mc_rademacher(FiniteFamily({vec({1, -1})}), xs, 10, 20000, 1);
    EXPECT_NEAR(single.estimate, 0.0, 3 * single.std_error + 1e-12);

    // |h| = 1 everywhere, so sigma_i h(X_i) are themselves Rademacher signs
    const auto pm = mc_rademacher(FiniteFamily({vec({1, -1}), vec({-1, 1})}), xs, 10, 40000, 2);
    EXPECT_NEAR(pm.estimate, exact_abs_sign_sum(10), 3 * pm.std_error);
    EXPECT_NEAR(exact_abs_sign_sum(10), 252.0 * 10.0 / 1024.0 / 10.0, 1e-15);

    const auto scaled = mc_rademacher(FiniteFamily({vec({3, -3}), vec({-3, 3})}), xs, 10, 40000, 2);
    EXPECT_NEAR(scaled.estimate, 3 * pm.estimate, 1e-12);
    EXPECT_THROW(mc_rademacher(FiniteFamily({vec({1, 1})}), xs, 0, 10, 1), InvalidArgument);
}

TEST(Saddle, TruthNullShiftsAndViolations)
{
    Rng rng(30);
    for (int t = 0; t < 20; ++t) {
        const auto sc = make_spectral_scenario(random_spectral_spec(rng, 6, 5, 2));
        std::vector<SpaceFun> hp{sc.truth.h0};
        std::vector<SpaceFun> gp;
        for (int k = 0; k < 50; ++k) {
            hp.push_back(fixtures::random_fun(rng, 6));
            gp.push_back(fixtures::random_fun(rng, 5));
        }
        EXPECT_TRUE(check_saddle(sc, sc.truth.h0, sc.truth.gbar0, hp, gp).pass);

        const auto nz = sc.dec.null_basis_z();
        ASSERT_FALSE(nz.empty());
        EXPECT_TRUE(check_saddle(sc, sc.truth.h0, sc.truth.gbar0 + 0.8 * nz.front(), hp, gp).pass);

        const auto nx = sc.dec.null_basis_x();
        ASSERT_FALSE(nx.empty());
        const auto bad = check_saddle(sc, sc.truth.h0 + 0.5 * nx.front(), sc.truth.gbar0, hp, gp);
        EXPECT_FALSE(bad.pass);
        EXPECT_EQ(bad.worst_h, 0u);
        EXPECT_NEAR(bad.h_violation, 0.125, 1e-9);
    }
}

TEST(Restriction, RealizableAndGuard)
{
    Rng rng(31);
    for (int t = 0; t < 20; ++t) {
        const auto sc = random_scenario(rng);
        FamilyOptions opt;
        opt.seed = static_cast<std::uint64_t>(t);
        const auto fp = make_realizable_families(sc, opt);
        const auto r = check_restriction_lemma(sc, fp.h, fp.g);
        EXPECT_EQ(r.status, CheckStatus::pass);
        EXPECT_EQ(r.restricted_argmin, std::vector<std::size_t>{0});
        std::vector<SpaceFun> rest(fp.h.members().begin() + 1, fp.h.members().end());
        EXPECT_EQ(check_restriction_lemma(sc, FiniteFamily(rest), fp.g).status, CheckStatus::precondition_unmet);
    }
}

TEST(Restriction, AbstractGames)
{
    // pure saddle at (1, 0): row 1 max is 2, column 0 min is 2
    Eigen::MatrixXd f(3, 3);
    f << 3, 5, 0, 2, 1, 1, 4, 0, 6;
    const auto ok = check_payoff_inclusions(f, {1, 2}, {0, 1});
    EXPECT_EQ(ok.status, CheckStatus::pass);
    EXPECT_EQ(ok.restricted_argmin, std::vector<std::size_t>{1});
    EXPECT_EQ(check_payoff_inclusions(f, {0, 2}, {0, 1, 2}).status, CheckStatus::precondition_unmet);

    Rng rng(32);
    int checked = 0;
    for (int t = 0; t < 2000; ++t) {
        const int r = 2 + static_cast<int>(rng.below(3));
        const int c = 2 + static_cast<int>(rng.below(3));
        Eigen::MatrixXd g(r, c);
        for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = static_cast<double>(rng.below(4));
        std::vector<std::size_t> xs;
        std::vector<std::size_t> ys;
        for (int i = 0; i < r; ++i) {
            if (rng.below(3) != 0) xs.push_back(static_cast<std::size_t>(i));
        }
        for (int j = 0; j < c; ++j) {
            if (rng.below(3) != 0) ys.push_back(static_cast<std::size_t>(j));
        }
        if (xs.empty() || ys.empty()) continue;
        const auto rep = check_payoff_inclusions(g, xs, ys);
        if (rep.status == CheckStatus::precondition_unmet) continue;
        ++checked;
        EXPECT_EQ(rep.status, CheckStatus::pass);
    }
    EXPECT_GT(checked, 100);
}

TEST(Witness, DesignsAndRandomSweep)
{
    const auto id = build_operator(JointDesign::from_table(fixtures::table(2, 2, {0.4, 0, 0, 0.6})));
    EXPECT_TRUE(lemma2_witness(id, svd(id), vec({1, 2})).pass);
    const auto w1 = build_operator(fixtures::w1());
    const auto r1 = lemma2_witness(w1, svd(w1), vec({0.6, -0.6}));
    EXPECT_TRUE(r1.pass);
    EXPECT_EQ(r1.samples, 16u);

    Rng rng(33);
    for (int t = 0; t < 20; ++t) {
        const auto sc = make_spectral_scenario(random_spectral_spec(rng, 6, 5, 3));
        EXPECT_TRUE(lemma2_witness(sc, 32, static_cast<std::uint64_t>(t)).pass);
        EXPECT_LT(source_identity_gap(sc), 1e-6);
    }
}

TEST(Json, BoundReport)
{
    const auto sc = attach_truth(fixtures::w1(), vec({1, -1}));
    const auto j = to_json_doc(check_misspec_bound(vec({1, -1}), sc, 0.1, 0.2, 0.0, 1.0, 2.0));
    EXPECT_EQ(j.at("status"), "pass");
    EXPECT_EQ(j.at("C_G"), 2.0);
    EXPECT_EQ(j.at("name"), "misspec_bound");
}
