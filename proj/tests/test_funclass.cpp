#include <cmath>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "npiv/funclass.hpp"

using namespace npiv;
using fixtures::vec;

TEST(FiniteFamily, BasicsAndSupBound)
{
    const FiniteFamily f({vec({1, -3}), vec({0.5, 2})});
    EXPECT_EQ(f.size(), 2u);
    EXPECT_EQ(f.dim(), 2);
    EXPECT_EQ(f.sup_bound(), 3.0);
    EXPECT_EQ(sup_norm_bound(f), 3.0);
    EXPECT_EQ(f.matrix()(1, 1), 2.0);
    EXPECT_EQ(f.find(vec({0.5, 2})), std::optional<std::size_t>(1));
    EXPECT_FALSE(f.find(vec({0.5, 2.1})).has_value());
    EXPECT_EQ(f.find(vec({0.5, 2.1}), 0.2), std::optional<std::size_t>(1));
    EXPECT_EQ(f.with(vec({4, 0})).sup_bound(), 4.0);
    EXPECT_THROW(FiniteFamily(std::vector<SpaceFun>{}), InvalidArgument);
    EXPECT_THROW(FiniteFamily({vec({1, 2}), vec({1})}), DimensionError);
}

TEST(LinearFamily, SupBoundAndProjection)
{
    const LinearFamily f({vec({1, 0, -1}), vec({0.5, 0.5, 0.5})}, 2.0);
    // max row abs sum is 1.5
    EXPECT_DOUBLE_EQ(f.sup_bound(), 3.0);
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        Eigen::VectorXd th(2);
        th << rng.normal(), rng.normal();
        th = f.project(3.0 * th);
        EXPECT_LE(th.norm(), 2.0 + 1e-12);
        EXPECT_LE(sup_norm(f.eval(th)), f.sup_bound() + 1e-12);
    }
    Eigen::VectorXd inside(2);
    inside << 0.3, -0.4;
    EXPECT_EQ(f.project(inside), inside);
    EXPECT_THROW(LinearFamily({vec({1})}, 0.0), InvalidArgument);
    EXPECT_THROW(f.eval(Eigen::VectorXd::Zero(3)), DimensionError);
}

TEST(RKHS, KernelAndGram)
{
    const RKHSBall b{1.0};
    EXPECT_DOUBLE_EQ(b.kernel(0.0, 1.0, 1.0), std::exp(-0.5));
    EXPECT_DOUBLE_EQ(b.kernel(2.0, 2.0, 0.3), 1.0);
    const auto k = gram_matrix(b, {0.0, 1.0, 3.0});
    EXPECT_DOUBLE_EQ(k(0, 1), std::exp(-0.5));
    EXPECT_DOUBLE_EQ(k(1, 2), std::exp(-2.0));
    EXPECT_EQ(k, k.transpose());
    EXPECT_THROW(gram_matrix(RKHSBall{-1.0}, {0.0, 1.0}), InvalidArgument);
    EXPECT_THROW(gram_matrix(b, {}), InvalidArgument);
}

TEST(RKHS, MedianHeuristic)
{
    // distances 1, 3, 2
    EXPECT_DOUBLE_EQ(median_heuristic({0.0, 1.0, 3.0}), 2.0);
    // distances 1, 2, 4, 1, 3, 2 -> sorted 1 1 2 2 3 4
    EXPECT_DOUBLE_EQ(median_heuristic({0.0, 1.0, 2.0, 4.0}), 2.0);
    EXPECT_DOUBLE_EQ(median_heuristic({5.0, 5.0}), 1.0);
    const auto k = gram_matrix(RKHSBall{}, {0.0, 1.0, 3.0});
    EXPECT_DOUBLE_EQ(k(0, 1), std::exp(-1.0 / 8.0));
}

TEST(RKHS, SupportGramUsesCoordinates)
{
    const WeightedSpace z({"a", "b"}, vec({0.5, 0.5}), std::vector<double>{0.0, 2.0});
    EXPECT_DOUBLE_EQ(support_gram(RKHSBall{1.0}, z)(0, 1), std::exp(-2.0));
}

TEST(RealizableFamilies, AnchorsAndDeterminism)
{
    const auto sc = attach_truth(fixtures::w2(), vec({1, 2, 3}));
    FamilyOptions opt;
    opt.seed = 4;
    const auto a = make_realizable_families(sc, opt);
    const auto b = make_realizable_families(sc, opt);
    EXPECT_EQ(a.h.size(), 8u);
    EXPECT_EQ(a.g.size(), 8u);
    EXPECT_EQ(a.h[0], sc.truth.h0);
    EXPECT_EQ(a.g[0], sc.truth.gbar0);
    for (std::size_t i = 0; i < a.h.size(); ++i) {
        EXPECT_EQ(a.h[i], b.h[i]);
    }
    for (std::size_t i = 1; i < a.h.size(); ++i) {
        EXPECT_GT(norm(sc.x_space(), a.h[i] - sc.truth.h0), 1e-3);
    }
    opt.seed = 5;
    EXPECT_NE(make_realizable_families(sc, opt).h[1], a.h[1]);
}

TEST(RealizableFamilies, MisspecificationDistances)
{
    Rng rng(9);
    for (int t = 0; t < 20; ++t) {
        const auto sc = make_spectral_scenario(random_spectral_spec(rng, 6, 5, 2));
        FamilyOptions opt;
        opt.seed = static_cast<std::uint64_t>(t);
        opt.eps_h = 0.1;
        opt.eps_g = 0.2;
        const auto fp = make_realizable_families(sc, opt);
        EXPECT_NEAR(norm(sc.x_space(), fp.h[0] - sc.truth.h0), 0.1, 1e-12);
        const SpaceFun dg = fp.g[0] - sc.truth.gbar0;
        EXPECT_NEAR(norm(sc.z_space(), dg), 0.2, 1e-12);
        for (const auto& n : sc.dec.null_basis_z()) {
            EXPECT_NEAR(inner_product(sc.z_space(), dg, n), 0.0, 1e-10);
        }
    }
    EXPECT_THROW(make_realizable_families(attach_truth(fixtures::w1(), vec({1, 0})), FamilyOptions{7, 0.5, 0, -0.1}),
                 InvalidArgument);
}

TEST(SieveFamilies, SizeAndContents)
{
    const auto sc = scenario_from_json({{"kind", "spectral"},
                                        {"x_size", 6},
                                        {"z_size", 5},
                                        {"sigma", {0.25, 0.125, 0.0625}},
                                        {"beta", {0.5, 0.5, 0.5}},
                                        {"null_shift", 0.5}});
    SieveOptions opt;
    opt.grid = {-0.1, 0.0, 0.1};
    const auto fp = make_sieve_families(sc, opt);
    // 3^4 grid points, h0 listed once
    EXPECT_EQ(fp.h.size(), 81u);
    EXPECT_EQ(fp.h[0], sc.truth.h0);
    EXPECT_EQ(fp.g[0], sc.truth.gbar0);
    // every T(h0 - h) is in G
    for (const auto& h : fp.h.members()) {
        EXPECT_TRUE(fp.g.find(sc.op.apply(sc.truth.h0 - h), 1e-10).has_value());
    }
    opt.directions = 5;
    EXPECT_THROW(make_sieve_families(sc, opt), InvalidArgument);
}

TEST(Json, FamilyRoundTrip)
{
    const FiniteFamily f({vec({1, -3}), vec({0.5, 2})});
    const auto back = finite_family_from_json(to_json_doc(f));
    EXPECT_EQ(back.members(), f.members());
    EXPECT_EQ(to_json_doc(LinearFamily({vec({1, 1})}, 2.0)).at("sup_bound"), 2.0);
    EXPECT_EQ(to_json_doc(RKHSBall{}).at("bandwidth"), "median");
}
