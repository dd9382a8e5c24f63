#pragma once

// Hypothesis and discriminator families: finite lists, linear spans over a
// parameter ball, and the RKHS unit ball.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "npiv/error.hpp"
#include "npiv/probspace.hpp"
#include "npiv/rng.hpp"
#include "npiv/scenario.hpp"

namespace npiv {

/// Nonempty finite list of functions on one support.
class FiniteFamily {
public:
    FiniteFamily() = default;

    explicit FiniteFamily(std::vector<SpaceFun> members) : members_(std::move(members))
    {
        if (members_.empty()) {
            throw InvalidArgument("FiniteFamily: empty family");
        }
        for (const auto& m : members_) {
            detail::require_same_size(m.size(), members_.front().size(), "FiniteFamily member");
            sup_ = std::max(sup_, sup_norm(m));
        }
    }

    std::size_t size() const { return members_.size(); }
    Eigen::Index dim() const { return members_.front().size(); }
    const SpaceFun& operator[](std::size_t i) const { return members_[i]; }
    const std::vector<SpaceFun>& members() const { return members_; }
    double sup_bound() const { return sup_; }

    /// Members stacked as columns (dim x size).
    Eigen::MatrixXd matrix() const
    {
        Eigen::MatrixXd m(dim(), static_cast<Eigen::Index>(size()));
        for (std::size_t j = 0; j < size(); ++j) {
            m.col(static_cast<Eigen::Index>(j)) = members_[j];
        }
        return m;
    }

    /// Index of a member equal to f entrywise within tol, if any.
    std::optional<std::size_t> find(const SpaceFun& f, double tol = 0.0) const
    {
        for (std::size_t i = 0; i < members_.size(); ++i) {
            if (members_[i].size() == f.size() && (members_[i] - f).cwiseAbs().maxCoeff() <= tol) {
                return i;
            }
        }
        return std::nullopt;
    }

    FiniteFamily with(const SpaceFun& f) const
    {
        auto m = members_;
        m.push_back(f);
        return FiniteFamily(std::move(m));
    }

private:
    std::vector<SpaceFun> members_;
    double sup_ = 0.0;
};

/// {sum_j theta_j phi_j : ||theta||_2 <= radius}.
class LinearFamily {
public:
    LinearFamily() = default;

    LinearFamily(std::vector<SpaceFun> basis, double radius) : radius_(radius)
    {
        if (basis.empty()) {
            throw InvalidArgument("LinearFamily: empty basis");
        }
        if (!(radius > 0.0)) {
            throw InvalidArgument("LinearFamily: parameter radius must be positive");
        }
        phi_.resize(basis.front().size(), static_cast<Eigen::Index>(basis.size()));
        for (std::size_t j = 0; j < basis.size(); ++j) {
            detail::require_same_size(basis[j].size(), phi_.rows(), "LinearFamily basis");
            phi_.col(static_cast<Eigen::Index>(j)) = basis[j];
        }
    }

    const Eigen::MatrixXd& basis() const { return phi_; }
    Eigen::Index dim() const { return phi_.rows(); }
    Eigen::Index params() const { return phi_.cols(); }
    double radius() const { return radius_; }

    SpaceFun eval(const Eigen::VectorXd& theta) const
    {
        detail::require_same_size(theta.size(), params(), "LinearFamily::eval");
        return phi_ * theta;
    }

    /// radius * max_x sum_j |phi_j(x)|
    double sup_bound() const { return radius_ * phi_.cwiseAbs().rowwise().sum().maxCoeff(); }

    Eigen::VectorXd project(const Eigen::VectorXd& theta) const
    {
        const double nt = theta.norm();
        return nt > radius_ ? Eigen::VectorXd(theta * (radius_ / nt)) : theta;
    }

private:
    Eigen::MatrixXd phi_;
    double radius_ = 1.0;
};

inline double sup_norm_bound(const FiniteFamily& f) { return f.sup_bound(); }
inline double sup_norm_bound(const LinearFamily& f) { return f.sup_bound(); }

/// Unit ball of a Gaussian-kernel RKHS on real-embedded support points.
struct RKHSBall {
    /// unset means the median heuristic on the points handed to gram_matrix
    std::optional<double> bandwidth;

    double kernel(double a, double b, double gamma) const
    {
        const double d = a - b;
        return std::exp(-d * d / (2.0 * gamma * gamma));
    }
};

inline constexpr double kGramPsdTol = -1e-10;

/// Median of the pairwise distances between distinct points; 1 when there is
/// no positive distance.
inline double median_heuristic(const std::vector<double>& points)
{
    std::vector<double> d;
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t j = i + 1; j < points.size(); ++j) {
            const double v = std::abs(points[i] - points[j]);
            if (v > 0.0) {
                d.push_back(v);
            }
        }
    }
    if (d.empty()) {
        return 1.0;
    }
    std::sort(d.begin(), d.end());
    const std::size_t m = d.size() / 2;
    return d.size() % 2 == 1 ? d[m] : 0.5 * (d[m - 1] + d[m]);
}

inline Eigen::MatrixXd gram_matrix(const RKHSBall& ball, const std::vector<double>& points)
{
    if (points.empty()) {
        throw InvalidArgument("gram_matrix: no points");
    }
    const double gamma = ball.bandwidth.value_or(median_heuristic(points));
    if (!(gamma > 0.0)) {
        throw InvalidArgument("gram_matrix: bandwidth must be positive");
    }
    const auto n = static_cast<Eigen::Index>(points.size());
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            k(i, j) = ball.kernel(points[static_cast<std::size_t>(i)],
                                  points[static_cast<std::size_t>(j)], gamma);
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < kGramPsdTol) {
        throw InvalidArgument("gram_matrix: kernel matrix is not positive semidefinite");
    }
    return k;
}

/// Gram matrix over the Z support of a space (coordinates, else indices).
inline Eigen::MatrixXd support_gram(const RKHSBall& ball, const WeightedSpace& z_space)
{
    std::vector<double> pts;
    for (Eigen::Index i = 0; i < z_space.size(); ++i) {
        pts.push_back(z_space.coordinate(i));
    }
    return gram_matrix(ball, pts);
}

// ---- realizable families ------------------------------------------------------

struct FamilyOptions {
    std::size_t distractors = 7;
    double scale = 0.5;
    std::uint64_t seed = 0;
    /// requested distance of the planted h / g from h0 / gbar0 (0 = realizable)
    double eps_h = 0.0;
    double eps_g = 0.0;
    /// entrywise clip for distractors; unset means sup(anchor) + scale * (1 + sup(anchor))
    std::optional<double> clip_h;
    std::optional<double> clip_g;
};

struct FamilyPair {
    FiniteFamily h;
    FiniteFamily g;
    /// index of the planted member (h0 or its eps_h perturbation) in h, likewise for g
    std::size_t h_anchor = 0;
    std::size_t g_anchor = 0;
    double eps_h = 0.0;
    double eps_g = 0.0;
};

namespace detail {

inline SpaceFun random_unit(const WeightedSpace& s, Rng& rng, const std::vector<SpaceFun>& within = {})
{
    for (int attempt = 0; attempt < 100; ++attempt) {
        SpaceFun d = SpaceFun::Zero(s.size());
        if (within.empty()) {
            for (Eigen::Index i = 0; i < d.size(); ++i) {
                d(i) = rng.normal();
            }
        } else {
            for (const auto& b : within) {
                d += rng.normal() * b;
            }
        }
        const double nd = norm(s, d);
        if (nd > 1e-8) {
            return d / nd;
        }
    }
    throw Error("random_unit: could not draw a nonzero direction");
}

inline SpaceFun clip(SpaceFun f, double c)
{
    return f.cwiseMax(-c).cwiseMin(c);
}

// Anchor first, then distractors cycling null shift, scale up, scale down, random draw.
inline std::vector<SpaceFun> build_members(const WeightedSpace& s, const SpaceFun& anchor,
                                           const std::vector<SpaceFun>& null_basis,
                                           std::size_t distractors, double scale, double clip_at,
                                           Rng& rng)
{
    std::vector<SpaceFun> out{anchor};
    const double mag = std::max(1.0, norm(s, anchor));
    for (std::size_t i = 0; i < distractors; ++i) {
        SpaceFun f;
        switch (i % 4) {
        case 0:
            if (!null_basis.empty()) {
                f = anchor + scale * mag * rng.uniform(0.5, 1.0) * random_unit(s, rng, null_basis);
                break;
            }
            [[fallthrough]];
        case 3:
            f = anchor + scale * mag * rng.uniform(0.25, 1.0) * random_unit(s, rng);
            break;
        case 1:
            f = anchor * (1.0 + scale * rng.uniform(0.25, 1.0)) +
                SpaceFun::Constant(s.size(), 0.1 * scale);
            break;
        case 2:
            f = anchor * (1.0 - scale * rng.uniform(0.25, 1.0)) -
                SpaceFun::Constant(s.size(), 0.1 * scale);
            break;
        }
        out.push_back(clip(f, clip_at));
    }
    return out;
}

} // namespace detail

/// H holds h0 and G holds gbar0 (or their eps-perturbations) as member 0,
/// followed by seeded distractors.
inline FamilyPair make_realizable_families(const Scenario& sc, const FamilyOptions& opt = {})
{
    if (opt.eps_h < 0.0 || opt.eps_g < 0.0) {
        throw InvalidArgument("make_realizable_families: negative misspecification");
    }
    Rng rng(opt.seed);
    const auto& xs = sc.x_space();
    const auto& zs = sc.z_space();
    const SpaceFun& h0 = sc.truth.h0;
    const SpaceFun& g0 = sc.truth.gbar0;
    auto default_clip = [&](const SpaceFun& a) { return sup_norm(a) + opt.scale * (1.0 + sup_norm(a)); };

    auto hm = detail::build_members(xs, h0, sc.dec.null_basis_x(), opt.distractors, opt.scale,
                                    opt.clip_h.value_or(default_clip(h0)), rng);
    auto gm = detail::build_members(zs, g0, sc.dec.null_basis_z(), opt.distractors, opt.scale,
                                    opt.clip_g.value_or(default_clip(g0)), rng);
    FamilyPair out;
    if (opt.eps_h > 0.0) {
        hm[0] = h0 + opt.eps_h * detail::random_unit(xs, rng);
    }
    if (opt.eps_g > 0.0) {
        // orthogonal to null(T*), so the distance to the whole multiplier set is eps_g
        const auto null_z = sc.dec.null_basis_z();
        SpaceFun d = detail::random_unit(zs, rng);
        d -= orthogonal_projection(zs, d, null_z);
        if (norm(zs, d) < 1e-8) {
            throw Error("make_realizable_families: no direction transverse to null(T*)");
        }
        gm[0] = g0 + opt.eps_g * d / norm(zs, d);
    }
    out.h = FiniteFamily(std::move(hm));
    out.g = FiniteFamily(std::move(gm));
    out.eps_h = opt.eps_h;
    out.eps_g = opt.eps_g;
    return out;
}

// ---- sieve families for rate sweeps ---------------------------------------------

struct SieveOptions {
    /// number of non-constant singular directions perturbed
    Eigen::Index directions = 3;
    /// also perturb along the first null(T) direction
    bool null_direction = true;
    /// per-direction coefficient grid (should contain 0)
    std::vector<double> grid = {-0.16, -0.1, -0.05, -0.02, 0.0, 0.02, 0.05, 0.1, 0.16};
    /// gbar0 +- radius * u_i added to G
    double g_radius = 1.0;
};

namespace detail {

inline std::vector<SpaceFun> dedup(const std::vector<SpaceFun>& fs, double tol = 1e-12)
{
    std::vector<SpaceFun> out;
    std::map<std::vector<long long>, bool> seen;
    for (const auto& f : fs) {
        std::vector<long long> key(static_cast<std::size_t>(f.size()));
        for (Eigen::Index i = 0; i < f.size(); ++i) {
            key[static_cast<std::size_t>(i)] = std::llround(f(i) / tol);
        }
        if (seen.emplace(std::move(key), true).second) {
            out.push_back(f);
        }
    }
    return out;
}

} // namespace detail

/// H = h0 + product grid over singular (and null) directions; G = {gbar0, gbar0 +- R u_i}
/// together with T(h0 - h) for every h in H, deduplicated. h0 is H member 0.
inline FamilyPair make_sieve_families(const Scenario& sc, const SieveOptions& opt = {})
{
    if (opt.grid.empty()) {
        throw InvalidArgument("make_sieve_families: empty grid");
    }
    std::vector<SpaceFun> dirs;
    for (Eigen::Index i = 1; i <= opt.directions; ++i) {
        if (i >= sc.dec.rank) {
            throw InvalidArgument("make_sieve_families: not enough non-constant singular directions");
        }
        dirs.push_back(sc.dec.v(i));
    }
    if (opt.null_direction) {
        const auto nb = sc.dec.null_basis_x();
        if (nb.empty()) {
            throw InvalidArgument("make_sieve_families: null direction requested but T is injective");
        }
        dirs.push_back(nb.front());
    }
    const SpaceFun& h0 = sc.truth.h0;
    std::vector<SpaceFun> hs{h0};
    std::vector<std::size_t> idx(dirs.size(), 0);
    const std::size_t m = opt.grid.size();
    while (true) {
        SpaceFun h = h0;
        bool zero = true;
        for (std::size_t j = 0; j < dirs.size(); ++j) {
            const double c = opt.grid[idx[j]];
            zero = zero && c == 0.0;
            h += c * dirs[j];
        }
        if (!zero) {
            hs.push_back(h);
        }
        std::size_t j = 0;
        while (j < idx.size() && ++idx[j] == m) {
            idx[j] = 0;
            ++j;
        }
        if (j == idx.size()) {
            break;
        }
    }
    std::vector<SpaceFun> gs{sc.truth.gbar0};
    for (Eigen::Index i = 1; i <= opt.directions; ++i) {
        gs.push_back(sc.truth.gbar0 + opt.g_radius * sc.dec.u(i));
        gs.push_back(sc.truth.gbar0 - opt.g_radius * sc.dec.u(i));
    }
    for (const auto& h : hs) {
        gs.push_back(sc.op.apply(h0 - h));
    }
    FamilyPair out;
    out.h = FiniteFamily(detail::dedup(hs));
    out.g = FiniteFamily(detail::dedup(gs));
    return out;
}

// ---- JSON -------------------------------------------------------------------------

inline nlohmann::json to_json_doc(const FiniteFamily& f)
{
    nlohmann::json members = nlohmann::json::array();
    for (const auto& m : f.members()) {
        members.push_back(detail::to_std(m));
    }
    return {{"kind", "finite"}, {"sup_bound", f.sup_bound()}, {"members", members}};
}

inline FiniteFamily finite_family_from_json(const nlohmann::json& j)
{
    std::vector<SpaceFun> m;
    for (const auto& row : j.at("members")) {
        m.push_back(detail::to_eigen(row.get<std::vector<double>>()));
    }
    return FiniteFamily(std::move(m));
}

inline nlohmann::json to_json_doc(const LinearFamily& f)
{
    nlohmann::json basis = nlohmann::json::array();
    for (Eigen::Index j = 0; j < f.params(); ++j) {
        basis.push_back(detail::to_std(f.basis().col(j)));
    }
    return {{"kind", "linear"}, {"radius", f.radius()}, {"sup_bound", f.sup_bound()}, {"basis", basis}};
}

inline nlohmann::json to_json_doc(const RKHSBall& b)
{
    nlohmann::json j{{"kind", "rkhs_ball"}, {"kernel", "gaussian"}, {"radius", 1.0}};
    if (b.bandwidth) {
        j["bandwidth"] = *b.bandwidth;
    } else {
        j["bandwidth"] = "median";
    }
    return j;
}

} // namespace npiv
