#pragma once

// Checkable forms of the identification and finite-sample results.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "npiv/error.hpp"
#include "npiv/estimators.hpp"
#include "npiv/funclass.hpp"
#include "npiv/npivop.hpp"
#include "npiv/rng.hpp"
#include "npiv/scenario.hpp"

namespace npiv {

inline constexpr double kBoundSlack = 1e-9;
inline constexpr double kSaddleTol = 1e-9;
inline constexpr double kWitnessTol = 1e-8;

enum class CheckStatus { pass, violated, precondition_unmet };

inline const char* to_string(CheckStatus s)
{
    switch (s) {
    case CheckStatus::pass: return "pass";
    case CheckStatus::violated: return "violated";
    case CheckStatus::precondition_unmet: return "precondition_unmet";
    }
    return "?";
}

struct BoundReport {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    /// rhs - lhs
    double slack = 0.0;
    CheckStatus status = CheckStatus::pass;
    double m = 0.0;
    double eps_h = 0.0;
    double eps_g = 0.0;
    double c_h = 0.0;
    double c_g = 0.0;

    bool pass() const { return status == CheckStatus::pass; }
};

namespace detail {

inline BoundReport finalize(BoundReport r)
{
    r.slack = r.rhs - r.lhs;
    r.status = r.lhs <= r.rhs + kBoundSlack ? CheckStatus::pass : CheckStatus::violated;
    return r;
}

} // namespace detail

/// M(H, G) = max over H x G of |(E_n - E)[(Y - h(X)) g(Z) + 0.5 h(X)^2]|.
inline double empirical_sup(const Scenario& sc, const Moments& emp, const FiniteFamily& H,
                            const FiniteFamily& G)
{
    const auto pop = Moments::population_of(sc);
    const auto te = PayoffTable::build(emp, H, G);
    const auto tp = PayoffTable::build(pop, H, G);
    Eigen::MatrixXd d = te.cross - tp.cross;
    d.colwise() += 0.5 * (te.h_sq - tp.h_sq);
    return d.cwiseAbs().maxCoeff();
}

inline double empirical_sup(const Scenario& sc, const Dataset& ds, const FiniteFamily& H,
                            const FiniteFamily& G)
{
    return empirical_sup(sc, Moments::from_dataset(ds, H.dim(), G.dim()), H, G);
}

/// h0 in H and some g in G with T* g = h0.
inline bool realizable(const Scenario& sc, const FiniteFamily& H, const FiniteFamily& G,
                       double tol = kWitnessTol)
{
    if (!H.find(sc.truth.h0, tol)) {
        return false;
    }
    for (const auto& g : G.members()) {
        if ((sc.op.apply_adjoint(g) - sc.truth.h0).cwiseAbs().maxCoeff() <= tol) {
            return true;
        }
    }
    return false;
}

/// ||h_hat - h0|| <= sqrt(2 M)
inline BoundReport check_main_bound(const SpaceFun& h_hat, const Scenario& sc, double m)
{
    BoundReport r;
    r.name = "main_bound";
    r.m = m;
    r.lhs = evaluate(h_hat, sc.truth, sc.op).l2_error;
    r.rhs = std::sqrt(2.0 * std::max(0.0, m));
    return detail::finalize(r);
}

inline BoundReport check_main_bound(const FitResult& fit, const Scenario& sc, double m)
{
    return check_main_bound(fit.h_hat, sc, m);
}

/// Guarded form: reports precondition_unmet instead of a verdict when the
/// families are not realizable.
inline BoundReport check_main_bound(const FitResult& fit, const Scenario& sc, const FiniteFamily& H,
                                    const FiniteFamily& G, double m)
{
    if (!realizable(sc, H, G)) {
        BoundReport r;
        r.name = "main_bound";
        r.m = m;
        r.status = CheckStatus::precondition_unmet;
        return r;
    }
    return check_main_bound(fit, sc, m);
}

inline double misspec_rhs(double m, double eps_h, double eps_g, double c_h, double c_g)
{
    return std::sqrt(std::max(0.0, (2.0 * c_h + c_g) * eps_h + c_h * eps_g + 2.0 * m));
}

/// ||h_hat - h0|| <= sqrt((2 C_H + C_G) eps_h + C_H eps_g + 2 M)
inline BoundReport check_misspec_bound(const SpaceFun& h_hat, const Scenario& sc, double m,
                                       double eps_h, double eps_g, double c_h, double c_g)
{
    BoundReport r;
    r.name = "misspec_bound";
    r.m = m;
    r.eps_h = eps_h;
    r.eps_g = eps_g;
    r.c_h = c_h;
    r.c_g = c_g;
    r.lhs = evaluate(h_hat, sc.truth, sc.op).l2_error;
    r.rhs = misspec_rhs(m, eps_h, eps_g, c_h, c_g);
    return detail::finalize(r);
}

inline BoundReport check_misspec_bound(const FitResult& fit, const Scenario& sc, double m,
                                       double eps_h, double eps_g, double c_h, double c_g)
{
    return check_misspec_bound(fit.h_hat, sc, m, eps_h, eps_g, c_h, c_g);
}

struct MisspecConstants {
    double eps_h = 0.0;
    double eps_g = 0.0;
    double c_h = 0.0;
    double c_g = 0.0;
};

/// Achieved eps_h = min_h ||h - h0||, eps_g = min_g dist(g, gbar0 + null(T*)),
/// C_H = max(sup H, |h0|_inf), C_G = sup G.
inline MisspecConstants misspec_constants(const Scenario& sc, const FiniteFamily& H, const FiniteFamily& G)
{
    MisspecConstants c;
    c.eps_h = std::numeric_limits<double>::infinity();
    for (const auto& h : H.members()) {
        c.eps_h = std::min(c.eps_h, norm(sc.x_space(), h - sc.truth.h0));
    }
    const auto null_z = sc.dec.null_basis_z();
    c.eps_g = std::numeric_limits<double>::infinity();
    for (const auto& g : G.members()) {
        const SpaceFun d = g - sc.truth.gbar0;
        c.eps_g = std::min(c.eps_g, norm(sc.z_space(), d - orthogonal_projection(sc.z_space(), d, null_z)));
    }
    c.c_h = std::max(H.sup_bound(), sup_norm(sc.truth.h0));
    c.c_g = G.sup_bound();
    return c;
}

// ---- Rademacher complexity ---------------------------------------------------------

struct McEstimate {
    double estimate = 0.0;
    double std_error = 0.0;
};

/// (1/n) E sup_h sum_i sigma_i h(X_i) over draws of X from the design's X
/// marginal and of the signs.
inline McEstimate mc_rademacher(const FiniteFamily& family, const WeightedSpace& x_space, std::size_t n,
                                std::size_t reps, std::uint64_t seed)
{
    if (reps == 0 || n == 0) {
        throw InvalidArgument("mc_rademacher: need n >= 1 and reps >= 1");
    }
    detail::require_same_size(family.dim(), x_space.size(), "mc_rademacher(family)");
    const auto& w = x_space.weights();
    const DiscreteSampler pick(std::span<const double>(w.data(), static_cast<std::size_t>(w.size())));
    const Eigen::MatrixXd fm = family.matrix();
    Rng rng(seed);
    double sum = 0.0;
    double sum2 = 0.0;
    Eigen::VectorXd acc(fm.cols());
    for (std::size_t r = 0; r < reps; ++r) {
        acc.setZero();
        for (std::size_t i = 0; i < n; ++i) {
            const auto x = static_cast<Eigen::Index>(pick(rng));
            acc += static_cast<double>(rng.sign()) * fm.row(x).transpose();
        }
        const double v = acc.maxCoeff() / static_cast<double>(n);
        sum += v;
        sum2 += v * v;
    }
    const double k = static_cast<double>(reps);
    McEstimate out;
    out.estimate = sum / k;
    const double var = reps > 1 ? std::max(0.0, (sum2 - k * out.estimate * out.estimate) / (k - 1.0)) : 0.0;
    out.std_error = std::sqrt(var / k);
    return out;
}

inline McEstimate mc_rademacher(const FiniteFamily& family, const Scenario& sc, std::size_t n,
                                std::size_t reps, std::uint64_t seed)
{
    return mc_rademacher(family, sc.x_space(), n, reps, seed);
}

// ---- saddle points ----------------------------------------------------------------------

struct SaddleReport {
    bool pass = true;
    /// max over probes h of L(h', g') - L(h, g'); positive means h' is not a best response
    double h_violation = 0.0;
    /// max over probes g of L(h', g) - L(h', g')
    double g_violation = 0.0;
    std::size_t worst_h = 0;
    std::size_t worst_g = 0;
};

/// Checks L(h, g') >= L(h', g') >= L(h', g) for every probe h, g.
inline SaddleReport check_saddle(const Scenario& sc, const SpaceFun& h_cand, const SpaceFun& g_cand,
                                 const std::vector<SpaceFun>& h_probe, const std::vector<SpaceFun>& g_probe)
{
    SaddleReport r;
    const double centre = pop_lagrangian(sc, h_cand, g_cand);
    r.h_violation = -std::numeric_limits<double>::infinity();
    r.g_violation = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < h_probe.size(); ++i) {
        const double v = centre - pop_lagrangian(sc, h_probe[i], g_cand);
        if (v > r.h_violation) {
            r.h_violation = v;
            r.worst_h = i;
        }
    }
    for (std::size_t j = 0; j < g_probe.size(); ++j) {
        const double v = pop_lagrangian(sc, h_cand, g_probe[j]) - centre;
        if (v > r.g_violation) {
            r.g_violation = v;
            r.worst_g = j;
        }
    }
    r.pass = r.h_violation <= kSaddleTol && r.g_violation <= kSaddleTol;
    return r;
}

// ---- restriction lemma ------------------------------------------------------------------

struct InclusionReport {
    CheckStatus status = CheckStatus::pass;
    /// minimax argmin over the restricted rows
    std::vector<std::size_t> restricted_argmin;
    bool one_direction = true;
    bool second_direction = true;
};

namespace detail {

inline std::vector<std::size_t> argset_min(const std::vector<double>& v, const std::vector<std::size_t>& idx,
                                           double tol)
{
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        best = std::min(best, v[i]);
    }
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (v[i] <= best + tol * (1.0 + std::abs(best))) {
            out.push_back(idx[i]);
        }
    }
    return out;
}

inline std::vector<std::size_t> all_indices(Eigen::Index n)
{
    std::vector<std::size_t> v(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = i;
    }
    return v;
}

inline bool subset(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b)
{
    return std::all_of(a.begin(), a.end(), [&](std::size_t x) { return std::find(b.begin(), b.end(), x) != b.end(); });
}

} // namespace detail

/// Saddle-set inclusions for a finite two-player game f (rows minimize, columns
/// maximize) restricted to rows xs and columns ys:
///   Z_X cap X' is contained in argmin_{X'} max_{Y'} f,
///   argmin_{X'} max_{Y'} f is contained in the best responses to full-game maximin columns.
/// precondition_unmet unless some full-game saddle point lies in X' x Y'.
inline InclusionReport check_payoff_inclusions(const Eigen::MatrixXd& f, const std::vector<std::size_t>& xs,
                                               const std::vector<std::size_t>& ys, double tol = 1e-12)
{
    InclusionReport rep;
    const auto rows = detail::all_indices(f.rows());
    const auto cols = detail::all_indices(f.cols());
    auto maxes = [&](const std::vector<std::size_t>& r, const std::vector<std::size_t>& c) {
        std::vector<double> out;
        for (std::size_t x : r) {
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t y : c) {
                m = std::max(m, f(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)));
            }
            out.push_back(m);
        }
        return out;
    };
    auto is_saddle = [&](std::size_t x, std::size_t y) {
        const double v = f(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y));
        const double t = tol * (1.0 + std::abs(v));
        return f.row(static_cast<Eigen::Index>(x)).maxCoeff() <= v + t &&
               f.col(static_cast<Eigen::Index>(y)).minCoeff() >= v - t;
    };
    bool inside = false;
    for (std::size_t x : xs) {
        for (std::size_t y : ys) {
            inside = inside || is_saddle(x, y);
        }
    }
    if (!inside) {
        rep.status = CheckStatus::precondition_unmet;
        return rep;
    }
    const auto zx = detail::argset_min(maxes(rows, cols), rows, tol);
    rep.restricted_argmin = detail::argset_min(maxes(xs, ys), xs, tol);

    std::vector<double> col_min;
    for (std::size_t y : cols) {
        col_min.push_back(f.col(static_cast<Eigen::Index>(y)).minCoeff());
    }
    const double maximin = *std::max_element(col_min.begin(), col_min.end());
    std::vector<std::size_t> responses;
    for (std::size_t y : cols) {
        if (col_min[y] < maximin - tol * (1.0 + std::abs(maximin))) {
            continue;
        }
        std::vector<double> col(f.rows());
        for (std::size_t x : rows) {
            col[x] = f(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y));
        }
        for (std::size_t x : detail::argset_min(col, rows, tol)) {
            if (std::find(responses.begin(), responses.end(), x) == responses.end()) {
                responses.push_back(x);
            }
        }
    }
    std::vector<std::size_t> zx_in;
    for (std::size_t x : zx) {
        if (std::find(xs.begin(), xs.end(), x) != xs.end()) {
            zx_in.push_back(x);
        }
    }
    rep.one_direction = detail::subset(zx_in, rep.restricted_argmin);
    rep.second_direction = detail::subset(rep.restricted_argmin, responses);
    rep.status = rep.one_direction && rep.second_direction ? CheckStatus::pass : CheckStatus::violated;
    return rep;
}

/// On the population Lagrangian over finite H_sub x G_sub: the restricted minimax
/// argmin must be exactly the members equal to h0. Over all of L2 the minimax
/// argmin and the best response to gbar0 are both {h0}, so the two inclusions
/// reduce to {h0} cap H_sub within the argmin and the argmin within {h0}.
inline InclusionReport check_restriction_lemma(const Scenario& sc, const FiniteFamily& H_sub,
                                               const FiniteFamily& G_sub)
{
    InclusionReport rep;
    if (!realizable(sc, H_sub, G_sub)) {
        rep.status = CheckStatus::precondition_unmet;
        return rep;
    }
    const auto t = PayoffTable::build(Moments::population_of(sc), H_sub, G_sub);
    Eigen::VectorXd inner;
    std::vector<std::size_t> arg;
    detail::row_max(t.cross, inner, arg);
    const Eigen::VectorXd value = 0.5 * t.h_sq + inner;
    std::vector<double> vals(value.data(), value.data() + value.size());
    rep.restricted_argmin = detail::argset_min(vals, detail::all_indices(value.size()), kTieRelTol);

    std::vector<std::size_t> h0_members;
    for (std::size_t i = 0; i < H_sub.size(); ++i) {
        if ((H_sub[i] - sc.truth.h0).cwiseAbs().maxCoeff() <= kWitnessTol) {
            h0_members.push_back(i);
        }
    }
    rep.one_direction = detail::subset(h0_members, rep.restricted_argmin);
    rep.second_direction = detail::subset(rep.restricted_argmin, h0_members);
    rep.status = rep.one_direction && rep.second_direction ? CheckStatus::pass : CheckStatus::violated;
    return rep;
}

// ---- multiplier witness -------------------------------------------------------------------

struct WitnessReport {
    /// ||T T* gbar0 - r0|| and ||T* gbar0 - h0||
    double forward_premise = 0.0;
    double forward_residual = 0.0;
    /// worst over sampled g = gbar0 + null(T*) of ||T* g - h0|| and ||T T* g - r0||
    double reverse_premise = 0.0;
    double reverse_residual = 0.0;
    std::size_t samples = 0;
    bool pass = true;
};

/// Both directions of T T* g = r0 <=> T* g = h0, with reverse witnesses drawn
/// from gbar0 + null(T*).
inline WitnessReport lemma2_witness(const CondExpOp& op, const OperatorSVD& dec, const SpaceFun& r0,
                                    std::size_t samples = 16, std::uint64_t seed = 0)
{
    const auto& xs = op.x_space();
    const auto& zs = op.z_space();
    const SpaceFun h0 = least_norm_solution(op, dec, r0);
    const SpaceFun g0 = lagrange_multiplier(op, dec, r0);
    WitnessReport w;
    w.forward_premise = norm(zs, op.apply(op.apply_adjoint(g0)) - r0);
    w.forward_residual = norm(xs, op.apply_adjoint(g0) - h0);
    const auto null_z = dec.null_basis_z();
    Rng rng(seed);
    for (std::size_t s = 0; s < samples; ++s) {
        SpaceFun g = g0;
        for (const auto& b : null_z) {
            g += rng.uniform(-2.0, 2.0) * b;
        }
        w.reverse_premise = std::max(w.reverse_premise, norm(xs, op.apply_adjoint(g) - h0));
        w.reverse_residual = std::max(w.reverse_residual, norm(zs, op.apply(op.apply_adjoint(g)) - r0));
        ++w.samples;
    }
    const double scale = std::max(1.0, norm(zs, r0));
    w.pass = w.forward_premise <= kWitnessTol * scale && w.forward_residual <= kWitnessTol * scale &&
             w.reverse_premise <= kWitnessTol * scale && w.reverse_residual <= kWitnessTol * scale;
    return w;
}

inline WitnessReport lemma2_witness(const Scenario& sc, std::size_t samples = 16, std::uint64_t seed = 0)
{
    return lemma2_witness(sc.op, sc.dec, sc.truth.r0, samples, seed);
}

/// | ||gbar0||^2 - sum_i gamma_i^2 / sigma_i^4 |
inline double source_identity_gap(const Scenario& sc)
{
    const auto diag = source_diagnostics(sc.dec, sc.z_space(), sc.truth.r0);
    return std::abs(sc.truth.source_norm * sc.truth.source_norm - diag.source_sum);
}

// ---- JSON ----------------------------------------------------------------------------------

inline nlohmann::json to_json_doc(const BoundReport& r)
{
    return {{"name", r.name}, {"lhs", r.lhs},   {"rhs", r.rhs},     {"slack", r.slack},
            {"status", to_string(r.status)},   {"M", r.m},         {"eps_h", r.eps_h},
            {"eps_g", r.eps_g},                 {"C_H", r.c_h},     {"C_G", r.c_g}};
}

} // namespace npiv
