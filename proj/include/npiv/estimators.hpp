#pragma once

// Objectives, the enumeration estimators, the RKHS closed-form estimator and
// oracle metrics.
//
// Every finite-family objective here depends on the data only through the
// cell moments p(x, z) = E_n[1{X=x, Z=z}] and m(x, z) = E_n[Y 1{X=x, Z=z}],
// so a fit costs O(|H| |G| |Z|) regardless of n. Population mode swaps in the
// exact moments of the scenario.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "npiv/error.hpp"
#include "npiv/funclass.hpp"
#include "npiv/npivop.hpp"
#include "npiv/probspace.hpp"
#include "npiv/scenario.hpp"

namespace npiv {

struct Moments {
    /// p(x, z), dX x dZ
    Eigen::MatrixXd pxz;
    /// E[Y 1{X=x, Z=z}], dX x dZ
    Eigen::MatrixXd mxz;
    double y2 = 0.0;
    /// sample size; 0 in population mode
    std::size_t n = 0;

    Eigen::VectorXd px() const { return pxz.rowwise().sum(); }
    Eigen::VectorXd pz() const { return pxz.colwise().sum().transpose(); }
    Eigen::VectorXd mz() const { return mxz.colwise().sum().transpose(); }
    bool population() const { return n == 0; }

    static Moments from_dataset(const Dataset& ds, Eigen::Index dx, Eigen::Index dz)
    {
        if (ds.size() == 0) {
            throw InvalidArgument("Moments: empty dataset");
        }
        Moments m;
        m.pxz = Eigen::MatrixXd::Zero(dx, dz);
        m.mxz = Eigen::MatrixXd::Zero(dx, dz);
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const int x = ds.x[i];
            const int z = ds.z[i];
            if (x < 0 || x >= dx || z < 0 || z >= dz) {
                throw DimensionError("Moments: observation " + std::to_string(i) +
                                     " outside the support");
            }
            m.pxz(x, z) += 1.0;
            m.mxz(x, z) += ds.y[i];
            m.y2 += ds.y[i] * ds.y[i];
        }
        const double n = static_cast<double>(ds.size());
        m.pxz /= n;
        m.mxz /= n;
        m.y2 /= n;
        m.n = ds.size();
        return m;
    }

    static Moments population_of(const Scenario& sc)
    {
        Moments m;
        m.pxz = sc.design().joint();
        m.mxz = sc.h_star.asDiagonal() * m.pxz;
        m.y2 = (m.pxz.rowwise().sum().array() * sc.h_star.array().square()).sum() +
               sc.noise.second_moment();
        m.n = 0;
        return m;
    }
};

// ---- Lagrangians --------------------------------------------------------------

/// L(h, g) = 0.5 <h, h> + <r0 - T h, g>
inline double pop_lagrangian(const Scenario& sc, const SpaceFun& h, const SpaceFun& g)
{
    detail::require_same_size(h.size(), sc.x_space().size(), "pop_lagrangian(h)");
    detail::require_same_size(g.size(), sc.z_space().size(), "pop_lagrangian(g)");
    return 0.5 * inner_product(sc.x_space(), h, h) +
           inner_product(sc.z_space(), sc.truth.r0 - sc.op.apply(h), g);
}

/// L_n(h, g) = 0.5 E_n[h(X)^2] + E_n[(Y - h(X)) g(Z)]
inline double emp_lagrangian(const Dataset& ds, const SpaceFun& h, const SpaceFun& g)
{
    if (ds.size() == 0) {
        throw InvalidArgument("emp_lagrangian: empty dataset");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double hx = h(ds.x[i]);
        s += 0.5 * hx * hx + (ds.y[i] - hx) * g(ds.z[i]);
    }
    return s / static_cast<double>(ds.size());
}

/// -0.5 E_n[g(Z)^2] + E_n[(Y - h(X)) g(Z)], the projected-MSE objective.
inline double emp_projected_objective(const Dataset& ds, const SpaceFun& h, const SpaceFun& g)
{
    if (ds.size() == 0) {
        throw InvalidArgument("emp_projected_objective: empty dataset");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double gz = g(ds.z[i]);
        s += -0.5 * gz * gz + (ds.y[i] - h(ds.x[i])) * gz;
    }
    return s / static_cast<double>(ds.size());
}

/// L_n from moments; in population mode this is the population Lagrangian.
inline double moment_lagrangian(const Moments& m, const SpaceFun& h, const SpaceFun& g)
{
    return 0.5 * m.px().dot(h.cwiseProduct(h)) + g.dot(m.mz() - m.pxz.transpose() * h);
}

inline double moment_projected_objective(const Moments& m, const SpaceFun& h, const SpaceFun& g)
{
    return -0.5 * m.pz().dot(g.cwiseProduct(g)) + g.dot(m.mz() - m.pxz.transpose() * h);
}

// ---- results -------------------------------------------------------------------

struct FitDiagnostics {
    std::size_t iterations = 0;
    double final_step = 0.0;
    std::size_t enumeration = 0;
    bool converged = true;
    /// last objective decrease (RKHS solver)
    double certificate = 0.0;
    /// flip: first-stage discriminator index
    std::optional<std::size_t> stage_one_g;
    /// both-worlds: threshold and confidence-set members
    double mu = 0.0;
    double minimax_value = 0.0;
    std::vector<std::size_t> confidence_set;
};

struct FitResult {
    std::string estimator;
    nlohmann::json hyperparameters = nlohmann::json::object();
    SpaceFun h_hat;
    /// index into H for enumeration estimators
    std::optional<std::size_t> h_index;
    /// maximizing discriminator; for the RKHS path, the normalized witness on the Z support
    SpaceFun g_inner;
    std::optional<std::size_t> g_index;
    /// parameters for linear-family fits
    Eigen::VectorXd theta;
    double objective = 0.0;
    FitDiagnostics diagnostics;
};

struct Metrics {
    double l2_error = 0.0;
    double projected_rmse = 0.0;
    double projected_mse = 0.0;
};

inline Metrics evaluate(const SpaceFun& h_hat, const ScenarioTruth& truth, const CondExpOp& op)
{
    detail::require_same_size(h_hat.size(), truth.h0.size(), "evaluate(h_hat)");
    const SpaceFun d = h_hat - truth.h0;
    Metrics m;
    m.l2_error = norm(op.x_space(), d);
    m.projected_rmse = norm(op.z_space(), op.apply(d));
    m.projected_mse = m.projected_rmse * m.projected_rmse;
    return m;
}

inline Metrics evaluate(const FitResult& fit, const ScenarioTruth& truth, const CondExpOp& op)
{
    return evaluate(fit.h_hat, truth, op);
}

// ---- enumeration machinery ---------------------------------------------------------

inline constexpr double kTieRelTol = 1e-12;

/// All payoff ingredients over H x G:
///   cross(h, g) = E_n[(Y - h) g],  h_sq(h) = E_n[h^2],  g_sq(g) = E_n[g^2].
struct PayoffTable {
    Eigen::MatrixXd cross;
    Eigen::VectorXd h_sq;
    Eigen::VectorXd g_sq;

    static PayoffTable build(const Moments& m, const FiniteFamily& H, const FiniteFamily& G)
    {
        detail::require_same_size(H.dim(), m.pxz.rows(), "PayoffTable(H)");
        detail::require_same_size(G.dim(), m.pxz.cols(), "PayoffTable(G)");
        const Eigen::MatrixXd hm = H.matrix();
        const Eigen::MatrixXd gm = G.matrix();
        // a(z, h) = m_z - sum_x p(x, z) h(x)
        Eigen::MatrixXd a = -(m.pxz.transpose() * hm);
        a.colwise() += m.mz();
        PayoffTable t;
        t.cross = a.transpose() * gm;
        t.h_sq = (hm.array().square().matrix().transpose() * m.px());
        t.g_sq = (gm.array().square().matrix().transpose() * m.pz());
        return t;
    }

    std::size_t h_count() const { return static_cast<std::size_t>(cross.rows()); }
    std::size_t g_count() const { return static_cast<std::size_t>(cross.cols()); }
};

namespace detail {

/// Argmin under the tie rule: candidates within kTieRelTol (1 + |min|) of the
/// minimum, then smallest norm_sq, then lowest index. `allowed` restricts the search.
inline std::size_t tie_argmin(const Eigen::VectorXd& value, const Eigen::VectorXd& norm_sq,
                              const std::vector<std::size_t>* allowed = nullptr)
{
    auto visit = [&](auto&& fn) {
        if (allowed) {
            for (std::size_t i : *allowed) fn(i);
        } else {
            for (std::size_t i = 0; i < static_cast<std::size_t>(value.size()); ++i) fn(i);
        }
    };
    double best = std::numeric_limits<double>::infinity();
    visit([&](std::size_t i) { best = std::min(best, value(static_cast<Eigen::Index>(i))); });
    const double tol = kTieRelTol * (1.0 + std::abs(best));
    std::size_t pick = std::numeric_limits<std::size_t>::max();
    double pick_norm = std::numeric_limits<double>::infinity();
    visit([&](std::size_t i) {
        const auto k = static_cast<Eigen::Index>(i);
        if (value(k) <= best + tol && (norm_sq(k) < pick_norm || (norm_sq(k) == pick_norm && i < pick))) {
            pick = i;
            pick_norm = norm_sq(k);
        }
    });
    return pick;
}

/// Row-wise max with the first maximizing column.
inline void row_max(const Eigen::MatrixXd& a, Eigen::VectorXd& value, std::vector<std::size_t>& arg)
{
    value.resize(a.rows());
    arg.assign(static_cast<std::size_t>(a.rows()), 0);
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        Eigen::Index c = 0;
        value(r) = a.row(r).maxCoeff(&c);
        arg[static_cast<std::size_t>(r)] = static_cast<std::size_t>(c);
    }
}

inline FitResult finish(std::string name, const FiniteFamily& H, const FiniteFamily& G,
                        std::size_t hi, std::size_t gi, double objective)
{
    FitResult r;
    r.estimator = std::move(name);
    r.h_index = hi;
    r.h_hat = H[hi];
    r.g_index = gi;
    r.g_inner = G[gi];
    r.objective = objective;
    r.diagnostics.enumeration = H.size() * G.size();
    return r;
}

// max_g of -0.5 g_sq + cross, per h
inline void projected_values(const PayoffTable& t, Eigen::VectorXd& value, std::vector<std::size_t>& arg)
{
    Eigen::MatrixXd a = t.cross;
    a.rowwise() -= 0.5 * t.g_sq.transpose();
    row_max(a, value, arg);
}

} // namespace detail

// ---- estimators --------------------------------------------------------------------

/// argmin_h max_g L_n(h, g)
inline FitResult fit_penalized_minimax(const PayoffTable& t, const FiniteFamily& H, const FiniteFamily& G)
{
    Eigen::VectorXd inner;
    std::vector<std::size_t> arg;
    detail::row_max(t.cross, inner, arg);
    const Eigen::VectorXd value = 0.5 * t.h_sq + inner;
    const std::size_t hi = detail::tie_argmin(value, t.h_sq);
    return detail::finish("penalized_minimax", H, G, hi, arg[hi], value(static_cast<Eigen::Index>(hi)));
}

inline FitResult fit_penalized_minimax(const Moments& m, const FiniteFamily& H, const FiniteFamily& G)
{
    return fit_penalized_minimax(PayoffTable::build(m, H, G), H, G);
}

inline FitResult fit_penalized_minimax(const Dataset& ds, const FiniteFamily& H, const FiniteFamily& G)
{
    return fit_penalized_minimax(Moments::from_dataset(ds, H.dim(), G.dim()), H, G);
}

/// argmin_h max_g -0.5 E_n[g^2] + E_n[(Y - h) g]
inline FitResult fit_dikkala(const PayoffTable& t, const FiniteFamily& H, const FiniteFamily& G)
{
    Eigen::VectorXd value;
    std::vector<std::size_t> arg;
    detail::projected_values(t, value, arg);
    const std::size_t hi = detail::tie_argmin(value, t.h_sq);
    return detail::finish("dikkala", H, G, hi, arg[hi], value(static_cast<Eigen::Index>(hi)));
}

inline FitResult fit_dikkala(const Moments& m, const FiniteFamily& H, const FiniteFamily& G)
{
    return fit_dikkala(PayoffTable::build(m, H, G), H, G);
}

inline FitResult fit_dikkala(const Dataset& ds, const FiniteFamily& H, const FiniteFamily& G)
{
    return fit_dikkala(Moments::from_dataset(ds, H.dim(), G.dim()), H, G);
}

/// alpha_n = c n^(-1/3)
inline double liao_alpha(std::size_t n, double c = 1.0)
{
    if (n == 0) {
        throw InvalidArgument("liao_alpha: n must be positive");
    }
    return c * std::pow(static_cast<double>(n), -1.0 / 3.0);
}

/// fit_dikkala's objective plus alpha E_n[h^2]
inline FitResult fit_liao(const PayoffTable& t, const FiniteFamily& H, const FiniteFamily& G, double alpha)
{
    if (!(alpha >= 0.0)) {
        throw InvalidArgument("fit_liao: alpha must be nonnegative");
    }
    Eigen::VectorXd value;
    std::vector<std::size_t> arg;
    detail::projected_values(t, value, arg);
    value += alpha * t.h_sq;
    const std::size_t hi = detail::tie_argmin(value, t.h_sq);
    auto r = detail::finish("liao", H, G, hi, arg[hi], value(static_cast<Eigen::Index>(hi)));
    r.hyperparameters["alpha"] = alpha;
    return r;
}

inline FitResult fit_liao(const Moments& m, const FiniteFamily& H, const FiniteFamily& G, double alpha)
{
    return fit_liao(PayoffTable::build(m, H, G), H, G, alpha);
}

inline FitResult fit_liao(const Dataset& ds, const FiniteFamily& H, const FiniteFamily& G, double alpha)
{
    return fit_liao(Moments::from_dataset(ds, H.dim(), G.dim()), H, G, alpha);
}

/// g_hat = argmax_g min_h L_n(h, g), then h_hat = argmin_h L_n(h, g_hat).
inline FitResult fit_bennett_flip(const PayoffTable& t, const FiniteFamily& H, const FiniteFamily& G)
{
    Eigen::MatrixXd l = t.cross;
    l.colwise() += 0.5 * t.h_sq;
    Eigen::Index gi = 0;
    l.colwise().minCoeff().maxCoeff(&gi);
    const Eigen::VectorXd column = l.col(gi);
    const std::size_t hi = detail::tie_argmin(column, t.h_sq);
    auto r = detail::finish("bennett_flip", H, G, hi, static_cast<std::size_t>(gi),
                            column(static_cast<Eigen::Index>(hi)));
    r.diagnostics.stage_one_g = static_cast<std::size_t>(gi);
    return r;
}

inline FitResult fit_bennett_flip(const Moments& m, const FiniteFamily& H, const FiniteFamily& G)
{
    return fit_bennett_flip(PayoffTable::build(m, H, G), H, G);
}

inline FitResult fit_bennett_flip(const Dataset& ds, const FiniteFamily& H, const FiniteFamily& G)
{
    return fit_bennett_flip(Moments::from_dataset(ds, H.dim(), G.dim()), H, G);
}

/// mu_n = c (C_H + C_G)^2 sqrt(ln(|H| |G| / delta) / n)
inline double both_worlds_mu(double c_h, double c_g, std::size_t h_size, std::size_t g_size,
                             double delta, std::size_t n, double c = 1.0)
{
    if (n == 0 || !(delta > 0.0) || h_size == 0 || g_size == 0) {
        throw InvalidArgument("both_worlds_mu: need n >= 1, delta > 0 and nonempty families");
    }
    const double s = c_h + c_g;
    return c * s * s *
           std::sqrt(std::log(static_cast<double>(h_size) * static_cast<double>(g_size) / delta) /
                     static_cast<double>(n));
}

/// H_n = {h : max_g L_n(h, g) - m* <= mu}; returns the projected-MSE objective's
/// argmin over H_n.
inline FitResult fit_both_worlds(const PayoffTable& t, const FiniteFamily& H, const FiniteFamily& G, double mu)
{
    if (!(mu >= 0.0)) {
        throw InvalidArgument("fit_both_worlds: mu must be nonnegative");
    }
    Eigen::VectorXd inner;
    std::vector<std::size_t> arg;
    detail::row_max(t.cross, inner, arg);
    const Eigen::VectorXd pen = 0.5 * t.h_sq + inner;
    const std::size_t hmin = detail::tie_argmin(pen, t.h_sq);
    const double mstar = pen(static_cast<Eigen::Index>(hmin));

    std::vector<std::size_t> hn;
    for (Eigen::Index i = 0; i < pen.size(); ++i) {
        if (pen(i) - mstar <= mu || static_cast<std::size_t>(i) == hmin) {
            hn.push_back(static_cast<std::size_t>(i));
        }
    }
    Eigen::VectorXd value;
    std::vector<std::size_t> parg;
    detail::projected_values(t, value, parg);
    const std::size_t hi = detail::tie_argmin(value, t.h_sq, &hn);
    auto r = detail::finish("both_worlds", H, G, hi, parg[hi], value(static_cast<Eigen::Index>(hi)));
    r.hyperparameters["mu"] = mu;
    r.diagnostics.mu = mu;
    r.diagnostics.minimax_value = mstar;
    r.diagnostics.confidence_set = std::move(hn);
    return r;
}

inline FitResult fit_both_worlds(const Moments& m, const FiniteFamily& H, const FiniteFamily& G, double mu)
{
    return fit_both_worlds(PayoffTable::build(m, H, G), H, G, mu);
}

inline FitResult fit_both_worlds(const Dataset& ds, const FiniteFamily& H, const FiniteFamily& G, double mu)
{
    return fit_both_worlds(Moments::from_dataset(ds, H.dim(), G.dim()), H, G, mu);
}

// ---- RKHS closed form ------------------------------------------------------------

struct SubgradientConfig {
    std::size_t budget = 5000;
    double tolerance = 1e-6;
    /// step at iteration t is step / sqrt(t)
    double step = 1.0;
};

/// 0.5 E_n[h^2] + sqrt(r' K r) with r(z) = E_n[(Y - h(X)) 1{Z=z}]; equals
/// 0.5 E_n[h^2] + (1/n) sqrt(rho' K_n rho) for the observation-level Gram K_n.
inline double rkhs_objective(const Moments& m, const Eigen::MatrixXd& kz, const SpaceFun& h)
{
    const Eigen::VectorXd r = m.mz() - m.pxz.transpose() * h;
    return 0.5 * m.px().dot(h.cwiseProduct(h)) + std::sqrt(std::max(0.0, r.dot(kz * r)));
}

/// Projected subgradient over the parameter ball with step c / sqrt(t). Iterates
/// are averaged over epochs that restart at powers of two; the returned point is
/// the better of the last epoch average and the best iterate seen.
inline FitResult fit_rkhs_penalized(const Moments& m, const LinearFamily& family,
                                    const Eigen::MatrixXd& kz, const SubgradientConfig& cfg = {})
{
    if (cfg.budget == 0) {
        throw InvalidArgument("fit_rkhs_penalized: solver budget must be positive");
    }
    detail::require_same_size(family.dim(), m.pxz.rows(), "fit_rkhs_penalized(family)");
    detail::require_same_size(kz.rows(), m.pxz.cols(), "fit_rkhs_penalized(gram)");
    const Eigen::MatrixXd& phi = family.basis();
    const Eigen::VectorXd px = m.px();
    const Eigen::VectorXd mz = m.mz();
    auto objective = [&](const Eigen::VectorXd& th) { return rkhs_objective(m, kz, phi * th); };

    Eigen::VectorXd theta = Eigen::VectorXd::Zero(family.params());
    Eigen::VectorXd best = theta;
    double best_f = objective(theta);
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(theta.size());
    std::size_t in_epoch = 0;
    std::size_t next_restart = 2;
    double prev_epoch_f = std::numeric_limits<double>::infinity();
    double decrease = std::numeric_limits<double>::infinity();
    bool converged = false;
    std::size_t t = 1;
    double step = cfg.step;
    for (; t <= cfg.budget; ++t) {
        const SpaceFun h = phi * theta;
        const Eigen::VectorXd r = mz - m.pxz.transpose() * h;
        const double q = std::sqrt(std::max(0.0, r.dot(kz * r)));
        Eigen::VectorXd grad_h = px.cwiseProduct(h);
        if (q > 0.0) {
            grad_h -= m.pxz * (kz * r) / q;
        }
        step = cfg.step / std::sqrt(static_cast<double>(t));
        theta = family.project(theta - step * (phi.transpose() * grad_h));

        const double f = objective(theta);
        if (f < best_f) {
            best_f = f;
            best = theta;
        }
        avg += (theta - avg) / static_cast<double>(++in_epoch);
        if (t + 1 == next_restart) {
            const double fa = objective(avg);
            decrease = prev_epoch_f - fa;
            if (std::isfinite(prev_epoch_f) && std::abs(decrease) < cfg.tolerance) {
                converged = true;
                break;
            }
            prev_epoch_f = fa;
            avg.setZero();
            in_epoch = 0;
            next_restart *= 2;
        }
    }
    if (in_epoch > 0) {
        const double fa = objective(avg);
        if (fa < best_f) {
            best_f = fa;
            best = avg;
        }
    }
    FitResult res;
    res.estimator = "rkhs_penalized";
    res.theta = best;
    res.h_hat = phi * best;
    const Eigen::VectorXd r = mz - m.pxz.transpose() * res.h_hat;
    const double q = std::sqrt(std::max(0.0, r.dot(kz * r)));
    res.g_inner = q > 0.0 ? Eigen::VectorXd(kz * r / q) : Eigen::VectorXd::Zero(r.size());
    res.objective = rkhs_objective(m, kz, res.h_hat);
    res.diagnostics.iterations = std::min(t, cfg.budget);
    res.diagnostics.final_step = step;
    res.diagnostics.converged = converged;
    res.diagnostics.certificate = std::isfinite(decrease) ? std::abs(decrease) : 0.0;
    res.hyperparameters = {{"budget", cfg.budget}, {"tolerance", cfg.tolerance}, {"step", cfg.step}};
    return res;
}

inline FitResult fit_rkhs_penalized(const Dataset& ds, const LinearFamily& family, const RKHSBall& ball,
                                    const WeightedSpace& z_space, const SubgradientConfig& cfg = {})
{
    const auto m = Moments::from_dataset(ds, family.dim(), z_space.size());
    return fit_rkhs_penalized(m, family, support_gram(ball, z_space), cfg);
}

// ---- JSON ----------------------------------------------------------------------------

inline nlohmann::json to_json_doc(const Metrics& m)
{
    return {{"l2_error", m.l2_error}, {"projected_rmse", m.projected_rmse}, {"projected_mse", m.projected_mse}};
}

inline nlohmann::json to_json_doc(const FitResult& r)
{
    nlohmann::json j;
    j["estimator"] = r.estimator;
    j["hyperparameters"] = r.hyperparameters;
    j["h_hat"] = detail::to_std(r.h_hat);
    j["g_inner"] = detail::to_std(r.g_inner);
    j["objective"] = r.objective;
    if (r.h_index) {
        j["h_index"] = *r.h_index;
    }
    if (r.g_index) {
        j["g_index"] = *r.g_index;
    }
    if (r.theta.size() > 0) {
        j["theta"] = detail::to_std(r.theta);
    }
    nlohmann::json d{{"iterations", r.diagnostics.iterations},
                     {"final_step", r.diagnostics.final_step},
                     {"enumeration", r.diagnostics.enumeration},
                     {"converged", r.diagnostics.converged},
                     {"certificate", r.diagnostics.certificate}};
    if (r.diagnostics.stage_one_g) {
        d["stage_one_g"] = *r.diagnostics.stage_one_g;
    }
    if (r.estimator == "both_worlds") {
        d["mu"] = r.diagnostics.mu;
        d["minimax_value"] = r.diagnostics.minimax_value;
        d["confidence_set_size"] = r.diagnostics.confidence_set.size();
    }
    j["diagnostics"] = d;
    return j;
}

} // namespace npiv
