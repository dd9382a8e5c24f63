#pragma once

// The conditional expectation operator T: L2(X) -> L2(Z), its adjoint, a
// weighted SVD, and the ground-truth objects derived from them: the
// least-norm solution h0, the minimal-norm multiplier gbar0 and
// source-condition diagnostics.

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "npiv/error.hpp"
#include "npiv/probspace.hpp"

namespace npiv {

inline constexpr double kJointMassTol = 1e-12;
inline constexpr double kMarginalTol = 1e-10;
inline constexpr double kRankRelCutoff = 1e-10;
inline constexpr double kRangeRelTol = 1e-8;

/// Finite joint distribution of (X, Z). joint(x, z) = P(X = x, Z = z).
class JointDesign {
public:
    JointDesign() = default;

    JointDesign(WeightedSpace x_space, WeightedSpace z_space, Eigen::MatrixXd joint)
        : x_(std::move(x_space)), z_(std::move(z_space)), joint_(std::move(joint))
    {
        validate();
    }

    /// Builds the marginal spaces from the table itself.
    static JointDesign from_table(const Eigen::MatrixXd& joint,
                                  std::vector<std::string> x_labels = {},
                                  std::vector<std::string> z_labels = {},
                                  std::optional<std::vector<double>> x_coords = std::nullopt,
                                  std::optional<std::vector<double>> z_coords = std::nullopt)
    {
        if (joint.size() == 0) {
            throw InvalidArgument("JointDesign: empty joint table");
        }
        if ((joint.array() < 0.0).any()) {
            throw InvalidArgument("JointDesign: negative joint probability");
        }
        const double total = joint.sum();
        if (std::abs(total - 1.0) > kJointMassTol) {
            throw InvalidArgument("JointDesign: joint table does not sum to one");
        }
        // Renormalize marginals so WeightedSpace sees an exact unit sum.
        Eigen::VectorXd wx = joint.rowwise().sum() / total;
        Eigen::VectorXd wz = joint.colwise().sum().transpose() / total;
        auto fill = [](std::vector<std::string>& labels, Eigen::Index n) {
            if (labels.empty()) {
                for (Eigen::Index i = 0; i < n; ++i) {
                    labels.push_back(std::to_string(i));
                }
            }
        };
        fill(x_labels, joint.rows());
        fill(z_labels, joint.cols());
        return JointDesign(WeightedSpace(std::move(x_labels), wx, std::move(x_coords)),
                           WeightedSpace(std::move(z_labels), wz, std::move(z_coords)), joint);
    }

    const WeightedSpace& x_space() const { return x_; }
    const WeightedSpace& z_space() const { return z_; }
    const Eigen::MatrixXd& joint() const { return joint_; }
    Eigen::Index x_size() const { return joint_.rows(); }
    Eigen::Index z_size() const { return joint_.cols(); }

    bool operator==(const JointDesign& o) const
    {
        return x_ == o.x_ && z_ == o.z_ && joint_ == o.joint_;
    }

private:
    void validate() const
    {
        detail::require_same_size(joint_.rows(), x_.size(), "JointDesign rows");
        detail::require_same_size(joint_.cols(), z_.size(), "JointDesign cols");
        for (Eigen::Index x = 0; x < joint_.rows(); ++x) {
            for (Eigen::Index z = 0; z < joint_.cols(); ++z) {
                if (!(joint_(x, z) >= 0.0)) {
                    throw InvalidArgument("JointDesign: negative probability at cell (" +
                                          x_.labels()[static_cast<std::size_t>(x)] + ", " +
                                          z_.labels()[static_cast<std::size_t>(z)] + ")");
                }
            }
        }
        if (std::abs(joint_.sum() - 1.0) > kJointMassTol) {
            throw InvalidArgument("JointDesign: joint table does not sum to one");
        }
        if ((joint_.rowwise().sum() - x_.weights()).cwiseAbs().maxCoeff() > kMarginalTol) {
            throw InvalidArgument("JointDesign: row sums do not match the X marginal");
        }
        if ((joint_.colwise().sum().transpose() - z_.weights()).cwiseAbs().maxCoeff() >
            kMarginalTol) {
            throw InvalidArgument("JointDesign: column sums do not match the Z marginal");
        }
    }

    WeightedSpace x_;
    WeightedSpace z_;
    Eigen::MatrixXd joint_;
};

/// T h = E[h(X) | Z] and T* g = E[g(Z) | X] on a finite design.
class CondExpOp {
public:
    CondExpOp() = default;

    explicit CondExpOp(JointDesign design) : design_(std::move(design))
    {
        const auto& p = design_.joint();
        t_ = (p * design_.z_space().weights().cwiseInverse().asDiagonal()).transpose();
        tstar_ = design_.x_space().weights().cwiseInverse().asDiagonal() * p;
    }

    const JointDesign& design() const { return design_; }
    const WeightedSpace& x_space() const { return design_.x_space(); }
    const WeightedSpace& z_space() const { return design_.z_space(); }

    /// t_table()(z, x) = P(X = x | Z = z)
    const Eigen::MatrixXd& t_table() const { return t_; }
    /// tstar_table()(x, z) = P(Z = z | X = x)
    const Eigen::MatrixXd& tstar_table() const { return tstar_; }

    SpaceFun apply(const SpaceFun& h) const
    {
        detail::require_same_size(h.size(), t_.cols(), "CondExpOp::apply");
        return t_ * h;
    }

    SpaceFun apply_adjoint(const SpaceFun& g) const
    {
        detail::require_same_size(g.size(), tstar_.cols(), "CondExpOp::apply_adjoint");
        return tstar_ * g;
    }

private:
    JointDesign design_;
    Eigen::MatrixXd t_;
    Eigen::MatrixXd tstar_;
};

inline CondExpOp build_operator(const JointDesign& design) { return CondExpOp(design); }

/// Singular system of T in the weighted geometry.
///
/// values has min(|Z|, |X|) entries in decreasing order. Columns of left
/// (|Z| x |Z|) and right (|X| x |X|) are complete orthonormal systems of
/// L2(Z) and L2(X); columns past `rank` span null(T*) and null(T).
struct OperatorSVD {
    Eigen::VectorXd values;
    Eigen::MatrixXd left;
    Eigen::MatrixXd right;
    Eigen::Index rank = 0;

    SpaceFun u(Eigen::Index i) const { return left.col(i); }
    SpaceFun v(Eigen::Index i) const { return right.col(i); }

    std::vector<SpaceFun> null_basis_x() const
    {
        std::vector<SpaceFun> out;
        for (Eigen::Index i = rank; i < right.cols(); ++i) {
            out.push_back(right.col(i));
        }
        return out;
    }

    std::vector<SpaceFun> null_basis_z() const
    {
        std::vector<SpaceFun> out;
        for (Eigen::Index i = rank; i < left.cols(); ++i) {
            out.push_back(left.col(i));
        }
        return out;
    }
};

namespace detail {

// Deterministic sign: the entry of largest magnitude is positive.
inline double sign_fix(const Eigen::VectorXd& v)
{
    Eigen::Index idx = 0;
    v.cwiseAbs().maxCoeff(&idx);
    return v(idx) < 0.0 ? -1.0 : 1.0;
}

} // namespace detail

/// SVD by whitening: A = Vz^{1/2} T Wx^{-1/2} is factorized with a standard SVD
/// and the singular vectors are mapped back with Vz^{-1/2}, Wx^{-1/2}.
inline OperatorSVD svd(const CondExpOp& op, double rel_cutoff = kRankRelCutoff)
{
    const Eigen::VectorXd sz = op.z_space().weights().cwiseSqrt();
    const Eigen::VectorXd sx = op.x_space().weights().cwiseSqrt();
    const Eigen::MatrixXd a = sz.asDiagonal() * op.t_table() * sx.cwiseInverse().asDiagonal();

    Eigen::JacobiSVD<Eigen::MatrixXd> dec(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    if (dec.info() != Eigen::Success) {
        throw Error("svd: factorization failed");
    }
    OperatorSVD out;
    out.values = dec.singularValues();
    out.left = sz.cwiseInverse().asDiagonal() * dec.matrixU();
    out.right = sx.cwiseInverse().asDiagonal() * dec.matrixV();

    const double top = out.values.size() > 0 ? out.values(0) : 0.0;
    out.rank = 0;
    for (Eigen::Index i = 0; i < out.values.size(); ++i) {
        if (out.values(i) > rel_cutoff * top) {
            out.rank = i + 1;
        }
    }
    // Paired columns flip together so T v_i = sigma_i u_i survives.
    const Eigen::Index paired = out.values.size();
    for (Eigen::Index i = 0; i < out.right.cols(); ++i) {
        const double s = detail::sign_fix(out.right.col(i));
        out.right.col(i) *= s;
        if (i < paired) {
            out.left.col(i) *= s;
        }
    }
    for (Eigen::Index i = paired; i < out.left.cols(); ++i) {
        out.left.col(i) *= detail::sign_fix(out.left.col(i));
    }
    return out;
}

/// Minimizer of ||h|| subject to T h = r0 (weighted pseudoinverse).
inline SpaceFun least_norm_solution(const CondExpOp& op, const OperatorSVD& dec,
                                    const SpaceFun& r0)
{
    const auto& zs = op.z_space();
    detail::require_same_size(r0.size(), zs.size(), "least_norm_solution(r0)");
    SpaceFun h = SpaceFun::Zero(op.x_space().size());
    SpaceFun fitted = SpaceFun::Zero(zs.size());
    for (Eigen::Index i = 0; i < dec.rank; ++i) {
        const double c = inner_product(zs, r0, dec.left.col(i));
        fitted += c * dec.left.col(i);
        h += (c / dec.values(i)) * dec.right.col(i);
    }
    const double scale = norm(zs, r0);
    if (norm(zs, r0 - fitted) > kRangeRelTol * std::max(scale, 1e-300) && scale > 0.0) {
        throw NoSolutionError("least_norm_solution: response is not in the range of T");
    }
    return h;
}

inline SpaceFun least_norm_solution(const CondExpOp& op, const SpaceFun& r0)
{
    return least_norm_solution(op, svd(op), r0);
}

/// Minimal-norm solution of T T* g = r0.
inline SpaceFun lagrange_multiplier(const CondExpOp& op, const OperatorSVD& dec,
                                    const SpaceFun& r0)
{
    const auto& zs = op.z_space();
    detail::require_same_size(r0.size(), zs.size(), "lagrange_multiplier(r0)");
    SpaceFun g = SpaceFun::Zero(zs.size());
    for (Eigen::Index i = 0; i < dec.rank; ++i) {
        const double c = inner_product(zs, r0, dec.left.col(i));
        g += (c / (dec.values(i) * dec.values(i))) * dec.left.col(i);
    }
    const double scale = norm(zs, r0);
    const SpaceFun resid = op.apply(op.apply_adjoint(g)) - r0;
    if (scale > 0.0 && norm(zs, resid) > kRangeRelTol * scale) {
        throw SourceConditionError("lagrange_multiplier: source condition violated numerically");
    }
    return g;
}

inline SpaceFun lagrange_multiplier(const CondExpOp& op, const SpaceFun& r0)
{
    return lagrange_multiplier(op, svd(op), r0);
}

struct SourceDiagnostics {
    /// gamma_i = <r0, u_i>, one per column of the left system.
    Eigen::VectorXd gamma;
    /// sum of gamma_i^2 / sigma_i^4 over sigma_i above the cutoff
    double source_sum = 0.0;
    /// indices with gamma_i != 0 but sigma_i at or below the cutoff
    std::vector<Eigen::Index> failures;

    bool holds() const { return failures.empty(); }
};

inline SourceDiagnostics source_diagnostics(const OperatorSVD& dec, const WeightedSpace& z_space,
                                            const SpaceFun& r0,
                                            double rel_cutoff = kRankRelCutoff)
{
    detail::require_same_size(r0.size(), z_space.size(), "source_diagnostics(r0)");
    SourceDiagnostics out;
    out.gamma.resize(dec.left.cols());
    const double top = dec.values.size() > 0 ? dec.values(0) : 0.0;
    const double gamma_tol = 1e-10 * std::max(norm(z_space, r0), 1e-300);
    for (Eigen::Index i = 0; i < dec.left.cols(); ++i) {
        const double g = inner_product(z_space, r0, dec.left.col(i));
        out.gamma(i) = g;
        const double s = i < dec.values.size() ? dec.values(i) : 0.0;
        if (s > rel_cutoff * top) {
            out.source_sum += g * g / (s * s * s * s);
        } else if (std::abs(g) > gamma_tol) {
            out.failures.push_back(i);
        }
    }
    return out;
}

/// Least-norm solution, its response and multiplier, bundled.
struct ScenarioTruth {
    SpaceFun h0;
    SpaceFun r0;
    SpaceFun gbar0;
    Eigen::Index nullspace_dim = 0;
    double source_norm = 0.0;
};

inline ScenarioTruth compute_truth(const CondExpOp& op, const OperatorSVD& dec, const SpaceFun& r0)
{
    ScenarioTruth t;
    t.r0 = r0;
    t.h0 = least_norm_solution(op, dec, r0);
    t.gbar0 = lagrange_multiplier(op, dec, r0);
    t.nullspace_dim = op.x_space().size() - dec.rank;
    t.source_norm = norm(op.z_space(), t.gbar0);
    return t;
}

/// sup over the family of E[(h - h_ref)^2] / E[(T(h - h_ref))^2].
///
/// Members equal to h_ref are skipped; a family with no other member gives 0.
/// Returns +infinity when some difference lies in null(T).
inline double illposedness_measure(const CondExpOp& op, const std::vector<SpaceFun>& family,
                                   const SpaceFun& h_ref)
{
    if (family.empty()) {
        throw InvalidArgument("illposedness_measure: empty family");
    }
    double best = 0.0;
    for (const auto& h : family) {
        const SpaceFun d = h - h_ref;
        const double num = inner_product(op.x_space(), d, d);
        if (num <= 1e-24 * std::max(1.0, inner_product(op.x_space(), h_ref, h_ref))) {
            continue;
        }
        const SpaceFun td = op.apply(d);
        const double den = inner_product(op.z_space(), td, td);
        if (den <= 1e-20 * num) {
            return std::numeric_limits<double>::infinity();
        }
        best = std::max(best, num / den);
    }
    return best;
}

// ---- JSON -------------------------------------------------------------------

inline nlohmann::json to_json_doc(const JointDesign& d, const nlohmann::json& metadata = {})
{
    nlohmann::json j;
    j["x_labels"] = d.x_space().labels();
    j["z_labels"] = d.z_space().labels();
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(d.joint().size()));
    for (Eigen::Index x = 0; x < d.x_size(); ++x) {
        for (Eigen::Index z = 0; z < d.z_size(); ++z) {
            flat.push_back(d.joint()(x, z));
        }
    }
    j["joint"] = flat;
    if (d.x_space().coordinates()) {
        j["x_coords"] = *d.x_space().coordinates();
    }
    if (d.z_space().coordinates()) {
        j["z_coords"] = *d.z_space().coordinates();
    }
    if (!metadata.is_null()) {
        j["metadata"] = metadata;
    }
    return j;
}

/// Parses and re-validates a design document.
inline JointDesign joint_design_from_json(const nlohmann::json& j)
{
    try {
        auto xl = j.at("x_labels").get<std::vector<std::string>>();
        auto zl = j.at("z_labels").get<std::vector<std::string>>();
        auto flat = j.at("joint").get<std::vector<double>>();
        if (flat.size() != xl.size() * zl.size()) {
            throw ConfigError("joint design: joint table has " + std::to_string(flat.size()) +
                              " entries, expected " + std::to_string(xl.size() * zl.size()));
        }
        Eigen::MatrixXd p(static_cast<Eigen::Index>(xl.size()), static_cast<Eigen::Index>(zl.size()));
        for (Eigen::Index x = 0; x < p.rows(); ++x) {
            for (Eigen::Index z = 0; z < p.cols(); ++z) {
                p(x, z) = flat[static_cast<std::size_t>(x * p.cols() + z)];
            }
        }
        std::optional<std::vector<double>> xc;
        std::optional<std::vector<double>> zc;
        if (j.contains("x_coords")) {
            xc = j.at("x_coords").get<std::vector<double>>();
        }
        if (j.contains("z_coords")) {
            zc = j.at("z_coords").get<std::vector<double>>();
        }
        return JointDesign::from_table(p, std::move(xl), std::move(zl), std::move(xc), std::move(zc));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("joint design: ") + e.what());
    }
}

} // namespace npiv
