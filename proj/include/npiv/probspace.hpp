#pragma once

// Finite weighted probability spaces and their L2 geometry.

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "npiv/error.hpp"

namespace npiv {

/// A real function on the support of a WeightedSpace, one value per point.
using SpaceFun = Eigen::VectorXd;

inline constexpr double kMinWeight = 1e-12;
inline constexpr double kWeightSumTol = 1e-12;
inline constexpr double kPinvRelCutoff = 1e-10;

/// Finite support with strictly positive probability weights.
class WeightedSpace {
public:
    WeightedSpace() = default;

    WeightedSpace(std::vector<std::string> labels, Eigen::VectorXd weights,
                  std::optional<std::vector<double>> coordinates = std::nullopt)
        : labels_(std::move(labels)), weights_(std::move(weights)), coords_(std::move(coordinates))
    {
        validate();
    }

    /// Labels "0", "1", ... for the given weights.
    static WeightedSpace indexed(const Eigen::VectorXd& weights)
    {
        std::vector<std::string> labels;
        labels.reserve(static_cast<std::size_t>(weights.size()));
        for (Eigen::Index i = 0; i < weights.size(); ++i) {
            labels.push_back(std::to_string(i));
        }
        return WeightedSpace(std::move(labels), weights);
    }

    static WeightedSpace uniform(Eigen::Index size)
    {
        return indexed(Eigen::VectorXd::Constant(size, 1.0 / static_cast<double>(size)));
    }

    Eigen::Index size() const { return weights_.size(); }
    const Eigen::VectorXd& weights() const { return weights_; }
    double weight(Eigen::Index i) const { return weights_(i); }
    const std::vector<std::string>& labels() const { return labels_; }
    const std::optional<std::vector<double>>& coordinates() const { return coords_; }

    /// Real embedding of point i: its coordinate if supplied, else its index.
    double coordinate(Eigen::Index i) const
    {
        return coords_ ? (*coords_)[static_cast<std::size_t>(i)] : static_cast<double>(i);
    }

    bool operator==(const WeightedSpace&) const = default;

private:
    void validate() const
    {
        if (weights_.size() == 0) {
            throw InvalidArgument("WeightedSpace: empty support");
        }
        detail::require_same_size(static_cast<long>(labels_.size()), weights_.size(),
                                  "WeightedSpace labels");
        if (coords_) {
            detail::require_same_size(static_cast<long>(coords_->size()), weights_.size(),
                                      "WeightedSpace coordinates");
        }
        for (Eigen::Index i = 0; i < weights_.size(); ++i) {
            if (!(weights_(i) >= kMinWeight)) {
                throw InvalidArgument("WeightedSpace: weight of point '" +
                                      labels_[static_cast<std::size_t>(i)] + "' is below 1e-12");
            }
        }
        if (std::abs(weights_.sum() - 1.0) > kWeightSumTol) {
            throw InvalidArgument("WeightedSpace: weights do not sum to one");
        }
        std::set<std::string> seen(labels_.begin(), labels_.end());
        if (seen.size() != labels_.size()) {
            throw InvalidArgument("WeightedSpace: duplicate support labels");
        }
    }

    std::vector<std::string> labels_;
    Eigen::VectorXd weights_;
    std::optional<std::vector<double>> coords_;
};

inline double inner_product(const WeightedSpace& space, const SpaceFun& f, const SpaceFun& g)
{
    detail::require_same_size(f.size(), space.size(), "inner_product(f)");
    detail::require_same_size(g.size(), space.size(), "inner_product(g)");
    return (space.weights().array() * f.array() * g.array()).sum();
}

inline double norm(const WeightedSpace& space, const SpaceFun& f)
{
    return std::sqrt(std::max(0.0, inner_product(space, f, f)));
}

/// max_i |f_i|
inline double sup_norm(const SpaceFun& f)
{
    return f.size() == 0 ? 0.0 : f.cwiseAbs().maxCoeff();
}

/// Moore-Penrose solve of a symmetric PSD system with a relative singular-value cutoff.
inline Eigen::VectorXd pinv_solve_psd(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                      double rel_cutoff = kPinvRelCutoff)
{
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
    if (eig.info() != Eigen::Success) {
        throw Error("pinv_solve_psd: eigen-decomposition failed");
    }
    const Eigen::VectorXd& lam = eig.eigenvalues();
    const double top = lam.cwiseAbs().maxCoeff();
    Eigen::VectorXd coef = eig.eigenvectors().transpose() * b;
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        coef(i) = (top > 0.0 && lam(i) > rel_cutoff * top) ? coef(i) / lam(i) : 0.0;
    }
    return eig.eigenvectors() * coef;
}

/// Weighted-L2 projection of f onto span(basis). The basis need not be orthonormal
/// or even linearly independent.
inline SpaceFun orthogonal_projection(const WeightedSpace& space, const SpaceFun& f,
                                      const std::vector<SpaceFun>& basis)
{
    detail::require_same_size(f.size(), space.size(), "orthogonal_projection(f)");
    if (basis.empty()) {
        return SpaceFun::Zero(space.size());
    }
    const auto k = static_cast<Eigen::Index>(basis.size());
    Eigen::MatrixXd b(space.size(), k);
    for (Eigen::Index j = 0; j < k; ++j) {
        detail::require_same_size(basis[static_cast<std::size_t>(j)].size(), space.size(),
                                  "orthogonal_projection(basis)");
        b.col(j) = basis[static_cast<std::size_t>(j)];
    }
    const Eigen::MatrixXd wb = space.weights().asDiagonal() * b;
    const Eigen::MatrixXd gram = b.transpose() * wb;
    const Eigen::VectorXd rhs = wb.transpose() * f;
    return b * pinv_solve_psd(gram, rhs);
}

/// Gram-Schmidt in the weighted inner product; drops near-dependent vectors.
inline std::vector<SpaceFun> weighted_gram_schmidt(const WeightedSpace& space,
                                                   const std::vector<SpaceFun>& vectors,
                                                   double drop_tol = 1e-10)
{
    std::vector<SpaceFun> out;
    for (const auto& v : vectors) {
        SpaceFun r = v;
        // two passes for numerical orthogonality
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& q : out) {
                r -= inner_product(space, r, q) * q;
            }
        }
        const double nr = norm(space, r);
        if (nr > drop_tol * std::max(1.0, norm(space, v))) {
            out.push_back(r / nr);
        }
    }
    return out;
}

} // namespace npiv
