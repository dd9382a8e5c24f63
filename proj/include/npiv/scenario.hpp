#pragma once

// Sampleable NPIV problems with a prescribed singular spectrum and known truth.

#include <algorithm>
#include <cmath>
#include <functional>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "npiv/error.hpp"
#include "npiv/npivop.hpp"
#include "npiv/probspace.hpp"
#include "npiv/rng.hpp"

namespace npiv {

/// Outcome noise, independent of (X, Z) and mean zero.
struct NoiseSpec {
    enum class Kind { none, uniform, gaussian };
    Kind kind = Kind::uniform;
    /// half-width for uniform, standard deviation for gaussian
    double scale = 0.5;

    double mean() const { return 0.0; }

    double second_moment() const
    {
        switch (kind) {
        case Kind::none: return 0.0;
        case Kind::uniform: return scale * scale / 3.0;
        case Kind::gaussian: return scale * scale;
        }
        return 0.0;
    }

    /// Almost-sure bound on |noise|; infinite for gaussian.
    double bound() const
    {
        switch (kind) {
        case Kind::none: return 0.0;
        case Kind::uniform: return scale;
        case Kind::gaussian: return std::numeric_limits<double>::infinity();
        }
        return 0.0;
    }

    double draw(Rng& rng) const
    {
        switch (kind) {
        case Kind::none: return 0.0;
        case Kind::uniform: return rng.uniform(-scale, scale);
        case Kind::gaussian: return scale * rng.normal();
        }
        return 0.0;
    }

    bool operator==(const NoiseSpec&) const = default;
};

/// Inverse-SVD construction: joint = w_x v_z (1 + sum_i sigma_i vt_i(x) ut_i(z)).
struct SpectralSpec {
    Eigen::VectorXd x_weights;
    Eigen::VectorXd z_weights;
    /// weighted-orthonormal, each orthogonal to the constants
    std::vector<SpaceFun> x_system;
    std::vector<SpaceFun> z_system;
    std::vector<double> sigma;
    /// gbar0 = mean_component + sum_i beta_i ut_i
    std::vector<double> beta;
    double mean_component = 0.0;
    /// multiple of a unit null(T) direction added to h* (0 keeps h* = h0)
    double null_shift = 0.0;
    NoiseSpec noise;
};

/// Cosine functions on an ordered support, orthonormalized in the weighted
/// inner product against the constant. Returns `count` non-constant functions.
inline std::vector<SpaceFun> cosine_system(const WeightedSpace& space, Eigen::Index count)
{
    const Eigen::Index d = space.size();
    if (count > d - 1) {
        throw InvalidArgument("cosine_system: at most |support| - 1 non-constant functions");
    }
    std::vector<SpaceFun> raw;
    raw.push_back(SpaceFun::Ones(d));
    for (Eigen::Index j = 1; j < d; ++j) {
        SpaceFun f(d);
        for (Eigen::Index x = 0; x < d; ++x) {
            f(x) = std::cos(std::numbers::pi * static_cast<double>(j) *
                            (static_cast<double>(x) + 0.5) / static_cast<double>(d));
        }
        raw.push_back(f);
    }
    auto ortho = weighted_gram_schmidt(space, raw);
    if (static_cast<Eigen::Index>(ortho.size()) < count + 1) {
        throw InvalidArgument("cosine_system: degenerate basis");
    }
    return {ortho.begin() + 1, ortho.begin() + 1 + count};
}

/// +-1 valued Walsh functions (Sylvester order) on a uniform support whose size
/// is a power of two. Sup norm is exactly one.
inline std::vector<SpaceFun> walsh_system(Eigen::Index size, Eigen::Index count)
{
    if (size < 2 || (size & (size - 1)) != 0) {
        throw InvalidArgument("walsh_system: support size must be a power of two");
    }
    if (count > size - 1) {
        throw InvalidArgument("walsh_system: at most |support| - 1 non-constant functions");
    }
    Eigen::MatrixXd h = Eigen::MatrixXd::Ones(1, 1);
    while (h.rows() < size) {
        Eigen::MatrixXd next(2 * h.rows(), 2 * h.cols());
        next << h, h, h, -h;
        h = next;
    }
    std::vector<SpaceFun> out;
    for (Eigen::Index j = 1; j <= count; ++j) {
        out.push_back(h.col(j));
    }
    return out;
}

inline double spectral_positivity_margin(const SpectralSpec& spec)
{
    double s = 0.0;
    for (std::size_t i = 0; i < spec.sigma.size(); ++i) {
        s += spec.sigma[i] * sup_norm(spec.x_system[i]) * sup_norm(spec.z_system[i]);
    }
    return s;
}

inline void validate_spectral_spec(const SpectralSpec& spec)
{
    const auto k = spec.sigma.size();
    if (spec.x_system.size() < k || spec.z_system.size() < k) {
        throw InvalidArgument("SpectralSpec: fewer orthonormal functions than singular values");
    }
    const auto xs = WeightedSpace::indexed(spec.x_weights);
    const auto zs = WeightedSpace::indexed(spec.z_weights);
    auto check = [](const WeightedSpace& s, const std::vector<SpaceFun>& sys, std::size_t k,
                    const char* what) {
        const SpaceFun one = SpaceFun::Ones(s.size());
        for (std::size_t i = 0; i < k; ++i) {
            if (std::abs(inner_product(s, sys[i], one)) > 1e-8) {
                throw InvalidArgument(std::string("SpectralSpec: ") + what +
                                      " function is not orthogonal to constants");
            }
            for (std::size_t j = 0; j < k; ++j) {
                const double ip = inner_product(s, sys[i], sys[j]);
                if (std::abs(ip - (i == j ? 1.0 : 0.0)) > 1e-8) {
                    throw InvalidArgument(std::string("SpectralSpec: ") + what +
                                          " system is not orthonormal");
                }
            }
        }
    };
    check(xs, spec.x_system, k, "x");
    check(zs, spec.z_system, k, "z");
    for (double s : spec.sigma) {
        if (!(s > 0.0 && s < 1.0)) {
            throw InvalidArgument("SpectralSpec: singular values must lie in (0, 1)");
        }
    }
    if (spectral_positivity_margin(spec) >= 1.0) {
        throw InvalidArgument(
            "SpectralSpec: sum of sigma_i * |vt_i|_inf * |ut_i|_inf must be below one");
    }
}

/// Builds the joint table. Checks the sufficient positivity condition and
/// then every cell, naming the first offending one.
inline JointDesign build_spectral_design(const SpectralSpec& spec)
{
    const auto& wx = spec.x_weights;
    const auto& wz = spec.z_weights;
    Eigen::MatrixXd kernel = Eigen::MatrixXd::Ones(wx.size(), wz.size());
    for (std::size_t i = 0; i < spec.sigma.size(); ++i) {
        if (i >= spec.x_system.size() || i >= spec.z_system.size()) {
            throw InvalidArgument("SpectralSpec: fewer orthonormal functions than singular values");
        }
        kernel += spec.sigma[i] * spec.x_system[i] * spec.z_system[i].transpose();
    }
    for (Eigen::Index x = 0; x < kernel.rows(); ++x) {
        for (Eigen::Index z = 0; z < kernel.cols(); ++z) {
            if (kernel(x, z) <= 0.0) {
                throw InvalidArgument("build_spectral_design: joint probability not positive at cell (" +
                                      std::to_string(x) + ", " + std::to_string(z) + ")");
            }
        }
    }
    validate_spectral_spec(spec);
    const Eigen::MatrixXd joint = wx.asDiagonal() * kernel * wz.asDiagonal();
    return JointDesign(WeightedSpace::indexed(wx), WeightedSpace::indexed(wz), joint);
}

/// A design with a structural function and outcome rule Y = h*(X) + noise.
struct Scenario {
    CondExpOp op;
    OperatorSVD dec;
    ScenarioTruth truth;
    SpaceFun h_star;
    NoiseSpec noise;

    const JointDesign& design() const { return op.design(); }
    const WeightedSpace& x_space() const { return op.x_space(); }
    const WeightedSpace& z_space() const { return op.z_space(); }
};

/// r0 = T h*; the truth is always recomputed from the design.
inline Scenario attach_truth(const JointDesign& design, const SpaceFun& h_star,
                             const NoiseSpec& noise = {})
{
    Scenario s;
    s.op = build_operator(design);
    detail::require_same_size(h_star.size(), design.x_size(), "attach_truth(h_star)");
    s.dec = svd(s.op);
    s.truth = compute_truth(s.op, s.dec, s.op.apply(h_star));
    s.h_star = h_star;
    s.noise = noise;
    return s;
}

/// h* = mean + sum_i beta_i sigma_i vt_i + null_shift * (first null direction).
inline Scenario make_spectral_scenario(const SpectralSpec& spec)
{
    const JointDesign design = build_spectral_design(spec);
    if (spec.beta.size() > spec.sigma.size()) {
        throw InvalidArgument("SpectralSpec: more source coefficients than singular values");
    }
    SpaceFun h = SpaceFun::Constant(design.x_size(), spec.mean_component);
    for (std::size_t i = 0; i < spec.beta.size(); ++i) {
        h += spec.beta[i] * spec.sigma[i] * spec.x_system[i];
    }
    if (spec.null_shift != 0.0) {
        const auto op = build_operator(design);
        const auto null = svd(op).null_basis_x();
        if (null.empty()) {
            throw InvalidArgument("SpectralSpec: null_shift requested but T is injective");
        }
        h += spec.null_shift * null.front();
    }
    return attach_truth(design, h, spec.noise);
}

/// Random spectral design on dx x dz points with k prescribed singular values:
/// random weights, weighted cosine systems, sigma scaled to keep every cell positive,
/// random source coefficients, and a null(T) shift in h* whenever dx > k + 1.
inline SpectralSpec random_spectral_spec(Rng& rng, Eigen::Index dx, Eigen::Index dz, Eigen::Index k)
{
    if (k < 1 || k >= std::min(dx, dz)) {
        throw InvalidArgument("random_spectral_spec: need 1 <= k < min(dx, dz)");
    }
    auto weights = [&](Eigen::Index d) {
        Eigen::VectorXd w(d);
        for (Eigen::Index i = 0; i < d; ++i) {
            w(i) = rng.uniform(0.5, 1.5);
        }
        return Eigen::VectorXd(w / w.sum());
    };
    SpectralSpec spec;
    spec.x_weights = weights(dx);
    spec.z_weights = weights(dz);
    spec.x_system = cosine_system(WeightedSpace::indexed(spec.x_weights), k);
    spec.z_system = cosine_system(WeightedSpace::indexed(spec.z_weights), k);
    std::vector<double> s(static_cast<std::size_t>(k));
    for (auto& v : s) {
        v = rng.uniform(0.05, 1.0);
    }
    std::sort(s.begin(), s.end(), std::greater<>());
    spec.sigma = s;
    const double margin = spectral_positivity_margin(spec);
    const double target = rng.uniform(0.5, 0.9);
    for (auto& v : spec.sigma) {
        v *= std::min(1.0, target / margin);
    }
    for (Eigen::Index i = 0; i < k; ++i) {
        spec.beta.push_back(rng.uniform(-1.0, 1.0));
    }
    spec.mean_component = rng.uniform(-0.5, 0.5);
    spec.null_shift = dx > k + 1 ? rng.uniform(0.3, 1.0) * (rng.sign() > 0 ? 1.0 : -1.0) : 0.0;
    spec.noise = NoiseSpec{NoiseSpec::Kind::uniform, 0.5};
    return spec;
}

/// n i.i.d. draws of (X, Y, Z) as support indices and outcomes.
struct Dataset {
    std::vector<int> x;
    std::vector<double> y;
    std::vector<int> z;
    std::uint64_t seed = 0;

    std::size_t size() const { return y.size(); }
    bool operator==(const Dataset&) const = default;
};

inline Dataset sample(const Scenario& sc, std::size_t n, std::uint64_t seed)
{
    if (n == 0) {
        throw InvalidArgument("sample: n must be at least 1");
    }
    const auto& p = sc.design().joint();
    const Eigen::Index dz = p.cols();
    std::vector<double> cells(static_cast<std::size_t>(p.size()));
    for (Eigen::Index x = 0; x < p.rows(); ++x) {
        for (Eigen::Index z = 0; z < dz; ++z) {
            cells[static_cast<std::size_t>(x * dz + z)] = p(x, z);
        }
    }
    const DiscreteSampler pick(cells);
    Rng rng(seed);
    Dataset ds;
    ds.seed = seed;
    ds.x.resize(n);
    ds.y.resize(n);
    ds.z.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<Eigen::Index>(pick(rng));
        ds.x[i] = static_cast<int>(c / dz);
        ds.z[i] = static_cast<int>(c % dz);
        ds.y[i] = sc.h_star(ds.x[i]) + sc.noise.draw(rng);
    }
    return ds;
}

// ---- JSON / CSV -------------------------------------------------------------

inline nlohmann::json to_json_doc(const NoiseSpec& n)
{
    const char* kind = n.kind == NoiseSpec::Kind::none      ? "none"
                       : n.kind == NoiseSpec::Kind::uniform ? "uniform"
                                                            : "gaussian";
    return {{"kind", kind}, {"scale", n.scale}};
}

inline NoiseSpec noise_from_json(const nlohmann::json& j)
{
    NoiseSpec n;
    const auto kind = j.value("kind", std::string("uniform"));
    if (kind == "none") {
        n.kind = NoiseSpec::Kind::none;
    } else if (kind == "uniform") {
        n.kind = NoiseSpec::Kind::uniform;
    } else if (kind == "gaussian") {
        n.kind = NoiseSpec::Kind::gaussian;
    } else {
        throw ConfigError("noise: unknown kind '" + kind + "'");
    }
    n.scale = j.value("scale", 0.5);
    if (n.scale < 0.0) {
        throw ConfigError("noise: negative scale");
    }
    return n;
}

namespace detail {

inline std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline Eigen::VectorXd to_eigen(const std::vector<double>& v)
{
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Eigen::VectorXd weights_from_json(const nlohmann::json& j, const char* key, const char* size_key)
{
    if (j.contains(key)) {
        return to_eigen(j.at(key).get<std::vector<double>>());
    }
    const auto d = j.at(size_key).get<Eigen::Index>();
    return Eigen::VectorXd::Constant(d, 1.0 / static_cast<double>(d));
}

} // namespace detail

/// Scenario document. Two kinds:
///   {"kind": "spectral", "x_size"|"x_weights", "z_size"|"z_weights", "basis": "cosine"|"walsh",
///    "sigma": [...], "beta": [...], "mean": c, "null_shift": s, "noise": {...}}
///   {"kind": "joint", "design": {...}, "h_star": [...], "noise": {...}}
inline Scenario scenario_from_json(const nlohmann::json& j)
{
    try {
        const auto kind = j.value("kind", std::string("spectral"));
        const NoiseSpec noise = j.contains("noise") ? noise_from_json(j.at("noise")) : NoiseSpec{};
        if (kind == "joint") {
            const auto design = joint_design_from_json(j.at("design"));
            const auto h = detail::to_eigen(j.at("h_star").get<std::vector<double>>());
            return attach_truth(design, h, noise);
        }
        if (kind != "spectral") {
            throw ConfigError("scenario: unknown kind '" + kind + "'");
        }
        SpectralSpec spec;
        spec.x_weights = detail::weights_from_json(j, "x_weights", "x_size");
        spec.z_weights = detail::weights_from_json(j, "z_weights", "z_size");
        spec.sigma = j.at("sigma").get<std::vector<double>>();
        spec.beta = j.value("beta", std::vector<double>(spec.sigma.size(), 0.0));
        spec.mean_component = j.value("mean", 0.0);
        spec.null_shift = j.value("null_shift", 0.0);
        spec.noise = noise;
        const auto k = static_cast<Eigen::Index>(spec.sigma.size());
        const auto basis = j.value("basis", std::string("cosine"));
        if (basis == "cosine") {
            spec.x_system = cosine_system(WeightedSpace::indexed(spec.x_weights), k);
            spec.z_system = cosine_system(WeightedSpace::indexed(spec.z_weights), k);
        } else if (basis == "walsh") {
            spec.x_system = walsh_system(spec.x_weights.size(), k);
            spec.z_system = walsh_system(spec.z_weights.size(), k);
        } else {
            throw ConfigError("scenario: unknown basis '" + basis + "'");
        }
        return make_spectral_scenario(spec);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scenario: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("scenario: ") + e.what());
    }
}

/// Design, structural function and derived truth in one document.
inline nlohmann::json to_json_doc(const Scenario& s)
{
    using detail::to_std;
    nlohmann::json j;
    j["kind"] = "joint";
    j["design"] = to_json_doc(s.design());
    j["h_star"] = to_std(s.h_star);
    j["noise"] = to_json_doc(s.noise);
    j["truth"] = {{"h0", to_std(s.truth.h0)},
                  {"r0", to_std(s.truth.r0)},
                  {"gbar0", to_std(s.truth.gbar0)},
                  {"nullspace_dim", s.truth.nullspace_dim},
                  {"source_norm", s.truth.source_norm},
                  {"singular_values", to_std(s.dec.values)}};
    return j;
}

inline nlohmann::json to_json_doc(const Dataset& d)
{
    return {{"seed", d.seed}, {"n", d.size()}, {"x", d.x}, {"y", d.y}, {"z", d.z}};
}

inline Dataset dataset_from_json(const nlohmann::json& j)
{
    Dataset d;
    d.seed = j.value("seed", std::uint64_t{0});
    d.x = j.at("x").get<std::vector<int>>();
    d.y = j.at("y").get<std::vector<double>>();
    d.z = j.at("z").get<std::vector<int>>();
    if (d.x.size() != d.y.size() || d.z.size() != d.y.size()) {
        throw ConfigError("dataset: column lengths differ");
    }
    return d;
}

inline void write_dataset_csv(const Dataset& d, std::ostream& os)
{
    os << "x,y,z\n";
    std::ostringstream line;
    line.precision(17);
    for (std::size_t i = 0; i < d.size(); ++i) {
        line.str("");
        line << d.x[i] << ',' << d.y[i] << ',' << d.z[i] << '\n';
        os << line.str();
    }
}

} // namespace npiv
