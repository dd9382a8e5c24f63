#pragma once

#include <initializer_list>

#include "npiv/npivop.hpp"
#include "npiv/rng.hpp"

namespace fixtures {

inline npiv::SpaceFun vec(std::initializer_list<double> v)
{
    npiv::SpaceFun f(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) f(i++) = x;
    return f;
}

inline Eigen::MatrixXd table(Eigen::Index rows, Eigen::Index cols, std::initializer_list<double> v)
{
    Eigen::MatrixXd m(rows, cols);
    Eigen::Index i = 0;
    for (double x : v) {
        m(i / cols, i % cols) = x;
        ++i;
    }
    return m;
}

// joint indexed [x][z]
inline npiv::JointDesign w1() { return npiv::JointDesign::from_table(table(2, 2, {0.4, 0.1, 0.1, 0.4})); }

inline npiv::JointDesign w2()
{
    return npiv::JointDesign::from_table(table(3, 2, {0.2, 0.1, 0.1, 0.2, 0.2, 0.2}));
}

inline npiv::JointDesign random_design(npiv::Rng& rng, Eigen::Index dx, Eigen::Index dz)
{
    Eigen::MatrixXd p(dx, dz);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform(0.05, 1.0);
    p /= p.sum();
    // the marginals are recomputed, so restore an exact unit total first
    p(0, 0) += 1.0 - p.sum();
    return npiv::JointDesign::from_table(p);
}

inline npiv::SpaceFun random_fun(npiv::Rng& rng, Eigen::Index d)
{
    npiv::SpaceFun f(d);
    for (Eigen::Index i = 0; i < d; ++i) f(i) = rng.normal();
    return f;
}

} // namespace fixtures
