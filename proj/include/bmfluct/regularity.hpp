#pragma once

#include <set>

#include "bmfluct/moments.hpp"

namespace bmfluct {

struct RegularityConstants {
    double c1 = 0.0;
    double c2 = 0.0;
    std::vector<double> grid;
};

inline std::vector<double> regularity_grid() {
    std::set<double> g;
    for (int e = 8; e >= 0; --e) g.insert(std::ldexp(1.0, -e));
    for (int j = 1; j <= 20; ++j) g.insert(0.05 * j);
    return {g.begin(), g.end()};
}

/// Small-time constants: sup t^{-1/k} |psi_t f - f| and
/// sup t^{-2} |E[(X_t[f] - psi_t f)^{2k}]| over a grid in (0, 1].
/// The central moment needs order 2k <= 4, so only k = 2 is supported.
inline RegularityConstants small_time_regularity(const BranchingModel& model, const Functional& f, int k) {
    if (k < 2 || k % 2 != 0) throw DomainError("small_time_regularity: k must be an even integer >= 2");
    if (2 * k > kMaxMomentOrder) throw DomainError("small_time_regularity: unsupported order 2k=" + std::to_string(2 * k));
    RegularityConstants out;
    out.grid = regularity_grid();
    const RMat a = mean_generator(model);
    if (f.values.cwiseAbs().maxCoeff() == 0.0) return out;
    QuadratureConfig quad;
    quad.rel_tol = 1e-12;
    quad.refinement = 8;
    for (double t : out.grid) {
        const CVec mu = semigroup_apply(a, t, f).values;
        out.c1 = std::max(out.c1, std::pow(t, -1.0 / k) * (mu - f.values).cwiseAbs().maxCoeff());
        const auto m2 = joint_moment(model, {f, f}, t, quad);
        const auto m3 = joint_moment(model, {f, f, f}, t, quad);
        const auto m4 = joint_moment(model, {f, f, f, f}, t, quad);
        for (std::size_t x = 0; x < model.dim(); ++x) {
            const cplx u = mu(static_cast<Eigen::Index>(x));
            const cplx c4 = m4[x].value - 4.0 * u * m3[x].value + 6.0 * u * u * m2[x].value - 3.0 * u * u * u * u;
            out.c2 = std::max(out.c2, std::abs(c4) / (t * t));
        }
    }
    return out;
}

}  // namespace bmfluct
