#pragma once

#include <string>

#include "bmfluct/spectral.hpp"

// Reference models used throughout the tests and the CLI examples.
namespace bmfluct::canonical {

namespace detail {

inline BranchingModel make(std::size_t d, RMat q, RVec gamma, std::vector<std::vector<OffspringOutcome>> offspring) {
    BranchingModel m;
    m.types = TypeSpace::numbered(d);
    m.motion.q = std::move(q);
    m.gamma = std::move(gamma);
    m.offspring.per_type = std::move(offspring);
    return m;
}

inline RMat zeros(Eigen::Index d) { return RMat::Zero(d, d); }

}  // namespace detail

/// Yule: binary splitting at rate one.
inline BranchingModel yule() {
    return detail::make(1, detail::zeros(1), RVec::Ones(1), {{{1.0, {2}}}});
}

/// Symmetric two-type model in the small regime, A = [[1,1],[1,1]].
inline BranchingModel model_s() {
    return detail::make(2, detail::zeros(2), RVec::Ones(2), {{{1.0, {2, 1}}}, {{1.0, {1, 2}}}});
}

/// A = [[3,0],[1,2]]: both eigenvalues in the large regime.
inline BranchingModel model_l() {
    return detail::make(2, detail::zeros(2), RVec::Ones(2),
                        {{{0.5, {3, 0}}, {0.5, {5, 0}}}, {{1.0, {1, 3}}}});
}

/// A = [[2,0],[1,1]]: critical second eigenvalue.
inline BranchingModel model_c() {
    return detail::make(2, detail::zeros(2), RVec::Ones(2), {{{1.0, {3, 0}}}, {{1.0, {1, 2}}}});
}

/// A = [[2,1],[0,1]]: critical second eigenvalue with a nonvanishing kernel.
inline BranchingModel model_ct() {
    return detail::make(2, detail::zeros(2), RVec::Ones(2), {{{1.0, {3, 1}}}, {{1.0, {0, 2}}}});
}

/// A = [[1,1],[0,1]]: a single Jordan block.
inline BranchingModel model_j() {
    return detail::make(2, detail::zeros(2), RVec::Ones(2), {{{1.0, {2, 1}}}, {{1.0, {0, 2}}}});
}

inline EigenStructure model_j_declared() {
    EigenStructure es;
    es.lambda = {1.0};
    CVec e1(2), e2(2);
    e1 << 1.0, 0.0;
    e2 << 0.0, 1.0;
    es.chains = {{{e1}, {e2}}};
    es.duals = {{{e1}, {e2}}};
    es.links[{0, 1, 0}] = 0;
    return es;
}

/// Two types with motion, deaths and non-local offspring.
inline BranchingModel model_m() {
    RMat q(2, 2);
    q << -1.0, 1.0, 2.0, -2.0;
    RVec g(2);
    g << 1.5, 1.0;
    return detail::make(2, q, g,
                        {{{0.2, {0, 0}}, {0.5, {1, 1}}, {0.3, {3, 0}}},
                         {{0.1, {0, 0}}, {0.4, {0, 2}}, {0.5, {2, 1}}}});
}

/// Three types cycling 1 -> 2 -> 3 -> 1 with binary splitting: complex
/// sub-leading eigenvalues -1/2 +- i sqrt(3)/2.
inline BranchingModel model_r() {
    RMat q(3, 3);
    q << -1.0, 1.0, 0.0, 0.0, -1.0, 1.0, 1.0, 0.0, -1.0;
    return detail::make(3, q, RVec::Ones(3), {{{1.0, {2, 0, 0}}}, {{1.0, {0, 2, 0}}}, {{1.0, {0, 0, 2}}}});
}

inline EigenStructure eigen_for(const std::string& name) {
    if (name == "J") return build_eigenstructure(model_j(), model_j_declared());
    if (name == "Y") return build_eigenstructure(yule());
    if (name == "S") return build_eigenstructure(model_s());
    if (name == "L") return build_eigenstructure(model_l());
    if (name == "C") return build_eigenstructure(model_c());
    if (name == "CT") return build_eigenstructure(model_ct());
    if (name == "M") return build_eigenstructure(model_m());
    if (name == "R") return build_eigenstructure(model_r());
    throw InputError("model", "unknown canonical model " + name);
}

inline BranchingModel by_name(const std::string& name) {
    if (name == "Y") return yule();
    if (name == "S") return model_s();
    if (name == "L") return model_l();
    if (name == "C") return model_c();
    if (name == "CT") return model_ct();
    if (name == "J") return model_j();
    if (name == "M") return model_m();
    if (name == "R") return model_r();
    throw InputError("model", "unknown canonical model " + name);
}

}  // namespace bmfluct::canonical
