#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bmfluct/model.hpp"

namespace bmfluct {

inline constexpr double kBiorthTol = 1e-9;
inline constexpr double kSemigroupTol = 1e-8;
inline constexpr double kClusterGap = 1e-6;

using Chain = std::vector<std::vector<CVec>>;  // [rank j][k]

/// Tracked eigenvalues with Jordan chains, duals and the nilpotent N.
/// Indices are 0-based internally; messages print them 1-based.
struct EigenStructure {
    std::vector<cplx> lambda;
    std::vector<Chain> chains;
    std::vector<Chain> duals;
    std::map<std::array<int, 3>, int> links;  // (i, j, k), j >= 1 -> k*
    CMat nilpotent;
    bool full_spectrum = false;

    int m() const { return static_cast<int>(lambda.size()); }
    int p(int i) const { return static_cast<int>(chains[static_cast<std::size_t>(i)].size()); }
    int kcount(int i, int j) const {
        return static_cast<int>(chains[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].size());
    }
    const CVec& phi(int i, int j, int k) const {
        return chains[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
    }
    const CVec& dual_vec(int i, int j, int k) const {
        return duals[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
    }
    cplx dual(int i, int j, int k, const CVec& f) const { return dual_vec(i, j, k).transpose() * f; }
    Eigen::Index dim() const { return nilpotent.rows(); }

    /// Phi_{i,j} as a matrix acting on functionals.
    CMat projection(int i, int j) const {
        CMat out = CMat::Zero(dim(), dim());
        for (int k = 0; k < kcount(i, j); ++k) out += phi(i, j, k) * dual_vec(i, j, k).transpose();
        return out;
    }
    CMat projection(int i) const {
        CMat out = CMat::Zero(dim(), dim());
        for (int j = 0; j < p(i); ++j) out += projection(i, j);
        return out;
    }
    CMat nilpotent_power(int e) const {
        CMat out = CMat::Identity(dim(), dim());
        for (int c = 0; c < e; ++c) out = nilpotent * out;
        return out;
    }
    /// e^{s N} (finite series since N is nilpotent on tracked chains).
    CMat exp_nilpotent(double s) const { return expm(CMat(s * nilpotent)); }
};

/// Structured rejection naming the offending (i, j, k) triple (1-based).
class EigenRejection : public PreconditionError {
public:
    EigenRejection(int i, int j, int k, const std::string& what)
        : PreconditionError(format(i, j, k, what)), triple_{i + 1, j + 1, k + 1} {}

    const std::array<int, 3>& triple() const noexcept { return triple_; }

private:
    static std::string format(int i, int j, int k, const std::string& what) {
        std::ostringstream os;
        os << "eigen-structure rejected at (i,j,k)=(" << i + 1 << "," << j + 1 << "," << k + 1 << "): " << what;
        return os.str();
    }
    std::array<int, 3> triple_;
};

namespace detail {

inline double lambda_tol(cplx a) { return 1e-9 * std::max(1.0, std::abs(a)); }

inline CMat build_nilpotent(const EigenStructure& es, Eigen::Index d) {
    CMat n = CMat::Zero(d, d);
    for (int i = 0; i < es.m(); ++i)
        for (int j = 1; j < es.p(i); ++j)
            for (int k = 0; k < es.kcount(i, j); ++k) {
                auto it = es.links.find({i, j, k});
                if (it == es.links.end()) throw EigenRejection(i, j, k, "missing chain link");
                const int ks = it->second;
                if (ks < 0 || ks >= es.kcount(i, j - 1))
                    throw EigenRejection(i, j, k, "chain link target out of range");
                n += es.phi(i, j - 1, ks) * es.dual_vec(i, j, k).transpose();
            }
    return n;
}

/// Stable ordering by decreasing real part, then decreasing imaginary part.
inline std::vector<std::size_t> eigen_order(const std::vector<cplx>& lam) {
    std::vector<std::size_t> idx(lam.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double ta = lambda_tol(lam[a]);
        if (std::abs(lam[a].real() - lam[b].real()) > ta) return lam[a].real() > lam[b].real();
        if (std::abs(lam[a].imag() - lam[b].imag()) > ta) return lam[a].imag() > lam[b].imag();
        return false;
    });
    return idx;
}

inline void reorder(EigenStructure& es) {
    const auto idx = eigen_order(es.lambda);
    std::vector<std::size_t> inv(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) inv[idx[r]] = r;
    EigenStructure out;
    for (auto i : idx) {
        out.lambda.push_back(es.lambda[i]);
        out.chains.push_back(es.chains[i]);
        out.duals.push_back(es.duals[i]);
    }
    for (const auto& [key, ks] : es.links)
        out.links[{static_cast<int>(inv[static_cast<std::size_t>(key[0])]), key[1], key[2]}] = ks;
    out.full_spectrum = es.full_spectrum;
    out.nilpotent = es.nilpotent;
    es = std::move(out);
}

inline void check_shapes(const EigenStructure& es, Eigen::Index d) {
    if (es.m() == 0) throw InputError("eigen.eigenvalues", "at least one eigenvalue is required");
    if (es.chains.size() != es.lambda.size()) throw InputError("eigen.chains", "one chain per eigenvalue required");
    if (es.duals.size() != es.lambda.size()) throw InputError("eigen.duals", "one dual chain per eigenvalue required");
    for (int i = 0; i < es.m(); ++i) {
        if (es.p(i) == 0) throw InputError("eigen.chains[" + std::to_string(i) + "]", "empty chain");
        if (es.duals[static_cast<std::size_t>(i)].size() != es.chains[static_cast<std::size_t>(i)].size())
            throw InputError("eigen.duals[" + std::to_string(i) + "]", "rank count differs from chains");
        for (int j = 0; j < es.p(i); ++j) {
            if (es.kcount(i, j) == 0)
                throw InputError("eigen.chains[" + std::to_string(i) + "][" + std::to_string(j) + "]", "empty rank");
            if (es.duals[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].size() !=
                static_cast<std::size_t>(es.kcount(i, j)))
                throw InputError("eigen.duals[" + std::to_string(i) + "][" + std::to_string(j) + "]",
                                 "vector count differs from chains");
            for (int k = 0; k < es.kcount(i, j); ++k) {
                if (es.phi(i, j, k).size() != d || es.dual_vec(i, j, k).size() != d)
                    throw InputError("eigen.chains[" + std::to_string(i) + "][" + std::to_string(j) + "][" +
                                         std::to_string(k) + "]",
                                     "expected length " + std::to_string(d));
                if (!es.phi(i, j, k).allFinite() || !es.dual_vec(i, j, k).allFinite())
                    throw EigenRejection(i, j, k, "non-finite entries");
            }
        }
    }
}

struct Triple {
    int i, j, k;
};

inline std::vector<Triple> triples(const EigenStructure& es) {
    std::vector<Triple> out;
    for (int i = 0; i < es.m(); ++i)
        for (int j = 0; j < es.p(i); ++j)
            for (int k = 0; k < es.kcount(i, j); ++k) out.push_back({i, j, k});
    return out;
}

}  // namespace detail

struct SpectralDiagnostics {
    double biorthogonality = 0.0;
    double chain_links = 0.0;
    double semigroup = 0.0;
    double conjugate_closure = 0.0;
};

/// Measures every invariant of an EigenStructure against the generator `a`.
/// Throws EigenRejection on the first violated triple.
inline SpectralDiagnostics validate_eigenstructure(const EigenStructure& es, const RMat& a) {
    SpectralDiagnostics diag;
    const auto all = detail::triples(es);
    const Eigen::Index d = a.rows();

    for (const auto& u : all)
        for (const auto& v : all) {
            const cplx pr = es.dual(u.i, u.j, u.k, es.phi(v.i, v.j, v.k));
            const double target = (u.i == v.i && u.j == v.j && u.k == v.k) ? 1.0 : 0.0;
            const double r = std::abs(pr - target);
            diag.biorthogonality = std::max(diag.biorthogonality, r);
            if (r >= kBiorthTol)
                throw EigenRejection(u.i, u.j, u.k, "biorthogonality residual " + std::to_string(r) +
                                                        " against (" + std::to_string(v.i + 1) + "," +
                                                        std::to_string(v.j + 1) + "," + std::to_string(v.k + 1) + ")");
        }

    for (const auto& u : all) {
        const CVec nphi = es.nilpotent * es.phi(u.i, u.j, u.k);
        CVec target = CVec::Zero(d);
        if (u.j > 0) target = es.phi(u.i, u.j - 1, es.links.at({u.i, u.j, u.k}));
        const double scale = std::max(1.0, es.phi(u.i, u.j, u.k).cwiseAbs().maxCoeff());
        const double r = (nphi - target).cwiseAbs().maxCoeff() / scale;
        diag.chain_links = std::max(diag.chain_links, r);
        if (r >= kBiorthTol) throw EigenRejection(u.i, u.j, u.k, "chain link check failed");
    }

    {
        const double r = (es.nilpotent - es.nilpotent.conjugate()).cwiseAbs().maxCoeff();
        diag.conjugate_closure = r;
        if (r >= kBiorthTol) throw PreconditionError("eigen-structure rejected: N is not conjugate-closed");
    }
    for (int i = 0; i < es.m(); ++i) {
        const cplx target = std::conj(es.lambda[static_cast<std::size_t>(i)]);
        int partner = -1;
        for (int l = 0; l < es.m(); ++l)
            if (std::abs(es.lambda[static_cast<std::size_t>(l)] - target) <= detail::lambda_tol(target)) {
                partner = l;
                break;
            }
        if (partner < 0) throw EigenRejection(i, 0, 0, "conjugate eigenvalue is not tracked");
        const CMat pl = es.projection(partner);
        for (int j = 0; j < es.p(i); ++j)
            for (int k = 0; k < es.kcount(i, j); ++k) {
                const CVec c = es.phi(i, j, k).conjugate();
                const double r = (pl * c - c).cwiseAbs().maxCoeff() / std::max(1.0, c.cwiseAbs().maxCoeff());
                diag.conjugate_closure = std::max(diag.conjugate_closure, r);
                if (r >= kBiorthTol) throw EigenRejection(i, j, k, "conjugate chain not tracked");
            }
    }

    const CMat ac = a.cast<cplx>();
    for (double t : {0.1, 1.0, 2.0}) {
        const CMat et = expm(CMat(t * ac));
        for (const auto& u : all) {
            const cplx lam = es.lambda[static_cast<std::size_t>(u.i)];
            const CMat en = es.exp_nilpotent(t);
            const CVec& ph = es.phi(u.i, u.j, u.k);
            const CVec lhs = et * ph;
            const CVec rhs = std::exp(lam * t) * (en * ph);
            const double scale = std::exp(lam.real() * t) * std::max(1.0, ph.cwiseAbs().maxCoeff()) * (1.0 + t * u.j);
            double r = (lhs - rhs).cwiseAbs().maxCoeff() / scale;

            const CVec& du = es.dual_vec(u.i, u.j, u.k);
            const CVec dl = et.transpose() * du;
            const CVec dr = std::exp(lam * t) * (en.transpose() * du);
            const double dscale =
                std::exp(lam.real() * t) * std::max(1.0, du.cwiseAbs().maxCoeff()) * (1.0 + t * (es.p(u.i) - 1 - u.j));
            r = std::max(r, (dl - dr).cwiseAbs().maxCoeff() / dscale);
            diag.semigroup = std::max(diag.semigroup, r);
            if (r >= kSemigroupTol)
                throw EigenRejection(u.i, u.j, u.k, "semigroup identity fails at t=" + std::to_string(t));
        }
    }
    return diag;
}

namespace detail {

inline EigenStructure numeric_eigenstructure(const RMat& a) {
    const Eigen::Index d = a.rows();
    Eigen::EigenSolver<RMat> solver(a, true);
    if (solver.info() != Eigen::Success) throw NumericalError("eigen-decomposition failed");
    std::vector<cplx> lam(static_cast<std::size_t>(d));
    for (Eigen::Index c = 0; c < d; ++c) lam[static_cast<std::size_t>(c)] = solver.eigenvalues()(c);
    for (std::size_t x = 0; x < lam.size(); ++x)
        for (std::size_t y = x + 1; y < lam.size(); ++y)
            if (std::abs(lam[x] - lam[y]) <= kClusterGap)
                throw PreconditionError("Jordan structure required: eigenvalues " + std::to_string(lam[x].real()) +
                                        " and " + std::to_string(lam[y].real()) + " are not separated");

    const auto order = eigen_order(lam);
    CMat v(d, d);
    std::vector<cplx> sorted;
    for (Eigen::Index c = 0; c < d; ++c) {
        const auto src = static_cast<Eigen::Index>(order[static_cast<std::size_t>(c)]);
        sorted.push_back(lam[static_cast<std::size_t>(src)]);
        CVec col = solver.eigenvectors().col(src);
        if (sorted.back().imag() == 0.0) col = col.real().cast<cplx>();
        Eigen::Index arg = 0;
        col.cwiseAbs().maxCoeff(&arg);
        col /= col(arg);
        v.col(c) = col;
    }
    // exact conjugate pairing
    for (Eigen::Index c = 0; c < d; ++c) {
        if (sorted[static_cast<std::size_t>(c)].imag() >= 0.0) continue;
        for (Eigen::Index e = 0; e < d; ++e)
            if (sorted[static_cast<std::size_t>(e)].imag() > 0.0 &&
                std::abs(sorted[static_cast<std::size_t>(e)] - std::conj(sorted[static_cast<std::size_t>(c)])) <=
                    kClusterGap) {
                sorted[static_cast<std::size_t>(c)] = std::conj(sorted[static_cast<std::size_t>(e)]);
                v.col(c) = v.col(e).conjugate();
                break;
            }
    }
    CMat w = v.inverse();
    // leading eigenvector scaled so the dual sums to one
    const cplx s = w.row(0).sum();
    if (std::abs(s) > 1e-8 && sorted[0].imag() == 0.0) {
        v.col(0) *= s;
        w.row(0) /= s;
    }

    EigenStructure es;
    for (Eigen::Index c = 0; c < d; ++c) {
        es.lambda.push_back(sorted[static_cast<std::size_t>(c)]);
        es.chains.push_back({{v.col(c)}});
        es.duals.push_back({{w.row(c).transpose()}});
    }
    es.full_spectrum = true;
    return es;
}

}  // namespace detail

/// Validates a declared structure, or computes a diagonal one numerically
/// when the spectrum is well separated.
inline EigenStructure build_eigenstructure(const BranchingModel& model,
                                           const std::optional<EigenStructure>& declared = std::nullopt) {
    require_valid(model);
    const RMat a = mean_generator(model);
    const Eigen::Index d = a.rows();
    EigenStructure es;
    if (declared) {
        es = *declared;
        detail::check_shapes(es, d);
        detail::reorder(es);
        int total = 0;
        for (int i = 0; i < es.m(); ++i)
            for (int j = 0; j < es.p(i); ++j) total += es.kcount(i, j);
        es.full_spectrum = total == d;
    } else {
        es = detail::numeric_eigenstructure(a);
    }
    es.nilpotent = detail::build_nilpotent(es, d);
    validate_eigenstructure(es, a);
    const cplx l1 = es.lambda[0];
    if (std::abs(l1.imag()) > detail::lambda_tol(l1))
        throw PreconditionError("leading eigenvalue must be real");
    es.lambda[0] = l1.real();
    if (es.m() > 1 && !(es.lambda[1].real() < l1.real() - detail::lambda_tol(l1)))
        throw PreconditionError("leading eigenvalue must strictly dominate the real parts of the others");
    return es;
}

/// Keeps the first m tracked eigenvalues.
inline EigenStructure truncate(const EigenStructure& es, int m) {
    if (m < 1 || m > es.m()) throw DomainError("truncate: m out of range");
    EigenStructure out;
    out.lambda.assign(es.lambda.begin(), es.lambda.begin() + m);
    out.chains.assign(es.chains.begin(), es.chains.begin() + m);
    out.duals.assign(es.duals.begin(), es.duals.begin() + m);
    for (const auto& [key, ks] : es.links)
        if (key[0] < m) out.links[key] = ks;
    out.nilpotent = detail::build_nilpotent(out, es.dim());
    out.full_spectrum = m == es.m() && es.full_spectrum;
    return out;
}

enum class Regime { large, critical, small };

inline const char* to_string(Regime r) {
    switch (r) {
        case Regime::large: return "large";
        case Regime::critical: return "critical";
        case Regime::small: return "small";
    }
    return "?";
}

struct RegimeReport {
    int m = 0;
    int m_L = 0;  // 1-based counts, as in the theory
    int m_C = 0;
    std::vector<Regime> labels;
    double spectral_gap = std::numeric_limits<double>::infinity();

    std::string summary() const {
        if (m_C > m_L) return "critical eigenvalue present";
        if (m_L < m) return "small";
        return "large";
    }
};

/// Tolerance used to decide 2 Re(lambda_i) == lambda_1.
inline double critical_tol(double lambda1) { return 1e-9 * std::max(1.0, std::abs(lambda1)); }

inline RegimeReport classify_regimes(const EigenStructure& es) {
    const double l1 = es.lambda[0].real();
    if (!(l1 > 0.0)) throw DomainError("not supercritical: lambda_1 = " + std::to_string(l1));
    RegimeReport rep;
    rep.m = es.m();
    const double tol = critical_tol(l1);
    for (int i = 0; i < es.m(); ++i) {
        const double twice = 2.0 * es.lambda[static_cast<std::size_t>(i)].real();
        Regime r = Regime::small;
        if (twice > l1 + tol)
            r = Regime::large;
        else if (twice >= l1 - tol)
            r = Regime::critical;
        rep.labels.push_back(r);
        if (r == Regime::large) rep.m_L = i + 1;
        if (r != Regime::small) rep.m_C = i + 1;
    }
    if (es.m() > 1) rep.spectral_gap = l1 - es.lambda[1].real();
    return rep;
}

struct ProjectionSet {
    std::vector<CMat> Phi;                 // Phi[i]
    std::vector<std::vector<CMat>> rank;   // Phi[i][j]
};

inline ProjectionSet projections(const EigenStructure& es) {
    ProjectionSet ps;
    for (int i = 0; i < es.m(); ++i) {
        ps.Phi.push_back(es.projection(i));
        ps.rank.emplace_back();
        for (int j = 0; j < es.p(i); ++j) ps.rank.back().push_back(es.projection(i, j));
    }
    return ps;
}

/// First dual index (i <= upto, 0-based exclusive bound) with a nonzero
/// pairing against f, if any.
inline std::optional<std::array<int, 3>> kernel_violation(const EigenStructure& es, const CVec& f, int upto,
                                                          double tol = kBiorthTol) {
    const double scale = std::max(1.0, f.cwiseAbs().maxCoeff());
    for (int i = 0; i < upto; ++i)
        for (int j = 0; j < es.p(i); ++j)
            for (int k = 0; k < es.kcount(i, j); ++k)
                if (std::abs(es.dual(i, j, k, f)) > tol * scale) return std::array<int, 3>{i, j, k};
    return std::nullopt;
}

/// e^{(lambda_1/2 - lambda_i - N) t} Phi_i summed over i < upto.
inline CMat decomposition_operator(const EigenStructure& es, double t, int upto) {
    const double l1 = es.lambda[0].real();
    const CMat en = es.exp_nilpotent(-t);
    CMat out = CMat::Zero(es.dim(), es.dim());
    for (int i = 0; i < upto; ++i)
        out += std::exp((0.5 * l1 - es.lambda[static_cast<std::size_t>(i)]) * t) * (en * es.projection(i));
    return out;
}

struct Decomposition {
    Functional f1;
    Functional f2;
};

inline Decomposition project_decompose(const EigenStructure& es, const Functional& f, double t) {
    if (!(t >= 0.0)) throw DomainError("project_decompose: negative time");
    const auto rep = classify_regimes(es);
    Decomposition dec;
    dec.f1 = Functional(decomposition_operator(es, t, rep.m_L) * f.values);
    dec.f2 = f - dec.f1;
    return dec;
}

/// Sup-norm (max absolute row sum) of e^{-Re lambda_m t} t (exp(tA) - sum_i e^{(lambda_i+N)t} Phi_i).
inline std::vector<double> h1_residual(const BranchingModel& model, const EigenStructure& es,
                                       const std::vector<double>& t_grid) {
    const CMat a = mean_generator(model).cast<cplx>();
    const double lm = es.lambda.back().real();
    std::vector<CMat> proj;
    for (int i = 0; i < es.m(); ++i) proj.push_back(es.projection(i));
    std::vector<double> out;
    for (double t : t_grid) {
        if (!(t >= 0.0)) throw DomainError("h1_residual: negative time");
        CMat r = expm(CMat(t * a));
        const CMat en = es.exp_nilpotent(t);
        for (int i = 0; i < es.m(); ++i)
            r -= std::exp(es.lambda[static_cast<std::size_t>(i)] * t) * (en * proj[static_cast<std::size_t>(i)]);
        out.push_back(std::exp(-lm * t) * t * r.cwiseAbs().rowwise().sum().maxCoeff());
    }
    return out;
}

}  // namespace bmfluct
