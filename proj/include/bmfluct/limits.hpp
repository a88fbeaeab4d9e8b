#pragma once

#include <optional>
#include <sstream>
#include <vector>

#include "bmfluct/moments.hpp"
#include "bmfluct/spectral.hpp"

namespace bmfluct {

enum class Provenance { exact_expectation, simulation };

/// W_{i,j}^{(k)} for the large-regime indices i < m_L.
struct MartingaleLimitSet {
    std::vector<std::vector<std::vector<cplx>>> W;  // [i][j][k]
    Provenance provenance = Provenance::exact_expectation;

    cplx at(int i, int j, int k) const {
        return W[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
    }
    /// N acting on limits: N W_{i,1} = 0, N W_{i,j} = W_{i,j-1}^{(k*)}.
    cplx apply_nilpotent(const EigenStructure& es, int i, int j, int k) const {
        if (j == 0) return 0.0;
        return at(i, j - 1, es.links.at({i, j, k}));
    }

    /// E[W_{i,j}^{(k)}(x)] = phi_{i,j}^{(k)}(x).
    static MartingaleLimitSet expectation(const EigenStructure& es, std::size_t x) {
        MartingaleLimitSet s;
        const int m_L = classify_regimes(es).m_L;
        for (int i = 0; i < m_L; ++i) {
            s.W.emplace_back();
            for (int j = 0; j < es.p(i); ++j) {
                s.W.back().emplace_back();
                for (int k = 0; k < es.kcount(i, j); ++k)
                    s.W.back().back().push_back(es.phi(i, j, k)(static_cast<Eigen::Index>(x)));
            }
        }
        return s;
    }

    /// Same shape, all entries scaled from the leading limits only.
    static MartingaleLimitSet leading(const EigenStructure& es, const std::vector<cplx>& w11) {
        MartingaleLimitSet s;
        const int m_L = classify_regimes(es).m_L;
        for (int i = 0; i < m_L; ++i) {
            s.W.emplace_back();
            for (int j = 0; j < es.p(i); ++j) s.W.back().emplace_back(static_cast<std::size_t>(es.kcount(i, j)), 0.0);
        }
        for (std::size_t k = 0; k < w11.size(); ++k) s.W[0][0][k] = w11[k];
        s.provenance = Provenance::simulation;
        return s;
    }
};

struct CriticalClassification {
    int nu_f = 0;  // 0-based eigenvalue index
    cplx lambda_f;
    int p_f = 1;
    CVec projection;
};

struct KernelValue {
    cplx plain;
    cplx conj;
    double est_error = 0.0;
};

/// e^{-lambda_i t} e^{-N t} phi_{i,j}^{(k)}; pairing with X_t gives the martingale.
inline Functional martingale_functional(const EigenStructure& es, int i, int j, int k, double t) {
    if (!(t >= 0.0)) throw DomainError("martingale_functional: negative time");
    return Functional(std::exp(-es.lambda[static_cast<std::size_t>(i)] * t) *
                      (es.exp_nilpotent(-t) * es.phi(i, j, k)));
}

namespace detail {

inline int leading_rank(const EigenStructure& es) { return es.p(0); }

/// sum_i W_{1,1}^{(i)} (N^{p_1-1})^T phi~_{1,1}^{(i)}, optionally divided by (p_1-1)!.
inline CVec leading_weight(const EigenStructure& es, const MartingaleLimitSet& W, bool with_factorial,
                           bool with_nilpotent = true) {
    const int p1 = leading_rank(es);
    const CMat np = es.nilpotent_power(with_nilpotent ? p1 - 1 : 0);
    CVec w = CVec::Zero(es.dim());
    for (int k = 0; k < es.kcount(0, 0); ++k) w += W.at(0, 0, k) * (np.transpose() * es.dual_vec(0, 0, k));
    if (with_factorial) w /= factorial(p1 - 1);
    return w;
}

/// Bilinear form a, b -> sum_x w(x) V[a,b](x) as a matrix K with value a^T K b.
inline CMat weighted_variance_form(const BranchingModel& model, const CVec& w) {
    const auto d = static_cast<Eigen::Index>(model.dim());
    CMat k = CMat::Zero(d, d);
    for (Eigen::Index x = 0; x < d; ++x) {
        if (w(x) == 0.0) continue;
        RMat bx = RMat::Zero(d, d);
        for (const auto& o : model.offspring.per_type[static_cast<std::size_t>(x)]) {
            RVec c(d);
            for (Eigen::Index y = 0; y < d; ++y) c(y) = o.children[static_cast<std::size_t>(y)];
            bx += o.probability * (c * c.transpose() - RMat(c.asDiagonal()));
        }
        k += (w(x) * model.gamma(x)) * bx.cast<cplx>();
    }
    return k;
}

/// Vector-valued exponential polynomial: sum e^{rate u} u^power v.
struct ExpPolyTerm {
    cplx rate;
    int power;
    CVec v;
};
using ExpPoly = std::vector<ExpPolyTerm>;

/// e^{s N} h as a polynomial in s (rate 0), times e^{rate s}.
inline ExpPoly nilpotent_flow(const EigenStructure& es, const CVec& h, double sign, cplx rate) {
    ExpPoly out;
    CVec cur = h;
    for (int c = 0; c <= es.dim(); ++c) {
        if (cur.cwiseAbs().maxCoeff() == 0.0) break;
        out.push_back({rate, c, (std::pow(sign, c) / factorial(c)) * cur});
        cur = es.nilpotent * cur;
    }
    return out;
}

/// int_0^inf e^{extra u} a(u)^T K b(u) du, exact for exponential polynomials.
inline cplx integrate_bilinear(const ExpPoly& a, const ExpPoly& b, const CMat& k, cplx extra) {
    cplx total = 0.0;
    for (const auto& ta : a)
        for (const auto& tb : b) {
            const cplx coef = ta.v.transpose() * k * tb.v;
            if (std::abs(coef) == 0.0) continue;
            const cplx rate = ta.rate + tb.rate + extra;
            const int m = ta.power + tb.power;
            if (!(rate.real() < 0.0)) {
                if (std::abs(coef) < 1e-13 * (1.0 + ta.v.norm() * tb.v.norm() * k.norm())) continue;
                throw NumericalError("divergent infinite integral (rate " + std::to_string(rate.real()) + ")");
            }
            total += coef * factorial(m) / std::pow(-rate, m + 1);
        }
    return total;
}

/// psi_u h as an exponential polynomial when the structure spans the spectrum.
inline ExpPoly semigroup_flow(const EigenStructure& es, const CVec& h, int from) {
    ExpPoly out;
    for (int i = from; i < es.m(); ++i) {
        const CVec pi = es.projection(i) * h;
        if (pi.cwiseAbs().maxCoeff() == 0.0) continue;
        for (auto& term : nilpotent_flow(es, pi, 1.0, es.lambda[static_cast<std::size_t>(i)])) out.push_back(term);
    }
    return out;
}

inline void require_indices(const EigenStructure& es, int i, int j, int k) {
    if (i < 0 || i >= es.m() || j < 0 || j >= es.p(i) || k < 0 || k >= es.kcount(i, j))
        throw DomainError("index (i,j,k) out of range");
}

}  // namespace detail

/// (1/(p_1-1)!) sum_i phi~_{1,1}^{(i)}[N^{p_1-1} f] W_{1,1}^{(i)}.
inline cplx slln_limit(const EigenStructure& es, const Functional& f, const MartingaleLimitSet& W) {
    return detail::leading_weight(es, W, true).transpose() * f.values;
}

inline cplx c1(const EigenStructure& es, const BranchingModel& model, double t, const Functional& f,
               const Functional& g, const MartingaleLimitSet& W) {
    if (!(t >= 0.0)) throw DomainError("c1: negative time");
    const int m_L = classify_regimes(es).m_L;
    const double l1 = es.lambda[0].real();
    const CVec w = detail::leading_weight(es, W, true);
    const CVec w_point = detail::leading_weight(es, W, true, false);
    const CMat kform = detail::weighted_variance_form(model, w);
    const CMat ent = es.exp_nilpotent(-t);
    cplx total = 0.0;
    for (int j = 0; j < m_L; ++j) {
        const cplx lj = es.lambda[static_cast<std::size_t>(j)];
        const CVec pf = ent * (es.projection(j) * f.values);
        if (pf.cwiseAbs().maxCoeff() == 0.0) continue;
        const auto a = detail::nilpotent_flow(es, pf, -1.0, 0.0);
        for (int k = 0; k < m_L; ++k) {
            const cplx lk = es.lambda[static_cast<std::size_t>(k)];
            const CVec pg = es.projection(k) * g.values;
            if (pg.cwiseAbs().maxCoeff() == 0.0) continue;
            const auto b = detail::nilpotent_flow(es, pg, -1.0, 0.0);
            const cplx integral = detail::integrate_bilinear(a, b, kform, l1 - lj - lk);
            const cplx point = w_point.transpose() * pf.cwiseProduct(pg);
            total += std::exp((0.5 * l1 - lj) * t) * (integral - point);
        }
    }
    return total;
}

inline cplx c2(const EigenStructure& es, const BranchingModel& model, double t, const Functional& f,
               const Functional& g, const MartingaleLimitSet& W, const QuadratureConfig& quad = {},
               double* est_error = nullptr) {
    if (!(t >= 0.0)) throw DomainError("c2: negative time");
    const CVec w = detail::leading_weight(es, W, true);
    double err = 0.0;
    const CVec cov = covariance_vector(model, f, g, t, quad, &err);
    const double l1 = es.lambda[0].real();
    if (est_error) *est_error = std::exp(-l1 * t) * w.cwiseAbs().sum() * err;
    return std::exp(-l1 * t) * cplx(w.transpose() * cov);
}

inline cplx c3(const EigenStructure& es, const BranchingModel& model, double t, const Functional& f,
               const Functional& g, const MartingaleLimitSet& W, double* est_error = nullptr) {
    if (!(t >= 0.0)) throw DomainError("c3: negative time");
    const auto rep = classify_regimes(es);
    if (rep.m_C >= es.m()) throw PreconditionError("c3 requires m_C < m (a small eigenvalue must be tracked)");
    for (const auto* h : {&f, &g})
        if (auto bad = kernel_violation(es, h->values, rep.m_C)) {
            std::ostringstream os;
            os << "c3 requires arguments in ker(lambda_m_C); nonzero pairing with dual (" << (*bad)[0] + 1 << ","
               << (*bad)[1] + 1 << "," << (*bad)[2] + 1 << ")";
            throw PreconditionError(os.str());
        }
    const double l1 = es.lambda[0].real();
    const CVec w = detail::leading_weight(es, W, true);
    const CMat kform = detail::weighted_variance_form(model, w);
    const RMat a = mean_generator(model);
    const CVec psi_g = semigroup_apply(a, t, g).values;
    const cplx point = w.transpose() * f.values.cwiseProduct(psi_g);

    cplx integral = 0.0;
    double err = 0.0;
    if (es.full_spectrum) {
        const auto fa = detail::semigroup_flow(es, f.values, rep.m_C);
        const auto gb = detail::semigroup_flow(es, psi_g, rep.m_C);
        integral = detail::integrate_bilinear(fa, gb, kform, -l1);
        err = 1e-14 * std::abs(integral);
    } else {
        // decay rate of psi_u on ker(lambda_m_C) is at most Re lambda_{m_C+1}
        const double decay = l1 - 2.0 * es.lambda[static_cast<std::size_t>(rep.m_C)].real();
        const CMat ac = a.cast<cplx>();
        auto integrand = [&](double u, int part) {
            const CVec fu = expm(CMat(u * ac)) * f.values;
            const CVec gu = expm(CMat(u * ac)) * psi_g;
            const cplx v = std::exp(-l1 * u) * cplx(fu.transpose() * kform * gu);
            return part == 0 ? v.real() : v.imag();
        };
        const double upper = 40.0 / decay;
        auto re = adaptive_integrate([&](double u) { return integrand(u, 0); }, 0.0, upper, 1e-12);
        auto im = adaptive_integrate([&](double u) { return integrand(u, 1); }, 0.0, upper, 1e-12);
        integral = {re.value, im.value};
        const double tail = std::abs(integrand(upper, 0)) + std::abs(integrand(upper, 1));
        err = re.error + im.error + 2.0 * tail / decay;
    }
    if (est_error) *est_error = std::exp(-0.5 * l1 * t) * err;
    return std::exp(-0.5 * l1 * t) * (point + integral);
}

/// Exact value of the C^(4) polynomial integral (indicator excluded).
inline double c4_integral(double r, double t, int pf, int pg, int p1) {
    if (!(0.0 <= r && r <= t)) throw DomainError("c4: requires 0 <= r <= t");
    if (pf < 1 || pg < 1 || p1 < 1) throw DomainError("c4: ranks must be >= 1");
    // (t - v) = (t - r) + (r - v): every term is nonnegative
    const int a = pf - 1, b = pg - 1, c = p1 - 1;
    const double gap = t - r;
    double total = 0.0;
    for (int j = 0; j <= b; ++j) {
        const double beta = factorial(a + j) * factorial(c) / factorial(a + j + c + 1);
        total += binomial(b, j) * std::pow(gap, b - j) * beta * std::pow(r, a + j + c + 1);
    }
    return total / (factorial(a) * factorial(c) * factorial(b));
}

inline double c4(double r, double t, const CriticalClassification& f, const CriticalClassification& g, int p1) {
    const double tol = 1e-9 * std::max(1.0, std::abs(f.lambda_f));
    if (std::abs(f.lambda_f - std::conj(g.lambda_f)) > tol) {
        if (!(0.0 <= r && r <= t)) throw DomainError("c4: requires 0 <= r <= t");
        return 0.0;
    }
    return c4_integral(r, t, f.p_f, g.p_f, p1);
}

inline CriticalClassification classify_ei(const EigenStructure& es, const Functional& f) {
    const auto rep = classify_regimes(es);
    if (rep.m_C <= rep.m_L) throw PreconditionError("classify_ei: no critical eigenvalues");
    const double scale = std::max(1.0, f.values.cwiseAbs().maxCoeff());
    std::vector<int> hits;
    for (int i = rep.m_L; i < rep.m_C; ++i)
        if ((es.projection(i) * f.values).cwiseAbs().maxCoeff() > kBiorthTol * scale) hits.push_back(i);
    if (hits.size() != 1) {
        std::ostringstream os;
        os << "classification failure: f has nonzero projection in " << hits.size() << " critical eigenspaces";
        if (!hits.empty()) {
            os << " (indices";
            for (int h : hits) os << " " << h + 1;
            os << ")";
        }
        throw PreconditionError(os.str());
    }
    CriticalClassification cc;
    cc.nu_f = hits[0];
    cc.lambda_f = es.lambda[static_cast<std::size_t>(cc.nu_f)];
    cc.projection = es.projection(cc.nu_f) * f.values;
    CVec cur = cc.projection;
    cc.p_f = 0;
    while (cur.cwiseAbs().maxCoeff() > kBiorthTol * scale && cc.p_f <= es.dim()) {
        ++cc.p_f;
        cur = es.nilpotent * cur;
    }
    return cc;
}

inline KernelValue small_cov(const EigenStructure& es, const BranchingModel& model, double r, double t,
                             const Functional& f, const Functional& g, const MartingaleLimitSet& W,
                             const QuadratureConfig& quad = {}) {
    if (!(0.0 <= r && r <= t)) throw DomainError("small_cov: requires 0 <= r <= t");
    const auto rep = classify_regimes(es);
    if (!(rep.m_L == rep.m_C && rep.m_C < rep.m)) {
        std::ostringstream os;
        os << "small_cov requires m_L = m_C < m; got m_L=" << rep.m_L << ", m_C=" << rep.m_C << ", m=" << rep.m
           << " (" << rep.summary() << ")";
        throw PreconditionError(os.str());
    }
    const double lag = t - r;
    const auto fd = project_decompose(es, f, 0.0);
    const auto flag = project_decompose(es, f, lag);
    KernelValue out;
    auto assemble = [&](const Functional& h) {
        const auto hd = project_decompose(es, h, 0.0);
        double e2 = 0.0, e3 = 0.0;
        const cplx v = c1(es, model, lag, fd.f1, hd.f1, W) - c2(es, model, lag, flag.f1, hd.f2, W, quad, &e2) +
                       c3(es, model, lag, fd.f2, hd.f2, W, &e3);
        out.est_error = std::max(out.est_error, e2 + e3);
        return v;
    };
    out.plain = assemble(g);
    out.conj = assemble(g.conj());
    return out;
}

inline KernelValue crit_cov(const EigenStructure& es, const BranchingModel& model, double r, double t,
                            const Functional& f, const Functional& g, const MartingaleLimitSet& W) {
    if (!(0.0 <= r && r <= t)) throw DomainError("crit_cov: requires 0 <= r <= t");
    const auto cf = classify_ei(es, f);
    const auto cg = classify_ei(es, g);
    const auto cgb = classify_ei(es, g.conj());
    const int p1 = es.p(0);
    const CVec w = detail::leading_weight(es, W, false);
    auto weight = [&](const CriticalClassification& a, const CriticalClassification& b) {
        const CVec va = es.nilpotent_power(a.p_f - 1) * a.projection;
        const CVec vb = es.nilpotent_power(b.p_f - 1) * b.projection;
        return cplx(w.transpose() * variance_operator_V(model, Functional(va), Functional(vb)).values);
    };
    KernelValue out;
    out.plain = c4(r, t, cf, cg, p1) * weight(cf, cg);
    out.conj = c4(r, t, cf, cgb, p1) * weight(cf, cgb);
    return out;
}

}  // namespace bmfluct
