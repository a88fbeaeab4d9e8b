#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bmfluct/error.hpp"
#include "bmfluct/linalg.hpp"

namespace bmfluct {

inline constexpr double kStochasticTol = 1e-12;

struct TypeSpace {
    std::vector<std::string> labels;

    std::size_t size() const noexcept { return labels.size(); }

    static TypeSpace numbered(std::size_t d) {
        TypeSpace ts;
        for (std::size_t i = 0; i < d; ++i) ts.labels.push_back(std::to_string(i + 1));
        return ts;
    }
};

/// Jump-rate matrix of the single-particle motion.
struct MotionGenerator {
    RMat q;
};

struct OffspringOutcome {
    double probability = 0.0;
    std::vector<int> children;  // count per type

    long long total() const {
        return std::accumulate(children.begin(), children.end(), 0LL);
    }
};

/// Finite-support point law of the offspring configuration, one list of
/// outcomes per parent type.
struct OffspringLaw {
    std::vector<std::vector<OffspringOutcome>> per_type;
};

struct BranchingModel {
    TypeSpace types;
    MotionGenerator motion;
    RVec gamma;
    OffspringLaw offspring;

    std::size_t dim() const noexcept { return types.size(); }
};

/// Complex-valued function on the type space.
struct Functional {
    CVec values;

    Functional() = default;
    explicit Functional(CVec v) : values(std::move(v)) {}
    Functional(std::initializer_list<cplx> v) : values(static_cast<Eigen::Index>(v.size())) {
        Eigen::Index i = 0;
        for (auto x : v) values(i++) = x;
    }

    static Functional zero(std::size_t d) { return Functional(CVec::Zero(static_cast<Eigen::Index>(d))); }
    static Functional constant(std::size_t d, cplx c) {
        return Functional(CVec::Constant(static_cast<Eigen::Index>(d), c));
    }
    static Functional indicator(std::size_t d, std::size_t x) {
        CVec v = CVec::Zero(static_cast<Eigen::Index>(d));
        v(static_cast<Eigen::Index>(x)) = 1.0;
        return Functional(std::move(v));
    }

    std::size_t size() const noexcept { return static_cast<std::size_t>(values.size()); }
    cplx operator()(std::size_t x) const { return values(static_cast<Eigen::Index>(x)); }
    bool finite() const { return values.allFinite(); }
    Functional conj() const { return Functional(values.conjugate()); }

    friend Functional operator+(const Functional& a, const Functional& b) { return Functional(a.values + b.values); }
    friend Functional operator-(const Functional& a, const Functional& b) { return Functional(a.values - b.values); }
    friend Functional operator*(cplx s, const Functional& a) { return Functional(s * a.values); }
};

/// Type-count snapshot; X_t[f] = sum_x counts[x] f(x).
struct PopulationState {
    std::vector<long long> counts;
    double time = 0.0;

    long long total() const { return std::accumulate(counts.begin(), counts.end(), 0LL); }

    cplx pair(const Functional& f) const {
        cplx s = 0.0;
        for (std::size_t x = 0; x < counts.size(); ++x) s += static_cast<double>(counts[x]) * f(x);
        return s;
    }
};

struct ValidationCheck {
    std::string name;
    bool pass = true;
    std::string detail;
};

struct ValidationReport {
    std::vector<ValidationCheck> checks;
    int moment_order = 0;
    double sup_moment = 0.0;  // sup_x E_x[N^k]

    bool ok() const {
        return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
    }
    const ValidationCheck* find(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return &c;
        return nullptr;
    }
};

namespace detail {

inline std::string idx_path(const std::string& base, std::size_t i) {
    return base + "[" + std::to_string(i) + "]";
}

/// Structural consistency; throws with the offending field path.
inline void check_structure(const BranchingModel& m) {
    const std::size_t d = m.dim();
    if (d == 0) throw InputError("types", "at least one type is required");
    if (static_cast<std::size_t>(m.motion.q.rows()) != d)
        throw InputError("q", "expected " + std::to_string(d) + " rows, got " + std::to_string(m.motion.q.rows()));
    if (static_cast<std::size_t>(m.motion.q.cols()) != d)
        throw InputError("q", "expected " + std::to_string(d) + " columns, got " + std::to_string(m.motion.q.cols()));
    if (static_cast<std::size_t>(m.gamma.size()) != d)
        throw InputError("gamma", "expected length " + std::to_string(d) + ", got " + std::to_string(m.gamma.size()));
    if (m.offspring.per_type.size() != d)
        throw InputError("offspring", "expected one outcome list per type (" + std::to_string(d) + "), got " +
                                          std::to_string(m.offspring.per_type.size()));
    for (std::size_t x = 0; x < d; ++x) {
        const auto& outs = m.offspring.per_type[x];
        if (outs.empty()) throw InputError(idx_path("offspring", x), "empty outcome list");
        for (std::size_t o = 0; o < outs.size(); ++o) {
            if (outs[o].children.size() != d)
                throw InputError(idx_path(idx_path("offspring", x), o) + ".children",
                                 "expected length " + std::to_string(d));
        }
    }
}

/// Compensated summation (Neumaier).
class Accumulator {
public:
    void add(double v) {
        const double t = sum_ + v;
        if (std::abs(sum_) >= std::abs(v))
            comp_ += (sum_ - t) + v;
        else
            comp_ += (v - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

}  // namespace detail

/// Checks the generator, branch-rate and offspring invariants and reports
/// sup_x E_x[N^k]. Dimension mismatches throw InputError instead.
inline ValidationReport validate_model(const BranchingModel& model, int k) {
    detail::check_structure(model);
    const std::size_t d = model.dim();
    ValidationReport rep;
    rep.moment_order = k;

    {
        std::set<std::string> seen(model.types.labels.begin(), model.types.labels.end());
        ValidationCheck c{"types.labels_unique", seen.size() == d, ""};
        if (!c.pass) c.detail = "duplicate type labels";
        rep.checks.push_back(c);
    }
    {
        ValidationCheck off{"q.offdiag_nonnegative", true, ""};
        ValidationCheck rows{"q.rows_sum_zero", true, ""};
        for (std::size_t x = 0; x < d; ++x) {
            double row = 0.0;
            for (std::size_t y = 0; y < d; ++y) {
                const double v = model.motion.q(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y));
                if (!std::isfinite(v)) {
                    off.pass = false;
                    off.detail = "non-finite rate at q[" + std::to_string(x) + "][" + std::to_string(y) + "]";
                }
                if (x != y && v < 0.0) {
                    off.pass = false;
                    off.detail = "negative rate at q[" + std::to_string(x) + "][" + std::to_string(y) + "]";
                }
                row += v;
            }
            if (std::abs(row) > kStochasticTol) {
                rows.pass = false;
                std::ostringstream os;
                os << "row " << x << " sums to " << row;
                rows.detail = os.str();
            }
        }
        rep.checks.push_back(off);
        rep.checks.push_back(rows);
    }
    {
        ValidationCheck c{"gamma.finite_nonnegative", true, ""};
        for (std::size_t x = 0; x < d; ++x) {
            const double g = model.gamma(static_cast<Eigen::Index>(x));
            if (!std::isfinite(g) || g < 0.0) {
                c.pass = false;
                c.detail = "gamma[" + std::to_string(x) + "] = " + std::to_string(g);
            }
        }
        rep.checks.push_back(c);
    }
    {
        ValidationCheck range{"offspring.probability_range", true, ""};
        ValidationCheck norm{"offspring.normalized", true, ""};
        ValidationCheck counts{"offspring.children_nonnegative", true, ""};
        for (std::size_t x = 0; x < d; ++x) {
            detail::Accumulator total;
            for (std::size_t o = 0; o < model.offspring.per_type[x].size(); ++o) {
                const auto& out = model.offspring.per_type[x][o];
                if (!(out.probability >= 0.0 && out.probability <= 1.0)) {
                    range.pass = false;
                    range.detail = "offspring[" + std::to_string(x) + "][" + std::to_string(o) + "].probability";
                }
                for (int c : out.children)
                    if (c < 0) {
                        counts.pass = false;
                        counts.detail = "offspring[" + std::to_string(x) + "][" + std::to_string(o) + "].children";
                    }
                total.add(out.probability);
            }
            if (std::abs(total.value() - 1.0) > kStochasticTol) {
                norm.pass = false;
                std::ostringstream os;
                os << "type " << x << " probabilities sum to " << total.value();
                norm.detail = os.str();
            }
        }
        rep.checks.push_back(range);
        rep.checks.push_back(norm);
        rep.checks.push_back(counts);
    }
    {
        double sup = 0.0;
        for (const auto& outs : model.offspring.per_type) {
            double e = 0.0;
            for (const auto& out : outs) e += out.probability * std::pow(static_cast<double>(out.total()), k);
            sup = std::max(sup, e);
        }
        rep.sup_moment = sup;
        ValidationCheck c{"offspring.moment_bound", std::isfinite(sup), ""};
        std::ostringstream os;
        os << "sup_x E_x[N^" << k << "] = " << sup;
        c.detail = os.str();
        rep.checks.push_back(c);
    }
    return rep;
}

inline void require_valid(const BranchingModel& model, int k = 2) {
    const auto rep = validate_model(model, k);
    for (const auto& c : rep.checks)
        if (!c.pass) throw InputError(c.name, "model invariant violated: " + c.detail);
}

/// m[x][y] = E_x[# children of type y].
inline RMat mean_matrix(const BranchingModel& model) {
    const std::size_t d = model.dim();
    RMat m = RMat::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t x = 0; x < d; ++x) {
        for (std::size_t y = 0; y < d; ++y) {
            detail::Accumulator acc;
            for (const auto& out : model.offspring.per_type[x])
                acc.add(out.probability * out.children[y]);
            m(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)) = acc.value();
        }
    }
    return m;
}

/// x-entry: E_x[ sum_{i != j} f(x_i) g(x_j) ] over the offspring of a type-x parent.
inline Functional factorial_cross_moment(const BranchingModel& model, const Functional& f, const Functional& g) {
    const std::size_t d = model.dim();
    CVec out = CVec::Zero(static_cast<Eigen::Index>(d));
    for (std::size_t x = 0; x < d; ++x) {
        cplx acc = 0.0;
        for (const auto& o : model.offspring.per_type[x]) {
            cplx sf = 0.0, sg = 0.0, sfg = 0.0;
            for (std::size_t y = 0; y < d; ++y) {
                const double c = o.children[y];
                sf += c * f(y);
                sg += c * g(y);
                sfg += c * f(y) * g(y);
            }
            acc += o.probability * (sf * sg - sfg);
        }
        out(static_cast<Eigen::Index>(x)) = acc;
    }
    return Functional(std::move(out));
}

/// V[f,g](x) = gamma(x) E_x[ sum_{i != j} f(x_i) g(x_j) ].
inline Functional variance_operator_V(const BranchingModel& model, const Functional& f, const Functional& g) {
    Functional v = factorial_cross_moment(model, f, g);
    v.values = v.values.cwiseProduct(model.gamma.cast<cplx>());
    return v;
}

/// Mean generator A = q + diag(gamma) (M - I); psi_t[f] = exp(tA) f.
inline RMat mean_generator(const BranchingModel& model) {
    const auto d = static_cast<Eigen::Index>(model.dim());
    return model.motion.q + model.gamma.asDiagonal() * (mean_matrix(model) - RMat::Identity(d, d));
}

inline Functional semigroup_apply(const RMat& a, double t, const Functional& f) {
    if (!(t >= 0.0)) throw DomainError("semigroup_apply: negative time");
    if (t == 0.0) return f;
    return Functional(expm(CMat(t * a.cast<cplx>())) * f.values);
}

}  // namespace bmfluct
