#pragma once

#include <bit>
#include <cstring>
#include <functional>
#include <map>
#include <sstream>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "bmfluct/model.hpp"
#include "bmfluct/quadrature.hpp"

namespace bmfluct {

inline constexpr int kMaxMomentOrder = 4;

struct QuadratureConfig {
    int panels = 8;
    int rule = 10;
    double rel_tol = 1e-8;
    int refinement = 6;

    void check() const {
        if (panels < 1) throw DomainError("quadrature: panels must be >= 1");
        if (!(rel_tol > 0.0)) throw DomainError("quadrature: rel_tol must be > 0");
        if (refinement < 1) throw DomainError("quadrature: refinement must be >= 1");
        gauss_legendre(rule);
    }
};

struct MomentResult {
    cplx value;
    double est_error = 0.0;
    int k = 0;
    std::vector<Functional> fs;
    double t = 0.0;
    std::size_t start_type = 0;
};

/// Quadrature did not settle; carries the last two iterates.
class MomentConvergenceError : public NumericalError {
public:
    MomentConvergenceError(const std::string& what, CVec prev, CVec last)
        : NumericalError(what), previous(std::move(prev)), last(std::move(last)) {}
    CVec previous;
    CVec last;
};

namespace detail {

using Partition = std::vector<unsigned>;

/// Set partitions of the bits of `mask` into at least two blocks.
inline std::vector<Partition> proper_partitions(unsigned mask) {
    std::vector<int> elems;
    for (int b = 0; b < 32; ++b)
        if (mask & (1u << b)) elems.push_back(b);
    std::vector<Partition> out;
    Partition cur;
    std::function<void(std::size_t)> rec = [&](std::size_t n) {
        if (n == elems.size()) {
            if (cur.size() >= 2) out.push_back(cur);
            return;
        }
        const unsigned bit = 1u << elems[n];
        for (std::size_t b = 0; b < cur.size(); ++b) {
            cur[b] |= bit;
            rec(n + 1);
            cur[b] &= ~bit;
        }
        cur.push_back(bit);
        rec(n + 1);
        cur.pop_back();
    };
    rec(0);
    return out;
}

/// Solves the joint-moment evolution equation for every sub-product of
/// `fs` on a panel grid over [0, t].
class MomentSolver {
public:
    MomentSolver(const BranchingModel& model, std::vector<Functional> fs, double t, int panels, int rule)
        : fs_(std::move(fs)), t_(t), panels_(panels), h_(t / panels), rule_(gauss_legendre(rule)) {
        a_ = mean_generator(model).cast<cplx>();
        gamma_ = model.gamma.cast<cplx>();
        d_ = a_.rows();
        offspring_ = &model.offspring;
        grid_.resize(1u << fs_.size());
    }

    CVec value(unsigned mask) { return panels_ == 0 || t_ == 0.0 ? product(mask) : at_grid(mask, panels_); }

    /// eta at the final time, without the branch-rate factor.
    CVec eta_end(unsigned mask) {
        std::map<unsigned, CVec> blocks;
        for (const auto& part : parts(mask))
            for (unsigned b : part)
                if (!blocks.count(b)) blocks[b] = value(b);
        return eta_from(mask, [&](unsigned b) -> const CVec& { return blocks.at(b); });
    }

private:
    const CMat& expm_of(double u) {
        std::uint64_t key;
        std::memcpy(&key, &u, sizeof key);
        auto it = exp_cache_.find(key);
        if (it == exp_cache_.end()) it = exp_cache_.emplace(key, expm(CMat(u * a_))).first;
        return it->second;
    }

    CVec product(unsigned mask) const {
        CVec p = CVec::Ones(d_);
        for (std::size_t i = 0; i < fs_.size(); ++i)
            if (mask & (1u << i)) p = p.cwiseProduct(fs_[i].values);
        return p;
    }

    const std::vector<Partition>& parts(unsigned mask) {
        auto it = parts_.find(mask);
        if (it == parts_.end()) it = parts_.emplace(mask, proper_partitions(mask)).first;
        return it->second;
    }

    template <class Lookup>
    CVec eta_from(unsigned mask, Lookup&& block_value) {
        CVec out = CVec::Zero(d_);
        const auto d = static_cast<std::size_t>(d_);
        std::vector<int> assign;
        std::vector<int> used(d);
        for (const auto& part : parts(mask)) {
            const std::size_t r = part.size();
            std::vector<const CVec*> vals(r);
            for (std::size_t b = 0; b < r; ++b) vals[b] = &block_value(part[b]);
            // enumerate type assignments of blocks; weight by falling factorials
            assign.assign(r, 0);
            std::vector<cplx> terms;
            std::vector<std::vector<int>> counts;
            while (true) {
                cplx prod = 1.0;
                std::fill(used.begin(), used.end(), 0);
                for (std::size_t b = 0; b < r; ++b) {
                    prod *= (*vals[b])(assign[b]);
                    ++used[static_cast<std::size_t>(assign[b])];
                }
                terms.push_back(prod);
                counts.push_back(used);
                std::size_t pos = 0;
                while (pos < r && ++assign[pos] == static_cast<int>(d)) assign[pos++] = 0;
                if (pos == r) break;
            }
            for (std::size_t x = 0; x < d; ++x) {
                cplx acc = 0.0;
                for (const auto& o : offspring_->per_type[x]) {
                    cplx s = 0.0;
                    for (std::size_t n = 0; n < terms.size(); ++n) {
                        double w = 1.0;
                        for (std::size_t y = 0; y < d && w != 0.0; ++y)
                            if (counts[n][y]) w *= falling(o.children[y], counts[n][y]);
                        if (w != 0.0) s += w * terms[n];
                    }
                    acc += o.probability * s;
                }
                out(static_cast<Eigen::Index>(x)) += acc;
            }
        }
        return out;
    }

    /// gamma * eta at time w inside panel j.
    CVec source(unsigned mask, int j, double w) {
        std::map<unsigned, CVec> blocks;
        for (const auto& part : parts(mask))
            for (unsigned b : part)
                if (!blocks.count(b)) blocks[b] = at(b, j, w);
        return gamma_.cwiseProduct(eta_from(mask, [&](unsigned b) -> const CVec& { return blocks.at(b); }));
    }

    const CVec& at_grid(unsigned mask, int j) {
        auto& slot = grid_[mask];
        if (slot.empty()) slot.resize(static_cast<std::size_t>(panels_) + 1);
        auto& cell = slot[static_cast<std::size_t>(j)];
        if (cell.size() == 0) {
            if (j == 0)
                cell = product(mask);
            else
                cell = advance(mask, j - 1, grid_point(j));
        }
        return cell;
    }

    double grid_point(int j) const { return j == panels_ ? t_ : j * h_; }

    /// m_mask(u) for u inside panel j, from the panel start.
    CVec at(unsigned mask, int j, double u) {
        if (std::popcount(mask) == 1) return expm_of(u) * product(mask);
        if (u == grid_point(j)) return at_grid(mask, j);
        if (u == grid_point(j + 1)) return at_grid(mask, j + 1);
        const auto key = std::make_tuple(mask, j, u);
        auto it = offgrid_.find(key);
        if (it != offgrid_.end()) return it->second;
        CVec v = advance(mask, j, u);
        offgrid_.emplace(key, v);
        return v;
    }

    CVec advance(unsigned mask, int j, double u) {
        const double g = grid_point(j);
        const double len = u - g;
        CVec v = expm_of(len) * at_grid(mask, j);
        for (std::size_t q = 0; q < rule_.nodes.size(); ++q) {
            const double w = g + len * rule_.nodes[q];
            v += (len * rule_.weights[q]) * (expm_of(u - w) * source(mask, j, w));
        }
        return v;
    }

    std::vector<Functional> fs_;
    double t_;
    int panels_;
    double h_;
    const GaussRule& rule_;
    CMat a_;
    CVec gamma_;
    Eigen::Index d_ = 0;
    const OffspringLaw* offspring_ = nullptr;
    std::vector<std::vector<CVec>> grid_;
    std::map<std::tuple<unsigned, int, double>, CVec> offgrid_;
    std::unordered_map<std::uint64_t, CMat> exp_cache_;
    std::map<unsigned, std::vector<Partition>> parts_;
};

inline double magnitude_scale(const RMat& a, const std::vector<Functional>& fs, double t) {
    const double grow = expm(RMat(t * a)).cwiseAbs().rowwise().sum().maxCoeff();
    double s = 1.0;
    for (const auto& f : fs) s *= std::max(f.values.cwiseAbs().maxCoeff(), 1e-300) * grow;
    return s;
}

inline std::string format_vec(const CVec& v) {
    std::ostringstream os;
    os.precision(17);
    os << "[";
    for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v(i);
    os << "]";
    return os.str();
}

/// Doubles the panel count until successive results agree.
template <class Solve>
std::pair<CVec, RVec> refine(Solve&& solve, const QuadratureConfig& quad, double abs_floor, const char* what) {
    CVec prev = solve(quad.panels);
    int panels = quad.panels;
    for (int r = 0; r < quad.refinement; ++r) {
        panels *= 2;
        CVec cur = solve(panels);
        const RVec diff = (cur - prev).cwiseAbs();
        const double tol = quad.rel_tol * cur.cwiseAbs().maxCoeff() + abs_floor;
        if (diff.maxCoeff() <= tol) return {cur, diff};
        if (r + 1 == quad.refinement)
            throw MomentConvergenceError(std::string(what) + ": quadrature did not converge; last iterates " +
                                             format_vec(prev) + " and " + format_vec(cur),
                                         prev, cur);
        prev = std::move(cur);
    }
    throw MomentConvergenceError(std::string(what) + ": quadrature did not converge", prev, prev);
}

inline void check_order(std::size_t k, std::size_t lo) {
    if (k < lo || k > static_cast<std::size_t>(kMaxMomentOrder))
        throw DomainError("unsupported order k=" + std::to_string(k) + " (supported: " + std::to_string(lo) + "..4)");
}

}  // namespace detail

/// E_x[prod_i X_t[f_i]] for every start type x.
inline std::vector<MomentResult> joint_moment(const BranchingModel& model, const std::vector<Functional>& fs, double t,
                                              const QuadratureConfig& quad = {}) {
    detail::check_order(fs.size(), 1);
    quad.check();
    if (!(t >= 0.0)) throw DomainError("joint_moment: negative time");
    const std::size_t d = model.dim();
    for (const auto& f : fs)
        if (f.size() != d || !f.finite()) throw DomainError("joint_moment: functional must be finite with length d");

    const unsigned all = (1u << fs.size()) - 1;
    CVec value;
    RVec err;
    if (fs.size() == 1 || t == 0.0) {
        detail::MomentSolver solver(model, fs, t, 1, quad.rule);
        value = fs.size() == 1 ? semigroup_apply(mean_generator(model), t, fs[0]).values : solver.value(all);
        err = RVec::Zero(static_cast<Eigen::Index>(d));
    } else {
        const double floor = 1e-13 * detail::magnitude_scale(mean_generator(model), fs, t);
        auto solve = [&](int panels) {
            detail::MomentSolver solver(model, fs, t, panels, quad.rule);
            return solver.value(all);
        };
        std::tie(value, err) = detail::refine(solve, quad, floor, "joint_moment");
    }
    std::vector<MomentResult> out;
    for (std::size_t x = 0; x < d; ++x) {
        MomentResult r;
        r.value = value(static_cast<Eigen::Index>(x));
        r.est_error = err(static_cast<Eigen::Index>(x));
        r.k = static_cast<int>(fs.size());
        r.fs = fs;
        r.t = t;
        r.start_type = x;
        out.push_back(std::move(r));
    }
    return out;
}

/// eta^{(k)}_s[f_1..f_k] (without the branch rate), built from the lower
/// order moments at time s.
inline Functional eta_k(const BranchingModel& model, const std::vector<Functional>& fs, double s,
                        const QuadratureConfig& quad = {}) {
    detail::check_order(fs.size(), 2);
    quad.check();
    if (!(s >= 0.0)) throw DomainError("eta_k: negative time");
    const unsigned all = (1u << fs.size()) - 1;
    if (fs.size() == 2 || s == 0.0) {
        detail::MomentSolver solver(model, fs, s, 1, quad.rule);
        return Functional(solver.eta_end(all));
    }
    const double floor = 1e-13 * detail::magnitude_scale(mean_generator(model), fs, s);
    auto solve = [&](int panels) {
        detail::MomentSolver solver(model, fs, s, panels, quad.rule);
        return solver.eta_end(all);
    };
    return Functional(detail::refine(solve, quad, floor, "eta_k").first);
}

struct CovarianceResult {
    cplx value;
    double est_error = 0.0;
};

/// Cov_x(X_t[f], X_t[g]) for every start type x.
inline std::vector<CovarianceResult> covariance_xt(const BranchingModel& model, const Functional& f,
                                                   const Functional& g, double t, const QuadratureConfig& quad = {}) {
    const auto m2 = joint_moment(model, {f, g}, t, quad);
    const RMat a = mean_generator(model);
    const CVec mf = semigroup_apply(a, t, f).values;
    const CVec mg = semigroup_apply(a, t, g).values;
    std::vector<CovarianceResult> out;
    for (std::size_t x = 0; x < m2.size(); ++x) {
        const auto i = static_cast<Eigen::Index>(x);
        out.push_back({m2[x].value - mf(i) * mg(i), m2[x].est_error});
    }
    return out;
}

inline CVec covariance_vector(const BranchingModel& model, const Functional& f, const Functional& g, double t,
                              const QuadratureConfig& quad = {}, double* est_error = nullptr) {
    const auto c = covariance_xt(model, f, g, t, quad);
    CVec v(static_cast<Eigen::Index>(c.size()));
    double e = 0.0;
    for (std::size_t x = 0; x < c.size(); ++x) {
        v(static_cast<Eigen::Index>(x)) = c[x].value;
        e = std::max(e, c[x].est_error);
    }
    if (est_error) *est_error = e;
    return v;
}

}  // namespace bmfluct
