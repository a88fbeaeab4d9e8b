#pragma once

#include <map>
#include <vector>

#include "bmfluct/moments.hpp"

namespace bmfluct {

namespace detail {

using Exponent = std::vector<int>;

inline void enumerate_exponents(std::size_t d, int max_degree, Exponent& cur, std::size_t pos, int left,
                                std::vector<Exponent>& out) {
    if (pos == d) {
        out.push_back(cur);
        return;
    }
    for (int e = 0; e <= left; ++e) {
        cur[pos] = e;
        enumerate_exponents(d, max_degree, cur, pos + 1, left - e, out);
    }
    cur[pos] = 0;
}

/// Linear generator acting on the raw moments E[n^alpha], |alpha| <= K.
struct MomentSystem {
    std::vector<Exponent> basis;
    std::map<Exponent, int> index;
    RMat c;

    MomentSystem(const BranchingModel& model, int max_degree) {
        const std::size_t d = model.dim();
        Exponent cur(d, 0);
        enumerate_exponents(d, max_degree, cur, 0, max_degree, basis);
        for (std::size_t i = 0; i < basis.size(); ++i) index[basis[i]] = static_cast<int>(i);
        const auto n = static_cast<Eigen::Index>(basis.size());
        c = RMat::Zero(n, n);

        // rate * n_x * [(n + delta)^alpha - n^alpha]
        auto add_shift = [&](int row, const Exponent& alpha, std::size_t x, const std::vector<int>& delta,
                             double rate) {
            std::vector<std::pair<Exponent, double>> terms{{Exponent(d, 0), 1.0}};
            for (std::size_t z = 0; z < d; ++z) {
                std::vector<std::pair<Exponent, double>> next;
                for (const auto& [beta, coef] : terms)
                    for (int b = 0; b <= alpha[z]; ++b) {
                        const double f = binomial(alpha[z], b) * std::pow(static_cast<double>(delta[z]), alpha[z] - b);
                        if (f == 0.0) continue;
                        Exponent nb = beta;
                        nb[z] = b;
                        next.push_back({nb, coef * f});
                    }
                terms = std::move(next);
            }
            for (auto& [beta, coef] : terms) {
                if (beta == alpha) continue;
                ++beta[x];
                c(row, index.at(beta)) += rate * coef;
            }
        };

        for (std::size_t r = 0; r < basis.size(); ++r) {
            const auto& alpha = basis[r];
            for (std::size_t x = 0; x < d; ++x) {
                for (std::size_t y = 0; y < d; ++y) {
                    if (y == x) continue;
                    const double q = model.motion.q(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y));
                    if (q == 0.0) continue;
                    std::vector<int> delta(d, 0);
                    delta[x] = -1;
                    delta[y] = 1;
                    add_shift(static_cast<int>(r), alpha, x, delta, q);
                }
                const double g = model.gamma(static_cast<Eigen::Index>(x));
                if (g == 0.0) continue;
                for (const auto& o : model.offspring.per_type[x]) {
                    std::vector<int> delta = o.children;
                    --delta[x];
                    add_shift(static_cast<int>(r), alpha, x, delta, g * o.probability);
                }
            }
        }
    }
};

/// Dormand-Prince 5(4) with step control on y' = C y.
inline RMat integrate_linear(const RMat& c, RMat y, double t, double rtol, RMat* err_acc) {
    static constexpr double a21 = 1.0 / 5, a31 = 3.0 / 40, a32 = 9.0 / 40, a41 = 44.0 / 45, a42 = -56.0 / 15,
                            a43 = 32.0 / 9, a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729, a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656, b1 = 35.0 / 384, b3 = 500.0 / 1113,
                            b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84, e1 = 71.0 / 57600,
                            e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200, e6 = 22.0 / 525,
                            e7 = -1.0 / 40;
    RMat acc = RMat::Zero(y.rows(), y.cols());
    if (t == 0.0) {
        if (err_acc) *err_acc = acc;
        return y;
    }
    const double norm_c = c.cwiseAbs().rowwise().sum().maxCoeff();
    double h = std::min(t, 0.01 / std::max(norm_c, 1e-12));
    double s = 0.0;
    RMat k1 = c * y;
    const double floor = 1e-13 * t;
    while (s < t) {
        if (s + h > t) h = t - s;
        const RMat k2 = c * (y + h * (a21 * k1));
        const RMat k3 = c * (y + h * (a31 * k1 + a32 * k2));
        const RMat k4 = c * (y + h * (a41 * k1 + a42 * k2 + a43 * k3));
        const RMat k5 = c * (y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
        const RMat k6 = c * (y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
        const RMat y5 = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        const RMat k7 = c * y5;
        const RMat err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        RMat scale = rtol * y.cwiseAbs().cwiseMax(y5.cwiseAbs());
        for (Eigen::Index col = 0; col < y.cols(); ++col)
            scale.col(col).array() += 1e-3 * rtol * y5.col(col).cwiseAbs().maxCoeff() + 1e-300;
        const double ratio = (err.cwiseAbs().array() / scale.array()).maxCoeff();
        if (ratio <= 1.0) {
            s += h;
            y = y5;
            k1 = k7;
            acc += err.cwiseAbs();
        }
        const double fac = ratio == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(ratio, -0.2), 0.2, 5.0);
        h *= fac;
        if (s < t && h < floor) throw NumericalError("moment ODE: step-size floor hit at t=" + std::to_string(s));
    }
    if (err_acc) *err_acc = acc;
    return y;
}

}  // namespace detail

/// Joint moments from the closed linear system for raw moments of the
/// type-count vector.
inline std::vector<MomentResult> moment_ode_oracle(const BranchingModel& model, const std::vector<Functional>& fs,
                                                   double t, double rtol = 1e-12) {
    detail::check_order(fs.size(), 1);
    if (!(t >= 0.0)) throw DomainError("moment_ode_oracle: negative time");
    require_valid(model);
    const std::size_t d = model.dim();
    const int k = static_cast<int>(fs.size());
    detail::MomentSystem sys(model, k);
    const auto nb = static_cast<Eigen::Index>(sys.basis.size());

    RMat y0 = RMat::Zero(nb, static_cast<Eigen::Index>(d));
    for (Eigen::Index r = 0; r < nb; ++r) {
        const auto& alpha = sys.basis[static_cast<std::size_t>(r)];
        for (std::size_t x = 0; x < d; ++x) {
            bool only_x = true;
            for (std::size_t z = 0; z < d; ++z)
                if (z != x && alpha[z] != 0) only_x = false;
            if (only_x) y0(r, static_cast<Eigen::Index>(x)) = 1.0;
        }
    }
    RMat err;
    const RMat y = detail::integrate_linear(sys.c, y0, t, rtol, &err);

    std::vector<MomentResult> out(d);
    for (std::size_t x = 0; x < d; ++x) {
        out[x].k = k;
        out[x].fs = fs;
        out[x].t = t;
        out[x].start_type = x;
        out[x].value = 0.0;
    }
    std::vector<int> idx(static_cast<std::size_t>(k), 0);
    while (true) {
        detail::Exponent alpha(d, 0);
        cplx w = 1.0;
        for (int i = 0; i < k; ++i) {
            ++alpha[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
            w *= fs[static_cast<std::size_t>(i)](static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]));
        }
        const int r = sys.index.at(alpha);
        for (std::size_t x = 0; x < d; ++x) {
            out[x].value += w * y(r, static_cast<Eigen::Index>(x));
            out[x].est_error += std::abs(w) * (err(r, static_cast<Eigen::Index>(x)) +
                                               1e-15 * std::abs(y(r, static_cast<Eigen::Index>(x))));
        }
        std::size_t pos = 0;
        while (pos < idx.size() && ++idx[pos] == static_cast<int>(d)) idx[pos++] = 0;
        if (pos == idx.size()) break;
    }
    return out;
}

}  // namespace bmfluct
