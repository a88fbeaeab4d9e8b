#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <utility>
#include <vector>

#include "bmfluct/error.hpp"

namespace bmfluct {

struct GaussRule {
    std::vector<double> nodes;    // on [0, 1]
    std::vector<double> weights;  // sum to 1
};

namespace detail {

inline GaussRule compute_gauss_legendre(int n) {
    GaussRule r;
    r.nodes.resize(static_cast<std::size_t>(n));
    r.weights.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) p0 = 1.0;
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        if (n == 1) p0 = 1.0;
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        r.nodes[static_cast<std::size_t>(i)] = 0.5 * (1.0 - x);
        r.weights[static_cast<std::size_t>(i)] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    return r;
}

}  // namespace detail

/// Gauss-Legendre rule mapped to [0,1], cached per node count.
inline const GaussRule& gauss_legendre(int n) {
    if (n < 1 || n > 64) throw DomainError("gauss_legendre: node count must be in [1, 64]");
    static std::mutex mu;
    static std::map<int, GaussRule> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, detail::compute_gauss_legendre(n)).first;
    return it->second;
}

/// Composite rule on [a, b] with `panels` equal panels.
template <class F>
auto integrate(F&& f, double a, double b, int panels, const GaussRule& rule) {
    const double h = (b - a) / panels;
    using R = decltype(f(a));
    R acc{};
    bool first = true;
    for (int p = 0; p < panels; ++p) {
        const double lo = a + p * h;
        for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
            R term = (h * rule.weights[q]) * f(lo + h * rule.nodes[q]);
            if (first) {
                acc = term;
                first = false;
            } else {
                acc = acc + term;
            }
        }
    }
    return acc;
}

struct AdaptiveResult {
    double value = 0.0;
    double error = 0.0;
};

/// Adaptive Gauss-Kronrod-free bisection using two Gauss rules per interval.
template <class F>
AdaptiveResult adaptive_integrate(F&& f, double a, double b, double abs_tol, int max_depth = 30,
                                  std::size_t max_intervals = 200000) {
    const auto& lo = gauss_legendre(10);
    const auto& hi = gauss_legendre(15);
    auto rule = [&](const GaussRule& r, double x0, double x1) {
        double s = 0.0;
        for (std::size_t q = 0; q < r.nodes.size(); ++q) s += r.weights[q] * f(x0 + (x1 - x0) * r.nodes[q]);
        return s * (x1 - x0);
    };
    auto rule_abs = [&](const GaussRule& r, double x0, double x1) {
        double s = 0.0;
        for (std::size_t q = 0; q < r.nodes.size(); ++q) s += r.weights[q] * std::abs(f(x0 + (x1 - x0) * r.nodes[q]));
        return s * (x1 - x0);
    };
    AdaptiveResult out;
    std::vector<std::pair<std::pair<double, double>, int>> stack{{{a, b}, 0}};
    std::size_t visited = 0;
    while (!stack.empty()) {
        ++visited;
        const auto [iv, depth] = stack.back();
        stack.pop_back();
        const double c = rule(lo, iv.first, iv.second);
        const double e = rule(hi, iv.first, iv.second);
        const double err = std::abs(c - e);
        const double width_share = (iv.second - iv.first) / (b - a);
        // below this the two rules differ only by rounding
        const double noise = 1e-14 * rule_abs(hi, iv.first, iv.second);
        if (err <= abs_tol * width_share || err <= noise || depth >= max_depth || visited >= max_intervals) {
            out.value += e;
            out.error += err;
            continue;
        }
        const double mid = 0.5 * (iv.first + iv.second);
        stack.push_back({{mid, iv.second}, depth + 1});
        stack.push_back({{iv.first, mid}, depth + 1});
    }
    return out;
}

}  // namespace bmfluct
