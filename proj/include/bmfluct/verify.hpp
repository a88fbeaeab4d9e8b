#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "bmfluct/simulate.hpp"

namespace bmfluct {

struct TestReport {
    std::string name;
    double observed = 0.0;
    double target = 0.0;
    double se = 0.0;         // standard error, or the bound for bound-type checks
    double p_value = -1.0;   // set by distributional tests
    double level = 0.0;
    bool pass = false;
    std::size_t replicas = 0;
    std::size_t dropped = 0;
    std::uint64_t seed = 0;
    std::string detail;
};

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Asymptotic Kolmogorov survival function with Stephens' finite-n correction.
inline double ks_p_value(double d, std::size_t n) {
    const double sn = std::sqrt(static_cast<double>(n));
    const double lam = (sn + 0.12 + 0.11 / sn) * d;
    if (lam < 1e-3) return 1.0;
    double sum = 0.0;
    for (int j = 1; j <= 200; ++j) {
        const double term = 2.0 * ((j % 2) ? 1.0 : -1.0) * std::exp(-2.0 * j * j * lam * lam);
        sum += term;
        if (std::abs(term) < 1e-18) break;
    }
    return std::clamp(sum, 0.0, 1.0);
}

/// Kolmogorov-Smirnov distance of a sample from the standard normal.
inline double ks_distance_normal(std::vector<double> x) {
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double f = normal_cdf(x[i]);
        d = std::max({d, (i + 1) / n - f, f - i / n});
    }
    return d;
}

struct MeanSE {
    double mean = 0.0;
    double se = 0.0;
};

inline MeanSE mean_se(const std::vector<double>& v) {
    MeanSE out;
    const double n = static_cast<double>(v.size());
    for (double x : v) out.mean += x;
    out.mean /= n;
    double sq = 0.0;
    for (double x : v) sq += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(sq / (n - 1) / n);
    return out;
}

/// Delete-one jackknife of a statistic of column means.
inline MeanSE jackknife(const std::vector<std::vector<double>>& columns,
                        const std::function<double(const std::vector<double>&)>& stat) {
    const std::size_t n = columns.front().size();
    const std::size_t c = columns.size();
    std::vector<double> sums(c, 0.0);
    for (std::size_t j = 0; j < c; ++j)
        for (double v : columns[j]) sums[j] += v;
    std::vector<double> means(c);
    for (std::size_t j = 0; j < c; ++j) means[j] = sums[j] / n;
    MeanSE out;
    out.mean = stat(means);
    std::vector<double> loo(n);
    std::vector<double> m(c);
    double avg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) m[j] = (sums[j] - columns[j][i]) / (n - 1.0);
        loo[i] = stat(m);
        avg += loo[i];
    }
    avg /= n;
    double sq = 0.0;
    for (double v : loo) sq += (v - avg) * (v - avg);
    out.se = std::sqrt((n - 1.0) / n * sq);
    return out;
}

inline constexpr std::size_t kMinReplicas = 100;

struct CovarianceEstimate {
    std::vector<double> grid;
    RMat value;  // mean of F(r) F(t)
    RMat se;
    std::size_t replicas = 0;
};

/// Mean over replicas of F(r) G(t) for real series, with jackknife errors.
inline CovarianceEstimate empirical_cov_conditional(const std::vector<std::vector<double>>& series_f,
                                                    const std::vector<std::vector<double>>& series_g,
                                                    const std::vector<double>& grid) {
    if (series_f.size() != series_g.size()) throw DomainError("series have different replica counts");
    if (series_f.size() < kMinReplicas) throw PreconditionError("at least 100 replicas are required");
    const auto g = static_cast<Eigen::Index>(grid.size());
    CovarianceEstimate out;
    out.grid = grid;
    out.replicas = series_f.size();
    out.value = RMat::Zero(g, g);
    out.se = RMat::Zero(g, g);
    std::vector<double> prod(series_f.size());
    for (Eigen::Index a = 0; a < g; ++a)
        for (Eigen::Index b = 0; b < g; ++b) {
            for (std::size_t r = 0; r < series_f.size(); ++r) {
                if (series_f[r].size() != grid.size() || series_g[r].size() != grid.size())
                    throw DomainError("series length does not match the grid");
                prod[r] = series_f[r][static_cast<std::size_t>(a)] * series_g[r][static_cast<std::size_t>(b)];
            }
            const auto ms = jackknife({prod}, [](const std::vector<double>& m) { return m[0]; });
            out.value(a, b) = ms.mean;
            out.se(a, b) = ms.se;
        }
    return out;
}

/// Per-entry comparison of F(r) G(t) against a per-replica linear-in-W target,
/// i.e. the kernel at the replica-mean W, with paired jackknife errors.
inline std::vector<TestReport> compare_kernel(const std::vector<std::vector<double>>& series_f,
                                              const std::vector<std::vector<double>>& series_g,
                                              const std::vector<std::vector<double>>& target_per_replica,
                                              const std::vector<double>& grid, double n_se = 3.0) {
    if (series_f.size() < kMinReplicas) throw PreconditionError("at least 100 replicas are required");
    const std::size_t g = grid.size();
    std::vector<TestReport> out;
    std::vector<double> prod(series_f.size()), tgt(series_f.size());
    for (std::size_t a = 0; a < g; ++a)
        for (std::size_t b = a; b < g; ++b) {
            for (std::size_t r = 0; r < series_f.size(); ++r) {
                prod[r] = series_f[r][a] * series_g[r][b];
                tgt[r] = target_per_replica[r][a * g + b];
            }
            const auto diff = jackknife({prod, tgt}, [](const std::vector<double>& m) { return m[0] - m[1]; });
            TestReport rep;
            std::ostringstream name;
            name << "cov(" << grid[a] << "," << grid[b] << ")";
            rep.name = name.str();
            rep.observed = diff.mean + mean_se(tgt).mean;
            rep.target = mean_se(tgt).mean;
            rep.se = diff.se;
            rep.pass = std::abs(diff.mean) <= n_se * diff.se;
            rep.replicas = series_f.size();
            out.push_back(rep);
        }
    return out;
}

/// KS normality of per-replica statistics standardized by their own target
/// variance, one test per grid column with Bonferroni correction.
inline TestReport gaussianity_check(const std::vector<std::vector<double>>& series,
                                    const std::vector<std::vector<double>>& target_variance, double level = 0.01) {
    if (series.empty()) throw PreconditionError("gaussianity_check: no replicas");
    const std::size_t g = series.front().size();
    TestReport rep;
    rep.name = "gaussianity";
    rep.level = level;
    rep.p_value = 1.0;
    double worst_d = 0.0;
    for (std::size_t c = 0; c < g; ++c) {
        std::vector<double> z;
        std::size_t dropped = 0;
        for (std::size_t r = 0; r < series.size(); ++r) {
            const double v = target_variance[r][c];
            if (!(v > 0.0) || !std::isfinite(series[r][c])) {
                ++dropped;
                continue;
            }
            z.push_back(series[r][c] / std::sqrt(v));
        }
        if (dropped > series.size() / 20)
            throw PreconditionError("gaussianity_check: more than 5% of replicas have degenerate target variance");
        rep.dropped = std::max(rep.dropped, dropped);
        const double d = ks_distance_normal(z);
        const double p = std::min(1.0, ks_p_value(d, z.size()) * static_cast<double>(g));
        rep.p_value = std::min(rep.p_value, p);
        worst_d = std::max(worst_d, d);
        rep.replicas = std::max(rep.replicas, z.size());
    }
    rep.observed = worst_d;
    rep.pass = rep.p_value >= level;
    std::ostringstream os;
    os << "Bonferroni-adjusted KS p-value over " << g << " grid points";
    rep.detail = os.str();
    return rep;
}

/// Centered discrete random vector.
struct DiscreteVector {
    std::vector<RVec> points;
    std::vector<double> probs;
};

inline DiscreteVector rademacher() {
    RVec a(1), b(1);
    a << -1.0;
    b << 1.0;
    return {{a, b}, {0.5, 0.5}};
}

inline double default_be_constant(int k) { return 42.0 * std::pow(static_cast<double>(k), 0.25); }

/// C_k sum_i E[ || Sigma_n^{-1/2} X_i ||^3 ] for independent centered summands.
inline double berry_esseen_bound(const std::vector<DiscreteVector>& summands, double c_k = -1.0) {
    if (summands.empty()) throw DomainError("berry_esseen_bound: no summands");
    const auto k = summands.front().points.front().size();
    RMat sigma = RMat::Zero(k, k);
    for (const auto& s : summands) {
        RVec mean = RVec::Zero(k);
        double total = 0.0;
        for (std::size_t i = 0; i < s.points.size(); ++i) {
            if (s.points[i].size() != k) throw DomainError("berry_esseen_bound: dimension mismatch");
            mean += s.probs[i] * s.points[i];
            total += s.probs[i];
        }
        if (std::abs(total - 1.0) > 1e-12) throw DomainError("berry_esseen_bound: probabilities must sum to 1");
        if (mean.cwiseAbs().maxCoeff() > 1e-12) throw DomainError("berry_esseen_bound: summands must be centered");
        for (std::size_t i = 0; i < s.points.size(); ++i) sigma += s.probs[i] * s.points[i] * s.points[i].transpose();
    }
    Eigen::SelfAdjointEigenSolver<RMat> eig(sigma);
    if (eig.eigenvalues().minCoeff() <= 1e-12 * sigma.trace())
        throw PreconditionError("berry_esseen_bound: covariance is degenerate");
    const RMat inv_sqrt = eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                          eig.eigenvectors().transpose();
    double sum = 0.0;
    for (const auto& s : summands)
        for (std::size_t i = 0; i < s.points.size(); ++i) sum += s.probs[i] * std::pow((inv_sqrt * s.points[i]).norm(), 3);
    if (c_k < 0.0) c_k = default_be_constant(static_cast<int>(k));
    return c_k * sum;
}

inline double berry_esseen_bound_iid(const DiscreteVector& x, std::size_t n, double c_k = -1.0) {
    return berry_esseen_bound(std::vector<DiscreteVector>(n, x), c_k);
}

/// Exact sup_x |P(S_n / sqrt(n) <= x) - Phi(x)| for a sum of n Rademacher signs.
inline double rademacher_kolmogorov_distance(std::size_t n) {
    const double nn = static_cast<double>(n);
    double cdf = 0.0, d = 0.0;
    for (std::size_t b = 0; b <= n; ++b) {
        const double x = (2.0 * b - nn) / std::sqrt(nn);
        const double lp = std::lgamma(nn + 1) - std::lgamma(b + 1.0) - std::lgamma(nn - b + 1) - nn * std::log(2.0);
        const double phi = normal_cdf(x);
        d = std::max(d, std::abs(cdf - phi));  // left limit at the jump
        cdf += std::exp(lp);
        d = std::max(d, std::abs(std::min(cdf, 1.0) - phi));
    }
    return d;
}

/// Paired SLLN residual e^{-lambda_1 t} t^{-(p_1-1)} X_t[f] - slln_limit(f, W) at each grid time.
/// At the last grid time its mean is compared with the exact finite-t expectation,
/// which is O(1/t) rather than zero when the leading block is a Jordan block.
inline TestReport slln_check(const BranchingModel& model, const EigenStructure& es, const Functional& f,
                             const ReplicaSet& rs, const std::vector<MartingaleLimitSet>& W,
                             const std::vector<double>& t_grid, double n_se = 3.0) {
    if (t_grid.empty()) throw DomainError("slln_check: empty grid");
    const double l1 = es.lambda[0].real();
    const int p1 = es.p(0);
    TestReport rep;
    rep.name = "slln";
    rep.seed = rs.config.seed;
    std::vector<double> mean_abs;
    MeanSE last;
    {
        const double t = t_grid.back();
        const double norm = std::exp(-l1 * t) * std::pow(t, -(p1 - 1));
        const cplx mean = semigroup_apply(mean_generator(model), t, f).values(static_cast<Eigen::Index>(rs.start_type));
        rep.target = (norm * mean - slln_limit(es, f, MartingaleLimitSet::expectation(es, rs.start_type))).real();
    }
    for (double t : t_grid) {
        const std::size_t obs = observation_index(rs.config, t);
        const double norm = std::exp(-l1 * t) * std::pow(t, -(p1 - 1));
        std::vector<double> res;
        double abs_sum = 0.0;
        for (std::size_t r = 0; r < rs.paths.size(); ++r) {
            const auto& p = rs.paths[r];
            if (p.capped || p.states.size() <= obs) continue;
            const cplx v = norm * p.states[obs].pair(f) - slln_limit(es, f, W[r]);
            res.push_back(v.real());
            abs_sum += std::abs(v);
        }
        if (res.size() < 2) throw PreconditionError("slln_check: too few usable replicas");
        mean_abs.push_back(abs_sum / res.size());
        last = mean_se(res);
        rep.replicas = res.size();
    }
    rep.dropped = rs.paths.size() - rep.replicas;
    rep.observed = last.mean;
    rep.se = last.se;
    rep.pass = std::abs(last.mean - rep.target) <= n_se * last.se + 1e-12 * std::abs(rep.target);
    std::ostringstream os;
    os << "mean |residual| by t:";
    for (std::size_t i = 0; i < t_grid.size(); ++i) os << " " << t_grid[i] << "->" << mean_abs[i];
    if (t_grid.size() > 1 && mean_abs.front() > 0.0 && mean_abs.back() > 0.0)
        os << "; log-decay slope "
           << (std::log(mean_abs.back()) - std::log(mean_abs.front())) / (t_grid.back() - t_grid.front());
    rep.detail = os.str();
    return rep;
}

/// Empirical E[prod_i X_t[f_i]] against the exact joint moment.
inline TestReport mc_vs_exact_moments(const BranchingModel& model, const std::vector<Functional>& fs, double t,
                                      const ReplicaSet& rs, double n_se = 3.0) {
    if (fs.size() > static_cast<std::size_t>(kMaxMomentOrder)) throw DomainError("moment order above 4");
    const std::size_t obs = observation_index(rs.config, t);
    std::vector<double> v;
    for (const auto& p : rs.paths) {
        if (p.capped || p.states.size() <= obs) continue;
        cplx prod = 1.0;
        for (const auto& f : fs) prod *= p.states[obs].pair(f);
        v.push_back(prod.real());
    }
    if (v.size() < 2) throw PreconditionError("mc_vs_exact_moments: too few usable replicas");
    const auto ms = mean_se(v);
    TestReport rep;
    rep.name = "moment k=" + std::to_string(fs.size());
    rep.observed = ms.mean;
    rep.target = joint_moment(model, fs, t)[rs.start_type].value.real();
    rep.se = ms.se;
    rep.replicas = v.size();
    rep.dropped = rs.paths.size() - v.size();
    rep.seed = rs.config.seed;
    rep.pass = std::abs(rep.observed - rep.target) <= n_se * rep.se;
    return rep;
}

}  // namespace bmfluct
