#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bmfluct/canonical.hpp"
#include "bmfluct/verify.hpp"

using namespace bmfluct;

namespace {

std::vector<std::vector<double>> normal_series(std::size_t n, std::size_t g, std::uint64_t seed, double sd = 1.0) {
    Philox rng = replica_rng(seed, 0);
    std::normal_distribution<double> z(0.0, sd);
    std::vector<std::vector<double>> out(n, std::vector<double>(g));
    for (auto& row : out)
        for (auto& v : row) v = z(rng);
    return out;
}

}  // namespace

TEST(Verify, KsPValueReference) {
    // Kolmogorov survival at lambda = 1.3581 is 0.05, at 1.6276 is 0.01
    EXPECT_NEAR(ks_p_value(1.3581 / (std::sqrt(1e8) + 0.12 + 0.11 / 1e4), 100000000), 0.05, 1e-4);
    EXPECT_NEAR(ks_p_value(1.6276 / (std::sqrt(1e8) + 0.12 + 0.11 / 1e4), 100000000), 0.01, 1e-4);
    EXPECT_DOUBLE_EQ(ks_p_value(0.0, 100), 1.0);
}

TEST(Verify, GaussianityAcceptsNormal) {
    const auto s = normal_series(5000, 3, 1, 2.0);
    const std::vector<std::vector<double>> var(5000, std::vector<double>(3, 4.0));
    const auto rep = gaussianity_check(s, var);
    EXPECT_TRUE(rep.pass) << rep.p_value;
}

TEST(Verify, GaussianityRejectsExponential) {
    Philox rng = replica_rng(3, 0);
    std::exponential_distribution<double> e(1.0);
    std::vector<std::vector<double>> s(10000, std::vector<double>(1));
    for (auto& row : s) row[0] = e(rng) - 1.0;
    const std::vector<std::vector<double>> var(10000, std::vector<double>(1, 1.0));
    EXPECT_FALSE(gaussianity_check(s, var).pass);
}

TEST(Verify, GaussianityRefusesDegenerateTargets) {
    const auto s = normal_series(200, 1, 2);
    std::vector<std::vector<double>> var(200, std::vector<double>(1, 1.0));
    for (int i = 0; i < 20; ++i) var[static_cast<std::size_t>(i)][0] = 0.0;
    EXPECT_THROW(gaussianity_check(s, var), PreconditionError);
    for (int i = 0; i < 20; ++i) var[static_cast<std::size_t>(i)][0] = i < 5 ? 0.0 : 1.0;
    EXPECT_EQ(gaussianity_check(s, var).dropped, 5u);
}

TEST(Verify, JackknifeOfMeanIsStandardError) {
    std::vector<double> v{1.0, 4.0, 2.0, 8.0, 5.0};
    const auto j = jackknife({v}, [](const std::vector<double>& m) { return m[0]; });
    const auto s = mean_se(v);
    EXPECT_NEAR(j.mean, s.mean, 1e-15);
    EXPECT_NEAR(j.se, s.se, 1e-14);
}

TEST(Verify, EmpiricalCovarianceShapes) {
    const auto f = normal_series(400, 2, 5);
    const auto c = empirical_cov_conditional(f, f, {0.0, 1.0});
    EXPECT_EQ(c.value(0, 1), c.value(1, 0));
    EXPECT_GE(c.value(0, 0), 0.0);
    const std::vector<std::vector<double>> zero(150, std::vector<double>(2, 0.0));
    EXPECT_EQ(empirical_cov_conditional(zero, zero, {0.0, 1.0}).value.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_THROW(empirical_cov_conditional(normal_series(50, 2, 1), normal_series(50, 2, 1), {0.0, 1.0}),
                 PreconditionError);
}

TEST(Verify, RademacherDistanceBelowBound) {
    for (std::size_t n : {100u, 10000u}) {
        const double d = rademacher_kolmogorov_distance(n);
        const double bound = berry_esseen_bound_iid(rademacher(), n);
        EXPECT_NEAR(bound, 42.0 / std::sqrt(static_cast<double>(n)), 1e-9);
        EXPECT_LE(d, bound);
        // the lattice jump at 0 dominates: about P(S_n = 0) / 2
        EXPECT_NEAR(d, 0.5 * std::sqrt(2.0 / (std::numbers::pi * n)), 0.2 / n + 1e-3);
    }
    // S_1 = +-1: the gap at x = -1 is 1/2 - Phi(-1)
    EXPECT_NEAR(rademacher_kolmogorov_distance(1), normal_cdf(1.0) - 0.5, 1e-15);
}

TEST(Verify, BerryEsseenScaleInvariantAndDegenerate) {
    auto x = rademacher();
    const double b = berry_esseen_bound_iid(x, 50);
    for (auto& p : x.points) p *= 7.0;
    EXPECT_NEAR(berry_esseen_bound_iid(x, 50), b, 1e-12);
    EXPECT_GT(berry_esseen_bound_iid(x, 40), berry_esseen_bound_iid(x, 50));
    RVec a(2), c(2);
    a << 1.0, 1.0;
    c << -1.0, -1.0;
    EXPECT_THROW(berry_esseen_bound({{{a, c}, {0.5, 0.5}}}), PreconditionError);
    EXPECT_NEAR(berry_esseen_bound_iid(rademacher(), 4, 1.0), 0.5, 1e-15);
}

TEST(Verify, MonteCarloMomentsYule) {
    SimConfig cfg;
    cfg.observation_times = {1.0};
    cfg.replicas = 100000;
    cfg.seed = 8;
    const auto rs = simulate_replicas(canonical::yule(), 0, cfg);
    const Functional one{1.0};
    const auto r2 = mc_vs_exact_moments(canonical::yule(), {one, one}, 1.0, rs);
    EXPECT_NEAR(r2.target, 2 * std::exp(2.0) - std::exp(1.0), 1e-6);
    EXPECT_TRUE(r2.pass) << r2.observed << " vs " << r2.target << " se " << r2.se;
    EXPECT_TRUE(mc_vs_exact_moments(canonical::yule(), {one}, 1.0, rs).pass);
}

TEST(Verify, SllnYule) {
    const auto es = canonical::eigen_for("Y");
    SimConfig cfg;
    cfg.observation_times = observation_plan({2.0, 4.0, 8.0}, 12.0);
    cfg.horizon = 12.0;
    cfg.replicas = 5000;
    cfg.seed = 12;
    cfg.population_cap = 1'000'000'000'000LL;
    const auto rs = simulate_replicas(canonical::yule(), 0, cfg);
    const auto w = estimate_limits(es, rs, 12.0);
    const auto rep = slln_check(canonical::yule(), es, Functional{1.0}, rs, w, {2.0, 4.0, 8.0});
    EXPECT_NEAR(rep.target, 0.0, 1e-12);
    EXPECT_TRUE(rep.pass) << rep.detail;
    EXPECT_NE(rep.detail.find("slope"), std::string::npos);
}
