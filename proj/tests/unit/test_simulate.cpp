#include <gtest/gtest.h>

#include <cmath>

#include "bmfluct/canonical.hpp"
#include "bmfluct/simulate.hpp"

using namespace bmfluct;

namespace {

struct Stats {
    double mean = 0.0, var = 0.0;
    std::size_t n = 0;
    double se() const { return std::sqrt(var / static_cast<double>(n)); }
};

template <class F>
Stats collect(const ReplicaSet& rs, F&& value) {
    Stats s;
    double sum = 0.0, sq = 0.0;
    for (const auto& p : rs.paths) {
        if (p.capped) continue;
        const double v = value(p);
        sum += v;
        sq += v * v;
        ++s.n;
    }
    s.mean = sum / static_cast<double>(s.n);
    s.var = (sq - s.n * s.mean * s.mean) / static_cast<double>(s.n - 1);
    return s;
}

SimConfig config(std::vector<double> obs, int replicas, std::uint64_t seed = 11) {
    SimConfig c;
    c.observation_times = obs;
    c.horizon = obs.back();
    c.replicas = replicas;
    c.seed = seed;
    return c;
}

double count(const Trajectory& p, std::size_t obs, std::size_t type) {
    return static_cast<double>(p.states[obs].counts[type]);
}

}  // namespace

TEST(Simulate, FrozenModelIsConstant) {
    BranchingModel m = canonical::yule();
    m.gamma(0) = 0.0;
    const auto tr = simulate_path(m, 0, config({0.0, 1.0, 5.0}, 1));
    ASSERT_EQ(tr.states.size(), 3u);
    for (const auto& st : tr.states) EXPECT_EQ(st.counts[0], 1);
    EXPECT_EQ(tr.events, 0);
}

TEST(Simulate, YuleMean) {
    const auto rs = simulate_replicas(canonical::yule(), 0, config({2.0}, 100000));
    const auto s = collect(rs, [](const Trajectory& p) { return count(p, 0, 0); });
    EXPECT_LT(std::abs(s.mean - std::exp(2.0)), 3 * s.se()) << s.mean;
}

TEST(Simulate, PureDeathSurvival) {
    BranchingModel m = canonical::yule();
    m.offspring.per_type[0] = {{1.0, {0}}};
    const auto rs = simulate_replicas(m, 0, config({1.0}, 100000));
    const auto s = collect(rs, [](const Trajectory& p) { return count(p, 0, 0); });
    EXPECT_LT(std::abs(s.mean - std::exp(-1.0)), 3 * s.se());
}

TEST(Simulate, PureMotionOccupation) {
    BranchingModel m = canonical::model_m();
    m.gamma.setZero();
    const RMat p = expm(RMat(0.7 * m.motion.q));
    const auto rs = simulate_replicas(m, 0, config({0.7}, 100000));
    const auto s = collect(rs, [](const Trajectory& tr) { return count(tr, 0, 1); });
    EXPECT_LT(std::abs(s.mean - p(0, 1)), 3 * s.se());
}

TEST(Simulate, LeapLawMatchesMeanSemigroup) {
    for (const char* name : {"S", "L", "CT", "M", "R"}) {
        const auto model = canonical::by_name(name);
        const RMat e = expm(RMat(0.25 * mean_generator(model)));
        for (std::size_t x = 0; x < model.dim(); ++x) {
            const auto law = detail::leap_law(model, x, 0.25);
            EXPECT_LE(law.leaked, detail::kLeapLeak) << name;
            EXPECT_NEAR(law.tail[0], 1.0, 1e-14);
            for (std::size_t j = 1; j < law.prob.size(); ++j) ASSERT_LE(law.prob[j], law.prob[j - 1]);
            for (std::size_t y = 0; y < model.dim(); ++y) {
                double mean = 0.0;
                for (std::size_t j = 0; j < law.prob.size(); ++j) mean += law.prob[j] * law.outcomes[j][y];
                EXPECT_NEAR(mean, e(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)), 1e-12) << name;
            }
        }
    }
}

TEST(Simulate, LeapingMatchesExactMoments) {
    for (const char* name : {"S", "M", "R"}) {
        const auto model = canonical::by_name(name);
        auto cfg = config({1.5}, 40000, 5);
        cfg.leap_threshold = 1;
        const auto rs = simulate_replicas(model, 0, cfg);
        const Functional f = Functional::indicator(model.dim(), 0);
        const auto m1 = joint_moment(model, {f}, 1.5)[0].value.real();
        const auto m2 = joint_moment(model, {f, f}, 1.5)[0].value.real();
        const auto s1 = collect(rs, [](const Trajectory& p) { return count(p, 0, 0); });
        const auto s2 = collect(rs, [](const Trajectory& p) { return count(p, 0, 0) * count(p, 0, 0); });
        EXPECT_LT(std::abs(s1.mean - m1), 3 * s1.se()) << name;
        EXPECT_LT(std::abs(s2.mean - m2), 3 * s2.se()) << name;
    }
}

TEST(Simulate, DeterministicAcrossThreadCounts) {
    auto cfg = config({1.0, 3.0}, 200, 99);
    cfg.threads = 1;
    const auto a = simulate_replicas(canonical::model_m(), 1, cfg);
    cfg.threads = 3;
    const auto b = simulate_replicas(canonical::model_m(), 1, cfg);
    ASSERT_EQ(a.paths.size(), b.paths.size());
    for (std::size_t r = 0; r < a.paths.size(); ++r) {
        EXPECT_EQ(a.paths[r].events, b.paths[r].events);
        ASSERT_EQ(a.paths[r].states.size(), b.paths[r].states.size());
        for (std::size_t i = 0; i < a.paths[r].states.size(); ++i)
            EXPECT_EQ(a.paths[r].states[i].counts, b.paths[r].states[i].counts);
    }
    const auto single = simulate_path(canonical::model_m(), 1, cfg, 17);
    EXPECT_EQ(single.states.back().counts, a.paths[17].states.back().counts);
}

TEST(Simulate, CapFlagsReplica) {
    auto cfg = config({6.0}, 20);
    cfg.population_cap = 50;
    const auto rs = simulate_replicas(canonical::yule(), 0, cfg);
    EXPECT_GT(rs.capped_count(), 15u);
    for (const auto& p : rs.paths)
        if (p.capped) EXPECT_TRUE(p.states.empty());
}

TEST(Simulate, RejectsBadConfig) {
    EXPECT_THROW(simulate_path(canonical::yule(), 0, config({2.0, 1.0}, 1)), DomainError);
    auto cfg = config({1.0}, 1);
    cfg.horizon = 0.5;
    EXPECT_THROW(simulate_path(canonical::yule(), 0, cfg), DomainError);
    EXPECT_THROW(simulate_path(canonical::yule(), 3, config({1.0}, 1)), DomainError);
}

TEST(Simulate, YuleMartingaleUnitMean) {
    const auto es = canonical::eigen_for("Y");
    const auto rs = simulate_replicas(canonical::yule(), 0, config({0.0, 1.0, 2.0, 4.0}, 50000, 3));
    const auto first = martingale_path(es, rs.paths[0], 0, 0, 0);
    EXPECT_EQ(first[0].second, cplx(1.0));
    for (std::size_t i = 1; i < 4; ++i) {
        const auto s = collect(rs, [&](const Trajectory& p) { return martingale_path(es, p, 0, 0, 0)[i].second.real(); });
        EXPECT_LT(std::abs(s.mean - 1.0), 3 * s.se()) << i;
    }
}

TEST(Simulate, YuleLimitEstimates) {
    const auto es = canonical::eigen_for("Y");
    const double tw = 8.0;
    auto cfg = config(observation_plan({}, tw), 50000, 4);
    const auto rs = simulate_replicas(canonical::yule(), 0, cfg);
    const auto est = estimate_W(es, rs, 0, 0, 0, tw);
    double sum = 0.0, sq = 0.0, s4 = 0.0;
    for (const auto& w : est.value) sum += w.real();
    const double n = static_cast<double>(est.value.size());
    const double mean = sum / n;
    for (const auto& w : est.value) {
        sq += std::pow(w.real() - mean, 2);
        s4 += std::pow(w.real() - mean, 4);
    }
    const double var = sq / (n - 1);
    EXPECT_LT(std::abs(mean - 1.0), 3 * std::sqrt(var / n));
    // Var(e^{-T} N_T) = 1 - e^{-T}
    const double target = 1.0 - std::exp(-tw);
    EXPECT_LT(std::abs(var - target), 3 * std::sqrt((s4 / n - var * var) / n));
    for (double b : est.bias) EXPECT_GE(b, 0.0);
    EXPECT_THROW(estimate_W(es, rs, 0, 0, 0, 5.0), DomainError);
}

TEST(Simulate, EstimateWRejectsNonConvergent) {
    const auto es = canonical::eigen_for("S");
    auto cfg = config({1.0, 2.0}, 10);
    const auto rs = simulate_replicas(canonical::model_s(), 0, cfg);
    EXPECT_THROW(estimate_W(es, rs, 1, 0, 0, 2.0), PreconditionError);
}

TEST(Simulate, WHorizonRule) {
    EXPECT_NEAR(w_horizon(canonical::eigen_for("Y")), std::log(100.0), 1e-12);
    EXPECT_NEAR(w_horizon(canonical::eigen_for("S"), 9.0), 9.0 + std::log(1e4) / 2.0, 1e-12);
}

TEST(Simulate, SmallRegimeSeriesCentred) {
    const auto es = canonical::eigen_for("S");
    const double n = 8.0;
    const std::vector<double> grid{0.0, 0.5, 1.0};
    const double tw = w_horizon(es, n + 1.0);
    auto cfg = config(observation_plan({8.0, 8.5, 9.0}, tw), 4000, 21);
    cfg.population_cap = 100'000'000'000'000'000LL;
    const auto rs = simulate_replicas(canonical::model_s(), 0, cfg);
    const auto w = estimate_limits(es, rs, tw);
    const auto plan = plan_fluctuations(es, Functional{1.0, 0.0}, {Regime::small, n, std::nullopt}, grid, cfg);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double sum = 0.0, sq = 0.0;
        std::size_t cnt = 0;
        for (std::size_t r = 0; r < rs.paths.size(); ++r) {
            if (rs.paths[r].capped) continue;
            const double v = fluctuation_series(plan, rs.paths[r], w[r])[i].second.real();
            ASSERT_TRUE(std::isfinite(v));
            sum += v;
            sq += v * v;
            ++cnt;
        }
        const double mean = sum / cnt;
        const double se = std::sqrt((sq / cnt - mean * mean) / cnt);
        EXPECT_LT(std::abs(mean), 3 * se) << grid[i];
        EXPECT_NEAR(sq / cnt, 0.5, 0.1);  // kernel value at unit mean W
    }
    EXPECT_THROW(plan_fluctuations(es, Functional{1.0, 0.0}, {Regime::small, n, std::nullopt}, {0.25}, cfg),
                 DomainError);
    EXPECT_THROW(plan_fluctuations(es, Functional{1.0, 0.0}, {Regime::critical, n, std::nullopt}, grid, cfg),
                 PreconditionError);
}
