#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "bmfluct/verify.hpp"

namespace bmfluct {

struct SuiteConfig {
    std::size_t start_type = 0;
    int replicas = 10000;
    std::uint64_t seed = 1;
    unsigned threads = 0;
    double n = 0.0;                // scaling parameter for small/critical series
    std::vector<double> grid;      // series times (large regime: process times)
    std::optional<Functional> f;   // default chosen per regime
    long long population_cap = 0;  // 0: suite default
};

/// Long-format row for plotting: (table, t, statistic, value).
struct PlotRow {
    std::string table;
    double t = 0.0;
    std::string statistic;
    double value = 0.0;
};

struct SuiteResult {
    Regime regime = Regime::large;
    std::vector<TestReport> reports;
    std::vector<PlotRow> plot;
    ReplicaSet replicas;
    double w_horizon = 0.0;
    Functional f;

    bool pass() const {
        for (const auto& r : reports)
            if (!r.pass) return false;
        return true;
    }
};

namespace detail {

inline Regime suite_regime(const RegimeReport& rep) {
    if (rep.m_C > rep.m_L) return Regime::critical;
    if (rep.m_L < rep.m) return Regime::small;
    return Regime::large;
}

inline SimConfig suite_sim_config(const SuiteConfig& sc, std::vector<double> obs, double horizon, long long cap) {
    SimConfig cfg;
    cfg.observation_times = std::move(obs);
    cfg.horizon = horizon;
    cfg.seed = sc.seed;
    cfg.replicas = sc.replicas;
    cfg.threads = sc.threads;
    cfg.population_cap = sc.population_cap > 0 ? sc.population_cap : cap;
    return cfg;
}

/// Kernel at unit leading limits, one matrix per leading dual index.
template <class Kernel>
std::vector<RMat> kernel_basis(const EigenStructure& es, const std::vector<double>& grid, Kernel&& kernel) {
    std::vector<RMat> out;
    const auto g = static_cast<Eigen::Index>(grid.size());
    for (int k = 0; k < es.kcount(0, 0); ++k) {
        auto unit = MartingaleLimitSet::expectation(es, 0);
        for (auto& row : unit.W)
            for (auto& col : row)
                for (auto& v : col) v = 0.0;
        unit.W[0][0][static_cast<std::size_t>(k)] = 1.0;
        RMat m(g, g);
        for (Eigen::Index a = 0; a < g; ++a)
            for (Eigen::Index b = 0; b < g; ++b) {
                const double r = grid[static_cast<std::size_t>(std::min(a, b))];
                const double t = grid[static_cast<std::size_t>(std::max(a, b))];
                m(a, b) = kernel(r, t, unit).real();
            }
        out.push_back(m);
    }
    return out;
}

inline SuiteResult fluctuation_suite(const BranchingModel& model, const EigenStructure& es, const SuiteConfig& sc,
                                     Regime regime) {
    SuiteResult res;
    res.regime = regime;
    const auto rep = classify_regimes(es);
    std::vector<double> grid = sc.grid;
    double n = sc.n;
    Functional f = Functional::indicator(model.dim(), sc.start_type);
    std::optional<CriticalClassification> crit;
    if (regime == Regime::small) {
        if (grid.empty()) grid = {0.0, 0.5, 1.0};
        if (n <= 0.0) n = 8.0;
        if (sc.f) f = *sc.f;
    } else {
        if (grid.empty()) grid = {0.5, 1.0};
        if (n <= 0.0) n = 12.0;
        f = sc.f ? *sc.f : Functional(es.phi(rep.m_L, 0, 0).real().cast<cplx>());
        crit = classify_ei(es, f);
    }
    res.f = f;
    std::vector<double> times;
    for (double t : grid) times.push_back(regime == Regime::small ? n + t : n * t);
    const double s_max = *std::max_element(times.begin(), times.end());
    res.w_horizon = w_horizon(es, s_max);
    const SimConfig cfg =
        suite_sim_config(sc, observation_plan(times, res.w_horizon), res.w_horizon, 100'000'000'000'000'000LL);
    res.replicas = simulate_replicas(model, sc.start_type, cfg);
    const auto limits = estimate_limits(es, res.replicas, res.w_horizon);
    const auto plan = plan_fluctuations(es, f, {regime, n, crit}, grid, cfg);

    std::vector<RMat> basis;
    if (regime == Regime::small)
        basis = kernel_basis(es, grid, [&](double r, double t, const MartingaleLimitSet& w) {
            return small_cov(es, model, r, t, f, f, w).plain;
        });
    else
        basis = kernel_basis(es, grid, [&](double r, double t, const MartingaleLimitSet& w) {
            return crit_cov(es, model, r, t, f, f, w).plain;
        });

    const std::size_t g = grid.size();
    // exact E[F_n(t)]: the centering uses E[W] = phi(x); nonzero at finite n
    std::vector<double> exact_mean;
    {
        const auto x = static_cast<Eigen::Index>(sc.start_type);
        const auto w_mean = MartingaleLimitSet::expectation(es, sc.start_type);
        for (const auto& pt : plan.points) {
            cplx centre = 0.0;
            for (const auto& [idx, c] : pt.centering) centre += c * w_mean.at(idx[0], idx[1], idx[2]);
            exact_mean.push_back((pt.scale * (semigroup_apply(mean_generator(model), pt.s, f).values(x) - centre)).real());
        }
    }
    std::vector<std::vector<double>> series, targets, variances;
    double w_sum = 0.0;
    for (std::size_t r = 0; r < res.replicas.paths.size(); ++r) {
        if (res.replicas.paths[r].capped) continue;
        std::vector<double> row;
        for (const auto& [t, v] : fluctuation_series(plan, res.replicas.paths[r], limits[r])) row.push_back(v.real());
        RMat target = RMat::Zero(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(g));
        for (std::size_t k = 0; k < basis.size(); ++k) target += limits[r].at(0, 0, static_cast<int>(k)).real() * basis[k];
        w_sum += limits[r].at(0, 0, 0).real();
        std::vector<double> flat(g * g), var(g);
        for (std::size_t a = 0; a < g; ++a) {
            for (std::size_t b = 0; b < g; ++b)
                flat[a * g + b] = target(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
            var[a] = flat[a * g + a];
        }
        series.push_back(std::move(row));
        targets.push_back(std::move(flat));
        variances.push_back(std::move(var));
    }
    const std::string tag = regime == Regime::small ? "small" : "critical";
    for (auto rep_k : compare_kernel(series, series, targets, grid)) {
        rep_k.name = tag + " " + rep_k.name;
        rep_k.seed = sc.seed;
        rep_k.dropped = res.replicas.capped_count();
        res.reports.push_back(rep_k);
    }
    if (regime == Regime::critical && g >= 2) {
        // lag structure: E[F(r)F(t)] / E[F(t)F(t)] against C4_{r,t} / C4_{t,t}
        const std::size_t last = g - 1;
        std::vector<double> cross, diag;
        for (const auto& row : series) {
            cross.push_back(row[0] * row[last]);
            diag.push_back(row[last] * row[last]);
        }
        const auto ratio = jackknife({cross, diag}, [](const std::vector<double>& m) { return m[0] / m[1]; });
        TestReport lag;
        lag.name = "critical lag ratio";
        lag.observed = ratio.mean;
        lag.target = c4(grid[0], grid[last], *crit, *crit, es.p(0)) / c4(grid[last], grid[last], *crit, *crit, es.p(0));
        lag.se = ratio.se;
        lag.pass = std::abs(lag.observed - lag.target) <= 3.0 * lag.se;
        lag.replicas = series.size();
        lag.seed = sc.seed;
        res.reports.push_back(lag);
    }
    double basis_norm = 0.0;
    for (const auto& b : basis) basis_norm = std::max(basis_norm, b.cwiseAbs().maxCoeff());
    if (basis_norm > 0.0) {
        auto gauss = gaussianity_check(series, variances);
        gauss.name = tag + " gaussianity";
        gauss.seed = sc.seed;
        res.reports.push_back(gauss);
    }

    for (std::size_t a = 0; a < g; ++a) {
        std::vector<double> col;
        for (const auto& row : series) col.push_back(row[a]);
        const auto ms = mean_se(col);
        double sq = 0.0, tgt = 0.0;
        for (std::size_t r = 0; r < series.size(); ++r) {
            sq += col[r] * col[r];
            tgt += targets[r][a * g + a];
        }
        res.plot.push_back({tag + "_series", grid[a], "mean", ms.mean});
        res.plot.push_back({tag + "_series", grid[a], "exact_mean", exact_mean[a]});
        res.plot.push_back({tag + "_series", grid[a], "second_moment", sq / series.size()});
        res.plot.push_back({tag + "_series", grid[a], "kernel_target", tgt / series.size()});
    }
    res.plot.push_back({tag + "_series", res.w_horizon, "mean_W", w_sum / series.size()});
    return res;
}

inline SuiteResult large_suite(const BranchingModel& model, const EigenStructure& es, const SuiteConfig& sc) {
    SuiteResult res;
    res.regime = Regime::large;
    std::vector<double> grid = sc.grid.empty() ? std::vector<double>{1.0, 2.0, 4.0} : sc.grid;
    res.f = sc.f ? *sc.f : Functional::constant(model.dim(), 1.0);
    res.w_horizon = std::max(w_horizon(es), *std::max_element(grid.begin(), grid.end()));
    const SimConfig cfg = suite_sim_config(sc, observation_plan(grid, res.w_horizon), res.w_horizon,
                                           100'000'000'000'000'000LL);
    res.replicas = simulate_replicas(model, sc.start_type, cfg);
    const auto& rs = res.replicas;
    const int m_L = classify_regimes(es).m_L;
    for (int i = 0; i < m_L; ++i)
        for (int j = 0; j < es.p(i); ++j)
            for (int k = 0; k < es.kcount(i, j); ++k) {
                const cplx target = es.phi(i, j, k)(static_cast<Eigen::Index>(sc.start_type));
                for (double t : grid) {
                    const std::size_t obs = observation_index(cfg, t);
                    const Functional mf = martingale_functional(es, i, j, k, t);
                    std::vector<double> v;
                    for (const auto& p : rs.paths)
                        if (!p.capped) v.push_back(p.states[obs].pair(mf).real());
                    const auto ms = mean_se(v);
                    TestReport rep;
                    std::ostringstream name;
                    name << "martingale (" << i + 1 << "," << j + 1 << "," << k + 1 << ") t=" << t;
                    rep.name = name.str();
                    rep.observed = ms.mean;
                    rep.target = target.real();
                    rep.se = ms.se;
                    rep.pass = std::abs(rep.observed - rep.target) <= 3.0 * rep.se + 1e-12;
                    rep.replicas = v.size();
                    rep.dropped = rs.capped_count();
                    rep.seed = sc.seed;
                    res.reports.push_back(rep);
                    res.plot.push_back({"martingale", t, name.str().substr(0, name.str().find(" t=")), ms.mean});
                }
            }
    const auto limits = estimate_limits(es, rs, res.w_horizon);
    res.reports.push_back(slln_check(model, es, res.f, rs, limits, grid));
    res.reports.push_back(mc_vs_exact_moments(model, {res.f}, grid.front(), rs));
    res.reports.push_back(mc_vs_exact_moments(model, {res.f, res.f}, grid.front(), rs));
    return res;
}

}  // namespace detail

/// Simulation-based checks of the limit theorem matching the model's regime.
inline SuiteResult run_suite(const BranchingModel& model, const EigenStructure& es, const SuiteConfig& sc) {
    const Regime regime = detail::suite_regime(classify_regimes(es));
    if (regime == Regime::large) return detail::large_suite(model, es, sc);
    return detail::fluctuation_suite(model, es, sc, regime);
}

}  // namespace bmfluct
