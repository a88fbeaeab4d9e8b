#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <random>
#include <thread>
#include <vector>

#include "bmfluct/limits.hpp"
#include "bmfluct/rng.hpp"

namespace bmfluct {

struct SimConfig {
    double horizon = 1.0;
    std::vector<double> observation_times;
    std::uint64_t seed = 1;
    long long population_cap = 10'000'000;
    int replicas = 1;
    /// Switch from event-by-event simulation to exact multinomial leaps once
    /// the population reaches this size at a leap-grid point; 0 disables.
    long long leap_threshold = 1024;
    double leap_step = 0.25;
    unsigned threads = 0;  // 0: hardware concurrency

    void check() const {
        if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw DomainError("horizon must be finite and >= 0");
        if (population_cap < 1) throw DomainError("population_cap must be >= 1");
        if (replicas < 1) throw DomainError("replicas must be >= 1");
        if (!(leap_step > 0.0)) throw DomainError("leap_step must be > 0");
        for (std::size_t i = 0; i < observation_times.size(); ++i) {
            const double t = observation_times[i];
            if (!(t >= 0.0 && t <= horizon)) throw DomainError("observation time outside [0, horizon]");
            if (i > 0 && !(t > observation_times[i - 1]))
                throw DomainError("observation times must be strictly increasing");
        }
    }
};

struct Trajectory {
    std::vector<PopulationState> states;  // one per observation time reached before capping
    long long events = 0;
    bool capped = false;
};

struct ReplicaSet {
    SimConfig config;
    std::size_t start_type = 0;
    std::vector<Trajectory> paths;
    std::vector<std::uint64_t> stream_keys;

    std::size_t capped_count() const {
        return static_cast<std::size_t>(std::count_if(paths.begin(), paths.end(), [](const auto& p) { return p.capped; }));
    }
};

namespace detail {

inline constexpr double kLeapLeak = 1e-18;

/// Law of the type counts of one particle's descendants after time h.
struct LeapLaw {
    std::vector<std::vector<long long>> outcomes;  // sorted by decreasing probability
    std::vector<double> prob;
    std::vector<double> tail;  // tail[j] = sum_{l >= j} prob[l]
    double leaked = 0.0;
};

inline LeapLaw uniformized_law(const BranchingModel& model, std::size_t x, double h, int max_total) {
    const std::size_t d = model.dim();
    std::map<std::vector<int>, int> index;
    std::vector<std::vector<int>> states;
    struct Move {
        int from, to;  // to = -1: left the lattice
        double rate;
    };
    std::vector<Move> moves;
    std::vector<double> exit;
    auto intern = [&](const std::vector<int>& s) {
        auto [it, fresh] = index.emplace(s, static_cast<int>(states.size()));
        if (fresh) {
            states.push_back(s);
            exit.push_back(0.0);
        }
        return it->second;
    };
    std::vector<int> start(d, 0);
    start[x] = 1;
    intern(start);
    for (std::size_t s = 0; s < states.size(); ++s) {
        if (states.size() > 2'000'000) throw NumericalError("leap transition lattice exceeds 2e6 states");
        const std::vector<int> cur = states[s];
        int total = 0;
        for (int c : cur) total += c;
        for (std::size_t y = 0; y < d; ++y) {
            if (cur[y] == 0) continue;
            const auto yi = static_cast<Eigen::Index>(y);
            for (std::size_t z = 0; z < d; ++z) {
                if (z == y) continue;
                const double q = model.motion.q(yi, static_cast<Eigen::Index>(z));
                if (q <= 0.0) continue;
                std::vector<int> nxt = cur;
                --nxt[y];
                ++nxt[z];
                const int to = intern(nxt);
                moves.push_back({static_cast<int>(s), to, cur[y] * q});
                exit[s] += cur[y] * q;
            }
            const double g = model.gamma(yi);
            if (g <= 0.0) continue;
            for (const auto& o : model.offspring.per_type[y]) {
                if (o.probability <= 0.0) continue;
                const double rate = cur[y] * g * o.probability;
                exit[s] += rate;
                std::vector<int> nxt = cur;
                --nxt[y];
                int nt = total - 1;
                for (std::size_t z = 0; z < d; ++z) {
                    nxt[z] += o.children[z];
                    nt += o.children[z];
                }
                if (nxt == cur) {
                    exit[s] -= rate;  // a single child of the parent's type changes nothing
                    continue;
                }
                moves.push_back({static_cast<int>(s), nt > max_total ? -1 : intern(nxt), rate});
            }
        }
    }
    double lam = 0.0;
    for (double e : exit) lam = std::max(lam, e);
    const std::size_t ns = states.size();
    std::vector<double> acc(ns, 0.0), v(ns, 0.0), nv(ns);
    v[0] = 1.0;
    double out_v = 0.0, out_acc = 0.0;
    if (lam == 0.0) {
        acc = v;
    } else {
        const double mean = lam * h;
        const int kmax = static_cast<int>(mean + 12.0 * std::sqrt(mean) + 60.0);
        for (int k = 0; k <= kmax; ++k) {
            const double w = std::exp(-mean + k * std::log(mean) - std::lgamma(k + 1.0));
            for (std::size_t s = 0; s < ns; ++s) acc[s] += w * v[s];
            out_acc += w * out_v;
            if (k == kmax) break;
            for (std::size_t s = 0; s < ns; ++s) nv[s] = v[s] * (1.0 - exit[s] / lam);
            for (const auto& mv : moves) {
                const double flow = v[static_cast<std::size_t>(mv.from)] * mv.rate / lam;
                if (mv.to < 0)
                    out_v += flow;
                else
                    nv[static_cast<std::size_t>(mv.to)] += flow;
            }
            std::swap(v, nv);
        }
        // Chernoff bound on the Poisson tail beyond kmax
        out_acc += std::exp(kmax * std::log(std::exp(1.0) * mean / kmax) - mean);
    }
    LeapLaw law;
    std::vector<std::size_t> order(ns);
    for (std::size_t s = 0; s < ns; ++s) order[s] = s;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return acc[a] > acc[b]; });
    double kept = 0.0, dropped = 0.0;
    for (std::size_t s : order) {
        if (acc[s] < 1e-30) {
            dropped += std::max(acc[s], 0.0);
            continue;
        }
        law.outcomes.emplace_back(states[s].begin(), states[s].end());
        law.prob.push_back(acc[s]);
        kept += acc[s];
    }
    law.leaked = std::max(out_acc, 0.0) + dropped;
    for (double& p : law.prob) p /= kept;
    law.tail.assign(law.prob.size() + 1, 0.0);
    for (std::size_t j = law.prob.size(); j-- > 0;) law.tail[j] = law.tail[j + 1] + law.prob[j];
    return law;
}

inline LeapLaw leap_law(const BranchingModel& model, std::size_t x, double h) {
    for (int total = 32; total <= (1 << 14); total *= 2) {
        LeapLaw law = uniformized_law(model, x, h, total);
        if (law.leaked <= kLeapLeak) return law;
    }
    throw NumericalError("leap step " + std::to_string(h) + " needs an oversized transition table; reduce leap_step");
}

/// Model tables for the event-driven and leap samplers.
class Sampler {
public:
    explicit Sampler(const BranchingModel& model) : model_(model), d_(model.dim()) {
        for (std::size_t x = 0; x < d_; ++x) {
            const auto xi = static_cast<Eigen::Index>(x);
            const double out_rate = -model.motion.q(xi, xi);
            rate_.push_back(out_rate + model.gamma(xi));
            branch_share_.push_back(rate_.back() > 0.0 ? model.gamma(xi) / rate_.back() : 0.0);
            std::vector<double> cum;
            std::vector<std::size_t> dest;
            double c = 0.0;
            for (std::size_t y = 0; y < d_; ++y) {
                if (y == x) continue;
                const double q = model.motion.q(xi, static_cast<Eigen::Index>(y));
                if (q <= 0.0) continue;
                c += q;
                cum.push_back(c);
                dest.push_back(y);
            }
            motion_cum_.push_back(cum);
            motion_dest_.push_back(dest);
            std::vector<double> oc;
            c = 0.0;
            for (const auto& o : model.offspring.per_type[x]) oc.push_back(c += o.probability);
            offspring_cum_.push_back(oc);
        }
    }

    void prepare(double h) {
        if (laws_.count(h)) return;
        std::vector<LeapLaw> per_type;
        for (std::size_t x = 0; x < d_; ++x) per_type.push_back(leap_law(model_, x, h));
        laws_.emplace(h, std::move(per_type));
    }

    /// Event-driven evolution on [t, until]; returns false if the cap was exceeded.
    bool run_events(std::vector<long long>& n, double& t, double until, long long cap, long long& events,
                    Philox& rng) const {
        while (true) {
            double total_rate = 0.0;
            for (std::size_t x = 0; x < d_; ++x) total_rate += static_cast<double>(n[x]) * rate_[x];
            if (total_rate <= 0.0) {
                t = until;
                return true;
            }
            const double dt = -std::log(rng.uniform()) / total_rate;
            if (t + dt >= until) {
                t = until;
                return true;
            }
            t += dt;
            ++events;
            double u = rng.uniform() * total_rate;
            std::size_t x = 0;
            for (; x + 1 < d_; ++x) {
                const double r = static_cast<double>(n[x]) * rate_[x];
                if (u < r) break;
                u -= r;
            }
            while (n[x] == 0) --x;  // guard against rounding at the boundary
            if (rng.uniform() < branch_share_[x]) {
                const auto& cum = offspring_cum_[x];
                const double v = rng.uniform() * cum.back();
                const auto o = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), v) - cum.begin());
                const auto& children = model_.offspring.per_type[x][std::min(o, cum.size() - 1)].children;
                --n[x];
                long long sum = 0;
                for (std::size_t y = 0; y < d_; ++y) {
                    n[y] += children[y];
                    sum += n[y];
                }
                if (sum > cap) return false;
            } else {
                const auto& cum = motion_cum_[x];
                const double v = rng.uniform() * cum.back();
                const auto k = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), v) - cum.begin());
                --n[x];
                ++n[motion_dest_[x][std::min(k, cum.size() - 1)]];
            }
        }
    }

    /// Exact transition of all particles over a step h (multinomial per type).
    void leap(std::vector<long long>& n, double h, Philox& rng) const {
        const auto& laws = laws_.at(h);
        std::vector<long long> out(d_, 0);
        for (std::size_t x = 0; x < d_; ++x) {
            long long left = n[x];
            const auto& law = laws[x];
            for (std::size_t j = 0; j < law.prob.size() && left > 0; ++j) {
                if (left <= 16) {
                    for (; left > 0; --left) {
                        double u = rng.uniform() * law.tail[j];
                        std::size_t l = j;
                        while (l + 1 < law.prob.size() && u >= law.prob[l]) u -= law.prob[l++];
                        for (std::size_t y = 0; y < d_; ++y) out[y] += law.outcomes[l][y];
                    }
                    break;
                }
                const double p = std::min(1.0, law.prob[j] / law.tail[j]);
                long long c = left;
                if (p < 1.0) c = std::binomial_distribution<long long>(left, p)(rng);
                left -= c;
                if (c > 0)
                    for (std::size_t y = 0; y < d_; ++y) out[y] += c * law.outcomes[j][y];
            }
        }
        n = std::move(out);
    }

    std::size_t dim() const { return d_; }

private:
    const BranchingModel& model_;
    std::size_t d_;
    std::vector<double> rate_, branch_share_;
    std::vector<std::vector<double>> motion_cum_, offspring_cum_;
    std::vector<std::vector<std::size_t>> motion_dest_;
    std::map<double, std::vector<LeapLaw>> laws_;
};

/// Observation times refined so that consecutive points are at most `step` apart.
inline std::vector<std::pair<double, int>> leap_grid(const SimConfig& cfg) {
    std::vector<std::pair<double, int>> grid;  // (time, observation index or -1)
    double prev = 0.0;
    auto add_gap = [&](double to, int obs) {
        const double gap = to - prev;
        const int steps = gap > 0.0 ? static_cast<int>(std::ceil(gap / cfg.leap_step - 1e-12)) : 0;
        for (int s = 1; s < steps; ++s) grid.push_back({prev + gap * s / steps, -1});
        grid.push_back({to, obs});
        prev = to;
    };
    for (std::size_t i = 0; i < cfg.observation_times.size(); ++i) add_gap(cfg.observation_times[i], static_cast<int>(i));
    if (cfg.horizon > prev) add_gap(cfg.horizon, -1);
    return grid;
}

inline std::vector<double> leap_steps(const SimConfig& cfg) {
    std::vector<double> hs;
    double prev = 0.0;
    for (const auto& [t, obs] : leap_grid(cfg)) {
        hs.push_back(t - prev);
        prev = t;
    }
    return hs;
}

inline Trajectory run_path(const Sampler& sampler, std::vector<long long> n, const SimConfig& cfg, Philox& rng) {
    Trajectory tr;
    double t = 0.0;
    bool leaping = false;
    for (const auto& [point, obs] : leap_grid(cfg)) {
        const double h = point - t;
        if (leaping) {
            if (h > 0.0) sampler.leap(n, h, rng);
            t = point;
            long long total = 0;
            for (long long c : n) total += c;
            if (total > cfg.population_cap) {
                tr.capped = true;
                return tr;
            }
        } else if (!sampler.run_events(n, t, point, cfg.population_cap, tr.events, rng)) {
            tr.capped = true;
            return tr;
        }
        t = point;
        if (obs >= 0) tr.states.push_back({n, t});
        long long total = 0;
        for (long long c : n) total += c;
        if (cfg.leap_threshold > 0 && total >= cfg.leap_threshold) leaping = true;
    }
    return tr;
}

inline void prepare_sampler(Sampler& sampler, const SimConfig& cfg) {
    if (cfg.leap_threshold <= 0) return;
    for (double h : leap_steps(cfg))
        if (h > 0.0) sampler.prepare(h);
}

}  // namespace detail

inline Trajectory simulate_path(const BranchingModel& model, std::size_t start_type, const SimConfig& cfg,
                                std::uint64_t replica = 0) {
    require_valid(model, 1);
    cfg.check();
    if (start_type >= model.dim()) throw DomainError("start type out of range");
    detail::Sampler sampler(model);
    detail::prepare_sampler(sampler, cfg);
    std::vector<long long> n(model.dim(), 0);
    n[start_type] = 1;
    Philox rng = replica_rng(cfg.seed, replica);
    return detail::run_path(sampler, std::move(n), cfg, rng);
}

/// Runs cfg.replicas independent paths; results depend only on (model, cfg), not on thread count.
inline ReplicaSet simulate_replicas(const BranchingModel& model, std::size_t start_type, const SimConfig& cfg) {
    require_valid(model, 1);
    cfg.check();
    if (start_type >= model.dim()) throw DomainError("start type out of range");
    detail::Sampler sampler(model);
    detail::prepare_sampler(sampler, cfg);
    ReplicaSet rs;
    rs.config = cfg;
    rs.start_type = start_type;
    rs.paths.resize(static_cast<std::size_t>(cfg.replicas));
    for (int r = 0; r < cfg.replicas; ++r) rs.stream_keys.push_back(stream_key(cfg.seed, static_cast<std::uint64_t>(r)));
    unsigned threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(cfg.replicas));
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int r = next++; r < cfg.replicas; r = next++) {
            std::vector<long long> n(model.dim(), 0);
            n[start_type] = 1;
            Philox rng = replica_rng(cfg.seed, static_cast<std::uint64_t>(r));
            rs.paths[static_cast<std::size_t>(r)] = detail::run_path(sampler, std::move(n), cfg, rng);
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return rs;
}

/// Index of the observation at time s, or an error if s was not observed.
inline std::size_t observation_index(const SimConfig& cfg, double s) {
    for (std::size_t i = 0; i < cfg.observation_times.size(); ++i)
        if (std::abs(cfg.observation_times[i] - s) <= 1e-9 * std::max(1.0, s)) return i;
    throw DomainError("time " + std::to_string(s) + " is not an observation time; interpolation refused");
}

inline std::vector<std::pair<double, cplx>> martingale_path(const EigenStructure& es, const Trajectory& tr, int i,
                                                            int j, int k) {
    detail::require_indices(es, i, j, k);
    std::vector<std::pair<double, cplx>> out;
    for (const auto& st : tr.states) out.push_back({st.time, st.pair(martingale_functional(es, i, j, k, st.time))});
    return out;
}

/// T_W: smallest horizon with e^{(lambda_1 - 2 Re lambda_{m_L}) T} < 0.01, raised
/// to s_max + ln(1e4)/lambda_1 so that plug-in error at the latest series time is small.
inline double w_horizon(const EigenStructure& es, double s_max = 0.0) {
    const auto rep = classify_regimes(es);
    const double l1 = es.lambda[0].real();
    const double rate = 2.0 * es.lambda[static_cast<std::size_t>(rep.m_L - 1)].real() - l1;
    const double rule = rate > 0.0 ? std::log(100.0) / rate : 0.0;
    return std::max(rule, s_max > 0.0 ? s_max + std::log(1e4) / l1 : 0.0);
}

struct WEstimates {
    std::vector<cplx> value;  // per replica; 0 for capped replicas
    std::vector<double> bias;
    std::vector<bool> usable;
};

inline WEstimates estimate_W(const EigenStructure& es, const ReplicaSet& rs, int i, int j, int k, double t_w) {
    detail::require_indices(es, i, j, k);
    if (i >= classify_regimes(es).m_L) throw PreconditionError("martingale not convergent in this regime");
    const std::size_t at = observation_index(rs.config, t_w);
    const std::size_t half = observation_index(rs.config, t_w / 2);
    const Functional full = martingale_functional(es, i, j, k, t_w);
    const Functional mid = martingale_functional(es, i, j, k, t_w / 2);
    WEstimates out;
    for (const auto& p : rs.paths) {
        const bool ok = !p.capped && p.states.size() > at;
        out.usable.push_back(ok);
        if (!ok) {
            out.value.push_back(0.0);
            out.bias.push_back(0.0);
            continue;
        }
        const cplx w = p.states[at].pair(full);
        out.value.push_back(w);
        out.bias.push_back(std::abs(w - p.states[half].pair(mid)));
    }
    return out;
}

/// Per-replica limit sets for every large-regime triple.
inline std::vector<MartingaleLimitSet> estimate_limits(const EigenStructure& es, const ReplicaSet& rs, double t_w) {
    const int m_L = classify_regimes(es).m_L;
    std::vector<MartingaleLimitSet> out(rs.paths.size());
    for (auto& s : out) s.provenance = Provenance::simulation;
    for (int i = 0; i < m_L; ++i) {
        for (auto& s : out) s.W.emplace_back();
        for (int j = 0; j < es.p(i); ++j) {
            for (auto& s : out) s.W.back().emplace_back();
            for (int k = 0; k < es.kcount(i, j); ++k) {
                const auto est = estimate_W(es, rs, i, j, k, t_w);
                for (std::size_t r = 0; r < out.size(); ++r) out[r].W.back().back().push_back(est.value[r]);
            }
        }
    }
    return out;
}

struct SeriesSpec {
    Regime regime = Regime::large;
    double n = 0.0;
    std::optional<CriticalClassification> critical;
};

/// Precomputed normalization and centering coefficients for one functional.
struct FluctuationPlan {
    struct Point {
        double t = 0.0;
        double s = 0.0;        // process time
        std::size_t obs = 0;   // observation index of s
        cplx scale;
        std::vector<std::pair<std::array<int, 3>, cplx>> centering;  // coefficient of W_{i,j}^{(k)}
    };
    Functional f;
    std::vector<Point> points;
};

inline FluctuationPlan plan_fluctuations(const EigenStructure& es, const Functional& f, const SeriesSpec& spec,
                                         const std::vector<double>& t_grid, const SimConfig& cfg) {
    const auto rep = classify_regimes(es);
    const double l1 = es.lambda[0].real();
    const int p1 = es.p(0);
    if (spec.regime == Regime::small && !(rep.m_L == rep.m_C && rep.m_C < rep.m))
        throw PreconditionError("small-regime series requires m_L = m_C < m (" + rep.summary() + ")");
    if (spec.regime == Regime::critical) {
        if (!(rep.m_C > rep.m_L)) throw PreconditionError("critical series requires a critical eigenvalue");
        if (!spec.critical) throw PreconditionError("critical series requires a classification of f");
    }
    if (spec.regime != Regime::large && !(spec.n > 0.0)) throw DomainError("series requires n > 0");
    FluctuationPlan plan;
    plan.f = f;
    for (double t : t_grid) {
        FluctuationPlan::Point pt;
        pt.t = t;
        switch (spec.regime) {
            case Regime::large:
                pt.s = t;
                pt.scale = std::exp(-es.lambda[static_cast<std::size_t>(rep.m_L - 1)].real() * t);
                break;
            case Regime::small:
                pt.s = spec.n + t;
                pt.scale = std::exp(-0.5 * l1 * pt.s) * std::pow(spec.n, -0.5 * (p1 - 1));
                break;
            case Regime::critical:
                pt.s = spec.n * t;
                pt.scale = std::exp(-spec.critical->lambda_f * pt.s) *
                           std::pow(spec.n, -0.5 * (2 * spec.critical->p_f + p1 - 2));
                break;
        }
        if (!(pt.s >= 0.0)) throw DomainError("series time must be >= 0");
        pt.obs = observation_index(cfg, pt.s);
        const CVec ef = es.exp_nilpotent(pt.s) * f.values;
        for (int i = 0; i < rep.m_L; ++i) {
            const cplx grow = std::exp(es.lambda[static_cast<std::size_t>(i)] * pt.s);
            for (int j = 0; j < es.p(i); ++j)
                for (int k = 0; k < es.kcount(i, j); ++k) {
                    const cplx c = grow * es.dual(i, j, k, ef);
                    if (c != 0.0) pt.centering.push_back({{i, j, k}, c});
                }
        }
        plan.points.push_back(std::move(pt));
    }
    return plan;
}

inline std::vector<std::pair<double, cplx>> fluctuation_series(const FluctuationPlan& plan, const Trajectory& tr,
                                                               const MartingaleLimitSet& W) {
    if (tr.capped) throw PreconditionError("fluctuation series of a capped replica");
    std::vector<std::pair<double, cplx>> out;
    for (const auto& pt : plan.points) {
        if (pt.obs >= tr.states.size()) throw DomainError("trajectory lacks the requested observation");
        cplx centre = 0.0;
        for (const auto& [idx, c] : pt.centering) centre += c * W.at(idx[0], idx[1], idx[2]);
        out.push_back({pt.t, pt.scale * (tr.states[pt.obs].pair(plan.f) - centre)});
    }
    return out;
}

inline std::vector<std::pair<double, cplx>> fluctuation_series(const EigenStructure& es, const Trajectory& tr,
                                                               const SimConfig& cfg, const Functional& f,
                                                               const SeriesSpec& spec, const MartingaleLimitSet& W,
                                                               const std::vector<double>& t_grid) {
    return fluctuation_series(plan_fluctuations(es, f, spec, t_grid, cfg), tr, W);
}

/// Observation times covering every series time, T_W and T_W/2.
inline std::vector<double> observation_plan(std::vector<double> times, double t_w) {
    if (t_w > 0.0) {
        times.push_back(t_w);
        times.push_back(t_w / 2);
    }
    std::sort(times.begin(), times.end());
    std::vector<double> out;
    for (double t : times)
        if (out.empty() || t - out.back() > 1e-9 * std::max(1.0, t)) out.push_back(t);
    return out;
}

}  // namespace bmfluct
