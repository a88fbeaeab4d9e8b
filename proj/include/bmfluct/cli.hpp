#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "bmfluct/canonical.hpp"
#include "bmfluct/model_io.hpp"
#include "bmfluct/moment_ode.hpp"
#include "bmfluct/pipeline.hpp"
#include "bmfluct/regularity.hpp"

namespace bmfluct::cli {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kOutEnv = "BMFLUCT_OUT";

enum ExitCode : int { kOk = 0, kTestFailure = 1, kInputError = 2, kNumericalError = 3 };

struct Options {
    std::string command;
    std::string model;
    std::uint64_t seed = 1;
    int replicas = 10000;
    double horizon = 0.0;  // 0: largest grid time
    std::vector<double> grid;
    unsigned threads = 0;
    std::string out;
    int order = 2;
    std::string f = "one";
    std::string g;
    std::size_t start = 1;  // 1-based start type
    double n = 0.0;
    long long cap = 0;
    bool reduced = false;
    std::vector<std::string> argv;
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

inline std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InputError("--out", "cannot write " + tmp);
        out << content;
        if (!out) throw InputError("--out", "write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

/// Accumulates CSV text with round-trip precision.
class Csv {
public:
    explicit Csv(const std::string& header) { os_ << std::setprecision(17) << header << '\n'; }

    template <class... Ts>
    void row(const Ts&... v) {
        bool first = true;
        ((os_ << (first ? "" : ",") << v, first = false), ...);
        os_ << '\n';
    }
    std::string str() const { return os_.str(); }

private:
    std::ostringstream os_;
};

struct RunManifest {
    std::string version = kVersion;
    std::string model_file;
    std::string model_hash;
    std::string command;
    std::vector<std::pair<std::string, std::string>> flags;
    std::vector<std::string> argv;
    std::uint64_t seed = 0;
    std::string started;
    std::string finished;
    int exit_code = 0;
    std::vector<std::string> outputs;

    std::string str() const {
        std::ostringstream os;
        os << "tool_version: " << version << "\n"
           << "command: " << command << "\n"
           << "model_file: " << model_file << "\n"
           << "model_hash: fnv1a64:" << model_hash << "\n"
           << "seed: " << seed << "\n";
        os << "argv:";
        for (const auto& a : argv) os << " " << a;
        os << "\nflags:\n";
        for (const auto& [k, v] : flags) os << "  " << k << ": " << v << "\n";
        os << "started_utc: " << started << "\n"
           << "finished_utc: " << finished << "\n"
           << "exit_code: " << exit_code << "\n"
           << "outputs:\n";
        for (const auto& o : outputs) os << "  - " << o << "\n";
        return os.str();
    }
};

/// Output directory plus the manifest that describes it.
class Run {
public:
    Run(const Options& opt, const std::string& model_text) : opt_(opt) {
        std::string root = opt.out;
        if (root.empty()) {
            const char* env = std::getenv(kOutEnv);
            root = (env && *env ? std::string(env) : std::string("bmfluct-out")) + "/" + opt.command + "-seed" +
                   std::to_string(opt.seed);
        }
        dir_ = root;
        std::filesystem::create_directories(dir_);
        man_.command = opt.command;
        man_.model_file = opt.model;
        man_.model_hash = hex64(fnv1a(model_text));
        man_.seed = opt.seed;
        man_.argv = opt.argv;
        man_.started = utc_now();
        man_.flags = flag_list(opt);
    }

    void write(const std::string& name, const std::string& content) {
        write_atomic(dir_ / name, content);
        man_.outputs.push_back(name);
    }
    void finish(int code) {
        man_.finished = utc_now();
        man_.exit_code = code;
        write_atomic(dir_ / "manifest.txt", man_.str());
    }
    const std::filesystem::path& dir() const { return dir_; }

    static std::vector<std::pair<std::string, std::string>> flag_list(const Options& o) {
        std::ostringstream grid;
        grid << std::setprecision(17);
        for (std::size_t i = 0; i < o.grid.size(); ++i) grid << (i ? "," : "") << o.grid[i];
        auto num = [](double v) {
            std::ostringstream s;
            s << std::setprecision(17) << v;
            return s.str();
        };
        return {{"model", o.model},
                {"seed", std::to_string(o.seed)},
                {"replicas", std::to_string(o.replicas)},
                {"horizon", num(o.horizon)},
                {"grid", grid.str()},
                {"threads", std::to_string(o.threads)},
                {"out", o.out},
                {"order", std::to_string(o.order)},
                {"f", o.f},
                {"g", o.g},
                {"start", std::to_string(o.start)},
                {"n", num(o.n)},
                {"cap", std::to_string(o.cap)},
                {"reduced", o.reduced ? "true" : "false"}};
    }

private:
    Options opt_;
    std::filesystem::path dir_;
    RunManifest man_;
};

struct LoadedModel {
    ModelFile file;
    std::string text;
};

/// Reads `--model`: a JSON path, or `canonical:<NAME>` for the built-in models.
inline LoadedModel load(const std::string& spec) {
    if (spec.empty()) throw InputError("--model", "a model file is required");
    LoadedModel lm;
    const std::string prefix = "canonical:";
    if (spec.rfind(prefix, 0) == 0) {
        const std::string name = spec.substr(prefix.size());
        lm.file.model = canonical::by_name(name);
        if (name == "J") lm.file.eigen = canonical::model_j_declared();
        lm.text = serialize_model(lm.file.model, lm.file.eigen);
        return lm;
    }
    std::ifstream in(spec, std::ios::binary);
    if (!in) throw InputError("--model", "cannot open model file " + spec);
    std::ostringstream ss;
    ss << in.rdbuf();
    lm.text = ss.str();
    lm.file = parse_model(lm.text);
    return lm;
}

/// Functional spec: "one", "e<x>" (indicator, 1-based), "phi<i>" (real part of
/// the first eigenvector of eigenvalue i), or a comma list of numbers.
inline Functional parse_functional(const std::string& s, const BranchingModel& model, const EigenStructure& es) {
    const std::size_t d = model.dim();
    if (s == "one") return Functional::constant(d, 1.0);
    auto index = [&](std::size_t skip, std::size_t limit) {
        std::size_t pos = 0;
        const std::string digits = s.substr(skip);
        std::size_t v = 0;
        try {
            v = std::stoul(digits, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != digits.size() || v < 1 || v > limit) throw InputError("--f", "bad functional " + s);
        return v - 1;
    };
    if (s.rfind("phi", 0) == 0) {
        const auto i = static_cast<int>(index(3, static_cast<std::size_t>(es.m())));
        return Functional(es.phi(i, 0, 0).real().cast<cplx>());
    }
    if (s.rfind("e", 0) == 0) return Functional::indicator(d, index(1, d));
    CVec v(static_cast<Eigen::Index>(d));
    std::stringstream ss(s);
    std::string item;
    Eigen::Index i = 0;
    while (std::getline(ss, item, ',')) {
        if (i >= v.size()) throw InputError("--f", "functional has more than d entries");
        try {
            v(i++) = std::stod(item);
        } catch (const std::exception&) {
            throw InputError("--f", "bad number '" + item + "'");
        }
    }
    if (i != v.size()) throw InputError("--f", "functional needs " + std::to_string(d) + " entries");
    return Functional(v);
}

inline std::size_t start_type(const Options& o, const BranchingModel& model) {
    if (o.start < 1 || o.start > model.dim()) throw InputError("--start", "start type out of range");
    return o.start - 1;
}

inline std::string complex_str(cplx z) {
    std::ostringstream os;
    os << std::setprecision(12) << z.real();
    if (z.imag() != 0.0) os << (z.imag() < 0 ? "-" : "+") << std::abs(z.imag()) << "i";
    return os.str();
}

// ---- analyze ---------------------------------------------------------------

struct Analysis {
    EigenStructure es;
    RegimeReport regimes;
    std::string report;
    std::string eigen_csv;
    std::string residual_csv;
    std::string regularity_csv;
};

inline Analysis analyze(const ModelFile& mf) {
    Analysis a;
    const auto validation = validate_model(mf.model, 2);
    if (!validation.ok()) {
        std::string failed;
        for (const auto& c : validation.checks)
            if (!c.pass) failed += (failed.empty() ? "" : "; ") + c.name + ": " + c.detail;
        throw InputError("model", "validation failed: " + failed);
    }
    a.es = build_eigenstructure(mf.model, mf.eigen);
    a.regimes = classify_regimes(a.es);
    const auto diag = validate_eigenstructure(a.es, mean_generator(mf.model));

    std::ostringstream os;
    os << std::setprecision(12);
    os << "dimension: " << mf.model.dim() << "\n"
       << "regime: " << a.regimes.summary() << "\n"
       << "m: " << a.regimes.m << "\n"
       << "m_L: " << a.regimes.m_L << "\n"
       << "m_C: " << a.regimes.m_C << "\n"
       << "full_spectrum: " << (a.es.full_spectrum ? "true" : "false") << "\n"
       << "eigenvalues:\n";
    Csv eig("i,re,im,label,rank");
    for (int i = 0; i < a.es.m(); ++i) {
        const cplx l = a.es.lambda[static_cast<std::size_t>(i)];
        const char* label = to_string(a.regimes.labels[static_cast<std::size_t>(i)]);
        os << "  - index: " << i + 1 << "\n    value: " << complex_str(l) << "\n    label: " << label
           << "\n    rank: " << a.es.p(i) << "\n    chain:\n";
        for (int j = 0; j < a.es.p(i); ++j)
            for (int k = 0; k < a.es.kcount(i, j); ++k) {
                os << "      - (" << i + 1 << "," << j + 1 << "," << k + 1 << "): [";
                const CVec& v = a.es.phi(i, j, k);
                for (Eigen::Index x = 0; x < v.size(); ++x) os << (x ? ", " : "") << complex_str(v(x));
                os << "]\n";
            }
        eig.row(i + 1, l.real(), l.imag(), label, a.es.p(i));
    }
    os << "diagnostics:\n"
       << "  biorthogonality: " << diag.biorthogonality << "\n"
       << "  chain_links: " << diag.chain_links << "\n"
       << "  semigroup: " << diag.semigroup << "\n"
       << "  conjugate_closure: " << diag.conjugate_closure << "\n";

    Csv res("t,residual");
    os << "h1_residual:";
    if (a.es.full_spectrum) {
        const std::vector<double> ts{0.25, 0.5, 1.0, 2.0, 3.0, 4.0};
        const auto r = h1_residual(mf.model, a.es, ts);
        os << "\n";
        for (std::size_t i = 0; i < ts.size(); ++i) {
            os << "  - t: " << ts[i] << "\n    value: " << r[i] << "\n";
            res.row(ts[i], r[i]);
        }
    } else {
        os << " skipped (spectrum not fully tracked)\n";
    }

    Csv reg("type,c1,c2");
    os << "regularity:\n";
    for (std::size_t x = 0; x < mf.model.dim(); ++x) {
        const auto rc = small_time_regularity(mf.model, Functional::indicator(mf.model.dim(), x), 2);
        os << "  - type: " << x + 1 << "\n    c1: " << rc.c1 << "\n    c2: " << rc.c2 << "\n";
        reg.row(x + 1, rc.c1, rc.c2);
    }
    a.report = os.str();
    a.eigen_csv = eig.str();
    a.residual_csv = res.str();
    a.regularity_csv = reg.str();
    return a;
}

// ---- subcommands -------------------------------------------------------------

inline int cmd_analyze(const Options& o, std::ostream& out) {
    const auto lm = load(o.model);
    const auto a = analyze(lm.file);
    Run run(o, lm.text);
    run.write("analyze.txt", a.report);
    run.write("eigenvalues.csv", a.eigen_csv);
    run.write("h1_residual.csv", a.residual_csv);
    run.write("regularity.csv", a.regularity_csv);
    run.finish(kOk);
    out << a.report;
    return kOk;
}

inline std::vector<double> grid_or(const Options& o, std::vector<double> fallback) {
    return o.grid.empty() ? fallback : o.grid;
}

inline int cmd_moments(const Options& o, std::ostream& out) {
    const auto lm = load(o.model);
    require_valid(lm.file.model);
    if (o.order < 1 || o.order > kMaxMomentOrder) throw InputError("--order", "moment order must be in 1..4");
    const auto es = build_eigenstructure(lm.file.model, lm.file.eigen);
    const Functional f = parse_functional(o.f, lm.file.model, es);
    Csv csv("start_type,k,t,re,im,est_error");
    for (double t : grid_or(o, {o.horizon > 0 ? o.horizon : 1.0}))
        for (int k = 1; k <= o.order; ++k)
            for (const auto& r : joint_moment(lm.file.model, std::vector<Functional>(static_cast<std::size_t>(k), f), t))
                csv.row(r.start_type + 1, k, t, r.value.real(), r.value.imag(), r.est_error);
    Run run(o, lm.text);
    run.write("moments.csv", csv.str());
    run.finish(kOk);
    out << csv.str();
    return kOk;
}

inline int cmd_limits(const Options& o, std::ostream& out) {
    const auto lm = load(o.model);
    const auto& model = lm.file.model;
    const auto es = build_eigenstructure(model, lm.file.eigen);
    const auto rep = classify_regimes(es);
    const std::size_t x = start_type(o, model);
    const Functional f = parse_functional(o.f, model, es);
    const Functional g = o.g.empty() ? f : parse_functional(o.g, model, es);
    const auto W = MartingaleLimitSet::expectation(es, x);
    const auto grid = grid_or(o, {0.0, 0.5, 1.0});
    Csv csv("r,t,re_plain,im_plain,re_conj,im_conj,est_error");
    for (double r : grid)
        for (double t : grid) {
            if (r > t) continue;
            KernelValue kv;
            if (rep.m_C > rep.m_L)
                kv = crit_cov(es, model, r, t, f, g, W);
            else if (rep.m_L < rep.m)
                kv = small_cov(es, model, r, t, f, g, W);
            else
                throw PreconditionError("no fluctuation kernel: every tracked eigenvalue is large");
            csv.row(r, t, kv.plain.real(), kv.plain.imag(), kv.conj.real(), kv.conj.imag(), kv.est_error);
        }
    Run run(o, lm.text);
    run.write("kernel.csv", csv.str());
    run.finish(kOk);
    out << csv.str();
    return kOk;
}

inline int cmd_simulate(const Options& o, std::ostream& out) {
    const auto lm = load(o.model);
    const auto& model = lm.file.model;
    require_valid(model);
    SimConfig cfg;
    cfg.observation_times = grid_or(o, {o.horizon > 0 ? o.horizon : 1.0});
    cfg.horizon = o.horizon > 0 ? o.horizon : cfg.observation_times.back();
    cfg.seed = o.seed;
    cfg.replicas = o.replicas;
    cfg.threads = o.threads;
    if (o.cap > 0) cfg.population_cap = o.cap;
    const auto rs = simulate_replicas(model, start_type(o, model), cfg);
    const std::size_t d = model.dim();

    Run run(o, lm.text);
    if (!o.reduced) {
        std::string header = "replica,capped,events,t";
        for (std::size_t y = 0; y < d; ++y) header += ",n" + std::to_string(y + 1);
        Csv per(header);
        for (std::size_t r = 0; r < rs.paths.size(); ++r) {
            const auto& p = rs.paths[r];
            for (std::size_t i = 0; i < cfg.observation_times.size(); ++i) {
                std::ostringstream line;
                line << r << "," << (p.capped ? 1 : 0) << "," << p.events << "," << std::setprecision(17)
                     << cfg.observation_times[i];
                for (std::size_t y = 0; y < d; ++y) line << "," << (p.capped ? 0 : p.states[i].counts[y]);
                per.row(line.str());
            }
        }
        run.write("replicas.csv", per.str());
    }
    Csv sum("t,type,mean,variance,usable,capped");
    for (std::size_t i = 0; i < cfg.observation_times.size(); ++i)
        for (std::size_t y = 0; y < d; ++y) {
            std::vector<double> v;
            for (const auto& p : rs.paths)
                if (!p.capped) v.push_back(static_cast<double>(p.states[i].counts[y]));
            const auto ms = mean_se(v);
            const double var = v.size() > 1 ? ms.se * ms.se * static_cast<double>(v.size()) : 0.0;
            sum.row(cfg.observation_times[i], y + 1, ms.mean, var, v.size(), rs.capped_count());
        }
    run.write("summary.csv", sum.str());
    run.finish(kOk);
    out << sum.str();
    return kOk;
}

inline std::string reports_text(const std::vector<TestReport>& reports) {
    std::ostringstream os;
    os << std::setprecision(12);
    for (const auto& r : reports) {
        os << "- name: " << r.name << "\n  pass: " << (r.pass ? "true" : "false") << "\n  observed: " << r.observed
           << "\n  target: " << r.target << "\n  se: " << r.se << "\n";
        if (r.p_value >= 0.0) os << "  p_value: " << r.p_value << "\n  level: " << r.level << "\n";
        os << "  replicas: " << r.replicas << "\n  dropped: " << r.dropped << "\n  seed: " << r.seed << "\n";
        if (!r.detail.empty()) os << "  detail: " << r.detail << "\n";
    }
    return os.str();
}

inline std::string reports_table(const std::vector<TestReport>& reports) {
    std::ostringstream os;
    os << std::left << std::setw(36) << "test" << std::setw(6) << "pass" << std::right << std::setw(15) << "observed"
       << std::setw(15) << "target" << std::setw(12) << "se" << std::setw(10) << "p" << "\n";
    os << std::setprecision(6);
    for (const auto& r : reports) {
        os << std::left << std::setw(36) << r.name << std::setw(6) << (r.pass ? "ok" : "FAIL") << std::right
           << std::setw(15) << r.observed << std::setw(15) << r.target << std::setw(12) << r.se << std::setw(10);
        if (r.p_value >= 0.0)
            os << r.p_value;
        else
            os << "-";
        os << "\n";
    }
    return os.str();
}

inline std::string reports_csv(const std::vector<TestReport>& reports) {
    Csv csv("name,pass,observed,target,se,p_value,replicas,dropped,seed");
    for (const auto& r : reports)
        csv.row(r.name, r.pass ? 1 : 0, r.observed, r.target, r.se, r.p_value, r.replicas, r.dropped, r.seed);
    return csv.str();
}

inline std::string plot_csv(const std::vector<PlotRow>& rows) {
    Csv csv("table,t,statistic,value");
    for (const auto& r : rows) csv.row(r.table, r.t, r.statistic, r.value);
    return csv.str();
}

inline SuiteConfig suite_config(const Options& o, const BranchingModel& model, const EigenStructure& es) {
    SuiteConfig sc;
    sc.start_type = start_type(o, model);
    sc.replicas = o.replicas;
    sc.seed = o.seed;
    sc.threads = o.threads;
    sc.n = o.n;
    sc.grid = o.grid;
    sc.population_cap = o.cap;
    if (o.f != "one") sc.f = parse_functional(o.f, model, es);
    return sc;
}

inline void write_suite(Run& run, const SuiteResult& res, std::ostream& out) {
    run.write("report.txt", "regime: " + std::string(to_string(res.regime)) + "\nw_horizon: " +
                                std::to_string(res.w_horizon) + "\ncapped: " +
                                std::to_string(res.replicas.capped_count()) + "\ntests:\n" +
                                reports_text(res.reports));
    run.write("checks.csv", reports_csv(res.reports));
    run.write("plot.csv", plot_csv(res.plot));
    out << reports_table(res.reports) << "capped replicas: " << res.replicas.capped_count() << " of "
        << res.replicas.paths.size() << "\n";
}

inline int cmd_verify(const Options& o, std::ostream& out) {
    const auto lm = load(o.model);
    const auto es = build_eigenstructure(lm.file.model, lm.file.eigen);
    const auto res = run_suite(lm.file.model, es, suite_config(o, lm.file.model, es));
    Run run(o, lm.text);
    write_suite(run, res, out);
    const int code = res.pass() ? kOk : kTestFailure;
    run.finish(code);
    return code;
}

/// Failure inside a pipeline stage; outputs written so far stay on disk.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const Error& e)
        : std::runtime_error("stage " + stage + ": " + e.what()), kind(e.kind()) {}
    ErrorKind kind;
};

inline int cmd_pipeline(const Options& o, std::ostream& out) {
    const auto lm = load(o.model);
    Run run(o, lm.text);
    auto stage = [&](const std::string& name, auto&& body) {
        try {
            return body();
        } catch (const Error& e) {
            run.finish(e.kind() == ErrorKind::numerical ? kNumericalError : kInputError);
            throw StageError(name, e);
        }
    };
    const auto a = stage("analyze", [&] { return analyze(lm.file); });
    run.write("analyze.txt", a.report);
    run.write("eigenvalues.csv", a.eigen_csv);
    run.write("h1_residual.csv", a.residual_csv);
    run.write("regularity.csv", a.regularity_csv);
    out << "regime: " << a.regimes.summary() << "\n";

    const auto sanity = stage("moments", [&] {
        Csv csv("start_type,k,t,re,im,est_error,oracle_re,oracle_im,rel_diff");
        TestReport rep;
        rep.name = "moments sanity";
        rep.pass = true;
        const Functional one = Functional::constant(lm.file.model.dim(), 1.0);
        for (int k = 1; k <= 2; ++k) {
            const std::vector<Functional> fs(static_cast<std::size_t>(k), one);
            const auto mom = joint_moment(lm.file.model, fs, 1.0);
            const auto ode = moment_ode_oracle(lm.file.model, fs, 1.0);
            for (std::size_t x = 0; x < mom.size(); ++x) {
                const double rel = std::abs(mom[x].value - ode[x].value) / std::max(1.0, std::abs(ode[x].value));
                rep.observed = std::max(rep.observed, rel);
                csv.row(x + 1, k, 1.0, mom[x].value.real(), mom[x].value.imag(), mom[x].est_error,
                        ode[x].value.real(), ode[x].value.imag(), rel);
            }
        }
        rep.se = 1e-6;
        rep.pass = rep.observed <= rep.se;
        rep.detail = "max relative gap to the moment ODE oracle, k <= 2, t = 1";
        return std::make_pair(csv.str(), rep);
    });
    run.write("moments.csv", sanity.first);

    auto res = stage("simulate/verify", [&] {
        return run_suite(lm.file.model, a.es, suite_config(o, lm.file.model, a.es));
    });
    res.reports.insert(res.reports.begin(), sanity.second);
    {
        Csv sum("t,type,mean,usable,capped");
        const auto& cfg = res.replicas.config;
        for (std::size_t i = 0; i < cfg.observation_times.size(); ++i)
            for (std::size_t y = 0; y < lm.file.model.dim(); ++y) {
                std::vector<double> v;
                for (const auto& p : res.replicas.paths)
                    if (!p.capped) v.push_back(static_cast<double>(p.states[i].counts[y]));
                sum.row(cfg.observation_times[i], y + 1, v.empty() ? 0.0 : mean_se(v).mean, v.size(),
                        res.replicas.capped_count());
            }
        run.write("summary.csv", sum.str());
    }
    write_suite(run, res, out);
    const int code = res.pass() ? kOk : kTestFailure;
    run.finish(code);
    return code;
}

inline int dispatch(const Options& o, std::ostream& out) {
    if (o.command == "analyze") return cmd_analyze(o, out);
    if (o.command == "moments") return cmd_moments(o, out);
    if (o.command == "limits") return cmd_limits(o, out);
    if (o.command == "simulate") return cmd_simulate(o, out);
    if (o.command == "verify") return cmd_verify(o, out);
    if (o.command == "pipeline") return cmd_pipeline(o, out);
    throw InputError("command", "unknown subcommand " + o.command);
}

/// Runs a parsed command and maps failures to exit codes.
inline int run(const Options& o, std::ostream& out, std::ostream& err) {
    try {
        return dispatch(o, out);
    } catch (const InputError& e) {
        err << "input error: " << e.what() << "\n";
        return kInputError;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kNumericalError;
    } catch (const Error& e) {
        err << "precondition failed: " << e.what() << "\n";
        return kInputError;
    } catch (const StageError& e) {
        err << e.what() << "\n";
        return e.kind == ErrorKind::numerical ? kNumericalError : kInputError;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "output error: " << e.what() << "\n";
        return kInputError;
    }
}

inline int main(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Fluctuation analysis of multitype branching Markov processes"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));
    Options o;
    for (int i = 0; i < argc; ++i) o.argv.emplace_back(argv[i]);

    auto common = [&](CLI::App* sub) {
        sub->add_option("--model", o.model, "model JSON file or canonical:<NAME>")->required();
        sub->add_option("--seed", o.seed, "master seed");
        sub->add_option("--replicas", o.replicas, "Monte Carlo replicas")->check(CLI::PositiveNumber);
        sub->add_option("--horizon", o.horizon, "simulation horizon");
        sub->add_option("--grid", o.grid, "time grid")->delimiter(',');
        sub->add_option("--threads", o.threads, "worker threads (0: all cores)");
        sub->add_option("--out", o.out, std::string("output directory (default $") + kOutEnv + "/<command>-seed<seed>)");
        sub->add_option("--f", o.f, "functional: one, e<x>, phi<i> or comma list");
        sub->add_option("--g", o.g, "second functional for limits (default: f)");
        sub->add_option("--start", o.start, "start type (1-based)");
        sub->add_option("--order", o.order, "largest moment order");
        sub->add_option("--n", o.n, "series scaling parameter");
        sub->add_option("--cap", o.cap, "population cap");
        sub->add_flag("--reduced", o.reduced, "simulate: write only reduced statistics");
    };
    for (const char* name : {"analyze", "moments", "limits", "simulate", "verify", "pipeline"}) {
        auto* sub = app.add_subcommand(name);
        common(sub);
        sub->callback([&o, name] { o.command = name; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kInputError;
    }
    return run(o, out, err);
}

}  // namespace bmfluct::cli
