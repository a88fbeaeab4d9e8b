#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>

#include "bmfluct/cli.hpp"

using namespace bmfluct;
namespace fs = std::filesystem;

namespace {

const std::string kModels = BMFLUCT_MODELS_DIR;

struct Result {
    int code = 0;
    std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "bmfluct");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    std::ostringstream out, err;
    Result r;
    r.code = cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("bmfluct_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    std::string out(const std::string& name) const { return (dir_ / name).string(); }
    fs::path dir_;
};

}  // namespace

TEST(CliHash, Fnv1aReference) {
    EXPECT_EQ(cli::fnv1a(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(cli::fnv1a("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(cli::hex64(0xabcULL), "0000000000000abc");
}

TEST_F(Cli, AnalyzeSmall) {
    const auto r = run_cli({"analyze", "--model", kModels + "/model_s.json", "--out", out("a")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("regime: small"), std::string::npos);
    EXPECT_NE(r.out.find("m_L: 1"), std::string::npos);
    const auto manifest = slurp(dir_ / "a" / "manifest.txt");
    EXPECT_NE(manifest.find("command: analyze"), std::string::npos);
    EXPECT_NE(manifest.find("model_hash: fnv1a64:" + cli::hex64(cli::fnv1a(slurp(kModels + "/model_s.json")))),
              std::string::npos);
    for (const char* f : {"analyze.txt", "eigenvalues.csv", "h1_residual.csv", "regularity.csv"}) {
        EXPECT_TRUE(fs::exists(dir_ / "a" / f)) << f;
        EXPECT_NE(manifest.find(std::string("  - ") + f), std::string::npos) << f;
    }
    for (const auto& e : fs::directory_iterator(dir_ / "a")) EXPECT_NE(e.path().extension(), ".tmp");
}

TEST_F(Cli, AnalyzeCritical) {
    const auto r = run_cli({"analyze", "--model", kModels + "/model_c.json", "--out", out("c")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("regime: critical eigenvalue present"), std::string::npos);
}

TEST_F(Cli, MissingGammaIsInputError) {
    auto text = slurp(kModels + "/model_s.json");
    auto j = nlohmann::json::parse(text);
    j.erase("gamma");
    std::ofstream(dir_ / "bad.json") << j.dump(2);
    const auto r = run_cli({"analyze", "--model", out("bad.json"), "--out", out("bad")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("gamma"), std::string::npos) << r.err;
}

TEST_F(Cli, MalformedJsonNamesLine) {
    std::ofstream(dir_ / "broken.json") << "{\n  \"types\": [\"a\"],\n  \"q\": [[0.0]\n";
    const auto r = run_cli({"analyze", "--model", out("broken.json"), "--out", out("b")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("line"), std::string::npos) << r.err;
}

TEST_F(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run_cli({"analyze"}).code, 2);
    EXPECT_EQ(run_cli({"frobnicate", "--model", "x"}).code, 2);
    EXPECT_EQ(run_cli({"analyze", "--model", "canonical:NOPE", "--out", out("n")}).code, 2);
    EXPECT_EQ(run_cli({"moments", "--model", "canonical:Y", "--order", "5", "--out", out("m")}).code, 2);
}

TEST_F(Cli, MomentsYule) {
    const auto r = run_cli({"moments", "--model", kModels + "/model_y.json", "--grid", "1", "--out", out("m")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = slurp(dir_ / "m" / "moments.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "start_type,k,t,re,im,est_error");
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    std::getline(in, line);  // k = 1
    double re = std::stod(line.substr(line.find(",1,1,") + 5));
    EXPECT_NEAR(re, std::exp(1.0), 1e-10);
    std::getline(in, line);  // k = 2
    re = std::stod(line.substr(line.find(",2,1,") + 5));
    EXPECT_NEAR(re, 2 * std::exp(2.0) - std::exp(1.0), 1e-8);
}

TEST_F(Cli, LimitsSmallKernel) {
    const auto r = run_cli({"limits", "--model", kModels + "/model_s.json", "--f", "1,0", "--grid", "0,1", "--out",
                            out("l")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = slurp(dir_ / "l" / "kernel.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "r,t,re_plain,im_plain,re_conj,im_conj,est_error");
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    std::getline(in, line);
    EXPECT_NEAR(std::stod(line.substr(4)), 0.5, 1e-12);  // "0,0,<value>"
    std::getline(in, line);
    EXPECT_NEAR(std::stod(line.substr(4)), 0.5 * std::exp(-1.0), 1e-12);
    EXPECT_EQ(run_cli({"limits", "--model", "canonical:Y", "--out", out("ly")}).code, 2);
}

TEST_F(Cli, SimulateDeterministicAcrossThreads) {
    for (const char* t : {"1", "4"}) {
        const auto r = run_cli({"simulate", "--model", kModels + "/model_m.json", "--grid", "0.5,1.5", "--replicas",
                                "200", "--seed", "7", "--threads", t, "--out", out(std::string("s") + t)});
        ASSERT_EQ(r.code, 0) << r.err;
    }
    EXPECT_EQ(slurp(dir_ / "s1" / "replicas.csv"), slurp(dir_ / "s4" / "replicas.csv"));
    EXPECT_EQ(slurp(dir_ / "s1" / "summary.csv"), slurp(dir_ / "s4" / "summary.csv"));
}

TEST_F(Cli, SimulateReportsCapped) {
    const auto r = run_cli({"simulate", "--model", "canonical:Y", "--grid", "6", "--replicas", "40", "--cap", "100",
                            "--reduced", "--out", out("cap")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_FALSE(fs::exists(dir_ / "cap" / "replicas.csv"));
    const auto csv = slurp(dir_ / "cap" / "summary.csv");
    const auto last = csv.substr(csv.rfind(',', csv.size() - 2) + 1);
    EXPECT_GT(std::stoi(last), 20);
}

TEST_F(Cli, EnvironmentOutputRoot) {
    setenv(cli::kOutEnv, out("root").c_str(), 1);
    const auto r = run_cli({"moments", "--model", "canonical:Y", "--seed", "5"});
    unsetenv(cli::kOutEnv);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir_ / "root" / "moments-seed5" / "manifest.txt"));
}

TEST_F(Cli, PipelineYuleQuickProfile) {
    const auto start = std::chrono::steady_clock::now();
    const auto r = run_cli({"pipeline", "--model", kModels + "/model_y.json", "--replicas", "10000", "--out", out("p")});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EXPECT_EQ(r.code, 0) << r.out << r.err;
    EXPECT_LT(secs, 60.0);
    for (const char* f : {"analyze.txt", "moments.csv", "summary.csv", "report.txt", "checks.csv", "plot.csv",
                          "manifest.txt"})
        EXPECT_TRUE(fs::exists(dir_ / "p" / f)) << f;
    EXPECT_EQ(slurp(dir_ / "p" / "plot.csv").substr(0, 25), "table,t,statistic,value\nm");
    const auto again = run_cli({"pipeline", "--model", kModels + "/model_y.json", "--replicas", "10000", "--threads",
                                "2", "--out", out("q")});
    EXPECT_EQ(again.code, 0);
    for (const char* f : {"moments.csv", "summary.csv", "checks.csv", "plot.csv"})
        EXPECT_EQ(slurp(dir_ / "p" / f), slurp(dir_ / "q" / f)) << f;
}
