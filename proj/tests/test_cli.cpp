#include <gtest/gtest.h>

#include "cli_support.hpp"
#include "logeiv/correction.hpp"
#include "logeiv/io.hpp"
#include "logeiv/solver.hpp"

using namespace logeiv;
using namespace clitest;

namespace {

// A small simulated dataset shared by the tests of one binary run.
class CliData : public ::testing::Test
{
protected:
    static void SetUpTestSuite()
    {
        scratch_ = new Scratch("cli");
        const Outcome r = run({"simulate", "--n", "40", "--p", "12", "--alpha", "200", "--seed", "5", "--out", *scratch_ / "sim"});
        ASSERT_EQ(r.rc, 0) << r.err;
    }
    static void TearDownTestSuite()
    {
        delete scratch_;
        scratch_ = nullptr;
    }

    static std::string sim(const std::string& f) { return *scratch_ / ("sim/" + f); }
    static std::string dir(const std::string& d) { return *scratch_ / d; }
    static std::vector<std::string> data_args()
    {
        return {"--counts", sim("counts.csv"), "--response", sim("response.csv")};
    }
    static std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail)
    {
        head.insert(head.end(), tail.begin(), tail.end());
        return head;
    }

    static Scratch* scratch_;
};

Scratch* CliData::scratch_ = nullptr;

VectorXd read_coefficients(const std::string& path)
{
    const auto t = csv::read_file(path);
    VectorXd b(static_cast<Index>(t.rows.size()));
    for (std::size_t k = 0; k < t.rows.size(); ++k) b(static_cast<Index>(k)) = io::parse_double(t.rows[k][1], path);
    return b;
}

RegressionData direct_data(const std::string& counts, const std::string& response, const CorrectedDesign& d)
{
    const CountMatrix W = load_counts(counts);
    return RegressionData(d.matrix, io::load_response(response, W.sample_ids()));
}

} // namespace

TEST_F(CliData, SimulateWritesEverything)
{
    for (const char* f : {"counts.csv", "response.csv", "noise.csv", "compositions.csv", "beta_star.csv", "groups.csv",
                          "scenario.json", "manifest.json"})
        EXPECT_TRUE(fs::exists(sim(f))) << f;
    const CountMatrix W = load_counts(sim("counts.csv"));
    EXPECT_EQ(W.rows(), 40);
    EXPECT_EQ(W.cols(), 12);
}

TEST_F(CliData, FitUsesHalfOffsetByDefault)
{
    const Outcome r = run(with({"fit"}, with(data_args(), {"--lambda", "0.05", "--out", dir("fit_vc")})));
    ASSERT_EQ(r.rc, 0) << r.err;
    const RegressionData data = direct_data(sim("counts.csv"), sim("response.csv"), correct_multinomial(load_counts(sim("counts.csv"))));
    const FitResult ref = solve_constrained_lasso(data, 0.05);
    EXPECT_LE((read_coefficients(dir("fit_vc/coefficients.csv")) - ref.beta_hat).cwiseAbs().maxCoeff(), 1e-12);
    const auto j = io::read_json_file(dir("fit_vc/fit.json"));
    EXPECT_LE(j["fit"]["kkt_gap"].get<double>(), 1e-4 * 0.05);
}

TEST_F(CliData, ZeroReplacementFlag)
{
    const Outcome r = run(with({"fit"}, with(data_args(), {"--correction", "zr", "--zr-c", "0.25", "--lambda", "0.05", "--out", dir("fit_zr")})));
    ASSERT_EQ(r.rc, 0) << r.err;
    const RegressionData data = direct_data(sim("counts.csv"), sim("response.csv"), zero_replace(load_counts(sim("counts.csv")), 0.25));
    const FitResult ref = solve_constrained_lasso(data, 0.05);
    EXPECT_LE((read_coefficients(dir("fit_zr/coefficients.csv")) - ref.beta_hat).cwiseAbs().maxCoeff(), 1e-12);
    const auto m = io::read_json_file(dir("fit_zr/manifest.json"));
    EXPECT_EQ(m["config"]["correction"], "zr");
}

TEST_F(CliData, MomNeedsGroups)
{
    const Outcome r = run(with({"fit"}, with(data_args(), {"--alpha", "mom", "--out", dir("mom_bad")})));
    EXPECT_EQ(r.rc, cli::exit_input);
    EXPECT_TRUE(contains(r.err, "replicate groups")) << r.err;
    EXPECT_FALSE(fs::exists(dir("mom_bad/manifest.json")));

    const Outcome ok = run(with({"fit"}, with(data_args(), {"--alpha", "mom", "--groups", sim("groups.csv"), "--out", dir("mom_ok")})));
    ASSERT_EQ(ok.rc, 0) << ok.err;
    EXPECT_EQ(io::read_json_file(dir("mom_ok/fit.json"))["alpha_estimates"].size(), 20u);
}

TEST_F(CliData, RerunIsByteIdentical)
{
    const auto args = with({"fit"}, with(data_args(), {"--pair-halves", "--alpha", "mom", "--seed", "3"}));
    ASSERT_EQ(run(with(args, {"--out", dir("rerun_a")})).rc, 0);
    ASSERT_EQ(run(with(args, {"--out", dir("rerun_b")})).rc, 0);
    for (const char* f : {"fit.json", "coefficients.csv", "cv.csv"})
        EXPECT_EQ(slurp(dir("rerun_a/") + f), slurp(dir("rerun_b/") + f)) << f;
    auto ma = io::read_json_file(dir("rerun_a/manifest.json"));
    auto mb = io::read_json_file(dir("rerun_b/manifest.json"));
    ma.erase("created_utc");
    mb.erase("created_utc");
    EXPECT_EQ(ma.dump(), mb.dump());
}

TEST_F(CliData, ReplayFitAndDetectTampering)
{
    ASSERT_EQ(run(with({"fit"}, with(data_args(), {"--out", dir("fit_cv")}))).rc, 0);
    const Outcome r = replay(dir("fit_cv"));
    EXPECT_EQ(r.rc, 0) << r.err;
    EXPECT_TRUE(contains(r.out, "replay ok")) << r.out;

    // A manifest whose recorded output differs is reported as a mismatch.
    auto m = io::read_json_file(dir("fit_cv/manifest.json"));
    m["outputs"]["coefficients.csv"] = "0000000000000000";
    spit(dir("fit_cv/manifest.json"), m.dump(2));
    EXPECT_EQ(replay(dir("fit_cv")).rc, cli::exit_mismatch);
}

TEST_F(CliData, ReplayRejectsChangedInput)
{
    const std::string counts = dir("counts_copy.csv");
    spit(counts, slurp(sim("counts.csv")));
    ASSERT_EQ(run({"fit", "--counts", counts, "--response", sim("response.csv"), "--lambda", "0.1", "--out", dir("fit_copy")}).rc, 0);
    spit(counts, slurp(sim("counts.csv")) + "\n");
    const Outcome r = replay(dir("fit_copy"));
    EXPECT_EQ(r.rc, cli::exit_input);
    EXPECT_TRUE(contains(r.err, "changed")) << r.err;
}

TEST_F(CliData, SelectDefaultsAndThreshold)
{
    const Outcome r = run(with({"select"}, with(data_args(), {"--bootstrap", "3", "--pair-halves", "--out", dir("sel")})));
    ASSERT_EQ(r.rc, 0) << r.err;
    const auto j = io::read_json_file(dir("sel/stability.json"));
    EXPECT_EQ(j["subsample_size"].get<int>(), 20);
    EXPECT_DOUBLE_EQ(j["threshold"].get<double>(), 0.6);
    const auto t = csv::read_file(dir("sel/stability.csv"));
    EXPECT_EQ(t.header, (std::vector<std::string>{"taxon", "frequency", "selected", "sign"}));
    EXPECT_EQ(replay(dir("sel")).rc, 0);

    const Outcome hi = run(with({"select"}, with(data_args(), {"--bootstrap", "2", "--threshold", "1.1", "--out", dir("sel_hi")})));
    ASSERT_EQ(hi.rc, 0) << hi.err;
    EXPECT_TRUE(contains(hi.err, "warning")) << hi.err;
    EXPECT_TRUE(io::read_json_file(dir("sel_hi/stability.json"))["selected"].empty());
}

TEST_F(CliData, RipBudgetAndReplay)
{
    const Outcome big = run({"rip", "--counts", sim("counts.csv"), "--s", "6", "--budget", "100", "--out", dir("rip_big")});
    EXPECT_EQ(big.rc, cli::exit_budget);
    EXPECT_TRUE(contains(big.err, "randomized")) << big.err;
    ASSERT_EQ(run({"rip", "--counts", sim("counts.csv"), "--s", "2", "--out", dir("rip")}).rc, 0);
    EXPECT_EQ(replay(dir("rip")).rc, 0);
    ASSERT_EQ(run({"rip", "--counts", sim("counts.csv"), "--s", "3", "--method", "randomized", "--supports", "50", "--out", dir("rip_r")}).rc, 0);
    EXPECT_TRUE(io::read_json_file(dir("rip_r/rip.json"))["lower_bound"].get<bool>());
}

TEST_F(CliData, SimulateReplay) { EXPECT_EQ(replay(dir("sim")).rc, 0); }

TEST(Cli, BenchReplayIgnoresRuntime)
{
    Scratch s("bench");
    const Outcome r = run({"bench", "--n", "20", "--p", "10", "--alpha", "200", "--replicates", "2", "--methods", "vc,zr:0.5",
                       "--path-num", "10", "--out", s / "b"});
    ASSERT_EQ(r.rc, 0) << r.err;
    const auto t = csv::read_file(s / "b/bench.csv");
    EXPECT_EQ(t.rows.size(), 4u);
    const auto m = io::read_json_file(s / "b/manifest.json");
    EXPECT_EQ(m["volatile_columns"]["bench.csv"][0], "runtime_ms");
    EXPECT_EQ(replay(s / "b").rc, 0);
}

TEST(Cli, BiasAndRateReplay)
{
    Scratch s("bias");
    const Outcome b = run({"bias", "--plot", "--out", s / "bias"});
    ASSERT_EQ(b.rc, 0) << b.err;
    EXPECT_TRUE(contains(b.out, "add(0.5)"));
    EXPECT_EQ(replay(s / "bias").rc, 0);
    ASSERT_EQ(run({"bias", "--mode", "mc", "--nu", "5,10", "--draws", "2000", "--out", s / "mc"}).rc, 0);
    EXPECT_EQ(replay(s / "mc").rc, 0);

    const Outcome rt = run({"rate", "--p", "12", "--unpaired", "--n-grid", "20,40", "--replicates", "2", "--bootstrap", "20",
                        "--out", s / "rate"});
    ASSERT_EQ(rt.rc, 0) << rt.err;
    EXPECT_EQ(replay(s / "rate").rc, 0);
}

TEST(Cli, UsageErrors)
{
    EXPECT_EQ(run({}).rc, cli::exit_usage);
    EXPECT_EQ(run({"fit"}).rc, cli::exit_usage);
    EXPECT_EQ(run({"bogus"}).rc, cli::exit_usage);
    const Outcome r = run({"rip", "--s", "2", "--method", "sideways"});
    EXPECT_EQ(r.rc, cli::exit_usage);
    EXPECT_TRUE(contains(r.err, "error[usage]"));
    EXPECT_EQ(run({"--version"}).rc, 0);
}

TEST(Cli, BadInputsExitWithInputCode)
{
    Scratch s("bad");
    spit(s / "counts.csv", "a,b,c\n1,2,3\n4,-5,6\n");
    spit(s / "y.csv", "y\n1\n2\n");
    const Outcome r = run({"fit", "--counts", s / "counts.csv", "--response", s / "y.csv", "--out", s / "o"});
    EXPECT_EQ(r.rc, cli::exit_input);
    EXPECT_TRUE(contains(r.err, "negative")) << r.err;
}
