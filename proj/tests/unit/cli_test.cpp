#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"

using namespace mixref;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "mixref");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Run r;
    r.code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const std::string kData = MIXREF_DATA_DIR;
const std::string kGolden = MIXREF_GOLDEN_DIR;

std::vector<std::string> pubcase(const std::string& hypotheses = "hypotheses.json") {
    const auto dir = kData + "/pubcase/";
    return {"--freqs", dir + "frequencies.csv", "--profiles", dir + "profiles.csv", "--trace", dir + "MC15.csv",
            "--trace", dir + "MC18.csv", "--hypothesis", dir + hypotheses};
}

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

/// A two-marker case with one known contributor written to a scratch directory.
class SmallCase : public ::testing::Test {
  protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("mixref_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::create_directories(dir_);
        spit(dir_ / "freqs.csv",
             "marker,allele,frequency\nA,10,0.1\nA,11,0.2\nA,12,0.3\nA,13,0.4\nB,7,0.3\nB,8,0.3\nB,9,0.4\n");
        spit(dir_ / "profiles.csv", "individual,marker,allele1,allele2\nK,A,11,12\nK,B,7,8\nS,A,13,13\nS,B,9,9\n");
        spit(dir_ / "mixed.csv",
             "trace_id,marker,allele,height\nT1,A,10,60\nT1,A,11,900\nT1,A,12,1000\nT1,A,13,310\n"
             "T1,B,7,950\nT1,B,8,1010\nT1,B,9,280\n");
        spit(dir_ / "single.csv",
             "trace_id,marker,allele,height\nT1,A,10,70\nT1,A,11,900\nT1,A,12,1000\nT1,B,7,950\nT1,B,8,1010\n");
        spit(dir_ / "case.json", R"({
          "hypotheses": [{"id": "H1", "known": ["K"], "unknowns": 1},
                         {"id": "H0", "known": ["K"], "unknowns": 0},
                         {"id": "HS", "known": ["K", "S"], "unknowns": 0}],
          "prosecution": "H1", "defence": "H1",
          "simulation": {"contributors": ["K"], "draw": 1,
                         "traces": [{"id": "S1", "mu": 1000, "sigma": 0.2, "xi": 0.08, "phi": [0.7, 0.3]}]}
        })");
        spit(dir_ / "fixed.json", R"({
          "hypotheses": [{"id": "H1", "known": ["K"], "unknowns": 1}],
          "prosecution": "H1",
          "fixed": {"H1": {"eta": 50, "xi": 0.08, "mu": {"T1": 1000}, "phi": {"T1": [0.7, 0.3]}}}
        })");
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    std::vector<std::string> args(const std::string& trace = "mixed.csv", const std::string& hyp = "case.json") const {
        return {"--freqs", path("freqs.csv"), "--profiles", path("profiles.csv"), "--trace", path(trace),
                "--hypothesis", path(hyp)};
    }

    fs::path dir_;
};

}  // namespace

TEST(Cli, MissingFrequencyFileIsALoadError) {
    auto a = pubcase();
    a[1] = "/nonexistent/frequencies.csv";
    const auto r = run(std::vector<std::string>{"fit"} + a);
    EXPECT_EQ(r.code, cli::kExitLoad);
    const auto err = Json::parse(r.err);
    EXPECT_NE(err.at("error").get<std::string>().find("frequency table not found"), std::string::npos);
    EXPECT_EQ(err.at("kind"), "load");
}

TEST(Cli, UsageErrors) {
    EXPECT_EQ(run({}).code, cli::kExitUsage);
    EXPECT_EQ(run({"fit", "--bogus"}).code, cli::kExitUsage);
    EXPECT_EQ(run({"sweep", "--k", "9"}).code, cli::kExitUsage);
    const auto r = run({"fit", "--freqs", kData + "/pubcase/frequencies.csv"});
    EXPECT_EQ(r.code, cli::kExitLoad);
    EXPECT_NE(r.err.find("--hypothesis is required"), std::string::npos);
    EXPECT_EQ(run({"--help"}).code, cli::kExitOk);
}

TEST_F(SmallCase, AllFixedFitEchoesInputs) {
    const auto r = run(std::vector<std::string>{"fit", "--json"} + args("mixed.csv", "fixed.json"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = Json::parse(r.out);
    const auto& p = j.at("parameters").at(0);
    EXPECT_DOUBLE_EQ(p.at("eta").get<double>(), 50.0);
    EXPECT_DOUBLE_EQ(p.at("rho").get<double>(), 20.0);
    EXPECT_DOUBLE_EQ(p.at("xi").get<double>(), 0.08);
    EXPECT_EQ(p.at("phi").get<std::vector<double>>(), (std::vector<double>{0.7, 0.3}));
    for (const auto& e : j.at("estimates")) {
        EXPECT_TRUE(e.at("fixed").get<bool>());
        EXPECT_TRUE(e.at("se").is_null());
    }
    EXPECT_EQ(j.at("standard_error_note"), "no free parameters");

    // log10 L is the direct evaluation at the fixed point.
    auto traces = load_traces(path("mixed.csv"));
    apply_thresholds(traces, {}, 50.0);
    const Evidence ev(load_frequencies(path("freqs.csv")), traces, load_profiles(path("profiles.csv")),
                      make_hypothesis("H1", {"K"}, 1));
    ModelParameters mp;
    mp.traces.push_back({20.0, 50.0, 0.08, {0.7, 0.3}});
    EXPECT_NEAR(j.at("log10_likelihood").get<double>(), total_log_likelihood(ev, mp) / std::log(10.0), 1e-12);
}

TEST_F(SmallCase, IdenticalHypothesesGiveZeroBans) {
    const auto r = run(std::vector<std::string>{"woe", "--json"} + args());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(Json::parse(r.out).at("woe_bans").get<double>(), 0.0);
}

TEST_F(SmallCase, DeconvolveWithoutUnknowns) {
    const auto r = run(std::vector<std::string>{"deconvolve", "--json", "--id", "H0", "--k", "1"} + args("single.csv"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = Json::parse(r.out);
    ASSERT_EQ(j.at("profiles").size(), 1u);
    EXPECT_DOUBLE_EQ(j.at("profiles")[0].at("probability").get<double>(), 1.0);
    EXPECT_TRUE(j.at("profiles")[0].at("profile").empty());
}

TEST_F(SmallCase, UnexplainablePeaksFailToConverge) {
    // Without an unknown the peaks at 13 and 9 have zero probability.
    const auto r = run(std::vector<std::string>{"fit", "--id", "H0"} + args());
    EXPECT_EQ(r.code, cli::kExitConvergence);
    EXPECT_EQ(Json::parse(r.err).at("kind"), "convergence");
}

TEST_F(SmallCase, SweepIsNonDecreasing) {
    const auto r = run(std::vector<std::string>{"sweep", "--json", "--id", "H1", "--max-unknowns", "3"} + args());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = Json::parse(r.out).at("rows");
    ASSERT_EQ(rows.size(), 3u);
    for (std::size_t k = 1; k < rows.size(); ++k) {
        EXPECT_GE(rows[k].at("log10_likelihood").get<double>(), rows[k - 1].at("log10_likelihood").get<double>() - 1e-6);
    }
}

TEST_F(SmallCase, SimulateIsSeedDeterministic) {
    auto a = std::vector<std::string>{"simulate", "--freqs", path("freqs.csv"), "--profiles", path("profiles.csv"),
                                      "--hypothesis", path("case.json")};
    const auto r1 = run(a + std::vector<std::string>{"--seed", "7", "--truth", path("truth.csv")});
    const auto r2 = run(a + std::vector<std::string>{"--seed", "7"});
    const auto r3 = run(a + std::vector<std::string>{"--seed", "8"});
    ASSERT_EQ(r1.code, 0) << r1.err;
    EXPECT_EQ(r1.out, r2.out);
    EXPECT_NE(r1.out, r3.out);
    std::istringstream in(r1.out);
    const auto traces = read_traces(in);
    ASSERT_EQ(traces.size(), 1u);
    EXPECT_EQ(traces[0].id, "S1");
    const auto truth = load_profiles(path("truth.csv"));
    EXPECT_EQ(truth.size(), 2u);
    EXPECT_TRUE(truth.count("K"));

    // Writing to a file prints a summary instead.
    const auto r4 = run(a + std::vector<std::string>{"--seed", "7", "--out", path("sim.csv")});
    ASSERT_EQ(r4.code, 0) << r4.err;
    EXPECT_EQ(slurp(path("sim.csv")), r1.out);
    EXPECT_NE(r4.out.find("seed 7"), std::string::npos);
}

TEST_F(SmallCase, DiagnoseWritesPitCsv) {
    const auto r = run(std::vector<std::string>{"diagnose", "--json", "--out", path("pit.csv")} + args());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = Json::parse(r.out);
    EXPECT_EQ(j.at("peaks").get<int>(), 7);
    EXPECT_TRUE(j.at("truncated").get<bool>());
    const double p = j.at("ks_p_value").get<double>();
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    const auto csv = slurp(path("pit.csv"));
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 8);
    EXPECT_EQ(csv.rfind("peak_id,trace,marker,allele,height,pit\n", 0), 0u);
    const auto u = run(std::vector<std::string>{"diagnose", "--json", "--untruncated"} + args());
    ASSERT_EQ(u.code, 0) << u.err;
    EXPECT_FALSE(Json::parse(u.out).at("truncated").get<bool>());
}

TEST_F(SmallCase, SavedReportRendersIdentically) {
    const auto r = run(std::vector<std::string>{"woe", "--out", path("woe.json")} + args());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rendered = run({"render", path("woe.json")});
    ASSERT_EQ(rendered.code, 0) << rendered.err;
    EXPECT_EQ(rendered.out, r.out);
}

TEST(Cli, PubcaseFitMatchesGoldenAndIsDeterministic) {
    const auto a = run(std::vector<std::string>{"fit", "--json", "--seed", "1"} + pubcase());
    const auto b = run(std::vector<std::string>{"fit", "--json", "--seed", "1"} + pubcase());
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(a.out, b.out);
    const auto j = Json::parse(a.out);
    EXPECT_EQ(j.at("hypothesis"), "Hp");
    EXPECT_TRUE(j.at("converged").get<bool>());
    EXPECT_TRUE(j.at("standard_errors_available").get<bool>());
    EXPECT_EQ(render_text(j), slurp(kGolden + "/pubcase_fit_hp.txt"));
}

TEST(Cli, PubcaseArtefactReportHasStutterRow) {
    const auto r = run(std::vector<std::string>{"artefacts", "--json"} + pubcase("defence_fixed.json"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = Json::parse(r.out);
    bool found = false;
    for (const auto& row : j.at("rows")) {
        if (row.at("trace") == "MC18" && row.at("marker") == "D2S1338" && row.at("allele") == "22") {
            found = true;
            EXPECT_EQ(row.at("height").get<double>(), 55.0);
            EXPECT_TRUE(row.at("p_stutter").is_number());
            EXPECT_TRUE(row.at("p_dropout").is_null());
        }
    }
    EXPECT_TRUE(found);
}
