#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "support/fixtures.hpp"

using epsarb::testing::data_path;
using json = epsarb::io::json;

namespace {

struct CliRun {
    int code = -1;
    std::string out, err;
    json report() const { return json::parse(out); }
    json error() const { return json::parse(err); }
};

CliRun run(std::vector<std::string> args) {
    std::ostringstream out, err;
    CliRun r;
    r.code = epsarb::cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string temp_file(const std::string& name, const std::string& text) {
    const auto p = std::filesystem::temp_directory_path() / ("epsarb_cli_" + name);
    std::ofstream(p) << text;
    return p.string();
}

}  // namespace

TEST(CliCommands, CriticalValueOfTheClosureMarket) {
    const CliRun r = run({"critical-value", data_path("kbar_market.json"), "--p", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NEAR(r.report()["epsilon_P"].get<double>(), 0.5, 1e-5);
    EXPECT_FALSE(r.report()["discrepancy"].get<bool>());
}

TEST(CliCommands, FairRangeIsHalfOpen) {
    const CliRun r = run({"fair-range", data_path("price_range.json"), "--p", "2", "--payoff", data_path("psi.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    const json iv = r.report()["interval"];
    EXPECT_NEAR(iv["lo"].get<double>(), -0.5, 1e-6);
    EXPECT_NEAR(iv["hi"].get<double>(), 1.0, 1e-6);
    EXPECT_TRUE(iv["lo_open"].get<bool>());
    EXPECT_FALSE(iv["hi_open"].get<bool>());
}

TEST(CliCommands, AdaptedDistanceOnTheCounterexample) {
    const CliRun r = run({"aw", "--variant", "delta", data_path("p0.json"), data_path("peps.json"), "--q", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NEAR(r.report()["value"].get<double>(), 2.0, 1e-12);
    EXPECT_EQ(run({"aw-delta", data_path("p0.json"), data_path("peps.json")}).report()["value"], r.report()["value"]);
    EXPECT_NEAR(run({"w-inf", "--variant", "delta", data_path("p0.json"), data_path("peps.json")}).report()["value"].get<double>(),
                0.5, 1e-12);
}

TEST(CliCommands, KnotheRosenblattAndElog) {
    const CliRun kr = run({"kr", data_path("kr_p.json"), data_path("kr_pprime.json")});
    ASSERT_EQ(kr.code, 0) << kr.err;
    EXPECT_EQ(kr.report()["cost"].get<double>(), 5.0);
    const CliRun e = run({"elog", data_path("kr_p.json"), data_path("kr_pprime.json"), "--lambda", "200"});
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_GE(e.report()["value"].get<double>(), 3.95);
    EXPECT_LE(e.report()["value"].get<double>(), 4.0);
}

TEST(CliCommands, StabilityOnTheCounterexampleHolds) {
    const CliRun r = run({"stability", data_path("p0.json"), data_path("peps.json"), "--eps", "0.1"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NEAR(r.report()["distance"].get<double>(), 2.0, 1e-12);
}

TEST(CliCommands, AdaptedEmpiricalFromCsv) {
    const std::string csv = temp_file("samples.csv", "0.6,0.1\n0.1,0.9\n0.1,0.9\n0.1,0.9\n0.1,0.9\n0.1,0.9\n0.1,0.9\n0.1,0.9\n");
    const CliRun r = run({"adapted-empirical", csv});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.report()["cells_per_axis"].get<int>(), 2);
    EXPECT_NEAR(r.report()["exponent"].get<double>(), 1.0 / 3.0, 1e-15);
    const std::string bad = temp_file("bad.csv", "0.5,1.5\n");
    EXPECT_EQ(run({"adapted-empirical", bad}).code, 1);
}

TEST(CliExitCodes, DomainOutcomesExitTwo) {
    EXPECT_EQ(run({"check-arbitrage", data_path("nostrictarb.json"), "--eps", "0.05"}).code, 2);
    EXPECT_EQ(run({"check-arbitrage", data_path("nostrictarb.json")}).code, 0);
    EXPECT_EQ(run({"na-prime", data_path("nostrictarb.json")}).code, 2);
    EXPECT_EQ(run({"find-emm", data_path("nsaem.json")}).code, 2);
    const CliRun f = run({"fair-range", data_path("price_range.json"), "--eps", "0.1", "--payoff", data_path("psi.json")});
    EXPECT_EQ(f.code, 2);
    EXPECT_EQ(f.report()["error"], "domain");
}

TEST(CliExitCodes, InputErrorsExitOneWithAPointer) {
    const CliRun missing = run({"critical-value", "/nonexistent/market.json"});
    EXPECT_EQ(missing.code, 1);
    EXPECT_EQ(missing.error()["error"], "input");

    const std::string bad = temp_file(
        "bad.json", R"({"T":1,"d":1,"nodes":[{"id":"a","time":0,"parent":null,"cond_prob":"x","prices":[0]}]})");
    const CliRun b = run({"critical-value", bad});
    EXPECT_EQ(b.code, 1);
    EXPECT_EQ(b.error()["pointer"], "/nodes/0/cond_prob");

    const std::string malformed = temp_file("malformed.json", R"({"T":1,)");
    EXPECT_EQ(run({"critical-value", malformed}).code, 1);

    EXPECT_EQ(run({"critical-value", data_path("kbar_market.json"), "--p", "0.5"}).code, 1);
    EXPECT_EQ(run({"find-emm", data_path("nsaem.json"), "--eta", "0"}).code, 1);
    EXPECT_EQ(run({"elog", data_path("kr_p.json"), data_path("kr_pprime.json")}).code, 1);
    EXPECT_EQ(run({"no-such-command"}).code, 1);
    EXPECT_EQ(run({"aw", data_path("kr_p.json")}).code, 1);
    EXPECT_EQ(run({"aw", data_path("kr_p.json"), data_path("kbar_market.json"), "--variant", "cubic"}).code, 1);
}

TEST(CliConfig, UnknownKeysAreRejectedAndFlagsWin) {
    const std::string bogus = temp_file("bogus.json", R"({"eps": 0.1, "bogus": 1})");
    const CliRun r = run({"find-emm", data_path("nsaem.json"), "--config", bogus});
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.error()["pointer"], "/bogus");

    const std::string cfg = temp_file("cfg.json", R"({"eps": 0.05})");
    EXPECT_EQ(run({"check-arbitrage", data_path("nostrictarb.json"), "--config", cfg}).code, 2);
    EXPECT_EQ(run({"check-arbitrage", data_path("nostrictarb.json"), "--config", cfg, "--eps", "0.5"}).code, 0);

    // lambda is not an option of find-emm
    const std::string wrong = temp_file("wrong.json", R"({"lambda": 2})");
    EXPECT_EQ(run({"find-emm", data_path("nsaem.json"), "--config", wrong}).code, 1);
}

TEST(CliOutput, RepeatedRunsAreByteIdentical) {
    const std::vector<std::vector<std::string>> cases{
        {"superhedge", data_path("price_range.json"), "--payoff", data_path("psi.json")},
        {"node-structure", data_path("kbar_market.json")},
        {"elog", data_path("four_atom.json"), data_path("kr_p.json"), "--lambda", "3"},
        {"adapted-empirical", data_path("four_atom.json"), "--samples", "256", "--seed", "11", "--lambda", "5"},
    };
    for (const auto& c : cases) {
        const CliRun a = run(c), b = run(c);
        ASSERT_EQ(a.code, 0) << a.err;
        EXPECT_EQ(a.out, b.out) << c.front();
    }
    const CliRun s1 = run({"adapted-empirical", data_path("four_atom.json"), "--samples", "64", "--seed", "1"});
    const CliRun s2 = run({"adapted-empirical", data_path("four_atom.json"), "--samples", "64", "--seed", "2"});
    EXPECT_NE(s1.out, s2.out);
}

TEST(CliOutput, OutFlagWritesTheSameReport) {
    const auto path = (std::filesystem::temp_directory_path() / "epsarb_cli_out.json").string();
    std::filesystem::remove(path);
    const CliRun to_stdout = run({"kr", data_path("kr_p.json"), data_path("kr_pprime.json")});
    const CliRun to_file = run({"kr", data_path("kr_p.json"), data_path("kr_pprime.json"), "--out", path});
    ASSERT_EQ(to_file.code, 0);
    EXPECT_TRUE(to_file.out.empty());
    std::ifstream f(path, std::ios::binary);
    const std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    EXPECT_EQ(text, to_stdout.out);
}

TEST(CliOutput, HelpListsEveryCommand) {
    const CliRun r = run({"--help"});
    EXPECT_EQ(r.code, 0);
    for (const auto& [name, desc] : epsarb::cli::commands()) EXPECT_NE(r.out.find(name), std::string::npos) << name;
}
