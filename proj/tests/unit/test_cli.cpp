#include "zsml/csv.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "zsml_cli_test";

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << s;
}

// Runs the CLI with `args`; stderr goes to `log`. Returns the exit status.
int run(const std::string& args, const fs::path& log = kRoot / "last.log", const std::string& env = "") {
    const std::string cmd = env + " \"" ZSML_CLI_PATH "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        fs::remove_all(kRoot);
        fs::create_directories(kRoot);
        spit(kRoot / "gen.json", R"({"generator": {"n_per_group": 20, "d_aux": 3}, "seed": 4})");
        spit(kRoot / "fast.json",
             R"({"meta": {"meta_iterations": 20}, "base": {"hidden_dim": 8, "embedding_dim": 8}})");
        ASSERT_EQ(run("generate --config " + (kRoot / "gen.json").string() + " --out " + (kRoot / "data").string()), 0);
    }

    static std::string data_args() {
        return "--data " + (kRoot / "data/data.csv").string() + " --manifest " +
               (kRoot / "data/manifest.json").string() + " --config " + (kRoot / "fast.json").string();
    }

    static std::set<std::string> column(const fs::path& csv_path, std::size_t col) {
        std::set<std::string> out;
        const auto rows = zsml::csv::parse(slurp(csv_path));
        for (std::size_t i = 1; i < rows.size(); ++i) out.insert(rows[i][col]);
        return out;
    }
};

} // namespace

TEST_F(Cli, GenerateWritesThreeFilesDeterministically) {
    for (const char* f : {"data.csv", "manifest.json", "ground_truth.json"}) EXPECT_TRUE(fs::exists(kRoot / "data" / f));
    ASSERT_EQ(run("generate --config " + (kRoot / "gen.json").string() + " --out " + (kRoot / "data2").string()), 0);
    for (const char* f : {"data.csv", "manifest.json", "ground_truth.json"})
        EXPECT_EQ(slurp(kRoot / "data" / f), slurp(kRoot / "data2" / f)) << f;
    EXPECT_NE(slurp(kRoot / "data/ground_truth.json").find("config_hash"), std::string::npos);
}

TEST_F(Cli, MalformedConfigNamesTheKey) {
    spit(kRoot / "bad.json", R"({"generator": {"n_groups": 3}})");
    EXPECT_EQ(run("generate --config " + (kRoot / "bad.json").string() + " --out " + (kRoot / "bad").string()), 2);
    EXPECT_NE(slurp(kRoot / "last.log").find("n_groups"), std::string::npos);
    spit(kRoot / "bad2.json", R"({"sed": 3})");
    EXPECT_EQ(run("cv --data " + (kRoot / "data/data.csv").string() + " --manifest " +
                  (kRoot / "data/manifest.json").string() + " --config " + (kRoot / "bad2.json").string()),
              2);
    EXPECT_NE(slurp(kRoot / "last.log").find("sed"), std::string::npos);
}

TEST_F(Cli, CvReportsEveryFoldAndModel) {
    ASSERT_EQ(run("cv " + data_args() + " --seed 3 --out " + (kRoot / "cv").string()), 0);
    EXPECT_EQ(column(kRoot / "cv/report.csv", 3), (std::set<std::string>{"g0", "g1", "g2"}));
    EXPECT_EQ(column(kRoot / "cv/report.csv", 5),
              (std::set<std::string>{"base_learner", "knn", "mean", "median", "meta_learner", "ridge"}));
    for (const char* f : {"summary.json", "plot_summary.csv", "plot_gap.csv"}) EXPECT_TRUE(fs::exists(kRoot / "cv" / f));
}

TEST_F(Cli, CvIsByteIdenticalAcrossRunsAndJobCounts) {
    ASSERT_EQ(run("cv " + data_args() + " --seed 8 --out " + (kRoot / "r1").string()), 0);
    ASSERT_EQ(run("cv " + data_args() + " --seed 8 --jobs 3 --out " + (kRoot / "r2").string()), 0);
    for (const char* f : {"report.csv", "summary.json", "plot_summary.csv", "plot_gap.csv"})
        EXPECT_EQ(slurp(kRoot / "r1" / f), slurp(kRoot / "r2" / f)) << f;
    ASSERT_EQ(run("cv " + data_args() + " --seed 9 --out " + (kRoot / "r3").string()), 0);
    EXPECT_NE(slurp(kRoot / "r1/report.csv"), slurp(kRoot / "r3/report.csv"));
}

TEST_F(Cli, HoldoutExcludeRemovesFold) {
    ASSERT_EQ(run("cv " + data_args() + " --holdout-exclude g1 --out " + (kRoot / "ex").string()), 0);
    EXPECT_EQ(column(kRoot / "ex/report.csv", 3), (std::set<std::string>{"g0", "g2"}));
    EXPECT_EQ(run("cv " + data_args() + " --holdout-exclude nope --out " + (kRoot / "ex2").string()), 3);
}

TEST_F(Cli, OutputDirectoryFromEnvironment) {
    const fs::path dir = kRoot / "from_env";
    ASSERT_EQ(run("cv " + data_args(), kRoot / "last.log", "ZSML_OUTPUT_DIR=\"" + dir.string() + "\""), 0);
    EXPECT_TRUE(fs::exists(dir / "report.csv"));
}

TEST_F(Cli, GridSearchBudgets) {
    ASSERT_EQ(run("grid-search " + data_args() + " --budget 1 --seed 2 --out " + (kRoot / "gs1").string()), 0);
    const auto rows = zsml::csv::parse(slurp(kRoot / "gs1/leaderboard.csv"));
    EXPECT_EQ(rows.size(), 2u);
    EXPECT_TRUE(fs::exists(kRoot / "gs1/best_config.json"));
    ASSERT_EQ(run("grid-search " + data_args() + " --budget 1 --seed 2 --out " + (kRoot / "gs2").string()), 0);
    EXPECT_EQ(slurp(kRoot / "gs1/leaderboard.csv"), slurp(kRoot / "gs2/leaderboard.csv"));
    EXPECT_EQ(run("grid-search " + data_args() + " --budget 0 --out " + (kRoot / "gs0").string()), 2);
}

TEST_F(Cli, ReportRegeneratesSummaries) {
    ASSERT_EQ(run("cv " + data_args() + " --out " + (kRoot / "rep").string()), 0);
    ASSERT_EQ(run("report --report " + (kRoot / "rep/report.csv").string() + " --out " + (kRoot / "rep2").string()), 0);
    EXPECT_EQ(slurp(kRoot / "rep/plot_summary.csv"), slurp(kRoot / "rep2/plot_summary.csv"));
    EXPECT_EQ(slurp(kRoot / "rep/plot_gap.csv"), slurp(kRoot / "rep2/plot_gap.csv"));
}

TEST_F(Cli, ErrorsMapToExitCodes) {
    EXPECT_EQ(run("frobnicate"), 2);
    EXPECT_EQ(run("cv --data nope.csv --manifest nope.json"), 2);
    spit(kRoot / "broken/data.csv", "group,x1\ng0,abc\n");
    spit(kRoot / "broken/manifest.json",
         R"({"columns": [{"name": "group", "role": "group", "kind": "categorical", "timing": "pre"},
                         {"name": "x1", "role": "feature", "kind": "numeric", "timing": "pre"},
                         {"name": "y", "role": "target", "kind": "numeric", "timing": "post"}]})");
    EXPECT_EQ(run("cv --data " + (kRoot / "broken/data.csv").string() + " --manifest " +
                  (kRoot / "broken/manifest.json").string()),
              3);
    EXPECT_EQ(run("--version"), 0);
}
