#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "../tools/report_io.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int rc = -1;
    std::string out;
};

Result run(const std::string& args) {
    const std::string cmd = std::string(FK_CLI_PATH) + " " + args + " 2>/dev/null";
    Result r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    std::size_t n = 0;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

class Cli : public ::testing::Test {
protected:
    static fs::path dir;

    static void SetUpTestSuite() {
        dir = fs::temp_directory_path() / ("fk_cli_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        const std::string cmd = std::string(FK_SYNTH_PATH) + " --out-dir " + (dir / "d").string() +
                                " --market 12 --dataset 12 --series --seed 4 >/dev/null";
        ASSERT_EQ(std::system(cmd.c_str()), 0);
    }
    static void TearDownTestSuite() { fs::remove_all(dir); }

    static std::string inputs() {
        const fs::path d = dir / "d";
        return "-q " + (d / "questions.jsonl").string() + " -o " + (d / "outcomes.jsonl").string() +
               " --forecasts " + (d / "forecasts.jsonl").string();
    }
};

fs::path Cli::dir;

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
    EXPECT_EQ(run("--help").rc, 0);
    EXPECT_EQ(run("").rc, 1);
    EXPECT_EQ(run("score").rc, 1);
    EXPECT_EQ(run("nosuch").rc, 1);
    EXPECT_EQ(run("score -q /nonexistent/questions.jsonl --forecasts /nonexistent/f.jsonl").rc, 1);
    EXPECT_EQ(run("aggregate " + inputs() + " --method bogus").rc, 1);
}

TEST_F(Cli, ScorePrintsEverySplit) {
    const Result r = run("score " + inputs());
    ASSERT_EQ(r.rc, 0);
    EXPECT_EQ(r.out.rfind("method,metric,split,value,n\n", 0), 0u);
    for (const char* row : {"agent,BS,market,", "agent,BS,dataset,", "agent,BS,overall,", "zero-shot,BI,overall,",
                            "agent,ECE,overall,"})
        EXPECT_NE(r.out.find(row), std::string::npos) << row;
}

TEST_F(Cli, AggregateThenCalibrate) {
    const fs::path agg = dir / "agg.jsonl";
    ASSERT_EQ(run("aggregate " + inputs() + " --method shrink_prior --tune-loo --out " + agg.string() +
                  " --tuning-out " + (dir / "tuning.csv").string())
                  .rc,
              0);
    std::ifstream in(agg);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        const double p = j.at("probability");
        EXPECT_GE(p, 0.05);
        EXPECT_LE(p, 0.95);
        ++n;
    }
    EXPECT_EQ(n, 3u * 48u);  // three methods over 12 market + 12x3 dataset events
    EXPECT_EQ(slurp(dir / "tuning.csv").rfind("method,question_id,f,c\n", 0), 0u);

    const fs::path d = dir / "d";
    const Result cal = run("calibrate -q " + (d / "questions.jsonl").string() + " -o " + (d / "outcomes.jsonl").string() +
                        " --forecasts " + agg.string() + " -m agent --out -");
    ASSERT_EQ(cal.rc, 0);
    EXPECT_NE(cal.out.find("\"method_id\":\"agent\""), std::string::npos);
    // several methods in the file and no --method is a usage error
    EXPECT_EQ(run("calibrate -q " + (d / "questions.jsonl").string() + " -o " + (d / "outcomes.jsonl").string() +
                  " --forecasts " + agg.string() + " --out -")
                  .rc,
              1);
}

TEST_F(Cli, DegenerateLabelsAreNumericalFailures) {
    const fs::path d = dir / "d";
    const fs::path ones = dir / "ones.jsonl";
    {
        std::ifstream in(d / "outcomes.jsonl");
        std::ofstream out(ones);
        std::string line;
        while (std::getline(in, line)) {
            auto j = nlohmann::json::parse(line);
            j["outcome"] = 1;
            out << j.dump() << '\n';
        }
    }
    const fs::path mean = dir / "mean.jsonl";
    ASSERT_EQ(run("aggregate " + inputs() + " -m agent --method mean --out " + mean.string()).rc, 0);
    const Result r = run("calibrate -q " + (d / "questions.jsonl").string() + " -o " + ones.string() + " --forecasts " +
                         mean.string() + " --cal.no-loo --out -");
    EXPECT_EQ(r.rc, 2);
}

TEST_F(Cli, CompareAndAnova) {
    const Result c = run("compare " + inputs() + " -r zero-shot --resamples 200 --seed 3 --out -");
    ASSERT_EQ(c.rc, 0);
    EXPECT_EQ(c.out.rfind("treatment,reference,delta,ci_low,ci_high,p,stars,n\n", 0), 0u);
    EXPECT_NE(c.out.find("agent,zero-shot,"), std::string::npos);
    EXPECT_EQ(run("compare " + inputs() + " -r zero-shot --resamples 200 --seed 3 --jobs 3 --out -").out, c.out);

    const Result a = run("anova " + inputs() + " --out -");
    ASSERT_EQ(a.rc, 0);
    EXPECT_NE(a.out.find("\nmethod,"), std::string::npos);
    EXPECT_NE(a.out.find("\nquestion,"), std::string::npos);
    EXPECT_NE(a.out.find("\nresidual,"), std::string::npos);
}

TEST_F(Cli, TsModelAndSimulate) {
    const fs::path d = dir / "d";
    const Result t = run("tsmodel -q " + (d / "questions.jsonl").string() + " --series-dir " + (d / "series").string() +
                      " --out -");
    ASSERT_EQ(t.rc, 0);
    std::istringstream lines(t.out);
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        const double p = j.at("probability");
        EXPECT_GT(p, 0.0);
        EXPECT_LT(p, 1.0);
        ++n;
    }
    EXPECT_EQ(n, 36u);

    const std::string sim = "simulate -q " + (d / "questions.jsonl").string() + " --policy random --seed 3 --series-dir " +
                            (d / "series").string() + " --traces-out - ";
    const Result s = run(sim);
    ASSERT_EQ(s.rc, 0);
    EXPECT_EQ(run(sim + "--jobs 4").out, s.out);
    std::istringstream traces(s.out);
    n = 0;
    while (std::getline(traces, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(j.contains("question_id"));
        ++n;
    }
    EXPECT_EQ(n, 24u);
}

TEST_F(Cli, PipelineWritesReportsWithSidecars) {
    const fs::path rep = dir / "rep";
    ASSERT_EQ(run("pipeline " + inputs() + " --reference zero-shot --resamples 200 --out-dir " + rep.string()).rc, 0);
    for (const char* name : {"forecasts.jsonl", "scores.csv", "compare.csv", "tuning.csv"}) {
        const fs::path p = rep / name;
        ASSERT_TRUE(fs::exists(p)) << name;
        const std::string content = slurp(p);
        const auto meta = nlohmann::json::parse(slurp(p.string() + ".meta.json"));
        EXPECT_EQ(meta.at("command"), "pipeline");
        EXPECT_EQ(meta.at("sha1"), fk::tools::git_blob_sha1(content));
        EXPECT_EQ(meta.at("bytes"), content.size());
        EXPECT_EQ(meta.at("inputs").at("questions.jsonl"), fk::tools::git_blob_sha1(slurp(dir / "d" / "questions.jsonl")));
    }
}

TEST(GitBlobSha1, MatchesGit) {
    // `printf 'hello\n' | git hash-object --stdin` and the empty blob
    EXPECT_EQ(fk::tools::git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
    EXPECT_EQ(fk::tools::git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}
