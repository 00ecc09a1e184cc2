#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args, const std::string& env = "")
{
    const std::string cmd = env + " '" + std::string(BLINDEQ_CLI) + "' " + args + " 2>/dev/null";
    FILE* p = popen(cmd.c_str(), "r");
    Run r;
    if (!p) return r;
    std::array<char, 4096> buf;
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override
    {
        dir_ = fs::temp_directory_path() /
               ("blindeq_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string write(const std::string& name, const std::string& text) const
    {
        const auto p = dir_ / name;
        std::ofstream(p) << text;
        return p.string();
    }

    static std::string slurp(const std::string& path)
    {
        std::ifstream in(path);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    fs::path dir_;
};

const char* kSmall = "mode = uncoded-linear\nalgo = cma,lms\ntrials = 3\nL = 200\nK = 400\ncma.epochs = 2\nlms.epochs = 2\n";

} // namespace

TEST_F(Cli, ThresholdsNearPublishedValues)
{
    const auto r = run("thresholds ht1 ht2 ht3");
    ASSERT_EQ(r.code, 0);
    std::istringstream in(r.out);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "channel,rate,threshold_db");
    const double expect[] = {2.84, 2.95, 3.0};
    for (double e : expect) {
        ASSERT_TRUE(std::getline(in, line));
        EXPECT_NEAR(std::stod(line.substr(line.rfind(',') + 1)), e, 0.05) << line;
    }
}

TEST_F(Cli, SelftestPasses)
{
    const auto r = run("selftest");
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST_F(Cli, MissingCodeFileIsIoError)
{
    EXPECT_EQ(run("decode --mode coded-linear --code " + (dir_ / "nope.alist").string()).code, 4);
}

TEST_F(Cli, UnknownKeyIsConfigError)
{
    EXPECT_EQ(run("sweep --config " + write("bad.cfg", "foo = 3\n")).code, 2);
    EXPECT_EQ(run("sweep --set foo=3").code, 2);
    EXPECT_EQ(run("sweep --mode uncoded-linear --algo turbo-em").code, 2);
}

TEST_F(Cli, MissingConfigFileIsIoError)
{
    EXPECT_EQ(run("sweep --config " + (dir_ / "missing.cfg").string()).code, 4);
}

TEST_F(Cli, FlagOverridesFileAndSummaryEchoesConfig)
{
    const std::string cfg = write("s.cfg", std::string(kSmall) + "snr = 0:1:10\n");
    const std::string out = (dir_ / "r.csv").string();
    ASSERT_EQ(run("sweep --config " + cfg + " --snr 4,6 --out " + out).code, 0);
    const auto j = nlohmann::json::parse(slurp(out + ".json"));
    EXPECT_EQ(j["config"]["snr"], "4,6");
    EXPECT_EQ(j["truncated"], false);
    EXPECT_EQ(j["planned"], 12);
    EXPECT_EQ(j["completed"], 12);
    EXPECT_EQ(j["aggregates"].size(), 4u);
    std::istringstream csv(slurp(out));
    std::string line;
    std::size_t rows = 0;
    while (std::getline(csv, line)) ++rows;
    EXPECT_EQ(rows, 13u);
}

TEST_F(Cli, SweepIsByteIdenticalAndReproducibleFromEmbeddedConfig)
{
    const std::string cfg = write("s.cfg", kSmall);
    const std::string a = (dir_ / "a.csv").string(), b = (dir_ / "b.csv").string(), c = (dir_ / "c.csv").string();
    ASSERT_EQ(run("sweep --config " + cfg + " --seed 5 --out " + a).code, 0);
    ASSERT_EQ(run("sweep --config " + cfg + " --seed 5 --workers 3 --out " + b).code, 0);
    EXPECT_EQ(slurp(a), slurp(b));
    const auto j = nlohmann::json::parse(slurp(a + ".json"));
    EXPECT_EQ(j["aggregates"], nlohmann::json::parse(slurp(b + ".json"))["aggregates"]);
    const std::string embedded = write("embedded.cfg", j["config_text"].get<std::string>());
    ASSERT_EQ(run("sweep --config " + embedded + " --out " + c).code, 0);
    EXPECT_EQ(slurp(a), slurp(c));
}

TEST_F(Cli, WorkersFromEnvironment)
{
    const std::string cfg = write("s.cfg", kSmall);
    const std::string out = (dir_ / "e.csv").string();
    ASSERT_EQ(run("sweep --config " + cfg + " --out " + out, "BLINDEQ_WORKERS=2").code, 0);
    EXPECT_EQ(nlohmann::json::parse(slurp(out + ".json"))["config"]["workers"], "2");
    EXPECT_EQ(run("sweep --config " + cfg + " --out " + out, "BLINDEQ_WORKERS=zero").code, 2);
}

TEST_F(Cli, EqualizePrintsJson)
{
    const auto r = run("equalize --mode uncoded-linear --algo lms --set L=200 --set K=400 --set lms.epochs=2");
    ASSERT_EQ(r.code, 0);
    const auto j = nlohmann::json::parse(r.out);
    ASSERT_EQ(j["trials"].size(), 1u);
    EXPECT_EQ(j["trials"][0]["algorithm"], "lms");
    EXPECT_EQ(j["config"]["mode"], "uncoded-linear");
}

TEST_F(Cli, DecodeRejectsUncodedMode)
{
    EXPECT_EQ(run("decode --mode uncoded-linear").code, 2);
}

TEST_F(Cli, UnknownSubcommandIsUsageError)
{
    EXPECT_EQ(run("frobnicate").code, 2);
}
