#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

namespace fs = std::filesystem;

namespace {

// Per-test scratch directory; ctest runs the cases as parallel processes.
fs::path kWork;

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + HYPERSED_CLI + "\" " + args + " >\"" + (kWork / "stdout").string() +
                          "\" 2>\"" + (kWork / "stderr").string() + "\"";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void put(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    kWork = fs::temp_directory_path() /
            (std::string("hypersed_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    put(kWork / "small.json",
        R"({"epochs": 10, "hidden": 16, "latent": 8, "assign_hidden": 8, "max_clusters": 20})");
    ASSERT_EQ(run("synth --n 80 --k 3 --dim 8 --seed 2 --days 9 --out " + (kWork / "corpus.jsonl").string()), 0);
  }
  void TearDown() override { fs::remove_all(kWork); }

  static std::string p(const char* name) { return (kWork / name).string(); }
};

}  // namespace

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("detect --corpus " + p("corpus.jsonl")), 1);
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, IngestCheckAndBlocks) {
  EXPECT_EQ(run("ingest-check " + p("corpus.jsonl")), 0);
  EXPECT_NE(slurp(kWork / "stdout").find("messages\t80"), std::string::npos);
  EXPECT_EQ(run("blocks " + p("corpus.jsonl")), 0);
  // Header plus the first week plus days 8 and 9.
  const auto out = slurp(kWork / "stdout");
  EXPECT_EQ(std::count(out.begin(), out.end(), '\n'), 4);
}

TEST_F(Cli, StageExitCodes) {
  put(kWork / "broken.jsonl", "{\"id\": \"a\"}\n");
  EXPECT_EQ(run("ingest-check " + p("broken.jsonl")), 2);
  EXPECT_NE(slurp(kWork / "stderr").find("line 1"), std::string::npos);
  EXPECT_EQ(run("ingest-check " + p("missing.jsonl")), 2);
  put(kWork / "bad_config.json", R"({"epochz": 3})");
  EXPECT_EQ(run("detect --corpus " + p("corpus.jsonl") + " --config " + p("bad_config.json") + " --out " + p("o")),
            3);
  EXPECT_EQ(run("detect --corpus " + p("corpus.jsonl") + " --mode sideways --out " + p("o")), 3);
  EXPECT_EQ(run("synth --n 10 --noise -1 --out " + p("x.jsonl")), 3);
  put(kWork / "bad_labels.tsv", "ghost\t0\n");
  EXPECT_EQ(run("evaluate --labels " + p("bad_labels.tsv") + " --corpus " + p("corpus.jsonl")), 9);
  EXPECT_EQ(run("export-disc --latents " + p("missing.tsv") + " --out " + p("d.csv")), 2);
}

TEST_F(Cli, DetectEvaluateExport) {
  const std::string det = "detect --corpus " + p("corpus.jsonl") + " --config " + p("small.json") + " --no-timings ";
  ASSERT_EQ(run(det + "--out " + p("a")), 0);
  ASSERT_EQ(run(det + "--out " + p("b")), 0);
  EXPECT_EQ(slurp(kWork / "a" / "labels.tsv"), slurp(kWork / "b" / "labels.tsv"));
  EXPECT_EQ(slurp(kWork / "a" / "report.json"), slurp(kWork / "b" / "report.json"));
  ASSERT_EQ(run(det + "--seed 9 --no-checkpoint --out " + p("c")), 0);
  EXPECT_FALSE(fs::exists(kWork / "c" / "checkpoint.json"));
  EXPECT_NE(slurp(kWork / "c" / "report.json").find("\"seed\": 9"), std::string::npos);

  ASSERT_EQ(run("evaluate --labels " + p("a/labels.tsv") + " --corpus " + p("corpus.jsonl") + " --out " +
                p("scores.txt")),
            0);
  const auto scores = slurp(kWork / "scores.txt");
  EXPECT_EQ(scores, slurp(kWork / "stdout"));
  EXPECT_EQ(scores.rfind("NMI\t", 0), 0u);

  ASSERT_EQ(run("export-disc --latents " + p("a/latents.tsv") + " --out " + p("disc.csv")), 0);
  const auto csv = slurp(kWork / "disc.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 81);
}

TEST_F(Cli, OnlineMode) {
  ASSERT_EQ(run("detect --mode online --corpus " + p("corpus.jsonl") + " --config " + p("small.json") + " --out " +
                p("on")),
            0);
  for (int b = 0; b < 3; ++b) EXPECT_TRUE(fs::exists(kWork / "on" / ("labels_block" + std::to_string(b) + ".tsv")));
  EXPECT_NE(slurp(kWork / "stdout").find("blocks\t3"), std::string::npos);
  EXPECT_NE(slurp(kWork / "on" / "report.json").find("timings_sec"), std::string::npos);
}
