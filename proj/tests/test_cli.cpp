#include <sstream>

#include <gtest/gtest.h>

#include "cli_app.hpp"
#include "decisionbench/io.hpp"
#include "decisionbench/tagger.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using decisionbench::cli::run_command;
using testsupport::TempDir;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_command(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

void simulate_small(const fs::path& dir) {
  const auto r = run({"simulate", "--out-dir", dir.string(), "--cells", "2x1x2", "--tasks", "5", "--seed", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
}

}  // namespace

TEST(Cli, SimulateThenRollup) {
  TempDir tmp("cli-rollup");
  simulate_small(tmp.path());
  for (const char* f : {"records.jsonl.gz", "stage1.jsonl.gz", "pool.json", "manifests/simulate.json"})
    EXPECT_TRUE(fs::exists(tmp.path() / f)) << f;
  const auto r = run({"metrics", "rollup", "--out-dir", tmp.path().string(), "--seed", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = lines_of(decisionbench::io::read_text(tmp.path() / "analysis" / "rollup.csv"));
  ASSERT_EQ(lines.size(), 2u + 4u);
  EXPECT_TRUE(lines[0].starts_with("# manifest: "));
  EXPECT_EQ(lines[1], "cell,mean_q,mean_cost,mean_latency,p90_latency,dlg_rate,n");
  EXPECT_TRUE(lines[2].ends_with(",5"));
}

TEST(Cli, TagIsByteStable) {
  TempDir tmp("cli-tag");
  simulate_small(tmp.path());
  const auto dir = tmp.path().string();
  ASSERT_EQ(run({"tag", "--out-dir", dir, "--seed", "4"}).code, 0);
  const auto first = decisionbench::io::read_text(tmp.path() / "tags.tsv");
  ASSERT_EQ(run({"tag", "--out-dir", dir, "--seed", "4"}).code, 0);
  EXPECT_EQ(decisionbench::io::read_text(tmp.path() / "tags.tsv"), first);
  const auto lines = lines_of(first);
  ASSERT_GE(lines.size(), 3u);
  EXPECT_EQ(lines[1], "# tagger: " + decisionbench::TaggerConfig{}.version);
}

TEST(Cli, BuildC2WritesOneCardPerModel) {
  TempDir tmp("cli-c2");
  simulate_small(tmp.path());
  ASSERT_EQ(run({"profile", "build-c2", "--out-dir", tmp.path().string(), "--seed", "4"}).code, 0);
  const auto pool = decisionbench::PoolRegistry::from_json(
      nlohmann::json::parse(decisionbench::io::read_text(tmp.path() / "pool.json")));
  std::size_t cards = 0;
  for (const auto& e : fs::directory_iterator(tmp.path() / "profile_cards" / "c2_static")) {
    ++cards;
    const auto text = decisionbench::io::read_text(e.path());
    EXPECT_TRUE(text.starts_with("---\n"));
    EXPECT_NE(text.find(decisionbench::TaggerConfig{}.version), std::string::npos);
  }
  EXPECT_EQ(cards, pool.size());
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({"no-such-command"}).code, 2);
  EXPECT_EQ(run({"metrics", "--bogus-flag"}).code, 2);
  TempDir tmp("cli-codes");
  EXPECT_EQ(run({"ingest", "--out-dir", tmp.path().string()}).code, 2);  // no records file
  EXPECT_EQ(run({"simulate", "--out-dir", tmp.path().string(), "--cells", "2x1"}).code, 2);
  EXPECT_EQ(run({"metrics", "rollup", "--out-dir", tmp.path().string(), "--k", "0"}).code, 2);
}

TEST(Cli, IngestReportsViolations) {
  TempDir tmp("cli-ingest");
  simulate_small(tmp.path());
  const auto dir = tmp.path().string();
  ASSERT_EQ(run({"ingest", "--out-dir", dir}).code, 0);

  auto bad = testsupport::record("t1", "model-00");
  bad.quality = 2.0;
  const auto records = tmp.path() / "bad.jsonl";
  decisionbench::io::write_text(records, decisionbench::emit_record(bad) + "\n");
  const auto r = run({"ingest", "--out-dir", dir, "--records", records.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(decisionbench::io::read_text(tmp.path() / "validation.txt").find("quality out of [0,1]"), std::string::npos);
}

TEST(Cli, ReportDetectsStaleManifest) {
  TempDir tmp("cli-report");
  simulate_small(tmp.path());
  const auto dir = tmp.path().string();
  ASSERT_EQ(run({"metrics", "rollup", "--out-dir", dir, "--seed", "4"}).code, 0);
  EXPECT_EQ(run({"report", "--out-dir", dir, "--seed", "4"}).code, 0);
  const auto r = run({"report", "--out-dir", dir, "--seed", "4", "--k", "2"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(decisionbench::io::read_text(tmp.path() / "report.txt").find("stale manifest"), std::string::npos);
}

TEST(Cli, SplitIsDeterministic) {
  TempDir tmp("cli-split");
  simulate_small(tmp.path());
  const auto dir = tmp.path().string();
  ASSERT_EQ(run({"split", "--out-dir", dir, "--seed", "4"}).code, 0);
  const auto first = decisionbench::io::read_text(tmp.path() / "split.csv");
  ASSERT_EQ(run({"split", "--out-dir", dir, "--seed", "4"}).code, 0);
  EXPECT_EQ(decisionbench::io::read_text(tmp.path() / "split.csv"), first);
  EXPECT_NE(first.find("stratum,task_id,stage"), std::string::npos);
}
