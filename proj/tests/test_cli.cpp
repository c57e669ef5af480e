#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"
#include "tfd/cli.hpp"

using tfd::testing::slurp;
using tfd::testing::spit;
using tfd::testing::TempDir;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "tfd");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = tfd::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

const std::vector<std::string> kTinyModel = {"--width", "16", "--heads", "2", "--mlp-hidden", "16",
                                             "--steps", "2", "--batch-size", "2"};

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Cli, VersionAndHelp) {
  Result v = run({"--version"});
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find(tfd::kVersion), std::string::npos);
  EXPECT_EQ(run({"train", "--help"}).code, 0);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"gen-data"}).code, 1);
  EXPECT_EQ(run({"gen-data", "--out", "x", "--count", "many"}).code, 1);
  TempDir dir;
  Result r = run({"train", "--data", dir / "d", "--out", dir / "m", "--log", dir / "l", "--tasks", "oscc,foo"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("tfd train"), std::string::npos) << r.err;
}

TEST(Cli, RuntimeErrorsExitTwoNamingTheStage) {
  TempDir dir;
  Result r = run({"eval", "--checkpoint", dir / "missing.ckpt", "--data", dir / "missing.ndjson"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("tfd eval: ", 0), 0u) << r.err;
  spit(dir / "bad.ndjson", "{\"seed\": 1}\n");
  ASSERT_EQ(run({"gen-data", "--count", "2", "--frames", "4", "--out", dir / "d.ndjson"}).code, 0);
  Result t = run(concat({"train", "--data", dir / "bad.ndjson", "--out", dir / "m", "--log", dir / "l"},
                        kTinyModel));
  EXPECT_EQ(t.code, 2);
  EXPECT_NE(t.err.find("bad.ndjson:1"), std::string::npos) << t.err;
}

TEST(Cli, GenDataIsReproducibleAndRecordsTheRun) {
  TempDir dir;
  ASSERT_EQ(run({"gen-data", "--count", "5", "--seed", "3", "--out", dir / "a.ndjson"}).code, 0);
  const std::string first = slurp(dir / "a.ndjson");
  ASSERT_EQ(run({"gen-data", "--count", "5", "--seed", "3", "--out", dir / "a.ndjson"}).code, 0);
  EXPECT_EQ(slurp(dir / "a.ndjson"), first);
  const std::string header = first_line(slurp(dir / "a.ndjson"));
  EXPECT_NE(header.find("\"command\":\"gen-data\""), std::string::npos) << header;
  EXPECT_NE(header.find("\"seed\":3"), std::string::npos) << header;
  EXPECT_NE(header.find("\"count\""), std::string::npos) << header;
  EXPECT_EQ(lines(slurp(dir / "a.ndjson")).size(), 6u);
}

TEST(Cli, TrainingPipeline) {
  TempDir dir;
  const std::string data = dir / "d.ndjson";
  ASSERT_EQ(run({"gen-data", "--count", "4", "--frames", "4", "--seed", "1", "--out", data}).code, 0);

  Result tr = run(concat({"train", "--data", data, "--out", dir / "m.ckpt", "--log", dir / "log.csv",
                          "--tasks", "oscc,pnr"},
                         kTinyModel));
  ASSERT_EQ(tr.code, 0) << tr.err;
  const auto log = lines(slurp(dir / "log.csv"));
  ASSERT_EQ(log.size(), 4u);
  EXPECT_EQ(log[0].rfind("# ", 0), 0u);
  EXPECT_NE(log[0].find("\"tasks\":\"oscc,pnr\""), std::string::npos) << log[0];
  EXPECT_EQ(log[1], "step,loss_total,loss_oscc,loss_pnr,loss_scod,sigma2_1,sigma2_2,sigma2_3");
  for (std::size_t i = 2; i < log.size(); ++i) {
    std::vector<std::string> f;
    std::stringstream ss(log[i]);
    for (std::string c; std::getline(ss, c, ',');) f.push_back(c);
    f.resize(8);
    EXPECT_EQ(f[0], std::to_string(i - 1));
    EXPECT_FALSE(f[2].empty());
    EXPECT_FALSE(f[3].empty());
    EXPECT_TRUE(f[4].empty()) << log[i];
    EXPECT_TRUE(f[7].empty()) << log[i];
  }

  // Same inputs, same bytes.
  ASSERT_EQ(run(concat({"train", "--data", data, "--out", dir / "m2.ckpt", "--log", dir / "log2.csv",
                        "--tasks", "oscc,pnr"},
                       kTinyModel))
                .code,
            0);
  EXPECT_EQ(slurp(dir / "m.ckpt").substr(slurp(dir / "m.ckpt").find('\n')),
            slurp(dir / "m2.ckpt").substr(slurp(dir / "m2.ckpt").find('\n')));

  Result ev = run({"eval", "--checkpoint", dir / "m.ckpt", "--data", data});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(ev.out.find("metric,value"), std::string::npos);
  EXPECT_NE(ev.out.find("oscc_accuracy"), std::string::npos);
  EXPECT_EQ(ev.out.find("scod_mean_iou"), std::string::npos) << ev.out;

  Result da = run({"dump-attention", "--checkpoint", dir / "m.ckpt", "--data", data, "--index", "1",
                   "--out", dir / "att.csv"});
  ASSERT_EQ(da.code, 0) << da.err;
  const std::string att = slurp(dir / "att.csv");
  EXPECT_NE(att.find("layer,block,head,query,key,weight"), std::string::npos);
  EXPECT_EQ(run({"dump-attention", "--checkpoint", dir / "m.ckpt", "--data", data, "--index", "9",
                 "--out", dir / "x.csv"})
                .code,
            1);

  Result ex = run({"export-embeddings", "--checkpoint", dir / "m.ckpt", "--data", data, "--limit", "2",
                   "--out", dir / "emb.csv"});
  ASSERT_EQ(ex.code, 0) << ex.err;
  const auto emb = lines(slurp(dir / "emb.csv"));
  ASSERT_GE(emb.size(), 2u);
  EXPECT_EQ(emb[1].rfind("clip,clip_seed,state_change,frame,tag,e0,", 0), 0u) << emb[1];
  EXPECT_EQ(emb.size(), 2u + 2u * 4u);

  // A dataset with a different clip shape is refused.
  ASSERT_EQ(run({"gen-data", "--count", "2", "--frames", "6", "--out", dir / "d6.ndjson"}).code, 0);
  EXPECT_EQ(run({"eval", "--checkpoint", dir / "m.ckpt", "--data", dir / "d6.ndjson"}).code, 2);
}

TEST(Cli, BehaviorCloningPipeline) {
  TempDir dir;
  const std::string data = dir / "d.ndjson";
  ASSERT_EQ(run({"gen-data", "--count", "2", "--out", data}).code, 0);
  ASSERT_EQ(run(concat({"train", "--data", data, "--out", dir / "m.ckpt", "--log", dir / "log.csv"},
                       {"--width", "16", "--heads", "2", "--mlp-hidden", "16", "--steps", "1",
                        "--batch-size", "1"}))
                .code,
            0);
  ASSERT_EQ(run({"bc-demos", "--count", "2", "--out", dir / "demos.ndjson"}).code, 0);
  Result bt = run({"bc-train", "--demos", dir / "demos.ndjson", "--checkpoint", dir / "m.ckpt", "--out",
                   dir / "p.ckpt", "--steps", "5", "--batch-size", "8", "--proprio", "off"});
  ASSERT_EQ(bt.code, 0) << bt.err;
  Result be = run({"bc-eval", "--policy", dir / "p.ckpt", "--checkpoint", dir / "m.ckpt", "--episodes", "3"});
  ASSERT_EQ(be.code, 0) << be.err;
  EXPECT_NE(be.out.find("seed,episodes,success_rate"), std::string::npos);
  EXPECT_EQ(run({"bc-train", "--demos", dir / "demos.ndjson", "--checkpoint", dir / "m.ckpt", "--out",
                 dir / "q.ckpt", "--proprio", "maybe"})
                .code,
            1);
  Result bc = run({"bc-compare", "--checkpoint", dir / "m.ckpt", "--runs", "2", "--demos", "2",
                   "--episodes", "2", "--steps", "3", "--batch-size", "8"});
  ASSERT_EQ(bc.code, 0) << bc.err;
  const auto rows = lines(bc.out);
  EXPECT_NE(bc.out.find("seed,episodes,trained_success,baseline_success,gap"), std::string::npos);
  EXPECT_EQ(rows.back().rfind("mean,", 0), 0u) << bc.out;
}

TEST(Cli, GradCheckReportsEveryCase) {
  TempDir dir;
  Result r = run({"gradcheck", "--repeats", "1", "--out", dir / "gc.csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(slurp(dir / "gc.csv"));
  std::size_t body = 0;
  for (const auto& l : rows) {
    if (l.empty() || l[0] == '#' || l.rfind("case,", 0) == 0) continue;
    ++body;
    EXPECT_TRUE(l.ends_with(",pass")) << l;
  }
  EXPECT_GE(body, 10u);
}
