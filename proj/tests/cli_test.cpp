#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pixeldcl/bench.hpp"
#include "pixeldcl/shapes.hpp"

using namespace pixeldcl;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + PIXELDCL_CLI + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pixeldcl_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const std::string kTiny = "--steps 3 --count 4 --size 32 --base-channels 4 --batch 2";

}  // namespace

TEST(Cli, CheckPassesAndCatchesInjectedFault) {
  const RunResult ok = run("check");
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("ALL PASS"), std::string::npos);
  EXPECT_NE(ok.out.find("max_err="), std::string::npos);

  const RunResult bad = run("check", "PIXELDCL_INJECT_FAULT=1");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("FAIL grad_periodic_shuffle"), std::string::npos) << bad.out;
}

TEST(Cli, DemoUpsampleIsDeterministic) {
  const fs::path dir = scratch("demo");
  const std::string a = (dir / "a.ppm").string(), b = (dir / "b.ppm").string();
  const RunResult ra = run("demo-upsample --kind dcl --seed 4 --out " + a);
  const RunResult rb = run("demo-upsample --kind dcl --seed 4 --out " + b);
  ASSERT_EQ(ra.code, 0) << ra.out;
  ASSERT_EQ(rb.code, 0) << rb.out;
  EXPECT_EQ(ra.out, rb.out);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_EQ(slurp(a).rfind("P6\n128 128\n255\n", 0), 0u);

  const auto pos = ra.out.find("checkerboard_score=");
  ASSERT_NE(pos, std::string::npos);
  EXPECT_GT(std::stod(ra.out.substr(pos + 19)), 0.0);

  // An image input is accepted too.
  Rng rng(1);
  write_ppm(rng_uniform(rng, Shape{1, 3, 4, 6}, 0.0, 1.0), (dir / "in.ppm").string());
  const RunResult rc = run("demo-upsample --kind pixeldcl --in " + (dir / "in.ppm").string() +
                           " --out " + (dir / "c.ppm").string());
  EXPECT_EQ(rc.code, 0) << rc.out;
  EXPECT_EQ(slurp(dir / "c.ppm").rfind("P6\n48 32\n255\n", 0), 0u) << rc.out;
  fs::remove_all(dir);
}

TEST(Cli, UsageErrorsExitTwo) {
  const fs::path dir = scratch("usage");
  EXPECT_EQ(run("demo-upsample --kind bogus --out " + (dir / "x.ppm").string()).code, 2);
  EXPECT_EQ(run("bench --repeats 3").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("eval --ckpt " + (dir / "missing").string()).code, 2);
  EXPECT_EQ(run("train --size 34 --out-dir " + (dir / "t").string()).code, 2);
  EXPECT_EQ(run("--config " + (dir / "nope.cfg").string() + " check").code, 2);
  std::ofstream(dir / "bad.ppm") << "P3\n1 1\n255\n0 0 0\n";
  EXPECT_EQ(run("demo-upsample --in " + (dir / "bad.ppm").string()).code, 2);
  EXPECT_EQ(run("--help").code, 0);
  fs::remove_all(dir);
}

TEST(Cli, TrainThenEvalIsDeterministic) {
  const fs::path dir = scratch("train");
  const RunResult t = run("train " + kTiny + " --seed 2 --out-dir " + (dir / "run").string());
  ASSERT_EQ(t.code, 0) << t.out;
  EXPECT_NE(t.out.find("step 2 loss"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoint" / "manifest.txt"));
  const std::string losses = slurp(dir / "run" / "loss.csv");
  EXPECT_EQ(losses.rfind("step,loss\n", 0), 0u);
  EXPECT_EQ(std::count(losses.begin(), losses.end(), '\n'), 4);

  const std::string ckpt = (dir / "run" / "checkpoint").string();
  const std::string data = " --count 4 --size 32 --seed 2";
  const RunResult e1 = run("eval --ckpt " + ckpt + data + " --out-dir " + (dir / "e1").string());
  const RunResult e2 = run("eval --ckpt " + ckpt + data + " --out-dir " + (dir / "e2").string());
  ASSERT_EQ(e1.code, 0) << e1.out;
  ASSERT_EQ(e2.code, 0) << e2.out;
  EXPECT_NE(e1.out.find("2 held-out samples"), std::string::npos) << e1.out;
  EXPECT_EQ(slurp(dir / "e1" / "metrics.csv"), slurp(dir / "e2" / "metrics.csv"));
  EXPECT_EQ(slurp(dir / "e1" / "metrics.csv").rfind("metric,value\n", 0), 0u);
  for (const char* f : {"image_000.ppm", "truth_000.ppm", "pred_001.ppm"})
    EXPECT_TRUE(fs::exists(dir / "e1" / f)) << f;

  // Default output directory sits next to the checkpoint.
  EXPECT_EQ(run("eval --ckpt " + ckpt + data + " --images 0").code, 0);
  EXPECT_TRUE(fs::exists(ckpt + "_eval/metrics.csv"));
  fs::remove_all(dir);
}

TEST(Cli, ConfigFileAndFlagPrecedence) {
  const fs::path dir = scratch("config");
  std::ofstream(dir / "run.cfg") << "# tiny run\nsteps = 2\ncount=4\nsize=32\nbase-channels=4\n"
                                 << "batch=2\nkind=dcl\n";
  const std::string cfg = "--config " + (dir / "run.cfg").string();
  const RunResult from_file = run(cfg + " train --out-dir " + (dir / "a").string());
  ASSERT_EQ(from_file.code, 0) << from_file.out;
  EXPECT_NE(from_file.out.find("step 1 loss"), std::string::npos);
  EXPECT_EQ(from_file.out.find("step 2 loss"), std::string::npos);

  const RunResult flag_wins = run(cfg + " train --steps 3 --out-dir " + (dir / "b").string());
  ASSERT_EQ(flag_wins.code, 0) << flag_wins.out;
  EXPECT_NE(flag_wins.out.find("step 2 loss"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, BenchReportsFlopOrder) {
  const fs::path dir = scratch("bench");
  const RunResult r =
      run("bench --shape 1,2,8,8 --repeats 5 --csv " + (dir / "bench.csv").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("PASS flops(pixeldcl_fast) < flops(ipixeldcl)"), std::string::npos);
  EXPECT_NE(r.out.find("expected direction, not enforced"), std::string::npos);
  const std::string csv = slurp(dir / "bench.csv");
  EXPECT_EQ(csv.rfind("kind,n,c,h,w,forward_ms,backward_ms,flops\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);

  const RunResult art = run("artifacts --kinds dcl,pixeldcl --seeds 2");
  EXPECT_EQ(art.code, 0) << art.out;
  EXPECT_NE(art.out.find("pixeldcl"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Bench, RejectsTooFewRepeats) {
  const std::array<UpsampleKind, 1> kinds{UpsampleKind::dcl};
  EXPECT_THROW(bench_forward(kinds, Shape{1, 1, 4, 4}, 4), value_error);
}

TEST(Bench, FlopsDeterministicAndOrdered) {
  const std::array<UpsampleKind, 3> kinds{UpsampleKind::dcl, UpsampleKind::ipixeldcl,
                                          UpsampleKind::pixeldcl_fast};
  const auto a = bench_forward(kinds, Shape{1, 2, 6, 6}, 5);
  const auto b = bench_forward(kinds, Shape{1, 2, 6, 6}, 5);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].flops, b[i].flops);
    EXPECT_GE(a[i].forward_ms, 0.0);
    EXPECT_GE(a[i].backward_ms, 0.0);
  }
  EXPECT_LT(a[2].flops, a[1].flops);
}

TEST(Bench, TimingOrder) {
  auto row = [](UpsampleKind k, double ms) { return BenchResult{k, Shape{}, ms, 0.0, 0}; };
  EXPECT_TRUE(timing_order_matches({row(UpsampleKind::dcl, 1), row(UpsampleKind::pixeldcl_fast, 2),
                                    row(UpsampleKind::ipixeldcl, 3)}));
  EXPECT_FALSE(timing_order_matches({row(UpsampleKind::dcl, 3),
                                     row(UpsampleKind::pixeldcl_fast, 2),
                                     row(UpsampleKind::ipixeldcl, 1)}));
  EXPECT_FALSE(timing_order_matches({row(UpsampleKind::dcl, 1)}));
}
