// One PASS/FAIL line per acceptance criterion; REPORT lines carry measured
// quantities that are expected in direction but not enforced.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pixeldcl/bench.hpp"
#include "pixeldcl/check.hpp"

using namespace pixeldcl;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void verdict(int id, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << std::endl;
  if (!pass) ++failures;
}

void report(int id, const std::string& detail) {
  std::cout << "REPORT criterion " << id << ": " << detail << std::endl;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

bool all_pass(const std::vector<CheckResult>& rs, double& worst) {
  bool ok = true;
  for (const auto& r : rs) {
    ok = ok && r.pass;
    worst = std::max(worst, r.max_error);
  }
  return ok;
}

double dataset_loss(UNet& net, const std::vector<Sample>& samples) {
  double total = 0.0;
  for (const Sample& s : samples) {
    total += ad::softmax_ce_value(unet_logits(net, s.image), s.labels, nullptr);
  }
  return total / static_cast<double>(samples.size());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Relative path -> bytes for every file below `dir`.
std::map<std::string, std::string> tree_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  const CheckResult r = check_decomposition(50);
  const double secs = seconds_since(t0);
  verdict(1, r.pass && r.max_error < 1e-12 && secs < 5.0,
          "decomposition vs direct over 50 cases, max abs err " + fmt(r.max_error) +
              " (< 1e-12), " + fmt(secs) + " s (< 5 s)");
}

void criterion_2() {
  const CheckResult r = check_shuffle_bijection(100);
  verdict(2, r.pass, "shuffle/unshuffle identities on 100 random tensors, " +
                         std::to_string(static_cast<long>(r.max_error)) + " mismatches");
}

void criterion_3() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  const bool ops = all_pass(check_gradients(3, 1e-4), worst);
  const bool unet = all_pass(check_unet_gradients(1e-4), worst);
  const double secs = seconds_since(t0);
  verdict(3, ops && unet && secs < 60.0,
          "grad_check of all ops, layers and the 16x16 U-Net, max rel err " + fmt(worst) +
              " (<= 1e-4, eps 1e-5), " + fmt(secs) + " s (< 60 s)");
}

void criterion_4() {
  double worst = 0.0;
  const bool ok = all_pass(check_tap_counts(), worst);
  std::ostringstream counts;
  for (std::size_t c : {1, 2, 4, 8}) {
    counts << " c=" << c << ":" << weight_count(make_layer(UpsampleKind::pixeldcl_fast, c, c))
           << "<" << weight_count(make_layer(UpsampleKind::dcl, c, c));
  }
  verdict(4, ok,
          "taps dcl/ipixeldcl/pixeldcl_fast = " +
              std::to_string(tap_count(make_layer(UpsampleKind::dcl, 1, 1))) + "/" +
              std::to_string(tap_count(make_layer(UpsampleKind::ipixeldcl, 1, 1))) + "/" +
              std::to_string(tap_count(make_layer(UpsampleKind::pixeldcl_fast, 1, 1))) +
              " (36/36/22), weights" + counts.str());
}

void criterion_5() {
  const CheckResult r = check_mask_invariant(100);
  verdict(5, r.pass, "largest masked-tap magnitude after 100 Adam steps " + fmt(r.max_error));
}

void criterion_6() {
  const auto split = split_by_parity(gen_dataset(1, 64, 64, 64));
  std::map<UpsampleKind, double> miou;
  for (UpsampleKind kind :
       {UpsampleKind::dcl, UpsampleKind::ipixeldcl, UpsampleKind::pixeldcl_fast}) {
    UNetConfig cfg;
    cfg.upsample_kind = kind;
    cfg.seed = 1;
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult r = train(cfg, split.train, TrainOptions{});
    UNet initial = init_unet(cfg);
    const double before = dataset_loss(initial, split.train);
    const double after = dataset_loss(r.model, split.train);
    const MetricsReport m = evaluate(r.model, split.test);
    const double secs = seconds_since(t0);
    miou[kind] = m.mean_iou;
    verdict(6, after < 0.5 * before && m.mean_iou >= 0.5 && secs < 600.0,
            std::string(kind_name(kind)) + ": train-set loss " + fmt(before) + " -> " +
                fmt(after) + " (ratio " + fmt(after / before) + " < 0.5; batch loss " +
                fmt(r.losses.front()) + " -> " + fmt(r.losses.back()) + "), held-out mIoU " +
                fmt(m.mean_iou) + " (>= 0.5), " + fmt(secs) + " s (< 600 s)");
  }
  report(6, "mIoU(pixeldcl_fast) - mIoU(dcl) = " +
                fmt(miou[UpsampleKind::pixeldcl_fast] - miou[UpsampleKind::dcl]) +
                ", mIoU(ipixeldcl) - mIoU(dcl) = " +
                fmt(miou[UpsampleKind::ipixeldcl] - miou[UpsampleKind::dcl]));
}

void criterion_7() {
  const auto rows = artifact_ab_compare(kAllUpsampleKinds, 20);
  double dcl_min = 1.0;
  for (double s : rows[0].scores) dcl_min = std::min(dcl_min, s);
  double zero_max = 0.0;
  for (UpsampleKind kind : kAllUpsampleKinds) {
    std::vector<UpsampleLayer> stack{make_layer(kind, 3, 8), make_layer(kind, 8, 8),
                                     make_layer(kind, 8, 3)};
    const Tensor out = run_stack(stack, Tensor(Shape{1, 3, 8, 8}, 0.4));
    zero_max = std::max(zero_max, checkerboard_score(out));
  }
  verdict(7, rows[0].kind == UpsampleKind::dcl && dcl_min > 1e-6 && zero_max == 0.0,
          "min DCL-stack score over 20 seeds " + fmt(dcl_min) +
              " (> 1e-6), zero-kernel constant-input score " + fmt(zero_max) + " (== 0)");
  std::ostringstream row;
  for (const auto& r : rows) row << kind_name(r.kind) << "=" << fmt(r.mean) << " ";
  const bool lower = rows[2].mean < rows[0].mean;
  report(7, "mean scores " + row.str() + "; pixeldcl < dcl " +
                (lower ? "observed" : "not observed") + " (expected direction, not enforced)");
}

void criterion_8() {
  const Shape shape{1, 16, 32, 32};
  bool ok = true;
  std::ostringstream detail;
  for (std::size_t c : {1, 2, 4, 8, 16}) {
    const auto fast = flop_count(UpsampleKind::pixeldcl_fast, 1, c, c, 32, 32);
    const auto ipix = flop_count(UpsampleKind::ipixeldcl, 1, c, c, 32, 32);
    ok = ok && fast < ipix;
    detail << " c=" << c << ":" << fast << "<" << ipix;
  }
  verdict(8, ok, "flops(pixeldcl_fast) < flops(ipixeldcl) at 32x32," + detail.str());
  const std::array<UpsampleKind, 3> kinds{UpsampleKind::dcl, UpsampleKind::pixeldcl_fast,
                                          UpsampleKind::ipixeldcl};
  const auto rows = bench_forward(kinds, shape, 5);
  std::ostringstream times;
  for (const auto& r : rows) times << kind_name(r.kind) << "=" << fmt(r.forward_ms) << "ms ";
  report(8, "median forward " + times.str() + "; dcl <= pixeldcl_fast <= ipixeldcl " +
                (timing_order_matches(rows) ? "observed" : "not observed") +
                " (expected direction, not enforced)");
}

void criterion_9() {
  const fs::path root = fs::temp_directory_path() / "pixeldcl_acceptance_determinism";
  fs::remove_all(root);
  const std::string flags = " train --kind pixeldcl_fast --steps 5 --seed 3 --count 8 --size 32";
  bool ran = true;
  for (const char* run : {"a", "b"}) {
    const std::string cmd = std::string(PIXELDCL_CLI) + flags + " --out-dir " +
                            (root / run).string() + " > /dev/null";
    ran = ran && std::system(cmd.c_str()) == 0;
  }
  bool same = false;
  std::size_t files = 0;
  if (ran) {
    const auto a = tree_bytes(root / "a"), b = tree_bytes(root / "b");
    same = a == b && a.count("loss.csv") == 1 && a.size() > 1;
    files = a.size();
  }
  verdict(9, ran && same,
          "two identical train invocations, " + std::to_string(files) +
              " files (loss.csv + checkpoint) byte-identical");
  fs::remove_all(root);
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " FAILURE(S)")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
