#include <gtest/gtest.h>

#include <sstream>

#include "pixeldcl/metrics.hpp"

using namespace pixeldcl;

namespace {

LabelMap labels_of(std::size_t h, std::size_t w, std::vector<int> v) {
  LabelMap m(1, h, w);
  m.data = std::move(v);
  return m;
}

}  // namespace

TEST(PixelAccuracy, Counting) {
  const LabelMap gt = labels_of(2, 2, {0, 1, 1, 0});
  EXPECT_EQ(pixel_accuracy(gt, gt), 1.0);
  EXPECT_EQ(pixel_accuracy(labels_of(2, 2, {1, 0, 0, 1}), gt), 0.0);
  EXPECT_EQ(pixel_accuracy(labels_of(2, 2, {0, 1, 1, 1}), gt), 0.75);
  EXPECT_THROW(pixel_accuracy(LabelMap(1, 2, 3), gt), shape_error);
}

TEST(MeanIou, HandEnumeratedExample) {
  const LabelMap gt = labels_of(2, 2, {0, 0, 1, 1});
  const LabelMap pred = labels_of(2, 2, {0, 0, 0, 0});
  const IouResult r = mean_iou(pred, gt, 2);
  ASSERT_TRUE(r.per_class[0].has_value());
  ASSERT_TRUE(r.per_class[1].has_value());
  EXPECT_DOUBLE_EQ(*r.per_class[0], 0.5);
  EXPECT_DOUBLE_EQ(*r.per_class[1], 0.0);
  EXPECT_DOUBLE_EQ(r.mean, 0.25);
}

TEST(MeanIou, PerfectAndAbsentClasses) {
  const LabelMap gt = labels_of(2, 2, {0, 2, 2, 0});
  const IouResult r = mean_iou(gt, gt, 4);
  EXPECT_EQ(r.mean, 1.0);
  EXPECT_FALSE(r.per_class[1].has_value());
  EXPECT_FALSE(r.per_class[3].has_value());

  // Absent classes are skipped rather than scored 0 or 1.
  const LabelMap pred = labels_of(2, 2, {0, 2, 0, 0});
  const IouResult half = mean_iou(pred, gt, 4);
  EXPECT_DOUBLE_EQ(*half.per_class[0], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(*half.per_class[2], 0.5);
  EXPECT_DOUBLE_EQ(half.mean, (2.0 / 3.0 + 0.5) / 2.0);
}

TEST(MeanIou, MatchesSetDefinition) {
  Rng rng(1);
  LabelMap gt(2, 5, 6), pred(2, 5, 6);
  for (int& v : gt.data) v = static_cast<int>(rng.uniform_int(0, 3));
  for (int& v : pred.data) v = static_cast<int>(rng.uniform_int(0, 2));
  const IouResult r = mean_iou(pred, gt, 4);
  double total = 0.0;
  int present = 0;
  for (int k = 0; k < 4; ++k) {
    int inter = 0, uni = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      inter += pred.data[i] == k && gt.data[i] == k;
      uni += pred.data[i] == k || gt.data[i] == k;
    }
    if (uni == 0) continue;
    EXPECT_DOUBLE_EQ(*r.per_class[k], double(inter) / uni);
    total += double(inter) / uni;
    ++present;
  }
  EXPECT_DOUBLE_EQ(r.mean, total / present);
  for (const auto& v : r.per_class)
    if (v) {
      EXPECT_GE(*v, 0.0);
      EXPECT_LE(*v, 1.0);
    }
}

TEST(MeanIou, RejectsOutOfRangeLabels) {
  EXPECT_THROW(mean_iou(labels_of(1, 2, {0, 4}), labels_of(1, 2, {0, 1}), 4), value_error);
  EXPECT_THROW(mean_iou(labels_of(1, 2, {0, -1}), labels_of(1, 2, {0, 1}), 4), value_error);
}

TEST(Checkerboard, ConstantIsZero) {
  EXPECT_EQ(checkerboard_score(Tensor(Shape{2, 3, 4, 6}, 1.7)), 0.0);
}

TEST(Checkerboard, SinglePhaseClosedForm) {
  // +1 on phase (0,0), 0 elsewhere: phase means {1,0,0,0} have population
  // variance 3/16, and so does the plane itself.
  const Tensor x = phase_indicator(Shape{1, 1, 4, 4}, {Phase{0, 0}});
  const double v = 3.0 / 16.0;
  EXPECT_NEAR(checkerboard_score(x), v / (v + 1e-12), 1e-15);
  EXPECT_GT(checkerboard_score(x), 0.0);
}

TEST(Checkerboard, SmoothRampScoresLow) {
  Tensor x(Shape{1, 1, 16, 16});
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t c = 0; c < 16; ++c) x.at(0, 0, y, c) = double(y + c);
  const double ramp = checkerboard_score(x);
  EXPECT_GT(ramp, 0.0);
  EXPECT_LT(ramp, 0.02);
  EXPECT_GT(checkerboard_score(phase_indicator(Shape{1, 1, 16, 16}, {Phase{0, 1}})), 0.9);
}

TEST(Checkerboard, AffineInvariant) {
  Rng rng(2);
  const Tensor x = rng_normal(rng, Shape{2, 2, 6, 8}, 1.0);
  Tensor y = x;
  for (double& v : y.data()) v = -3.5 * v + 12.0;
  EXPECT_NEAR(checkerboard_score(x), checkerboard_score(y), 1e-9);
  EXPECT_THROW(checkerboard_score(Tensor(Shape{1, 1, 3, 4})), shape_error);
}

TEST(Artifacts, OneRowPerKindAndDeterministic) {
  const std::vector<UpsampleKind> kinds{UpsampleKind::dcl, UpsampleKind::pixeldcl_fast};
  const auto a = artifact_ab_compare(kinds, 3);
  const auto b = artifact_ab_compare(kinds, 3);
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a[i].kind, kinds[i]);
    EXPECT_EQ(a[i].scores, b[i].scores);
    EXPECT_EQ(a[i].scores.size(), 3u);
  }
  EXPECT_GT(a[0].mean, 0.0);
  EXPECT_THROW(artifact_ab_compare(kinds, 0), value_error);
}

TEST(Artifacts, ZeroKernelStackOnConstantInputScoresZero) {
  for (UpsampleKind kind : kAllUpsampleKinds) {
    std::vector<UpsampleLayer> stack{make_layer(kind, 3, 8), make_layer(kind, 8, 3)};
    EXPECT_EQ(checkerboard_score(run_stack(stack, Tensor(Shape{1, 3, 4, 4}, 0.6))), 0.0);
  }
}

TEST(Artifacts, SmoothNoiseShapeAndDeterminism) {
  Rng a(3), b(3);
  const Tensor x = smooth_noise(a, 3, 8);
  EXPECT_EQ(x.shape(), (Shape{1, 3, 8, 8}));
  EXPECT_EQ(x, smooth_noise(b, 3, 8));
}

TEST(Reports, CsvAndTextLayouts) {
  MetricsReport r;
  r.pixel_accuracy = 0.5;
  r.mean_iou = 0.25;
  r.per_class_iou = {0.5, std::nullopt};
  std::ostringstream csv, text;
  write_metrics_csv(csv, r);
  EXPECT_EQ(csv.str(),
            "metric,value\npixel_accuracy,0.5\nmean_iou,0.25\ncheckerboard_score,0\n"
            "iou_class_0,0.5\niou_class_1,\n");
  write_metrics_text(text, r);
  EXPECT_NE(text.str().find("absent"), std::string::npos);

  std::ostringstream art;
  write_artifact_csv(art, artifact_ab_compare(std::vector<UpsampleKind>{UpsampleKind::dcl}, 2));
  EXPECT_EQ(art.str().substr(0, art.str().find('\n')), "kind,mean_score,stddev,seeds");
}
