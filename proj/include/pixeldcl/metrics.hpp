#pragma once

#include <iomanip>
#include <optional>
#include <ostream>

#include "pixeldcl/layers.hpp"

namespace pixeldcl {

namespace detail {

inline void check_label_maps(const LabelMap& pred, const LabelMap& gt) {
  if (pred.n != gt.n || pred.h != gt.h || pred.w != gt.w) {
    throw shape_error("label maps differ in shape");
  }
}

}  // namespace detail

// Pixels pooled over the whole batch.
inline double pixel_accuracy(const LabelMap& pred, const LabelMap& gt) {
  detail::check_label_maps(pred, gt);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) hit += pred.data[i] == gt.data[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(gt.size());
}

struct IouResult {
  // nullopt for classes absent from both maps.
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;
};

// |pred=k and gt=k| / |pred=k or gt=k| per class; the mean runs over classes
// present in either map.
inline IouResult mean_iou(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes) {
  detail::check_label_maps(pred, gt);
  std::vector<std::size_t> inter(num_classes, 0), uni(num_classes, 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int p = pred.data[i];
    const int g = gt.data[i];
    for (int l : {p, g}) {
      if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
        throw value_error("mean_iou: label " + std::to_string(l) + " outside [0," +
                          std::to_string(num_classes) + ")");
      }
    }
    if (p == g) {
      ++inter[p];
      ++uni[p];
    } else {
      ++uni[p];
      ++uni[g];
    }
  }
  IouResult r;
  r.per_class.resize(num_classes);
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (uni[k] == 0) continue;
    r.per_class[k] = static_cast<double>(inter[k]) / static_cast<double>(uni[k]);
    total += *r.per_class[k];
    ++present;
  }
  r.mean = present == 0 ? 0.0 : total / static_cast<double>(present);
  return r;
}

// Phase-variance ratio. For every (batch, channel) plane: the population
// variance of the four sub-lattice means, divided by the plane's own variance
// plus 1e-12; averaged over planes. Zero when all four phases look alike.
inline double checkerboard_score(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw shape_error("checkerboard_score: spatial dims must be even, got " + s.str());
  }
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      // Phases hold equal pixel counts, so the plane mean is the mean of the
      // phase means; identical phases then give exactly zero.
      std::array<double, 4> phase_mean{};
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t xx = 0; xx < s.w; ++xx)
          phase_mean[(y % 2) * 2 + (xx % 2)] += x.at(n, c, y, xx);
      const double per_phase = static_cast<double>(s.plane()) / 4.0;
      for (double& m : phase_mean) m /= per_phase;
      const double mean = (phase_mean[0] + phase_mean[1] + phase_mean[2] + phase_mean[3]) / 4.0;
      double var = 0.0;
      for (std::size_t k = 0; k < s.plane(); ++k) {
        const double d = x.plane(n, c)[k] - mean;
        var += d * d;
      }
      var /= static_cast<double>(s.plane());
      double phase_var = 0.0;
      for (double m : phase_mean) phase_var += (m - mean) * (m - mean);
      phase_var /= 4.0;
      total += phase_var / (var + 1e-12);
    }
  return total / static_cast<double>(s.n * s.c);
}

struct MetricsReport {
  double pixel_accuracy = 0.0;
  std::vector<std::optional<double>> per_class_iou;
  double mean_iou = 0.0;
  double checkerboard_score = 0.0;
};

inline void write_metrics_csv(std::ostream& out, const MetricsReport& r) {
  out << "metric,value\n" << std::setprecision(17);
  out << "pixel_accuracy," << r.pixel_accuracy << "\n";
  out << "mean_iou," << r.mean_iou << "\n";
  out << "checkerboard_score," << r.checkerboard_score << "\n";
  for (std::size_t k = 0; k < r.per_class_iou.size(); ++k) {
    out << "iou_class_" << k << ",";
    if (r.per_class_iou[k]) out << *r.per_class_iou[k];
    out << "\n";
  }
}

inline void write_metrics_text(std::ostream& out, const MetricsReport& r) {
  const auto flags = out.flags();
  out << std::fixed << std::setprecision(6);
  out << std::left << std::setw(20) << "pixel_accuracy" << r.pixel_accuracy << "\n";
  out << std::left << std::setw(20) << "mean_iou" << r.mean_iou << "\n";
  out << std::left << std::setw(20) << "checkerboard_score" << r.checkerboard_score << "\n";
  for (std::size_t k = 0; k < r.per_class_iou.size(); ++k) {
    out << std::left << std::setw(20) << ("iou_class_" + std::to_string(k));
    if (r.per_class_iou[k]) {
      out << *r.per_class_iou[k];
    } else {
      out << "absent";
    }
    out << "\n";
  }
  out.flags(flags);
}

// ---------------------------------------------------------------------------
// Checkerboard A/B harness: random up-sampling stacks fed smooth inputs.

struct ArtifactOptions {
  std::size_t input_size = 8;   // low-resolution input side
  std::size_t channels = 3;     // image channels in and out
  std::size_t hidden = 8;       // channels between stacked layers
  std::size_t layers = 3;
  std::uint64_t base_seed = 1;
};

struct ArtifactRow {
  UpsampleKind kind;
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> scores;
};

// Bilinear interpolation of coarse Gaussian noise, [1, c, size, size].
inline Tensor smooth_noise(Rng& rng, std::size_t channels, std::size_t size) {
  const std::size_t coarse = std::max<std::size_t>(2, size / 2);
  Tensor grid = rng_normal(rng, Shape{1, channels, coarse, coarse}, 1.0);
  Tensor out(Shape{1, channels, size, size});
  const double scale = static_cast<double>(coarse - 1) /
                       static_cast<double>(std::max<std::size_t>(1, size - 1));
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double fy = static_cast<double>(y) * scale;
        const double fx = static_cast<double>(x) * scale;
        const auto y0 = std::min(static_cast<std::size_t>(fy), coarse - 2);
        const auto x0 = std::min(static_cast<std::size_t>(fx), coarse - 2);
        const double ty = fy - static_cast<double>(y0);
        const double tx = fx - static_cast<double>(x0);
        out.at(0, c, y, x) = (1 - ty) * (1 - tx) * grid.at(0, c, y0, x0) +
                             (1 - ty) * tx * grid.at(0, c, y0, x0 + 1) +
                             ty * (1 - tx) * grid.at(0, c, y0 + 1, x0) +
                             ty * tx * grid.at(0, c, y0 + 1, x0 + 1);
      }
  return out;
}

// Randomly initialised stack of `layers` up-sampling layers with ReLU between them.
inline std::vector<UpsampleLayer> random_stack(UpsampleKind kind, Rng& rng,
                                               const ArtifactOptions& opt) {
  std::vector<UpsampleLayer> stack;
  for (std::size_t i = 0; i < opt.layers; ++i) {
    const std::size_t cin = i == 0 ? opt.channels : opt.hidden;
    const std::size_t cout = i + 1 == opt.layers ? opt.channels : opt.hidden;
    stack.push_back(init_layer(kind, cin, cout, rng));
  }
  return stack;
}

inline Tensor run_stack(const std::vector<UpsampleLayer>& stack, Tensor x) {
  for (std::size_t i = 0; i < stack.size(); ++i) {
    x = upsample_forward(stack[i], x);
    if (i + 1 < stack.size())
      for (double& v : x.data()) v = std::max(v, 0.0);
  }
  return x;
}

inline std::vector<ArtifactRow> artifact_ab_compare(std::span<const UpsampleKind> kinds,
                                                    std::size_t seeds,
                                                    const ArtifactOptions& opt = {}) {
  if (seeds < 1) throw value_error("artifact_ab_compare: need at least one seed");
  std::vector<ArtifactRow> rows;
  for (UpsampleKind kind : kinds) {
    ArtifactRow row{kind, 0.0, 0.0, {}};
    for (std::size_t s = 0; s < seeds; ++s) {
      // Same input and same seed stream for every kind.
      Rng rng(opt.base_seed + s);
      const Tensor input = smooth_noise(rng, opt.channels, opt.input_size);
      const auto stack = random_stack(kind, rng, opt);
      row.scores.push_back(checkerboard_score(run_stack(stack, input)));
    }
    for (double v : row.scores) row.mean += v;
    row.mean /= static_cast<double>(seeds);
    for (double v : row.scores) row.stddev += (v - row.mean) * (v - row.mean);
    row.stddev = seeds > 1 ? std::sqrt(row.stddev / static_cast<double>(seeds - 1)) : 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_artifact_table(std::ostream& out, const std::vector<ArtifactRow>& rows) {
  const auto flags = out.flags();
  out << std::left << std::setw(16) << "kind" << std::right << std::setw(14) << "mean_score"
      << std::setw(14) << "stddev" << std::setw(8) << "seeds" << "\n";
  out << std::scientific << std::setprecision(4);
  for (const auto& r : rows) {
    out << std::left << std::setw(16) << kind_name(r.kind) << std::right << std::setw(14)
        << r.mean << std::setw(14) << r.stddev << std::setw(8) << r.scores.size() << "\n";
  }
  out.flags(flags);
}

inline void write_artifact_csv(std::ostream& out, const std::vector<ArtifactRow>& rows) {
  out << "kind,mean_score,stddev,seeds\n" << std::setprecision(17);
  for (const auto& r : rows) {
    out << kind_name(r.kind) << "," << r.mean << "," << r.stddev << "," << r.scores.size() << "\n";
  }
}

}  // namespace pixeldcl
