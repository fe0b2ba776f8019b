#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <sstream>

#include "pixeldcl/autodiff.hpp"

namespace pixeldcl {

// Synthetic segmentation data: coloured shapes on a noisy background.
enum ShapeClass : int { kBackground = 0, kCircle = 1, kRectangle = 2, kTriangle = 3 };
inline constexpr std::size_t kNumShapeClasses = 4;

struct Sample {
  Tensor image;     // [1, 3, h, w], values in [0, 1]
  LabelMap labels;  // [1, h, w]
};

namespace detail {

struct Box {
  double x0, y0, x1, y1;
  bool overlaps(const Box& o, double margin) const {
    return !(x1 + margin < o.x0 || o.x1 + margin < x0 || y1 + margin < o.y0 ||
             o.y1 + margin < y0);
  }
};

inline constexpr std::array<std::array<double, 3>, 4> kClassColor{{
    {0.0, 0.0, 0.0},
    {0.85, 0.25, 0.25},
    {0.25, 0.80, 0.30},
    {0.30, 0.35, 0.90},
}};

inline double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

// Mixes the user seed so neighbouring seeds start far apart in the stream.
inline Rng sample_rng(std::uint64_t seed) {
  Rng mix(seed ^ 0xA0761D6478BD642FULL);
  return Rng(mix.next_u64());
}

}  // namespace detail

// One sample with 1..max_shapes non-overlapping shapes. Each class colour is
// jittered per shape; the background is a grey level plus box-filtered noise.
inline Sample gen_sample(std::uint64_t seed, std::size_t h, std::size_t w,
                         std::size_t max_shapes = 3) {
  if (h < 32 || w < 32) throw value_error("gen_sample: h and w must be >= 32");
  if (max_shapes < 1 || max_shapes > 5) {
    throw value_error("gen_sample: max_shapes must be in [1,5]");
  }
  Rng rng = detail::sample_rng(seed);

  Sample s{Tensor(Shape{1, 3, h, w}), LabelMap(1, h, w, kBackground)};

  // Low-amplitude smooth noise shared by all pixels.
  Tensor white = rng_normal(rng, Shape{1, 3, h, w}, 0.1);
  Tensor noise(Shape{1, 3, h, w});
  constexpr std::ptrdiff_t r = 2;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        int cnt = 0;
        for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
          for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
            const auto yy = static_cast<std::ptrdiff_t>(y) + dy;
            const auto xx = static_cast<std::ptrdiff_t>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) ||
                xx >= static_cast<std::ptrdiff_t>(w))
              continue;
            acc += white.at(0, c, yy, xx);
            ++cnt;
          }
        noise.at(0, c, y, x) = acc / cnt;
      }

  std::array<double, 3> bg{};
  for (double& v : bg) v = rng.uniform(0.35, 0.5);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) s.image.at(0, c, y, x) = bg[c];

  const double side = static_cast<double>(std::min(h, w));
  const std::size_t min_pixels = (h * w + 99) / 100;
  const auto count =
      static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(max_shapes)));
  std::vector<detail::Box> placed;

  for (std::size_t k = 0; k < count; ++k) {
    const auto cls = static_cast<int>(rng.uniform_int(kCircle, kTriangle));
    std::array<double, 3> color = detail::kClassColor[cls];
    for (double& v : color) v = std::clamp(v + rng.uniform(-0.08, 0.08), 0.0, 1.0);

    for (int attempt = 0; attempt < 50; ++attempt) {
      const double size = rng.uniform(0.12 * side, 0.22 * side);
      const double aspect = cls == kRectangle ? rng.uniform(0.6, 1.0) : 1.0;
      const double cx = rng.uniform(size + 1.0, static_cast<double>(w) - size - 1.0);
      const double cy = rng.uniform(size + 1.0, static_cast<double>(h) - size - 1.0);
      const detail::Box box{cx - size, cy - size, cx + size, cy + size};
      if (std::any_of(placed.begin(), placed.end(),
                      [&](const detail::Box& b) { return b.overlaps(box, 2.0); }))
        continue;

      std::vector<std::size_t> pixels;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double px = static_cast<double>(x) + 0.5;
          const double py = static_cast<double>(y) + 0.5;
          bool inside = false;
          switch (cls) {
            case kCircle:
              inside = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= size * size;
              break;
            case kRectangle:
              inside = std::abs(px - cx) <= size && std::abs(py - cy) <= size * aspect;
              break;
            case kTriangle: {
              const double e0 = detail::edge(cx, cy - size, cx + size, cy + size, px, py);
              const double e1 = detail::edge(cx + size, cy + size, cx - size, cy + size, px, py);
              const double e2 = detail::edge(cx - size, cy + size, cx, cy - size, px, py);
              inside = e0 >= 0 && e1 >= 0 && e2 >= 0;
              break;
            }
            default: break;
          }
          if (inside) pixels.push_back(y * w + x);
        }
      if (pixels.size() < min_pixels) continue;

      for (std::size_t p : pixels) {
        s.labels.data[p] = cls;
        for (std::size_t c = 0; c < 3; ++c) s.image[c * h * w + p] = color[c];
      }
      placed.push_back(box);
      break;
    }
  }

  for (std::size_t i = 0; i < s.image.size(); ++i) {
    s.image[i] = std::clamp(s.image[i] + noise[i], 0.0, 1.0);
  }
  return s;
}

// Samples for seeds seed .. seed + count - 1.
inline std::vector<Sample> gen_dataset(std::uint64_t seed, std::size_t count, std::size_t h,
                                       std::size_t w, std::size_t max_shapes = 3) {
  if (count < 1) throw value_error("gen_dataset: count must be >= 1");
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(gen_sample(seed + i, h, w, max_shapes));
  return out;
}

struct DatasetSplit {
  std::vector<Sample> train;  // even indices
  std::vector<Sample> test;   // odd indices
};

inline DatasetSplit split_by_parity(const std::vector<Sample>& samples) {
  DatasetSplit split;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    (i % 2 == 0 ? split.train : split.test).push_back(samples[i]);
  }
  return split;
}

// Stacks samples into one batch.
inline std::pair<Tensor, LabelMap> make_batch(std::span<const Sample* const> samples) {
  if (samples.empty()) throw value_error("make_batch: empty batch");
  const Shape s = samples.front()->image.shape();
  Tensor images(Shape{samples.size(), s.c, s.h, s.w});
  LabelMap labels(samples.size(), s.h, s.w);
  for (std::size_t b = 0; b < samples.size(); ++b) {
    require_same_shape(samples.front()->image, samples[b]->image, "make_batch");
    std::copy_n(samples[b]->image.data().begin(), s.size(), images.plane(b, 0));
    std::copy(samples[b]->labels.data.begin(), samples[b]->labels.data.end(),
              labels.data.begin() + static_cast<std::ptrdiff_t>(b * s.h * s.w));
  }
  return {std::move(images), std::move(labels)};
}

// Labels as a [n, 1, h, w] tensor of integer-valued doubles.
inline Tensor labels_to_tensor(const LabelMap& labels) {
  Tensor t(Shape{labels.n, 1, labels.h, labels.w});
  for (std::size_t i = 0; i < labels.size(); ++i) t[i] = labels.data[i];
  return t;
}

inline LabelMap tensor_to_labels(const Tensor& t) {
  const Shape& s = t.shape();
  if (s.c != 1) throw shape_error("label tensor must have one channel, got " + s.str());
  LabelMap labels(s.n, s.h, s.w);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = t[i];
    if (v != std::round(v) || v < 0) throw value_error("label tensor holds a non-label value");
    labels.data[i] = static_cast<int>(v);
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Binary PPM (P6), 8 bits per channel. Values map to round-half-up(v * 255).

inline std::string encode_ppm(const Tensor& image) {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3) throw shape_error("write_ppm: expected [1,3,h,w], got " + s.str());
  std::string out = "P6\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
  out.reserve(out.size() + 3 * s.plane());
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = image.at(0, c, y, x);
        if (!(v >= 0.0 && v <= 1.0)) throw value_error("write_ppm: value outside [0,1]");
        out.push_back(static_cast<char>(static_cast<unsigned>(std::floor(v * 255.0 + 0.5))));
      }
  return out;
}

inline Tensor decode_ppm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&] {
    skip_space();
    std::size_t v = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > 1'000'000) throw format_error("ppm: header value too large");
      ++pos;
    }
    if (pos == start) throw format_error("ppm: malformed header");
    return v;
  };
  if (bytes.substr(0, 2) != "P6") throw format_error("ppm: missing P6 magic");
  pos = 2;
  const std::size_t w = read_uint();
  const std::size_t h = read_uint();
  const std::size_t maxval = read_uint();
  if (w == 0 || h == 0) throw format_error("ppm: zero dimension");
  if (maxval != 255) throw format_error("ppm: only 8-bit (maxval 255) files are supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw format_error("ppm: malformed header");
  }
  ++pos;
  if (bytes.size() - pos < 3 * w * h) throw format_error("ppm: truncated pixel data");
  Tensor img(Shape{1, 3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(0, c, y, x) = static_cast<unsigned char>(bytes[pos++]) / 255.0;
  return img;
}

inline void write_ppm(const Tensor& image, const std::string& path) {
  detail::write_file(path, encode_ppm(image));
}

inline Tensor read_ppm(const std::string& path) { return decode_ppm(detail::read_file(path)); }

using Color = std::array<std::uint8_t, 3>;

// Fixed palette: background black, then red, green, blue, yellow, magenta, cyan, white.
inline const std::vector<Color>& default_palette() {
  static const std::vector<Color> palette{
      {0, 0, 0},     {220, 40, 40},  {40, 200, 60},  {50, 80, 230},
      {230, 210, 40}, {200, 60, 200}, {40, 200, 210}, {255, 255, 255}};
  return palette;
}

inline std::string encode_label_image(const LabelMap& labels, const std::vector<Color>& palette,
                                      std::size_t batch = 0) {
  std::string out =
      "P6\n" + std::to_string(labels.w) + " " + std::to_string(labels.h) + "\n255\n";
  for (std::size_t y = 0; y < labels.h; ++y)
    for (std::size_t x = 0; x < labels.w; ++x) {
      const int l = labels.at(batch, y, x);
      if (l < 0 || static_cast<std::size_t>(l) >= palette.size()) {
        throw value_error("label " + std::to_string(l) + " has no palette entry (palette size " +
                          std::to_string(palette.size()) + ")");
      }
      for (std::uint8_t v : palette[static_cast<std::size_t>(l)]) {
        out.push_back(static_cast<char>(v));
      }
    }
  return out;
}

// Colourised label map as a P6 image.
inline void write_label_image(const LabelMap& labels, const std::vector<Color>& palette,
                              const std::string& path, std::size_t batch = 0) {
  detail::write_file(path, encode_label_image(labels, palette, batch));
}

}  // namespace pixeldcl
