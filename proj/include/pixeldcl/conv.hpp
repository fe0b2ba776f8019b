#pragma once

#include <array>
#include <optional>

#include "pixeldcl/tensor.hpp"

namespace pixeldcl {

// Parity class (row mod 2, col mod 2) of a pixel on a 2x up-sampled map.
struct Phase {
  int a = 0;
  int b = 0;
  constexpr bool operator==(const Phase&) const = default;
};

// Which output sub-lattice each intermediate map F1..F4 owns under the
// periodic shuffle. F1 and F2 sit on the diagonal, F3 and F4 on the
// anti-diagonal.
inline constexpr std::array<Phase, 4> kShufflePhases{
    Phase{0, 0}, Phase{1, 1}, Phase{0, 1}, Phase{1, 0}};

constexpr std::size_t phase_slot(Phase p) {
  for (std::size_t i = 0; i < kShufflePhases.size(); ++i) {
    if (kShufflePhases[i] == p) return i;
  }
  return 4;
}

class Mask {
 public:
  Mask(std::size_t rows, std::size_t cols, bool fill = true)
      : rows_(rows), cols_(cols), taps_(rows * cols, fill ? 1 : 0) {}

  static Mask all(std::size_t rows, std::size_t cols) { return Mask(rows, cols, true); }
  static Mask none(std::size_t rows, std::size_t cols) { return Mask(rows, cols, false); }

  // N, S, E, W taps of a 3x3 window. On a map holding values only on the
  // diagonal sub-lattice these are exactly the filled neighbours of an empty cell.
  static Mask cross() {
    Mask m(3, 3, false);
    m.set(0, 1, true);
    m.set(1, 0, true);
    m.set(1, 2, true);
    m.set(2, 1, true);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool operator()(std::size_t r, std::size_t c) const { return taps_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool on) { taps_[r * cols_ + c] = on ? 1 : 0; }

  std::size_t active() const {
    std::size_t n = 0;
    for (auto t : taps_) n += t;
    return n;
  }

  // Zero every masked-off tap of a [co, ci, rows, cols] kernel.
  void apply(Tensor& kernel) const {
    const Shape& s = kernel.shape();
    check_kernel(s);
    for (std::size_t o = 0; o < s.n; ++o)
      for (std::size_t i = 0; i < s.c; ++i)
        for (std::size_t r = 0; r < rows_; ++r)
          for (std::size_t c = 0; c < cols_; ++c)
            if (!(*this)(r, c)) kernel.at(o, i, r, c) = 0.0;
  }

  void check_kernel(const Shape& s) const {
    if (s.h != rows_ || s.w != cols_) {
      throw shape_error("mask " + std::to_string(rows_) + "x" + std::to_string(cols_) +
                        " does not match kernel " + s.str());
    }
  }

  bool operator==(const Mask&) const = default;

 private:
  std::size_t rows_, cols_;
  std::vector<unsigned char> taps_;
};

namespace detail {

inline void check_conv_args(const Shape& in, const Shape& k, std::span<const double> bias,
                            const Mask* mask) {
  if (k.c != in.c) {
    throw shape_error("conv2d: kernel expects " + std::to_string(k.c) + " input channels, got " +
                      std::to_string(in.c));
  }
  if (k.h % 2 == 0 || k.w % 2 == 0) {
    throw shape_error("conv2d: same-padding kernel must have odd extent, got " + k.str());
  }
  if (!bias.empty() && bias.size() != k.n) {
    throw shape_error("conv2d: bias length " + std::to_string(bias.size()) + " != " +
                      std::to_string(k.n) + " output channels");
  }
  if (mask != nullptr) mask->check_kernel(k);
}

// Valid output range [lo, hi) for a tap at displacement d along an axis of length len.
inline std::pair<std::ptrdiff_t, std::ptrdiff_t> tap_range(std::ptrdiff_t d, std::ptrdiff_t len) {
  return {std::max<std::ptrdiff_t>(0, -d), std::min<std::ptrdiff_t>(len, len - d)};
}

}  // namespace detail

// Zero-padded cross-correlation that preserves h and w.
// input [n, ci, h, w], kernel [co, ci, kh, kw] with odd kh, kw.
inline Tensor conv2d_same(const Tensor& input, const Tensor& kernel,
                          std::span<const double> bias = {}, const Mask* mask = nullptr) {
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  detail::check_conv_args(is, ks, bias, mask);
  const auto H = static_cast<std::ptrdiff_t>(is.h);
  const auto W = static_cast<std::ptrdiff_t>(is.w);
  const auto ph = static_cast<std::ptrdiff_t>(ks.h / 2);
  const auto pw = static_cast<std::ptrdiff_t>(ks.w / 2);
  Tensor out(Shape{is.n, ks.n, is.h, is.w});

  parallel_for(is.n * ks.n, [&](std::size_t job) {
    const std::size_t n = job / ks.n;
    const std::size_t o = job % ks.n;
    double* dst = out.plane(n, o);
    if (!bias.empty()) std::fill_n(dst, is.plane(), bias[o]);
    for (std::size_t i = 0; i < is.c; ++i) {
      const double* src = input.plane(n, i);
      for (std::size_t ky = 0; ky < ks.h; ++ky) {
        const auto dy = static_cast<std::ptrdiff_t>(ky) - ph;
        const auto [y0, y1] = detail::tap_range(dy, H);
        for (std::size_t kx = 0; kx < ks.w; ++kx) {
          if (mask != nullptr && !(*mask)(ky, kx)) continue;
          const double wt = kernel.at(o, i, ky, kx);
          const auto dx = static_cast<std::ptrdiff_t>(kx) - pw;
          const auto [x0, x1] = detail::tap_range(dx, W);
          for (auto y = y0; y < y1; ++y) {
            double* drow = dst + y * W;
            const double* srow = src + (y + dy) * W + dx;
            for (auto x = x0; x < x1; ++x) drow[x] += wt * srow[x];
          }
        }
      }
    }
  });
  return out;
}

inline Tensor masked_conv2d(const Tensor& input, const Tensor& kernel, const Mask& mask,
                            std::span<const double> bias = {}) {
  return conv2d_same(input, kernel, bias, &mask);
}

// Vector-Jacobian products of conv2d_same.

inline Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& kernel,
                                    const Shape& input_shape, const Mask* mask = nullptr) {
  const Shape& ks = kernel.shape();
  const Shape& gs = grad_out.shape();
  const auto H = static_cast<std::ptrdiff_t>(gs.h);
  const auto W = static_cast<std::ptrdiff_t>(gs.w);
  const auto ph = static_cast<std::ptrdiff_t>(ks.h / 2);
  const auto pw = static_cast<std::ptrdiff_t>(ks.w / 2);
  Tensor gin(input_shape);

  parallel_for(input_shape.n * input_shape.c, [&](std::size_t job) {
    const std::size_t n = job / input_shape.c;
    const std::size_t i = job % input_shape.c;
    double* dst = gin.plane(n, i);
    for (std::size_t o = 0; o < ks.n; ++o) {
      const double* g = grad_out.plane(n, o);
      for (std::size_t ky = 0; ky < ks.h; ++ky) {
        const auto dy = static_cast<std::ptrdiff_t>(ky) - ph;
        const auto [y0, y1] = detail::tap_range(dy, H);
        for (std::size_t kx = 0; kx < ks.w; ++kx) {
          if (mask != nullptr && !(*mask)(ky, kx)) continue;
          const double wt = kernel.at(o, i, ky, kx);
          const auto dx = static_cast<std::ptrdiff_t>(kx) - pw;
          const auto [x0, x1] = detail::tap_range(dx, W);
          for (auto y = y0; y < y1; ++y) {
            const double* grow = g + y * W;
            double* drow = dst + (y + dy) * W + dx;
            for (auto x = x0; x < x1; ++x) drow[x] += wt * grow[x];
          }
        }
      }
    }
  });
  return gin;
}

inline Tensor conv2d_backward_kernel(const Tensor& grad_out, const Tensor& input,
                                     const Shape& kernel_shape, const Mask* mask = nullptr) {
  const Shape& ks = kernel_shape;
  const Shape& is = input.shape();
  const auto H = static_cast<std::ptrdiff_t>(is.h);
  const auto W = static_cast<std::ptrdiff_t>(is.w);
  const auto ph = static_cast<std::ptrdiff_t>(ks.h / 2);
  const auto pw = static_cast<std::ptrdiff_t>(ks.w / 2);
  Tensor gk(ks);

  parallel_for(ks.n, [&](std::size_t o) {
    for (std::size_t i = 0; i < ks.c; ++i) {
      for (std::size_t ky = 0; ky < ks.h; ++ky) {
        const auto dy = static_cast<std::ptrdiff_t>(ky) - ph;
        const auto [y0, y1] = detail::tap_range(dy, H);
        for (std::size_t kx = 0; kx < ks.w; ++kx) {
          if (mask != nullptr && !(*mask)(ky, kx)) continue;
          const auto dx = static_cast<std::ptrdiff_t>(kx) - pw;
          const auto [x0, x1] = detail::tap_range(dx, W);
          double acc = 0.0;
          for (std::size_t n = 0; n < is.n; ++n) {
            const double* g = grad_out.plane(n, o);
            const double* src = input.plane(n, i);
            for (auto y = y0; y < y1; ++y) {
              const double* grow = g + y * W;
              const double* srow = src + (y + dy) * W + dx;
              for (auto x = x0; x < x1; ++x) acc += grow[x] * srow[x];
            }
          }
          gk.at(o, i, ky, kx) = acc;
        }
      }
    }
  });
  return gk;
}

// Bias gradient as a (1, co, 1, 1) tensor.
inline Tensor conv2d_backward_bias(const Tensor& grad_out) {
  const Shape& gs = grad_out.shape();
  Tensor gb(Shape{1, gs.c, 1, 1});
  for (std::size_t n = 0; n < gs.n; ++n)
    for (std::size_t o = 0; o < gs.c; ++o) {
      const double* g = grad_out.plane(n, o);
      double acc = 0.0;
      for (std::size_t k = 0; k < gs.plane(); ++k) acc += g[k];
      gb[o] += acc;
    }
  return gb;
}

// ---------------------------------------------------------------------------
// Stride-2 transposed convolution.
//
// input [n, ci, h, w], kernel [ci, co, 2m, 2m]. Every input pixel (i, j)
// scatters kernel tap (t, u) onto full-output position (2i + t, 2j + u); the
// full (2h + 2m - 2)-wide result is cropped by m - 1 on the leading edge so
// that the output is exactly 2h x 2w.

inline void check_transposed_kernel(const Shape& ks) {
  if (ks.h % 2 != 0 || ks.w % 2 != 0 || ks.h != ks.w) {
    throw shape_error("transposed conv kernel must be square with even extent, got " + ks.str());
  }
}

inline Tensor transposed_conv2d_direct(const Tensor& input, const Tensor& kernel) {
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  check_transposed_kernel(ks);
  if (ks.n != is.c) {
    throw shape_error("transposed conv: kernel expects " + std::to_string(ks.n) +
                      " input channels, got " + std::to_string(is.c));
  }
  const auto crop = static_cast<std::ptrdiff_t>(ks.h / 2) - 1;
  const auto OH = static_cast<std::ptrdiff_t>(2 * is.h);
  const auto OW = static_cast<std::ptrdiff_t>(2 * is.w);
  Tensor out(Shape{is.n, ks.c, 2 * is.h, 2 * is.w});
  for (std::size_t n = 0; n < is.n; ++n)
    for (std::size_t o = 0; o < ks.c; ++o)
      for (std::size_t i = 0; i < is.c; ++i)
        for (std::size_t y = 0; y < is.h; ++y)
          for (std::size_t x = 0; x < is.w; ++x) {
            const double v = input.at(n, i, y, x);
            for (std::size_t t = 0; t < ks.h; ++t) {
              const auto r = static_cast<std::ptrdiff_t>(2 * y + t) - crop;
              if (r < 0 || r >= OH) continue;
              for (std::size_t u = 0; u < ks.w; ++u) {
                const auto c = static_cast<std::ptrdiff_t>(2 * x + u) - crop;
                if (c < 0 || c >= OW) continue;
                out.at(n, o, static_cast<std::size_t>(r), static_cast<std::size_t>(c)) +=
                    v * kernel.at(i, o, t, u);
              }
            }
          }
  return out;
}

// One phase's share of a transposed-conv kernel, as an ordinary [co, ci, m, m]
// cross-correlation kernel. Sub-kernel entry j along an axis reads the input at
// displacement offset + j from the output's coarse position.
struct PhaseKernel {
  Phase phase;
  Tensor taps;
  std::ptrdiff_t row_offset = 0;
  std::ptrdiff_t col_offset = 0;
};

namespace detail {

// For output parity `a` and half-extent m, the input displacement d reaches
// kernel tap a + m - 1 - 2d. The valid d form m consecutive values starting here.
constexpr std::ptrdiff_t phase_offset(int a, std::ptrdiff_t m) {
  return a == 0 ? -(m / 2) : -((m - 1) / 2);
}

constexpr std::ptrdiff_t phase_tap(int a, std::ptrdiff_t m, std::ptrdiff_t d) {
  return a + m - 1 - 2 * d;
}

}  // namespace detail

// Four sub-kernels in F1..F4 order (see kShufflePhases).
inline std::array<PhaseKernel, 4> kernel_phase_split(const Tensor& kernel) {
  const Shape& ks = kernel.shape();
  check_transposed_kernel(ks);
  const auto m = static_cast<std::ptrdiff_t>(ks.h / 2);
  std::array<PhaseKernel, 4> parts;
  for (std::size_t slot = 0; slot < 4; ++slot) {
    const Phase p = kShufflePhases[slot];
    PhaseKernel pk{p, Tensor(Shape{ks.c, ks.n, ks.h / 2, ks.w / 2}),
                   detail::phase_offset(p.a, m), detail::phase_offset(p.b, m)};
    for (std::size_t o = 0; o < ks.c; ++o)
      for (std::size_t i = 0; i < ks.n; ++i)
        for (std::ptrdiff_t jr = 0; jr < m; ++jr)
          for (std::ptrdiff_t jc = 0; jc < m; ++jc) {
            const auto t = detail::phase_tap(p.a, m, pk.row_offset + jr);
            const auto u = detail::phase_tap(p.b, m, pk.col_offset + jc);
            pk.taps.at(o, i, jr, jc) = kernel.at(i, o, t, u);
          }
    parts[slot] = std::move(pk);
  }
  return parts;
}

// Odd extent used to run a phase sub-kernel through conv2d_same.
constexpr std::size_t odd_extent(std::size_t m) { return m % 2 == 1 ? m : m + 1; }

// Place a sub-kernel into a centred odd-extent kernel, zero padding as needed.
inline Tensor centered_kernel(const PhaseKernel& pk) {
  const Shape& s = pk.taps.shape();
  const std::size_t L = odd_extent(s.h);
  const auto center = static_cast<std::ptrdiff_t>(L / 2);
  Tensor out(Shape{s.n, s.c, L, L});
  for (std::size_t o = 0; o < s.n; ++o)
    for (std::size_t i = 0; i < s.c; ++i)
      for (std::size_t jr = 0; jr < s.h; ++jr)
        for (std::size_t jc = 0; jc < s.w; ++jc) {
          const auto r = pk.row_offset + static_cast<std::ptrdiff_t>(jr) + center;
          const auto c = pk.col_offset + static_cast<std::ptrdiff_t>(jc) + center;
          out.at(o, i, r, c) = pk.taps.at(o, i, jr, jc);
        }
  return out;
}

// Tap gather for one phase: [ci, co, 2m, 2m] -> centred [co, ci, L, L].
// Every destination entry is either one source tap or a padding zero.
inline Tensor phase_kernel_centered(const Tensor& kernel, Phase p) {
  const Shape& ks = kernel.shape();
  check_transposed_kernel(ks);
  const auto m = static_cast<std::ptrdiff_t>(ks.h / 2);
  const std::size_t L = odd_extent(ks.h / 2);
  const auto center = static_cast<std::ptrdiff_t>(L / 2);
  Tensor out(Shape{ks.c, ks.n, L, L});
  for (std::size_t o = 0; o < ks.c; ++o)
    for (std::size_t i = 0; i < ks.n; ++i)
      for (std::size_t r = 0; r < L; ++r)
        for (std::size_t c = 0; c < L; ++c) {
          const auto t = detail::phase_tap(p.a, m, static_cast<std::ptrdiff_t>(r) - center);
          const auto u = detail::phase_tap(p.b, m, static_cast<std::ptrdiff_t>(c) - center);
          if (t < 0 || t >= 2 * m || u < 0 || u >= 2 * m) continue;
          out.at(o, i, r, c) = kernel.at(i, o, t, u);
        }
  return out;
}

// Adjoint of phase_kernel_centered: scatter a centred-kernel gradient back
// onto the transposed kernel's taps.
inline Tensor phase_kernel_centered_backward(const Tensor& grad, const Shape& kernel_shape,
                                             Phase p) {
  const auto m = static_cast<std::ptrdiff_t>(kernel_shape.h / 2);
  const Shape& gs = grad.shape();
  const auto center = static_cast<std::ptrdiff_t>(gs.h / 2);
  Tensor out(kernel_shape);
  for (std::size_t o = 0; o < gs.n; ++o)
    for (std::size_t i = 0; i < gs.c; ++i)
      for (std::size_t r = 0; r < gs.h; ++r)
        for (std::size_t c = 0; c < gs.w; ++c) {
          const auto t = detail::phase_tap(p.a, m, static_cast<std::ptrdiff_t>(r) - center);
          const auto u = detail::phase_tap(p.b, m, static_cast<std::ptrdiff_t>(c) - center);
          if (t < 0 || t >= 2 * m || u < 0 || u >= 2 * m) continue;
          out.at(i, o, t, u) += grad.at(o, i, r, c);
        }
  return out;
}

// ---------------------------------------------------------------------------
// Periodic shuffle: four [n, c, h, w] maps interleaved into [n, c, 2h, 2w].

inline Tensor periodic_shuffle(const Tensor& f1, const Tensor& f2, const Tensor& f3,
                               const Tensor& f4) {
  const std::array<const Tensor*, 4> maps{&f1, &f2, &f3, &f4};
  const Shape& s = f1.shape();
  for (const Tensor* f : maps) require_same_shape(f1, *f, "periodic_shuffle");
  Tensor out(Shape{s.n, s.c, 2 * s.h, 2 * s.w});
  for (std::size_t slot = 0; slot < 4; ++slot) {
    const Phase p = kShufflePhases[slot];
    const Tensor& f = *maps[slot];
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c)
        for (std::size_t y = 0; y < s.h; ++y)
          for (std::size_t x = 0; x < s.w; ++x)
            out.at(n, c, 2 * y + p.a, 2 * x + p.b) = f.at(n, c, y, x);
  }
  return out;
}

inline Tensor unshuffle_phase(const Tensor& x, Phase p) {
  const Shape& s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw shape_error("periodic_unshuffle: spatial dims must be even, got " + s.str());
  }
  Tensor out(Shape{s.n, s.c, s.h / 2, s.w / 2});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h / 2; ++y)
        for (std::size_t xx = 0; xx < s.w / 2; ++xx)
          out.at(n, c, y, xx) = x.at(n, c, 2 * y + p.a, 2 * xx + p.b);
  return out;
}

inline std::array<Tensor, 4> periodic_unshuffle(const Tensor& x) {
  return {unshuffle_phase(x, kShufflePhases[0]), unshuffle_phase(x, kShufflePhases[1]),
          unshuffle_phase(x, kShufflePhases[2]), unshuffle_phase(x, kShufflePhases[3])};
}

inline Tensor dilate_by_phase(const Tensor& f, Phase p) {
  const Shape& s = f.shape();
  Tensor out(Shape{s.n, s.c, 2 * s.h, 2 * s.w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x)
          out.at(n, c, 2 * y + p.a, 2 * x + p.b) = f.at(n, c, y, x);
  return out;
}

// 1 on the listed phases of an [n, c, h, w] map, 0 elsewhere.
inline Tensor phase_indicator(const Shape& s, std::initializer_list<Phase> phases) {
  Tensor out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x)
          for (Phase p : phases)
            if (static_cast<int>(y % 2) == p.a && static_cast<int>(x % 2) == p.b)
              out.at(n, c, y, x) = 1.0;
  return out;
}

// Transposed convolution computed as four phase convolutions and a shuffle.
inline Tensor deconv_via_decomposition(const Tensor& input, const Tensor& kernel) {
  check_transposed_kernel(kernel.shape());
  if (kernel.shape().n != input.shape().c) {
    throw shape_error("deconv: kernel expects " + std::to_string(kernel.shape().n) +
                      " input channels, got " + std::to_string(input.shape().c));
  }
  std::array<Tensor, 4> maps;
  const auto parts = kernel_phase_split(kernel);
  for (std::size_t slot = 0; slot < 4; ++slot) {
    maps[slot] = conv2d_same(input, centered_kernel(parts[slot]));
  }
  return periodic_shuffle(maps[0], maps[1], maps[2], maps[3]);
}

// 2x2 stride-2 max pool; `argmax` receives the flat input index of each winner.
inline Tensor max_pool2(const Tensor& x, std::vector<std::size_t>* argmax = nullptr) {
  const Shape& s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw shape_error("max_pool2: spatial dims must be even, got " + s.str());
  }
  Tensor out(Shape{s.n, s.c, s.h / 2, s.w / 2});
  if (argmax != nullptr) argmax->assign(out.size(), 0);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h / 2; ++y)
        for (std::size_t xx = 0; xx < s.w / 2; ++xx) {
          std::size_t best = x.index(n, c, 2 * y, 2 * xx);
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t k = x.index(n, c, 2 * y + dy, 2 * xx + dx);
              if (x[k] > x[best]) best = k;
            }
          const std::size_t o = out.index(n, c, y, xx);
          out[o] = x[best];
          if (argmax != nullptr) (*argmax)[o] = best;
        }
  return out;
}

}  // namespace pixeldcl
