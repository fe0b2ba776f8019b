#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace pixeldcl {

struct shape_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct value_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Batch, channel, height, width. Width is the fastest-varying index.
struct Shape {
  std::size_t n = 1, c = 1, h = 1, w = 1;

  constexpr std::size_t size() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

class Tensor {
 public:
  Tensor() : Tensor(Shape{}, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape) {
    if (shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0) {
      throw shape_error("tensor dims must be >= 1, got " + shape.str());
    }
    data_.assign(shape.size(), fill);
  }

  Tensor(Shape shape, std::vector<double> values) : Tensor(shape) {
    if (values.size() != shape.size()) {
      throw shape_error("tensor " + shape.str() + " needs " + std::to_string(shape.size()) +
                        " values, got " + std::to_string(values.size()));
    }
    data_ = std::move(values);
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[index(n, c, y, x)];
  }
  double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[index(n, c, y, x)];
  }

  // Contiguous h*w plane for one (batch, channel) pair.
  double* plane(std::size_t n, std::size_t c) { return data_.data() + index(n, c, 0, 0); }
  const double* plane(std::size_t n, std::size_t c) const {
    return data_.data() + index(n, c, 0, 0);
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline Tensor tensor_new(Shape shape, double fill) { return Tensor(shape, fill); }

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape(), 0.0); }

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw shape_error(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                      b.shape().str());
  }
}

inline Tensor elementwise_add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise_add");
  Tensor out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  return out;
}

inline Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise_mul");
  Tensor out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  return out;
}

inline Tensor scaled(const Tensor& a, double s) {
  Tensor out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

inline void add_inplace(Tensor& acc, const Tensor& x) {
  require_same_shape(acc, x, "add_inplace");
  auto a = acc.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += xd[i];
}

inline double sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

inline double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) s += ad[i] * bd[i];
  return s;
}

inline double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double l2_norm(const Tensor& t) { return std::sqrt(dot(t, t)); }

inline bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

inline Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw shape_error("concat_channels: empty list");
  const Shape& s0 = parts.front().shape();
  std::size_t channels = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw shape_error("concat_channels: spatial/batch mismatch " + s.str() + " vs " + s0.str());
    }
    channels += s.c;
  }
  Tensor out(Shape{s0.n, channels, s0.h, s0.w});
  const std::size_t plane = s0.plane();
  for (std::size_t n = 0; n < s0.n; ++n) {
    std::size_t c_off = 0;
    for (const Tensor& p : parts) {
      const std::size_t block = p.shape().c * plane;
      std::copy_n(p.plane(n, 0), block, out.plane(n, c_off));
      c_off += p.shape().c;
    }
  }
  return out;
}

inline Tensor concat_channels(std::initializer_list<Tensor> parts) {
  return concat_channels(std::span<const Tensor>(parts.begin(), parts.size()));
}

inline Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  const Shape& s = x.shape();
  if (count == 0 || begin + count > s.c) {
    throw shape_error("slice_channels: [" + std::to_string(begin) + "," +
                      std::to_string(begin + count) + ") out of " + std::to_string(s.c));
  }
  Tensor out(Shape{s.n, count, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    std::copy_n(x.plane(n, begin), count * s.plane(), out.plane(n, 0));
  }
  return out;
}

// splitmix64 stream. The state advances by the golden-ratio increment and each
// output is a bijective mix of the state, so a seed fully determines the sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  // Box-Muller, one draw per call.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  Rng split() { return Rng(next_u64()); }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

inline Tensor rng_normal(Rng& rng, Shape shape, double stddev) {
  if (!(stddev > 0.0)) throw value_error("rng_normal: stddev must be > 0");
  Tensor out(shape);
  for (double& v : out.data()) v = stddev * rng.normal();
  return out;
}

inline Tensor rng_uniform(Rng& rng, Shape shape, double lo, double hi) {
  Tensor out(shape);
  for (double& v : out.data()) v = rng.uniform(lo, hi);
  return out;
}

// Worker count used by the convolution loops. Work is split over independent
// output planes, so results do not depend on this value.
inline std::size_t& num_threads() {
  static std::size_t threads = 1;
  return threads;
}

inline void set_num_threads(std::size_t t) { num_threads() = std::max<std::size_t>(1, t); }

inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min(num_threads(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < count; i += workers) body(i);
    });
  }
}

// ---------------------------------------------------------------------------
// Binary tensor file: "PDCT", u32 version, u32 n,c,h,w, then f64 values, all
// little-endian.

inline constexpr std::uint32_t kTensorFileVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_le(std::string_view bytes, std::size_t pos, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw format_error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw format_error("short write to " + path);
}

}  // namespace detail

inline std::string encode_tensor(const Tensor& t) {
  std::string out = "PDCT";
  out.reserve(24 + 8 * t.size());
  detail::put_u32(out, kTensorFileVersion);
  const Shape& s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline Tensor decode_tensor(std::string_view bytes) {
  if (bytes.size() < 24 || bytes.substr(0, 4) != "PDCT") {
    throw format_error("not a PDCT tensor file");
  }
  const auto version = detail::get_le(bytes, 4, 4);
  if (version != kTensorFileVersion) {
    throw format_error("unsupported tensor file version " + std::to_string(version));
  }
  std::array<std::size_t, 4> dims{};
  for (int i = 0; i < 4; ++i) dims[i] = detail::get_le(bytes, 8 + 4 * i, 4);
  const Shape shape{dims[0], dims[1], dims[2], dims[3]};
  if (shape.size() == 0) throw format_error("tensor file has a zero dimension");
  if (bytes.size() != 24 + 8 * shape.size()) {
    throw format_error("tensor file size does not match dims " + shape.str());
  }
  Tensor t(shape);
  for (std::size_t i = 0; i < shape.size(); ++i) {
    t[i] = std::bit_cast<double>(detail::get_le(bytes, 24 + 8 * i, 8));
  }
  return t;
}

inline void save_tensor(const Tensor& t, const std::string& path) {
  detail::write_file(path, encode_tensor(t));
}

inline Tensor load_tensor(const std::string& path) {
  return decode_tensor(detail::read_file(path));
}

}  // namespace pixeldcl
