#pragma once

#include <chrono>
#include <iomanip>
#include <ostream>

#include "pixeldcl/layers.hpp"

namespace pixeldcl {

struct BenchResult {
  UpsampleKind kind;
  Shape input;
  double forward_ms = 0.0;   // median
  double backward_ms = 0.0;  // median
  std::uint64_t flops = 0;
};

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
      .count();
}

}  // namespace detail

// Median forward and backward time per variant for a c -> c layer on `input`.
// `warmup` runs precede the timed repeats and are discarded.
inline std::vector<BenchResult> bench_forward(std::span<const UpsampleKind> kinds, Shape input,
                                              std::size_t repeats, std::size_t warmup = 2,
                                              std::uint64_t seed = 1) {
  if (repeats < 5) throw value_error("bench_forward: repeats must be >= 5");
  std::vector<BenchResult> out;
  Rng data_rng(seed);
  const Tensor x = rng_normal(data_rng, input, 1.0);
  for (UpsampleKind kind : kinds) {
    Rng rng(seed + 1);
    UpsampleLayer layer = init_layer(kind, input.c, input.c, rng);
    std::vector<double> fwd, bwd;
    for (std::size_t r = 0; r < warmup + repeats; ++r) {
      Tape tape;
      Var in = tape.leaf(x);
      const auto t0 = std::chrono::steady_clock::now();
      Var y = upsample_forward(tape, layer, in);
      const double f = detail::elapsed_ms(t0);
      const Tensor seed_grad(tape.value(y).shape(), 1.0);
      const auto t1 = std::chrono::steady_clock::now();
      tape.backward(y, seed_grad);
      const double b = detail::elapsed_ms(t1);
      if (r >= warmup) {
        fwd.push_back(f);
        bwd.push_back(b);
      }
    }
    out.push_back(BenchResult{kind, input, detail::median(fwd), detail::median(bwd),
                              flop_count(kind, input.n, input.c, input.c, input.h, input.w)});
  }
  return out;
}

inline void write_bench_table(std::ostream& out, const std::vector<BenchResult>& rows) {
  const auto flags = out.flags();
  out << std::left << std::setw(16) << "kind" << std::right << std::setw(14) << "forward_ms"
      << std::setw(14) << "backward_ms" << std::setw(16) << "flops" << "\n";
  out << std::fixed << std::setprecision(3);
  for (const auto& r : rows) {
    out << std::left << std::setw(16) << kind_name(r.kind) << std::right << std::setw(14)
        << r.forward_ms << std::setw(14) << r.backward_ms << std::setw(16) << r.flops << "\n";
  }
  out.flags(flags);
}

inline void write_bench_csv(std::ostream& out, const std::vector<BenchResult>& rows) {
  out << "kind,n,c,h,w,forward_ms,backward_ms,flops\n" << std::setprecision(9);
  for (const auto& r : rows) {
    out << kind_name(r.kind) << "," << r.input.n << "," << r.input.c << "," << r.input.h << ","
        << r.input.w << "," << r.forward_ms << "," << r.backward_ms << "," << r.flops << "\n";
  }
}

// The expected speed order (dcl fastest, then pixeldcl_fast, then ipixeldcl)
// holds for the measured forward medians. Reported, never fatal.
inline bool timing_order_matches(const std::vector<BenchResult>& rows) {
  auto time_of = [&](UpsampleKind k) -> std::optional<double> {
    for (const auto& r : rows)
      if (r.kind == k) return r.forward_ms;
    return std::nullopt;
  };
  const auto dcl = time_of(UpsampleKind::dcl);
  const auto fast = time_of(UpsampleKind::pixeldcl_fast);
  const auto ipix = time_of(UpsampleKind::ipixeldcl);
  if (!dcl || !fast || !ipix) return false;
  return *dcl <= *fast && *fast <= *ipix;
}

}  // namespace pixeldcl
