#pragma once

#include <chrono>
#include <iomanip>
#include <ostream>

#include "pixeldcl/segnet.hpp"

namespace pixeldcl {

struct CheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Transposed conv through the phase decomposition vs the scatter-add oracle
// over random shapes: batch <= 2, channels <= 3, spatial <= 6, kernels 2/4/6.
inline CheckResult check_decomposition(std::size_t cases, std::uint64_t seed = 11) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t i = 0; i < cases; ++i) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 2));
    const auto ci = static_cast<std::size_t>(rng.uniform_int(1, 3));
    const auto co = static_cast<std::size_t>(rng.uniform_int(1, 3));
    const auto h = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const auto w = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const std::size_t k = 2 * static_cast<std::size_t>(rng.uniform_int(1, 3));
    const Tensor x = rng_normal(rng, Shape{n, ci, h, w}, 1.0);
    const Tensor kern = rng_normal(rng, Shape{ci, co, k, k}, 1.0);
    worst = std::max(worst, max_abs_diff(deconv_via_decomposition(x, kern),
                                         transposed_conv2d_direct(x, kern)));
  }
  return {"decomposition_equivalence", worst, 1e-12, worst < 1e-12};
}

// Counts elements that differ after each round trip.
inline CheckResult check_shuffle_bijection(std::size_t cases, std::uint64_t seed = 12) {
  Rng rng(seed);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < cases; ++i) {
    const Shape s{static_cast<std::size_t>(rng.uniform_int(1, 2)),
                  static_cast<std::size_t>(rng.uniform_int(1, 3)),
                  static_cast<std::size_t>(rng.uniform_int(1, 5)),
                  static_cast<std::size_t>(rng.uniform_int(1, 5))};
    std::array<Tensor, 4> maps;
    for (Tensor& m : maps) m = rng_normal(rng, s, 1.0);
    const auto back = periodic_unshuffle(periodic_shuffle(maps[0], maps[1], maps[2], maps[3]));
    for (std::size_t k = 0; k < 4; ++k) mismatches += back[k] == maps[k] ? 0 : 1;

    const Tensor big = rng_normal(rng, Shape{s.n, s.c, 2 * s.h, 2 * s.w}, 1.0);
    const auto parts = periodic_unshuffle(big);
    mismatches += periodic_shuffle(parts[0], parts[1], parts[2], parts[3]) == big ? 0 : 1;
  }
  return {"shuffle_bijection", static_cast<double>(mismatches), 0.0, mismatches == 0};
}

// Shuffle whose backward is deliberately wrong; negative control for grad checks.
inline Var faulty_shuffle(Var f1, Var f2, Var f3, Var f4) {
  Tape& t = ad::tape_of(f1);
  Tensor out = periodic_shuffle(t.value(f1), t.value(f2), t.value(f3), t.value(f4));
  const std::array<Var, 4> maps{f1, f2, f3, f4};
  return t.record(std::move(out), {t.check(f1), t.check(f2), t.check(f3), t.check(f4)},
                  [maps](Tape& tp, std::size_t self) {
                    for (std::size_t slot = 0; slot < 4; ++slot) {
                      // Phases deliberately rotated by one slot.
                      tp.accumulate(maps[slot].id, unshuffle_phase(tp.node_grad(self),
                                                                   kShufflePhases[(slot + 1) % 4]));
                    }
                  });
}

// Gradient checks for every differentiable operation, seeds 0..seeds-1.
inline std::vector<CheckResult> check_gradients(std::size_t seeds, double tol = 1e-4,
                                                bool inject_fault = false) {
  using Inputs = std::vector<Tensor>;
  struct Case {
    std::string name;
    TapeFn fn;
    std::function<Inputs(Rng&)> make;
  };
  const Mask cross = Mask::cross();
  auto normal = [](Rng& rng, Shape s) { return rng_normal(rng, s, 1.0); };

  std::vector<Case> cases;
  cases.push_back({"grad_conv2d_same",
                   [](Tape&, std::span<const Var> v) { return ad::conv2d(v[0], v[1], v[2]); },
                   [&](Rng& r) {
                     return Inputs{normal(r, {2, 2, 5, 4}), normal(r, {3, 2, 3, 3}),
                                   normal(r, {1, 3, 1, 1})};
                   }});
  cases.push_back({"grad_masked_conv2d",
                   [cross](Tape&, std::span<const Var> v) {
                     return ad::masked_conv2d(v[0], v[1], cross, v[2]);
                   },
                   [&](Rng& r) {
                     return Inputs{normal(r, {1, 2, 6, 6}), normal(r, {2, 2, 3, 3}),
                                   normal(r, {1, 2, 1, 1})};
                   }});
  cases.push_back({"grad_periodic_shuffle",
                   [inject_fault](Tape&, std::span<const Var> v) {
                     return inject_fault ? faulty_shuffle(v[0], v[1], v[2], v[3])
                                         : ad::periodic_shuffle(v[0], v[1], v[2], v[3]);
                   },
                   [&](Rng& r) {
                     return Inputs{normal(r, {1, 2, 3, 3}), normal(r, {1, 2, 3, 3}),
                                   normal(r, {1, 2, 3, 3}), normal(r, {1, 2, 3, 3})};
                   }});
  for (std::size_t slot = 0; slot < 4; ++slot) {
    cases.push_back({"grad_unshuffle_phase" + std::to_string(slot),
                     [slot](Tape&, std::span<const Var> v) {
                       return ad::unshuffle_phase(v[0], kShufflePhases[slot]);
                     },
                     [&](Rng& r) { return Inputs{normal(r, {1, 2, 4, 6})}; }});
  }
  cases.push_back({"grad_dilate",
                   [](Tape&, std::span<const Var> v) {
                     return ad::dilate(v[0], kShufflePhases[2]);
                   },
                   [&](Rng& r) { return Inputs{normal(r, {2, 1, 3, 2})}; }});
  cases.push_back({"grad_concat",
                   [](Tape&, std::span<const Var> v) { return ad::concat({v[0], v[1], v[2]}); },
                   [&](Rng& r) {
                     return Inputs{normal(r, {1, 1, 3, 3}), normal(r, {1, 2, 3, 3}),
                                   normal(r, {1, 3, 3, 3})};
                   }});
  for (UpsampleKind kind : kAllUpsampleKinds) {
    cases.push_back({"grad_layer_" + std::string(kind_name(kind)),
                     [kind](Tape&, std::span<const Var> v) {
                       // Input followed by the layer's kernels, in parameter order.
                       const UpsampleLayer layout = make_layer(kind, 2, 2);
                       return upsample_forward(layout, v[0], v.subspan(1));
                     },
                     [kind, &normal](Rng& r) {
                       Inputs in{normal(r, {1, 2, 4, 4})};
                       for (const Shape& s : kernel_shapes(kind, 2, 2)) {
                         in.push_back(rng_normal(r, s, 0.5));
                       }
                       return in;
                     }});
  }

  std::vector<CheckResult> out;
  for (const Case& c : cases) {
    CheckResult r{c.name, 0.0, tol, true};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(1000 + s);
      const auto rep = grad_check(c.fn, c.make(rng), tol, 1e-5, 77 + s);
      r.max_error = std::max(r.max_error, rep.max_rel_err);
      r.pass = r.pass && rep.pass;
    }
    out.push_back(std::move(r));
  }
  return out;
}

// Full tiny U-Net (all parameters and the input) at 16x16, one per variant.
inline std::vector<CheckResult> check_unet_gradients(double tol = 1e-4) {
  std::vector<CheckResult> out;
  for (UpsampleKind kind : kAllUpsampleKinds) {
    UNetConfig cfg;
    cfg.depth = 2;
    cfg.base_channels = 2;
    cfg.upsample_kind = kind;
    cfg.seed = 5;
    UNet net = init_unet(cfg);
    // Zero-initialised biases put dead-ReLU regions exactly on the kink, where
    // central differences are meaningless; check at a generic point instead.
    Rng bias_rng(7);
    for (auto& [name, p] : net.named_params())
      if (name.find(".b") != std::string::npos)
        p->value = rng_normal(bias_rng, p->value.shape(), 0.1);
    Rng rng(6);
    const Tensor image = rng_uniform(rng, Shape{1, 3, 16, 16}, 0.0, 1.0);
    LabelMap labels(1, 16, 16);
    for (int& l : labels.data) l = static_cast<int>(rng.uniform_int(0, 3));
    const auto rep = unet_grad_check(net, image, labels, tol);
    out.push_back({"grad_unet16_" + std::string(kind_name(kind)), rep.max_rel_err, tol, rep.pass});
  }
  return out;
}

inline std::vector<CheckResult> check_tap_counts() {
  std::vector<CheckResult> out;
  const std::array<std::pair<UpsampleKind, std::size_t>, 3> expected{
      {{UpsampleKind::dcl, 36}, {UpsampleKind::ipixeldcl, 36}, {UpsampleKind::pixeldcl_fast, 22}}};
  for (auto [kind, taps] : expected) {
    const std::size_t got = tap_count(make_layer(kind, 1, 1));
    out.push_back({"tap_count_" + std::string(kind_name(kind)),
                   std::abs(static_cast<double>(got) - static_cast<double>(taps)), 0.0,
                   got == taps});
  }
  bool fewer = true;
  for (std::size_t c : {1, 2, 4, 8}) {
    fewer = fewer && weight_count(make_layer(UpsampleKind::pixeldcl_fast, c, c)) <
                         weight_count(make_layer(UpsampleKind::dcl, c, c));
  }
  out.push_back({"weight_count_fast_below_dcl", fewer ? 0.0 : 1.0, 0.0, fewer});
  return out;
}

// Adam on random linear losses of a pixeldcl_fast layer; reports the largest
// magnitude found at a masked-off tap.
inline CheckResult check_mask_invariant(std::size_t steps, std::uint64_t seed = 13) {
  Rng rng(seed);
  UpsampleLayer layer = init_layer(UpsampleKind::pixeldcl_fast, 2, 3, rng, true);
  const std::size_t mk = *masked_kernel_index(layer.kind);
  AdamState state;
  const auto params = layer.params();
  double worst = 0.0;
  for (std::size_t step = 0; step < steps; ++step) {
    Tape tape;
    Var x = tape.constant(rng_normal(rng, Shape{2, 2, 4, 4}, 1.0));
    Var y = upsample_forward(tape, layer, x);
    Var loss = ad::dot_const(y, rng_normal(rng, tape.value(y).shape(), 1.0));
    for (Param* p : params) p->zero_grad();
    tape.backward(loss);
    adam_step(params, state, AdamConfig{1e-2});
    const Tensor& k = layer.kernels[mk].value;
    for (std::size_t o = 0; o < k.shape().n; ++o)
      for (std::size_t i = 0; i < k.shape().c; ++i)
        for (std::size_t r = 0; r < 3; ++r)
          for (std::size_t c = 0; c < 3; ++c)
            if (!cross_mask()(r, c)) worst = std::max(worst, std::abs(k.at(o, i, r, c)));
  }
  return {"mask_invariant", worst, 0.0, worst == 0.0};
}

inline void print_check(std::ostream& out, const CheckResult& r) {
  const auto flags = out.flags();
  out << (r.pass ? "PASS " : "FAIL ") << std::left << std::setw(34) << r.name
      << " max_err=" << std::scientific << std::setprecision(3) << r.max_error
      << " tol=" << r.tolerance << "\n";
  out.flags(flags);
}

// Every module invariant in one run. Returns true when all sections pass.
inline bool run_check_suite(std::ostream& out, bool inject_fault = false) {
  bool ok = true;
  auto section = [&](const std::string& title, const std::vector<CheckResult>& rs) {
    out << "== " << title << "\n";
    for (const auto& r : rs) {
      print_check(out, r);
      ok = ok && r.pass;
    }
  };
  section("decomposition", {check_decomposition(50)});
  section("shuffle", {check_shuffle_bijection(100)});
  section("gradients", check_gradients(3, 1e-4, inject_fault));
  section("unet gradients", check_unet_gradients());
  section("parameter accounting", check_tap_counts());
  section("mask", {check_mask_invariant(100)});
  out << (ok ? "ALL PASS" : "FAILURES PRESENT") << "\n";
  return ok;
}

}  // namespace pixeldcl
