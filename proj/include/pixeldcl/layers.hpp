#pragma once

#include <optional>
#include <string_view>

#include "pixeldcl/autodiff.hpp"
#include "pixeldcl/checkpoint.hpp"

namespace pixeldcl {

// Up-sampling layer variants. All double the spatial extent.
//   dcl            transposed 6x6 convolution (four independent phase maps)
//   ipixeldcl      F_i convolved from [F_in, F_1, .., F_{i-1}]
//   pixeldcl       F_1 from F_in, F_i from [F_1, .., F_{i-1}] only
//   pixeldcl_fast  F_1, F_2 as above; F_3 and F_4 in one cross-masked 3x3 pass
enum class UpsampleKind { dcl, ipixeldcl, pixeldcl, pixeldcl_fast };

inline constexpr std::array<UpsampleKind, 4> kAllUpsampleKinds{
    UpsampleKind::dcl, UpsampleKind::ipixeldcl, UpsampleKind::pixeldcl,
    UpsampleKind::pixeldcl_fast};

inline std::string_view kind_name(UpsampleKind k) {
  switch (k) {
    case UpsampleKind::dcl: return "dcl";
    case UpsampleKind::ipixeldcl: return "ipixeldcl";
    case UpsampleKind::pixeldcl: return "pixeldcl";
    case UpsampleKind::pixeldcl_fast: return "pixeldcl_fast";
  }
  return "?";
}

inline std::optional<UpsampleKind> parse_kind(std::string_view name) {
  for (UpsampleKind k : kAllUpsampleKinds)
    if (kind_name(k) == name) return k;
  return std::nullopt;
}

enum class Activation { identity, relu };

// Intermediate maps F1..F4 all carry c_out channels.
struct UpsampleLayer {
  UpsampleKind kind = UpsampleKind::dcl;
  std::size_t c_in = 1;
  std::size_t c_out = 1;
  std::vector<Param> kernels;
  std::vector<Param> biases;  // empty, or one (1, c_out, 1, 1) per kernel
  Activation activation = Activation::identity;

  bool has_bias() const { return !biases.empty(); }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (Param& p : kernels) out.push_back(&p);
    for (Param& p : biases) out.push_back(&p);
    return out;
  }
};

inline const Mask& cross_mask() {
  static const Mask m = Mask::cross();
  return m;
}

// Kernel shapes in parameter order.
inline std::vector<Shape> kernel_shapes(UpsampleKind kind, std::size_t c_in, std::size_t c) {
  switch (kind) {
    case UpsampleKind::dcl: return {Shape{c_in, c, 6, 6}};
    case UpsampleKind::ipixeldcl:
      return {Shape{c, c_in, 3, 3}, Shape{c, c_in + c, 3, 3}, Shape{c, c_in + 2 * c, 3, 3},
              Shape{c, c_in + 3 * c, 3, 3}};
    case UpsampleKind::pixeldcl:
      return {Shape{c, c_in, 3, 3}, Shape{c, c, 3, 3}, Shape{c, 2 * c, 3, 3},
              Shape{c, 3 * c, 3, 3}};
    case UpsampleKind::pixeldcl_fast:
      return {Shape{c, c_in, 3, 3}, Shape{c, c, 3, 3}, Shape{c, c, 3, 3}};
  }
  return {};
}

// Index of the cross-masked kernel, if the variant has one.
inline std::optional<std::size_t> masked_kernel_index(UpsampleKind kind) {
  if (kind == UpsampleKind::pixeldcl_fast) return 2;
  return std::nullopt;
}

inline void check_channels(std::size_t c_in, std::size_t c_out) {
  if (c_in == 0 || c_out == 0) throw value_error("up-sampling layer channels must be >= 1");
}

// Zero-valued layer with correctly shaped parameters.
inline UpsampleLayer make_layer(UpsampleKind kind, std::size_t c_in, std::size_t c_out,
                                bool bias = false) {
  check_channels(c_in, c_out);
  UpsampleLayer layer;
  layer.kind = kind;
  layer.c_in = c_in;
  layer.c_out = c_out;
  for (const Shape& s : kernel_shapes(kind, c_in, c_out)) {
    layer.kernels.emplace_back(Tensor(s));
    if (bias) layer.biases.emplace_back(Tensor(Shape{1, c_out, 1, 1}));
  }
  return layer;
}

// Inputs feeding one output pixel of a kernel: input channels times active taps.
// For the 6x6 transposed kernel each output pixel sees a 3x3 block of taps.
inline std::size_t kernel_fan_in(UpsampleKind kind, std::size_t index, const Shape& s) {
  if (kind == UpsampleKind::dcl) return s.n * (s.h / 2) * (s.w / 2);
  if (masked_kernel_index(kind) == index) return s.c * cross_mask().active();
  return s.c * s.h * s.w;
}

// He-normal kernels, zero biases, masked taps zeroed.
inline UpsampleLayer init_layer(UpsampleKind kind, std::size_t c_in, std::size_t c_out, Rng& rng,
                                bool bias = false) {
  UpsampleLayer layer = make_layer(kind, c_in, c_out, bias);
  for (std::size_t i = 0; i < layer.kernels.size(); ++i) {
    Param& k = layer.kernels[i];
    const double fan_in = static_cast<double>(kernel_fan_in(kind, i, k.value.shape()));
    k.value = rng_normal(rng, k.value.shape(), std::sqrt(2.0 / fan_in));
    if (masked_kernel_index(kind) == i) cross_mask().apply(k.value);
  }
  return layer;
}

// Spatial tap positions per kernel set, ignoring channel multiplicity.
inline std::size_t tap_count(const UpsampleLayer& layer) {
  std::size_t taps = 0;
  for (std::size_t i = 0; i < layer.kernels.size(); ++i) {
    const Shape& s = layer.kernels[i].value.shape();
    taps += masked_kernel_index(layer.kind) == i ? cross_mask().active() : s.h * s.w;
  }
  return taps;
}

// Trainable scalars, masked taps excluded, biases included.
inline std::size_t weight_count(const UpsampleLayer& layer) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < layer.kernels.size(); ++i) {
    const Shape& s = layer.kernels[i].value.shape();
    const std::size_t taps =
        masked_kernel_index(layer.kind) == i ? cross_mask().active() : s.h * s.w;
    count += s.n * s.c * taps;
  }
  for (const Param& b : layer.biases) count += b.value.size();
  return count;
}

// Floating-point operations (2 per multiply-add) of one forward pass as
// implemented here, for input [n, c_in, h, w].
inline std::uint64_t flop_count(UpsampleKind kind, std::size_t n, std::size_t c_in,
                                std::size_t c_out, std::size_t h, std::size_t w) {
  const std::uint64_t px = static_cast<std::uint64_t>(n) * h * w;
  const std::uint64_t c = c_out;
  std::uint64_t macs = 0;
  switch (kind) {
    case UpsampleKind::dcl:
      macs = px * 4 * 9 * c_in * c;  // four 3x3 phase convolutions
      break;
    case UpsampleKind::ipixeldcl:
      macs = px * 9 * c * (4 * c_in + 6 * c);
      break;
    case UpsampleKind::pixeldcl:
      macs = px * 9 * c * (c_in + 6 * c);
      break;
    case UpsampleKind::pixeldcl_fast:
      // 3x3 on F_in, 3x3 on F1, then 4 active taps over the 2h x 2w map.
      macs = px * 9 * c * (c_in + c) + 4 * px * cross_mask().active() * c * c;
      break;
  }
  return 2 * macs;
}

namespace detail {

inline void check_layer_input(const UpsampleLayer& layer, const Shape& s) {
  if (s.c != layer.c_in) {
    throw shape_error(std::string(kind_name(layer.kind)) + ": expected " +
                      std::to_string(layer.c_in) + " input channels, got " + std::to_string(s.c));
  }
}

inline void require_kind(const UpsampleLayer& layer, UpsampleKind k) {
  if (layer.kind != k) {
    throw value_error("layer is " + std::string(kind_name(layer.kind)) + ", expected " +
                      std::string(kind_name(k)));
  }
}

inline std::span<const double> bias_of(const UpsampleLayer& layer, std::size_t i) {
  if (layer.biases.empty()) return {};
  return layer.biases[i].value.data();
}

inline Tensor activate(const UpsampleLayer& layer, Tensor x) {
  if (layer.activation == Activation::relu)
    for (double& v : x.data()) v = std::max(v, 0.0);
  return x;
}

inline Tensor stage(const UpsampleLayer& layer, std::size_t i, const Tensor& in) {
  return activate(layer, conv2d_same(in, layer.kernels[i].value, bias_of(layer, i)));
}

}  // namespace detail

inline Tensor dcl_forward(const UpsampleLayer& layer, const Tensor& input) {
  detail::require_kind(layer, UpsampleKind::dcl);
  detail::check_layer_input(layer, input.shape());
  Tensor out = transposed_conv2d_direct(input, layer.kernels[0].value);
  if (layer.has_bias()) {
    const auto b = layer.biases[0].value.data();
    for (std::size_t n = 0; n < out.shape().n; ++n)
      for (std::size_t c = 0; c < out.shape().c; ++c) {
        double* p = out.plane(n, c);
        for (std::size_t k = 0; k < out.shape().plane(); ++k) p[k] += b[c];
      }
  }
  return detail::activate(layer, std::move(out));
}

inline Tensor ipixeldcl_forward(const UpsampleLayer& layer, const Tensor& input) {
  detail::require_kind(layer, UpsampleKind::ipixeldcl);
  detail::check_layer_input(layer, input.shape());
  std::vector<Tensor> context{input};
  for (std::size_t i = 0; i < 4; ++i) {
    context.push_back(detail::stage(layer, i, concat_channels(context)));
  }
  return periodic_shuffle(context[1], context[2], context[3], context[4]);
}

inline Tensor pixeldcl_forward(const UpsampleLayer& layer, const Tensor& input) {
  detail::require_kind(layer, UpsampleKind::pixeldcl);
  detail::check_layer_input(layer, input.shape());
  std::vector<Tensor> maps{detail::stage(layer, 0, input)};
  for (std::size_t i = 1; i < 4; ++i) {
    maps.push_back(detail::stage(layer, i, concat_channels(maps)));
  }
  return periodic_shuffle(maps[0], maps[1], maps[2], maps[3]);
}

inline Tensor pixeldcl_fast_forward(const UpsampleLayer& layer, const Tensor& input) {
  detail::require_kind(layer, UpsampleKind::pixeldcl_fast);
  detail::check_layer_input(layer, input.shape());
  const Tensor f1 = detail::stage(layer, 0, input);
  const Tensor f2 = detail::stage(layer, 1, f1);
  const Tensor diag =
      elementwise_add(dilate_by_phase(f1, kShufflePhases[0]),
                      dilate_by_phase(f2, kShufflePhases[1]));
  const Tensor filled = detail::activate(
      layer, masked_conv2d(diag, layer.kernels[2].value, cross_mask(), detail::bias_of(layer, 2)));
  const Tensor anti = phase_indicator(diag.shape(), {kShufflePhases[2], kShufflePhases[3]});
  return elementwise_add(diag, elementwise_mul(filled, anti));
}

inline Tensor upsample_forward(const UpsampleLayer& layer, const Tensor& input) {
  switch (layer.kind) {
    case UpsampleKind::dcl: return dcl_forward(layer, input);
    case UpsampleKind::ipixeldcl: return ipixeldcl_forward(layer, input);
    case UpsampleKind::pixeldcl: return pixeldcl_forward(layer, input);
    case UpsampleKind::pixeldcl_fast: return pixeldcl_fast_forward(layer, input);
  }
  throw value_error("unknown up-sampling kind");
}

// Differentiable forward with explicit kernel and bias variables (in
// parameter order). `layer` supplies the variant, channels and activation.
inline Var upsample_forward(const UpsampleLayer& layer, Var input, std::span<const Var> k,
                            std::span<const Var> b = {}) {
  Tape& tape = ad::tape_of(input);
  detail::check_layer_input(layer, tape.value(input).shape());
  if (k.size() != layer.kernels.size() || (!b.empty() && b.size() != k.size())) {
    throw value_error("upsample_forward: wrong number of kernel/bias variables");
  }
  auto bias = [&](std::size_t i) -> std::optional<Var> {
    if (b.empty()) return std::nullopt;
    return b[i];
  };
  auto act = [&](Var v) { return layer.activation == Activation::relu ? ad::relu(v) : v; };
  auto stage = [&](std::size_t i, Var in) { return act(ad::conv2d(in, k[i], bias(i))); };

  switch (layer.kind) {
    case UpsampleKind::dcl: {
      std::array<Var, 4> maps;
      for (std::size_t slot = 0; slot < 4; ++slot) {
        maps[slot] = ad::conv2d(input, ad::phase_kernel(k[0], kShufflePhases[slot]), bias(0));
      }
      return act(ad::periodic_shuffle(maps[0], maps[1], maps[2], maps[3]));
    }
    case UpsampleKind::ipixeldcl: {
      std::vector<Var> context{input};
      for (std::size_t i = 0; i < 4; ++i) context.push_back(stage(i, ad::concat(context)));
      return ad::periodic_shuffle(context[1], context[2], context[3], context[4]);
    }
    case UpsampleKind::pixeldcl: {
      std::vector<Var> maps{stage(0, input)};
      for (std::size_t i = 1; i < 4; ++i) maps.push_back(stage(i, ad::concat(maps)));
      return ad::periodic_shuffle(maps[0], maps[1], maps[2], maps[3]);
    }
    case UpsampleKind::pixeldcl_fast: {
      Var f1 = stage(0, input);
      Var f2 = stage(1, f1);
      Var diag = ad::add(ad::dilate(f1, kShufflePhases[0]), ad::dilate(f2, kShufflePhases[1]));
      Var filled = act(ad::masked_conv2d(diag, k[2], cross_mask(), bias(2)));
      const Tensor anti =
          phase_indicator(tape.value(diag).shape(), {kShufflePhases[2], kShufflePhases[3]});
      return ad::add(diag, ad::mul_const(filled, anti));
    }
  }
  throw value_error("unknown up-sampling kind");
}

// Differentiable forward. Layer parameters become tape leaves whose gradients
// land in the layer's Params.
inline Var upsample_forward(Tape& tape, UpsampleLayer& layer, Var input) {
  std::vector<Var> k, b;
  for (Param& p : layer.kernels) k.push_back(tape.param(p));
  for (Param& p : layer.biases) b.push_back(tape.param(p));
  return upsample_forward(layer, input, k, b);
}

// ---------------------------------------------------------------------------
// Checkpointing. Layer line: `layer <name> <kind> <c_in> <c_out> <activation>`;
// tensors `<name>.k<i>` and `<name>.b<i>`.

inline void write_layer(CheckpointWriter& ckpt, const std::string& name,
                        const UpsampleLayer& layer) {
  ckpt.line("layer " + name + " " + std::string(kind_name(layer.kind)) + " " +
            std::to_string(layer.c_in) + " " + std::to_string(layer.c_out) + " " +
            (layer.activation == Activation::relu ? "relu" : "identity"));
  for (std::size_t i = 0; i < layer.kernels.size(); ++i) {
    ckpt.tensor(name + ".k" + std::to_string(i), layer.kernels[i].value);
  }
  for (std::size_t i = 0; i < layer.biases.size(); ++i) {
    ckpt.tensor(name + ".b" + std::to_string(i), layer.biases[i].value);
  }
}

inline UpsampleLayer read_layer(const CheckpointReader& ckpt, const std::string& name) {
  for (const auto& fields : ckpt.layers()) {
    if (fields.size() != 5 || fields[0] != name) continue;
    const auto kind = parse_kind(fields[1]);
    if (!kind) throw format_error("unknown layer kind " + fields[1]);
    const bool bias = ckpt.has_tensor(name + ".b0");
    UpsampleLayer layer =
        make_layer(*kind, std::stoul(fields[2]), std::stoul(fields[3]), bias);
    layer.activation = fields[4] == "relu" ? Activation::relu : Activation::identity;
    auto load = [&](Param& p, const std::string& tname) {
      Tensor t = ckpt.tensor(tname);
      if (t.shape() != p.value.shape()) {
        throw format_error("tensor " + tname + " has shape " + t.shape().str() + ", expected " +
                           p.value.shape().str());
      }
      p = Param(std::move(t));
    };
    for (std::size_t i = 0; i < layer.kernels.size(); ++i)
      load(layer.kernels[i], name + ".k" + std::to_string(i));
    for (std::size_t i = 0; i < layer.biases.size(); ++i)
      load(layer.biases[i], name + ".b" + std::to_string(i));
    return layer;
  }
  throw format_error("checkpoint has no layer named " + name);
}

inline void save_layer(const UpsampleLayer& layer, const std::filesystem::path& dir,
                       const std::string& name = "up") {
  CheckpointWriter ckpt(dir);
  write_layer(ckpt, name, layer);
  ckpt.finish();
}

inline UpsampleLayer load_layer(const std::filesystem::path& dir, const std::string& name = "up") {
  return read_layer(CheckpointReader(dir), name);
}

}  // namespace pixeldcl
