#pragma once

#include <numeric>

#include "pixeldcl/metrics.hpp"
#include "pixeldcl/shapes.hpp"

namespace pixeldcl {

struct UNetConfig {
  std::size_t depth = 2;
  std::size_t base_channels = 8;
  std::size_t in_channels = 3;
  std::size_t num_classes = kNumShapeClasses;
  UpsampleKind upsample_kind = UpsampleKind::pixeldcl_fast;
  std::uint64_t seed = 1;
};

// 3x3 same-padded convolution with bias.
struct ConvUnit {
  Param kernel;
  Param bias;
};

struct ConvPair {
  ConvUnit first;
  ConvUnit second;
};

// Encoder: per level two conv+ReLU then 2x2 max pool. Bottleneck: two conv+ReLU.
// Decoder: up-sampling layer, concat with the matching encoder output, two
// conv+ReLU. Head: 1x1 conv to class logits.
struct UNet {
  UNetConfig config;
  std::vector<ConvPair> encoder;
  ConvPair bottleneck;
  std::vector<UpsampleLayer> up;   // up[l] produces level l resolution
  std::vector<ConvPair> decoder;   // decoder[l] runs at level l
  ConvUnit head;
  std::size_t step = 0;

  std::size_t level_channels(std::size_t level) const {
    return config.base_channels << level;
  }

  // Every parameter with a stable name, in a fixed order.
  std::vector<std::pair<std::string, Param*>> named_params() {
    std::vector<std::pair<std::string, Param*>> out;
    auto pair = [&](const std::string& prefix, ConvPair& p) {
      out.emplace_back(prefix + ".conv0.w", &p.first.kernel);
      out.emplace_back(prefix + ".conv0.b", &p.first.bias);
      out.emplace_back(prefix + ".conv1.w", &p.second.kernel);
      out.emplace_back(prefix + ".conv1.b", &p.second.bias);
    };
    for (std::size_t l = 0; l < encoder.size(); ++l) pair("enc" + std::to_string(l), encoder[l]);
    pair("mid", bottleneck);
    for (std::size_t l = up.size(); l-- > 0;) {
      const std::string name = "up" + std::to_string(l);
      for (std::size_t i = 0; i < up[l].kernels.size(); ++i)
        out.emplace_back(name + ".k" + std::to_string(i), &up[l].kernels[i]);
      for (std::size_t i = 0; i < up[l].biases.size(); ++i)
        out.emplace_back(name + ".b" + std::to_string(i), &up[l].biases[i]);
      pair("dec" + std::to_string(l), decoder[l]);
    }
    out.emplace_back("head.w", &head.kernel);
    out.emplace_back("head.b", &head.bias);
    return out;
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (auto& [name, p] : named_params()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (Param* p : params()) p->zero_grad();
  }
};

namespace detail {

inline ConvUnit make_conv(Rng& rng, std::size_t c_in, std::size_t c_out, std::size_t k) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(c_in * k * k));
  return ConvUnit{Param(rng_normal(rng, Shape{c_out, c_in, k, k}, stddev)),
                  Param(Tensor(Shape{1, c_out, 1, 1}))};
}

inline ConvPair make_pair(Rng& rng, std::size_t c_in, std::size_t c_out) {
  ConvPair p{make_conv(rng, c_in, c_out, 3), {}};
  p.second = make_conv(rng, c_out, c_out, 3);
  return p;
}

}  // namespace detail

inline UNet init_unet(const UNetConfig& config) {
  if (config.depth < 1 || config.base_channels < 1 || config.num_classes < 2 ||
      config.in_channels < 1) {
    throw value_error("init_unet: invalid configuration");
  }
  UNet net;
  net.config = config;
  Rng rng(config.seed);
  std::size_t c_prev = config.in_channels;
  for (std::size_t l = 0; l < config.depth; ++l) {
    net.encoder.push_back(detail::make_pair(rng, c_prev, net.level_channels(l)));
    c_prev = net.level_channels(l);
  }
  net.bottleneck = detail::make_pair(rng, c_prev, net.level_channels(config.depth));
  net.up.resize(config.depth);
  net.decoder.resize(config.depth);
  for (std::size_t l = config.depth; l-- > 0;) {
    const std::size_t c = net.level_channels(l);
    net.up[l] = init_layer(config.upsample_kind, net.level_channels(l + 1), c, rng);
    net.decoder[l] = detail::make_pair(rng, 2 * c, c);
  }
  net.head = detail::make_conv(rng, net.level_channels(0), config.num_classes, 1);
  return net;
}

inline void check_unet_input(const UNet& net, const Shape& s) {
  const std::size_t div = std::size_t{1} << net.config.depth;
  if (s.h % div != 0 || s.w % div != 0) {
    throw shape_error("unet: spatial dims " + s.str() + " must be divisible by " +
                      std::to_string(div));
  }
  if (s.c != net.config.in_channels) {
    throw shape_error("unet: expected " + std::to_string(net.config.in_channels) +
                      " input channels, got " + std::to_string(s.c));
  }
}

// Logits [n, num_classes, h, w] on the tape.
inline Var unet_forward(Tape& tape, UNet& net, Var images) {
  check_unet_input(net, tape.value(images).shape());
  auto conv = [&](Var x, ConvUnit& u) {
    return ad::conv2d(x, tape.param(u.kernel), tape.param(u.bias));
  };
  auto block = [&](Var x, ConvPair& p) {
    return ad::relu(conv(ad::relu(conv(x, p.first)), p.second));
  };

  std::vector<Var> skips;
  Var x = images;
  for (ConvPair& p : net.encoder) {
    x = block(x, p);
    skips.push_back(x);
    x = ad::max_pool2(x);
  }
  x = block(x, net.bottleneck);
  for (std::size_t l = net.config.depth; l-- > 0;) {
    Var upsampled = upsample_forward(tape, net.up[l], x);
    x = block(ad::concat({skips[l], upsampled}), net.decoder[l]);
  }
  return conv(x, net.head);
}

inline Tensor unet_logits(UNet& net, const Tensor& images) {
  Tape tape;
  return tape.value(unet_forward(tape, net, tape.constant(images)));
}

inline LabelMap argmax_labels(const Tensor& logits) {
  const Shape& s = logits.shape();
  LabelMap out(s.n, s.h, s.w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < s.c; ++k)
          if (logits.at(n, k, y, x) > logits.at(n, best, y, x)) best = k;
        out.at(n, y, x) = static_cast<int>(best);
      }
  return out;
}

inline Var softmax_ce_loss(Var logits, const LabelMap& labels) {
  return ad::softmax_ce(logits, labels);
}

// ---------------------------------------------------------------------------
// Adam.

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t t = 0;
};

struct training_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One bias-corrected Adam update of every trainable param from its grad.
inline void adam_step(std::span<Param* const> params, AdamState& state, const AdamConfig& cfg) {
  if (state.m.empty()) {
    for (Param* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size()) throw shape_error("adam_step: state/param count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Param& p = *params[k];
    require_same_shape(p.value, p.grad, "adam_step");
    require_same_shape(p.value, state.m[k], "adam_step");
    for (std::size_t i = 0; i < p.grad.size(); ++i) {
      if (!std::isfinite(p.grad[i])) {
        throw training_error("adam_step: non-finite gradient in param " + std::to_string(k) +
                             " at element " + std::to_string(i) + " (step " +
                             std::to_string(state.t + 1) + ")");
      }
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    if (!p.trainable) continue;
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      p.value[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training.

struct TrainOptions {
  std::size_t steps = 200;
  std::size_t batch = 4;
  AdamConfig adam;
  std::function<void(std::size_t step, double loss)> on_step;
};

struct TrainResult {
  UNet model;
  std::vector<double> losses;  // batch loss before each update
};

// Mini-batch Adam on `train_set`. Batches walk a per-epoch permutation drawn
// from the config seed, so the run is a pure function of its arguments.
inline TrainResult train(const UNetConfig& config, const std::vector<Sample>& train_set,
                         const TrainOptions& opt) {
  if (train_set.empty()) throw value_error("train: empty dataset");
  TrainResult result{init_unet(config), {}};
  UNet& net = result.model;
  const auto params = net.params();
  AdamState adam;
  Rng order_rng(config.seed ^ 0x0DDBA11ULL);
  std::vector<std::size_t> order(train_set.size());
  std::size_t cursor = order.size();
  const std::size_t batch = std::min(opt.batch, train_set.size());

  for (std::size_t step = 0; step < opt.steps; ++step) {
    std::vector<const Sample*> picked;
    while (picked.size() < batch) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1], order[static_cast<std::size_t>(order_rng.uniform_int(
                                      0, static_cast<std::int64_t>(i - 1)))]);
        }
        cursor = 0;
      }
      picked.push_back(&train_set[order[cursor++]]);
    }
    auto [images, labels] = make_batch(picked);

    Tape tape;
    Var loss = softmax_ce_loss(unet_forward(tape, net, tape.constant(images)), labels);
    const double value = tape.value(loss)[0];
    if (!std::isfinite(value)) {
      throw training_error("train: loss became non-finite at step " + std::to_string(step) +
                           " (last finite loss " +
                           (result.losses.empty() ? std::string("n/a")
                                                  : std::to_string(result.losses.back())) +
                           ")");
    }
    result.losses.push_back(value);
    if (opt.on_step) opt.on_step(step, value);
    net.zero_grad();
    tape.backward(loss);
    adam_step(params, adam, opt.adam);
    ++net.step;
  }
  return result;
}

inline MetricsReport evaluate(UNet& net, const std::vector<Sample>& samples,
                              std::vector<LabelMap>* predictions = nullptr) {
  if (samples.empty()) throw value_error("evaluate: empty dataset");
  const Shape s = samples.front().image.shape();
  LabelMap all_pred(samples.size(), s.h, s.w);
  LabelMap all_gt(samples.size(), s.h, s.w);
  double board = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Tensor logits = unet_logits(net, samples[i].image);
    const LabelMap pred = argmax_labels(logits);
    std::copy(pred.data.begin(), pred.data.end(),
              all_pred.data.begin() + static_cast<std::ptrdiff_t>(i * s.h * s.w));
    std::copy(samples[i].labels.data.begin(), samples[i].labels.data.end(),
              all_gt.data.begin() + static_cast<std::ptrdiff_t>(i * s.h * s.w));
    board += checkerboard_score(logits);
    if (predictions != nullptr) predictions->push_back(pred);
  }
  MetricsReport r;
  r.pixel_accuracy = pixel_accuracy(all_pred, all_gt);
  const IouResult iou = mean_iou(all_pred, all_gt, net.config.num_classes);
  r.per_class_iou = iou.per_class;
  r.mean_iou = iou.mean;
  r.checkerboard_score = board / static_cast<double>(samples.size());
  return r;
}

// Backward vs central differences for every parameter and the input image.
inline GradCheckReport unet_grad_check(UNet& net, const Tensor& image, const LabelMap& labels,
                                       double tol, double eps = 1e-5) {
  auto loss_at = [&](const Tensor& img) {
    Tape t;
    return t.value(softmax_ce_loss(unet_forward(t, net, t.constant(img)), labels))[0];
  };

  net.zero_grad();
  Tape tape;
  Var input = tape.leaf(image);
  tape.backward(softmax_ce_loss(unet_forward(tape, net, input), labels));

  GradCheckReport report;
  report.max_rel_err = grad_rel_err(tape.grad(input), finite_diff_grad(loss_at, image, eps));
  for (auto& [name, p] : net.named_params()) {
    const Tensor saved = p->value;
    const Tensor numeric = finite_diff_grad(
        [&](const Tensor& v) {
          p->value = v;
          return loss_at(image);
        },
        saved, eps);
    p->value = saved;
    report.max_rel_err = std::max(report.max_rel_err, grad_rel_err(p->grad, numeric));
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints.

inline void save_unet(UNet& net, const std::filesystem::path& dir) {
  CheckpointWriter ckpt(dir);
  ckpt.set("format", "pixeldcl-unet");
  ckpt.set("depth", std::to_string(net.config.depth));
  ckpt.set("base_channels", std::to_string(net.config.base_channels));
  ckpt.set("in_channels", std::to_string(net.config.in_channels));
  ckpt.set("num_classes", std::to_string(net.config.num_classes));
  ckpt.set("upsample", std::string(kind_name(net.config.upsample_kind)));
  ckpt.set("seed", std::to_string(net.config.seed));
  ckpt.set("step", std::to_string(net.step));
  for (std::size_t l = net.up.size(); l-- > 0;) {
    const UpsampleLayer& u = net.up[l];
    ckpt.line("layer up" + std::to_string(l) + " " + std::string(kind_name(u.kind)) + " " +
              std::to_string(u.c_in) + " " + std::to_string(u.c_out) + " " +
              (u.activation == Activation::relu ? "relu" : "identity"));
  }
  for (auto& [name, p] : net.named_params()) ckpt.tensor(name, p->value);
  ckpt.finish();
}

inline UNet load_unet(const std::filesystem::path& dir) {
  CheckpointReader ckpt(dir);
  if (!ckpt.has("format") || ckpt.get("format") != "pixeldcl-unet") {
    throw format_error("not a U-Net checkpoint: " + dir.string());
  }
  UNetConfig cfg;
  cfg.depth = std::stoul(ckpt.get("depth"));
  cfg.base_channels = std::stoul(ckpt.get("base_channels"));
  cfg.in_channels = std::stoul(ckpt.get("in_channels"));
  cfg.num_classes = std::stoul(ckpt.get("num_classes"));
  const auto kind = parse_kind(ckpt.get("upsample"));
  if (!kind) throw format_error("unknown up-sampling kind " + ckpt.get("upsample"));
  cfg.upsample_kind = *kind;
  cfg.seed = std::stoull(ckpt.get("seed"));
  UNet net = init_unet(cfg);
  net.step = std::stoul(ckpt.get("step"));
  for (auto& [name, p] : net.named_params()) {
    Tensor t = ckpt.tensor(name);
    if (t.shape() != p->value.shape()) {
      throw format_error("tensor " + name + " has shape " + t.shape().str() + ", expected " +
                         p->value.shape().str());
    }
    *p = Param(std::move(t));
  }
  return net;
}

inline void write_loss_csv(std::ostream& out, const std::vector<double>& losses) {
  out << "step,loss\n" << std::setprecision(17);
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << "," << losses[i] << "\n";
}

}  // namespace pixeldcl
