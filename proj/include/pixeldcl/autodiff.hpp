#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "pixeldcl/conv.hpp"

namespace pixeldcl {

// Trainable tensor. grad has the shape of value at all times.
struct Param {
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Param() = default;
  explicit Param(Tensor v) : value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { std::fill(grad.data().begin(), grad.data().end(), 0.0); }
};

// Per-pixel class indices for a batch, laid out [n, h, w].
struct LabelMap {
  std::size_t n = 1, h = 1, w = 1;
  std::vector<int> data;

  LabelMap() : data(1, 0) {}
  LabelMap(std::size_t n_, std::size_t h_, std::size_t w_, int fill = 0)
      : n(n_), h(h_), w(w_), data(n_ * h_ * w_, fill) {}

  int& at(std::size_t b, std::size_t y, std::size_t x) { return data[(b * h + y) * w + x]; }
  int at(std::size_t b, std::size_t y, std::size_t x) const { return data[(b * h + y) * w + x]; }
  std::size_t size() const { return data.size(); }
  bool operator==(const LabelMap&) const = default;
};

class Tape;

// Handle to a node on a tape. Handles from before a Tape::reset() are rejected.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
  std::uint64_t epoch = 0;
};

struct tape_error : std::logic_error {
  using std::logic_error::logic_error;
};

// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, so
// the node list is already topologically sorted; backward walks it in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Low-level append. `backward` reads grad(self) and calls accumulate() on parents.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
    bool needs = false;
    for (std::size_t p : parents) needs = needs || nodes_.at(p).requires_grad;
    Node node;
    node.value = std::move(value);
    node.parents = std::move(parents);
    node.requires_grad = needs;
    if (needs) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1, epoch_};
  }

  Var constant(Tensor value) { return push_leaf(std::move(value), false, nullptr); }
  Var leaf(Tensor value) { return push_leaf(std::move(value), true, nullptr); }
  // Leaf whose gradient is added into p.grad on backward.
  Var param(Param& p) { return push_leaf(p.value, p.trainable, &p); }

  const Tensor& value(Var v) const { return nodes_.at(check(v)).value; }

  // Gradient of the last backward() w.r.t. this node; zeros if it had no influence.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(check(v));
    return n.grad ? *n.grad : Tensor(n.value.shape());
  }

  std::size_t check(Var v) const {
    if (v.tape != this) throw tape_error("variable belongs to a different tape");
    if (v.epoch != epoch_) throw tape_error("variable recorded on a freed tape");
    if (v.id >= nodes_.size()) throw tape_error("variable id out of range");
    return v.id;
  }

  const Tensor& node_value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& node_grad(std::size_t id) const { return *nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

  void accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.grad) {
      n.grad = g;
    } else {
      add_inplace(*n.grad, g);
    }
  }

  // Seeds `output` with `seed` and propagates to every node. Parameter leaves
  // add their gradient into the bound Param.
  void backward(Var output, const Tensor& seed) {
    const std::size_t out = check(output);
    if (seed.shape() != nodes_[out].value.shape()) {
      throw shape_error("backward: seed " + seed.shape().str() + " does not match output " +
                        nodes_[out].value.shape().str());
    }
    for (Node& n : nodes_) n.grad.reset();
    nodes_[out].grad = seed;
    for (std::size_t k = out + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (!n.grad) continue;
      if (n.backward) n.backward(*this, k);
      if (n.param != nullptr) add_inplace(n.param->grad, *n.grad);
    }
  }

  // Backward from a (1,1,1,1) scalar with seed 1.
  void backward(Var scalar) { backward(scalar, Tensor(Shape{}, 1.0)); }

  // Frees every node. Outstanding Vars become invalid.
  void reset() {
    nodes_.clear();
    ++epoch_;
  }

 private:
  struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Param* param = nullptr;
    bool requires_grad = false;
  };

  Var push_leaf(Tensor value, bool requires_grad, Param* p) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    node.param = requires_grad ? p : nullptr;
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1, epoch_};
  }

  std::vector<Node> nodes_;
  std::uint64_t epoch_ = 0;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Each computes its forward with the plain tensor
// function and registers the matching vector-Jacobian product.
namespace ad {

inline Tape& tape_of(Var v) {
  if (v.tape == nullptr) throw tape_error("variable is not attached to a tape");
  v.tape->check(v);
  return *v.tape;
}

inline Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  Tensor out = elementwise_add(t.value(a), t.value(b));
  return t.record(std::move(out), {t.check(a), t.check(b)}, [a, b](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, tp.node_grad(self));
    tp.accumulate(b.id, tp.node_grad(self));
  });
}

inline Var mul(Var a, Var b) {
  Tape& t = tape_of(a);
  Tensor out = elementwise_mul(t.value(a), t.value(b));
  return t.record(std::move(out), {t.check(a), t.check(b)}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& g = tp.node_grad(self);
    tp.accumulate(a.id, elementwise_mul(g, tp.node_value(b.id)));
    tp.accumulate(b.id, elementwise_mul(g, tp.node_value(a.id)));
  });
}

// Elementwise product with a constant tensor.
inline Var mul_const(Var a, const Tensor& c) {
  Tape& t = tape_of(a);
  Tensor out = elementwise_mul(t.value(a), c);
  return t.record(std::move(out), {t.check(a)}, [a, c](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, elementwise_mul(tp.node_grad(self), c));
  });
}

inline Var relu(Var a) {
  Tape& t = tape_of(a);
  Tensor out = t.value(a);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return t.record(std::move(out), {t.check(a)}, [a](Tape& tp, std::size_t self) {
    Tensor g = tp.node_grad(self);
    const Tensor& x = tp.node_value(a.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(x[i] > 0.0)) g[i] = 0.0;
    tp.accumulate(a.id, g);
  });
}

inline Var sum(Var a) {
  Tape& t = tape_of(a);
  Tensor out(Shape{}, pixeldcl::sum(t.value(a)));
  return t.record(std::move(out), {t.check(a)}, [a](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, Tensor(tp.node_value(a.id).shape(), tp.node_grad(self)[0]));
  });
}

// <a, w> for a constant weight tensor w.
inline Var dot_const(Var a, const Tensor& w) {
  Tape& t = tape_of(a);
  Tensor out(Shape{}, pixeldcl::dot(t.value(a), w));
  return t.record(std::move(out), {t.check(a)}, [a, w](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, scaled(w, tp.node_grad(self)[0]));
  });
}

inline Var conv2d(Var x, Var kernel, std::optional<Var> bias = std::nullopt,
                  std::shared_ptr<const Mask> mask = nullptr) {
  Tape& t = tape_of(x);
  std::span<const double> b;
  std::vector<std::size_t> parents{t.check(x), t.check(kernel)};
  if (bias) {
    b = t.value(*bias).data();
    parents.push_back(t.check(*bias));
  }
  Tensor out = conv2d_same(t.value(x), t.value(kernel), b, mask.get());
  return t.record(std::move(out), std::move(parents),
                  [x, kernel, bias, mask](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.node_grad(self);
                    const Tensor& xv = tp.node_value(x.id);
                    const Tensor& kv = tp.node_value(kernel.id);
                    tp.accumulate(x.id, conv2d_backward_input(g, kv, xv.shape(), mask.get()));
                    tp.accumulate(kernel.id,
                                  conv2d_backward_kernel(g, xv, kv.shape(), mask.get()));
                    if (bias) {
                      Tensor gb = conv2d_backward_bias(g);
                      tp.accumulate(bias->id,
                                    Tensor(tp.node_value(bias->id).shape(),
                                           std::vector<double>(gb.data().begin(),
                                                               gb.data().end())));
                    }
                  });
}

// Masked taps contribute nothing forward and receive exactly zero gradient.
inline Var masked_conv2d(Var x, Var kernel, const Mask& mask,
                         std::optional<Var> bias = std::nullopt) {
  return conv2d(x, kernel, bias, std::make_shared<const Mask>(mask));
}

inline Var periodic_shuffle(Var f1, Var f2, Var f3, Var f4) {
  Tape& t = tape_of(f1);
  Tensor out = pixeldcl::periodic_shuffle(t.value(f1), t.value(f2), t.value(f3), t.value(f4));
  const std::array<Var, 4> maps{f1, f2, f3, f4};
  return t.record(std::move(out), {t.check(f1), t.check(f2), t.check(f3), t.check(f4)},
                  [maps](Tape& tp, std::size_t self) {
                    for (std::size_t slot = 0; slot < 4; ++slot) {
                      tp.accumulate(maps[slot].id,
                                    unshuffle_phase(tp.node_grad(self), kShufflePhases[slot]));
                    }
                  });
}

inline Var unshuffle_phase(Var x, Phase p) {
  Tape& t = tape_of(x);
  Tensor out = pixeldcl::unshuffle_phase(t.value(x), p);
  return t.record(std::move(out), {t.check(x)}, [x, p](Tape& tp, std::size_t self) {
    tp.accumulate(x.id, dilate_by_phase(tp.node_grad(self), p));
  });
}

inline Var dilate(Var x, Phase p) {
  Tape& t = tape_of(x);
  Tensor out = dilate_by_phase(t.value(x), p);
  return t.record(std::move(out), {t.check(x)}, [x, p](Tape& tp, std::size_t self) {
    tp.accumulate(x.id, pixeldcl::unshuffle_phase(tp.node_grad(self), p));
  });
}

inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw shape_error("concat_channels: empty list");
  Tape& t = tape_of(parts.front());
  std::vector<Tensor> values;
  std::vector<std::size_t> parents;
  for (Var v : parts) {
    values.push_back(t.value(v));
    parents.push_back(t.check(v));
  }
  Tensor out = concat_channels(values);
  std::vector<Var> vars(parts.begin(), parts.end());
  return t.record(std::move(out), std::move(parents), [vars](Tape& tp, std::size_t self) {
    std::size_t begin = 0;
    for (Var v : vars) {
      const std::size_t c = tp.node_value(v.id).shape().c;
      tp.accumulate(v.id, slice_channels(tp.node_grad(self), begin, c));
      begin += c;
    }
  });
}

inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var max_pool2(Var x) {
  Tape& t = tape_of(x);
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  Tensor out = pixeldcl::max_pool2(t.value(x), argmax.get());
  return t.record(std::move(out), {t.check(x)}, [x, argmax](Tape& tp, std::size_t self) {
    const Tensor& g = tp.node_grad(self);
    Tensor gx(tp.node_value(x.id).shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
    tp.accumulate(x.id, gx);
  });
}

// Centred conv kernel for one phase of a [ci, co, 2m, 2m] transposed kernel.
inline Var phase_kernel(Var kernel, Phase p) {
  Tape& t = tape_of(kernel);
  Tensor out = phase_kernel_centered(t.value(kernel), p);
  return t.record(std::move(out), {t.check(kernel)}, [kernel, p](Tape& tp, std::size_t self) {
    tp.accumulate(kernel.id, phase_kernel_centered_backward(
                                 tp.node_grad(self), tp.node_value(kernel.id).shape(), p));
  });
}

// Transposed convolution through the phase decomposition.
inline Var transposed_conv2d(Var x, Var kernel) {
  std::array<Var, 4> maps;
  for (std::size_t slot = 0; slot < 4; ++slot) {
    maps[slot] = conv2d(x, phase_kernel(kernel, kShufflePhases[slot]));
  }
  return periodic_shuffle(maps[0], maps[1], maps[2], maps[3]);
}

// Mean over pixels of -log softmax(logits)[label], classes along channels.
inline double softmax_ce_value(const Tensor& logits, const LabelMap& labels, Tensor* grad) {
  const Shape& s = logits.shape();
  if (labels.n != s.n || labels.h != s.h || labels.w != s.w) {
    throw shape_error("softmax_ce: labels do not match logits " + s.str());
  }
  const auto K = static_cast<int>(s.c);
  const double inv = 1.0 / static_cast<double>(labels.size());
  if (grad != nullptr) *grad = Tensor(s);
  double loss = 0.0;
  std::vector<double> p(s.c);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) {
        const int label = labels.at(n, y, x);
        if (label < 0 || label >= K) {
          throw value_error("softmax_ce: label " + std::to_string(label) + " outside [0," +
                            std::to_string(K) + ")");
        }
        double mx = logits.at(n, 0, y, x);
        for (std::size_t k = 1; k < s.c; ++k) mx = std::max(mx, logits.at(n, k, y, x));
        double z = 0.0;
        for (std::size_t k = 0; k < s.c; ++k) {
          p[k] = std::exp(logits.at(n, k, y, x) - mx);
          z += p[k];
        }
        loss += -(logits.at(n, static_cast<std::size_t>(label), y, x) - mx - std::log(z));
        if (grad != nullptr) {
          for (std::size_t k = 0; k < s.c; ++k) {
            const double onehot = static_cast<int>(k) == label ? 1.0 : 0.0;
            grad->at(n, k, y, x) = (p[k] / z - onehot) * inv;
          }
        }
      }
  return loss * inv;
}

inline Var softmax_ce(Var logits, const LabelMap& labels) {
  Tape& t = tape_of(logits);
  auto g = std::make_shared<Tensor>();
  const double loss = softmax_ce_value(t.value(logits), labels, g.get());
  return t.record(Tensor(Shape{}, loss), {t.check(logits)},
                  [logits, g](Tape& tp, std::size_t self) {
                    tp.accumulate(logits.id, scaled(*g, tp.node_grad(self)[0]));
                  });
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Finite-difference oracle.

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / 2 eps for every element.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double eps = 1e-5) {
  if (!(eps > 0.0)) throw value_error("finite_diff_grad: eps must be > 0");
  Tensor probe = x;
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw value_error("finite_diff_grad: function returned a non-finite value");
    }
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
};

// ||g - g_hat||_inf / (||g_hat||_inf + 1e-12), where g_hat is the numeric gradient.
inline double grad_rel_err(const Tensor& analytic, const Tensor& numeric) {
  return max_abs_diff(analytic, numeric) / (max_abs(numeric) + 1e-12);
}

// Builds an output on the tape from leaf inputs.
using TapeFn = std::function<Var(Tape&, std::span<const Var>)>;

// Compares backward() against finite differences for each input. Non-scalar
// outputs are reduced with a fixed random weighting so every output element
// contributes a distinct coefficient.
inline GradCheckReport grad_check(const TapeFn& f, const std::vector<Tensor>& inputs, double tol,
                                  double eps = 1e-5, std::uint64_t seed = 0x5eed) {
  std::optional<Tensor> weights;
  auto scalar_of = [&](Tape& t, std::span<const Var> leaves) {
    Var out = f(t, leaves);
    if (t.value(out).size() == 1) return out;
    if (!weights) {
      Rng rng(seed);
      weights = rng_normal(rng, t.value(out).shape(), 1.0);
    }
    return ad::dot_const(out, *weights);
  };

  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& x : inputs) leaves.push_back(tape.leaf(x));
  tape.backward(scalar_of(tape, leaves));

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = tape.grad(leaves[k]);
    auto eval = [&](const Tensor& probe) {
      Tape t;
      std::vector<Var> ls;
      for (std::size_t j = 0; j < inputs.size(); ++j) {
        ls.push_back(t.constant(j == k ? probe : inputs[j]));
      }
      return t.value(scalar_of(t, ls))[0];
    };
    const Tensor numeric = finite_diff_grad(eval, inputs[k], eps);
    report.max_rel_err = std::max(report.max_rel_err, grad_rel_err(analytic, numeric));
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace pixeldcl
