#pragma once

// Parameter bookkeeping and thin layer wrappers (conv / depthwise conv /
// transpose conv / layer norm) that tie a named weight set to the kernels in
// conv.hpp and ops.hpp. Registration order is the canonical parameter order
// used by the optimizer and the checkpoint format, so builds are fully
// deterministic given a seed.

#include <string>
#include <utility>
#include <vector>

#include "elgcnet/conv.hpp"
#include "elgcnet/ops.hpp"
#include "elgcnet/random.hpp"
#include "elgcnet/tensor.hpp"

namespace elgc {

template <class T>
class ParamRegistry {
 public:
  Tensor<T>& add(std::string name, Tensor<T> t) {
    for (const auto& it : items_)
      if (it.first == name) throw UsageError("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    items_.emplace_back(std::move(name), std::move(t));
    return items_.back().second;
  }

  std::size_t count() const noexcept { return items_.size(); }
  std::int64_t total_scalars() const {
    std::int64_t n = 0;
    for (const auto& it : items_) n += it.second.size();
    return n;
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& items() const {
    return items_;
  }
  std::vector<std::pair<std::string, Tensor<T>>>& items() { return items_; }

  Tensor<T>* find(const std::string& name) {
    for (auto& it : items_)
      if (it.first == name) return &it.second;
    return nullptr;
  }

  void zero_grads() {
    for (auto& it : items_) it.second.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> items_;
};

// Builds named parameters with fan-in-scaled initialization: truncated normal
// (std sqrt(2/fan_in), cut at 2 sigma) for weights, zeros for biases,
// ones/zeros for norm affine pairs. The scaling keeps activations and
// gradients O(1) through the un-normalized fusion/decoder stack, which the
// short-budget learning-sanity check depends on.
template <class T>
struct Builder {
  ParamRegistry<T>& reg;
  Rng& rng;
  // Multiplier on the weight-init stddev. Modules that sit behind a
  // zero-initialized head raise this so their logits reach useful magnitudes
  // within a short optimization budget; see InitGainScope.
  double init_gain = 1.0;

  Tensor<T> weight(const std::string& name, Shape shape,
                   std::int64_t fan_in) {
    require_dims(fan_in > 0, "weight fan_in must be positive");
    const double stddev = init_gain * std::sqrt(2.0 / double(fan_in));
    Tensor<T> t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i)
      t[i] = T(rng.trunc_normal(stddev));
    return reg.add(name, std::move(t));
  }
  Tensor<T> zeros(const std::string& name, Shape shape) {
    return reg.add(name, Tensor<T>::zeros(std::move(shape)));
  }
  Tensor<T> ones(const std::string& name, Shape shape) {
    return reg.add(name, Tensor<T>::full(std::move(shape), T(1)));
  }
};

// Temporarily raises Builder::init_gain for the weights created inside the
// scope. Does not change how many random draws are consumed, so builds stay
// reproducible across gain values.
template <class T>
struct InitGainScope {
  Builder<T>& bld;
  double prev;
  InitGainScope(Builder<T>& b, double gain) : bld(b), prev(b.init_gain) {
    bld.init_gain = gain;
  }
  ~InitGainScope() { bld.init_gain = prev; }
  InitGainScope(const InitGainScope&) = delete;
  InitGainScope& operator=(const InitGainScope&) = delete;
};

template <class T>
struct Conv2dLayer {
  std::string name;
  Tensor<T> w, b;
  int stride = 1, pad = 0;

  static Conv2dLayer make(Builder<T>& bld, const std::string& name, int k,
                          int cin, int cout, int stride, int pad) {
    Conv2dLayer l;
    l.name = name;
    l.w = bld.weight(name + ".w", Shape{k, k, cin, cout},
                     std::int64_t(k) * k * cin);
    l.b = bld.zeros(name + ".b", Shape{cout});
    l.stride = stride;
    l.pad = pad;
    return l;
  }

  // Zero-initialized variant: the layer starts as the constant-zero map, so
  // anything downstream of it sees exactly zeros at step 0.
  static Conv2dLayer make_zero(Builder<T>& bld, const std::string& name, int k,
                               int cin, int cout, int stride, int pad) {
    Conv2dLayer l;
    l.name = name;
    l.w = bld.zeros(name + ".w", Shape{k, k, cin, cout});
    l.b = bld.zeros(name + ".b", Shape{cout});
    l.stride = stride;
    l.pad = pad;
    return l;
  }

  Tensor<T> operator()(Graph<T>* g, const Tensor<T>& x) const {
    ScopedOpLabel label(name);
    return conv2d(g, x, w, b, stride, pad);
  }
};

template <class T>
struct DepthwiseConv2dLayer {
  std::string name;
  Tensor<T> w, b;
  int stride = 1, pad = 0;

  static DepthwiseConv2dLayer make(Builder<T>& bld, const std::string& name,
                                   int k, int c, int stride, int pad) {
    DepthwiseConv2dLayer l;
    l.name = name;
    l.w = bld.weight(name + ".w", Shape{k, k, c}, std::int64_t(k) * k);
    l.b = bld.zeros(name + ".b", Shape{c});
    l.stride = stride;
    l.pad = pad;
    return l;
  }

  Tensor<T> operator()(Graph<T>* g, const Tensor<T>& x) const {
    ScopedOpLabel label(name);
    return depthwise_conv2d(g, x, w, b, stride, pad);
  }
};

template <class T>
struct TransposeConv2dLayer {
  std::string name;
  Tensor<T> w, b;
  int stride = 2, pad = 1;

  static TransposeConv2dLayer make(Builder<T>& bld, const std::string& name,
                                   int k, int cin, int cout, int stride,
                                   int pad) {
    TransposeConv2dLayer l;
    l.name = name;
    // Each output position receives (k/stride)^2 taps per input channel.
    l.w = bld.weight(name + ".w", Shape{k, k, cin, cout},
                     std::max<std::int64_t>(1, std::int64_t(k) * k * cin /
                                                   (stride * stride)));
    l.b = bld.zeros(name + ".b", Shape{cout});
    l.stride = stride;
    l.pad = pad;
    return l;
  }

  Tensor<T> operator()(Graph<T>* g, const Tensor<T>& x) const {
    ScopedOpLabel label(name);
    return transpose_conv2d(g, x, w, b, stride, pad);
  }
};

template <class T>
struct LayerNormLayer {
  std::string name;
  Tensor<T> gamma, beta;
  T eps = T(1e-6);

  static LayerNormLayer make(Builder<T>& bld, const std::string& name, int c) {
    LayerNormLayer l;
    l.name = name;
    l.gamma = bld.ones(name + ".gamma", Shape{c});
    l.beta = bld.zeros(name + ".beta", Shape{c});
    return l;
  }

  Tensor<T> operator()(Graph<T>* g, const Tensor<T>& x) const {
    ScopedOpLabel label(name);
    return layer_norm(g, x, gamma, beta, eps);
  }
};

}  // namespace elgc
