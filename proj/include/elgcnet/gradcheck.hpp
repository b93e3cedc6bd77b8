#pragma once

// Central finite-difference verification of the analytic gradients, run in
// 64-bit precision. Each check scalarizes an operation as sum(r * f(x)) for a
// fixed random r, backpropagates, then probes leaf entries with x +/- h. The
// reported error is max |analytic - numeric| normalized by the largest
// gradient magnitude seen (guarded at 1e-6 so identically-zero gradients
// compare exactly).

#include <functional>
#include <string>
#include <vector>

#include "elgcnet/network.hpp"
#include "elgcnet/train.hpp"

namespace elgc {

// Distinct random values: a shuffled, equally spaced grid over [lo, hi]. The
// guaranteed minimum gap keeps finite-difference probes of kinked ops (max
// pool, relu, clamp) away from their decision boundaries.
template <class T>
Tensor<T> rand_distinct(Rng& rng, Shape shape, double lo, double hi) {
  Tensor<T> t(shape);
  const std::int64_t n = t.size();
  std::vector<double> grid(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    grid[std::size_t(i)] = lo + (double(i) + 0.5) * (hi - lo) / double(n);
  for (std::int64_t i = n - 1; i > 0; --i)
    std::swap(grid[std::size_t(i)], grid[std::size_t(rng.uniform_int(0, int(i)))]);
  for (std::int64_t i = 0; i < n; ++i) t[i] = T(grid[std::size_t(i)]);
  return t;
}

template <class T>
struct FdReport {
  double max_abs_diff = 0;
  double max_grad_mag = 0;
  double rel_err() const {
    return max_abs_diff / std::max(1e-6, max_grad_mag);
  }
};

// `loss_fn` must rebuild the computation from the leaves' *current* values on
// every call (pass nullptr to skip taping). probes_per_leaf == 0 checks every
// entry of every leaf.
template <class T>
FdReport<T> finite_difference_check(
    const std::function<Tensor<T>(Graph<T>*)>& loss_fn,
    std::vector<Tensor<T>> leaves, Rng& rng, double h = 1e-3,
    int probes_per_leaf = 0) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  Graph<T> graph;
  Tensor<T> loss = loss_fn(&graph);
  graph.backward(loss);

  std::vector<std::vector<T>> analytic;
  for (auto& leaf : leaves)
    analytic.push_back(leaf.has_grad() ? leaf.grad()
                                       : std::vector<T>(std::size_t(leaf.size()), T(0)));

  FdReport<T> rep;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor<T>& leaf = leaves[li];
    std::vector<std::int64_t> idx;
    if (probes_per_leaf <= 0 || probes_per_leaf >= leaf.size()) {
      idx.resize(std::size_t(leaf.size()));
      for (std::int64_t i = 0; i < leaf.size(); ++i) idx[std::size_t(i)] = i;
    } else {
      for (int i = 0; i < probes_per_leaf; ++i)
        idx.push_back(rng.uniform_int(0, int(leaf.size()) - 1));
    }
    auto central = [&](std::int64_t i, double hh) {
      const T saved = leaf[i];
      leaf[i] = saved + T(hh);
      const double lp = double(loss_fn(nullptr)[0]);
      leaf[i] = saved - T(hh);
      const double lm = double(loss_fn(nullptr)[0]);
      leaf[i] = saved;
      return (lp - lm) / (2.0 * hh);
    };
    for (std::int64_t i : idx) {
      // Two step sizes: if the estimates disagree, the probe straddles a
      // kink (relu / max pool) or sits in high curvature, so refine. A wrong
      // analytic gradient cannot hide here -- its mismatch is h-independent.
      double gn = central(i, h);
      const double gn2 = central(i, h / 8);
      if (std::abs(gn - gn2) >
          1e-3 * std::max({std::abs(gn), std::abs(gn2), 1e-8}))
        gn = central(i, h / 64);
      else
        gn = gn2;
      const double ga = double(analytic[li][std::size_t(i)]);
      rep.max_abs_diff = std::max(rep.max_abs_diff, std::abs(ga - gn));
      rep.max_grad_mag =
          std::max({rep.max_grad_mag, std::abs(ga), std::abs(gn)});
    }
  }
  return rep;
}

struct GradCheckEntry {
  std::string name;
  double rel_err = 0;
  double tolerance = 0;
  bool pass() const { return rel_err <= tolerance; }
};

namespace detail {

// Scalarizes f's output against a fixed random direction r.
template <class T>
std::function<Tensor<T>(Graph<T>*)> dotted(
    std::function<Tensor<T>(Graph<T>*)> f, Tensor<T> r) {
  return [f = std::move(f), r = std::move(r)](Graph<T>* g) {
    return sum_all(g, mul(g, f(g), r));
  };
}

}  // namespace detail

// The full checkable-gradient suite in double precision: one entry per
// differentiable op, per attention/aggregator module, per loss, and (unless
// skipped) the end-to-end reduced model.
inline std::vector<GradCheckEntry> run_gradcheck_suite(
    std::uint64_t seed, bool include_end_to_end = true) {
  using T = double;
  Rng rng(seed);
  std::vector<GradCheckEntry> out;
  const double kOpTol = 1e-5;

  auto check = [&](const std::string& name,
                   std::function<Tensor<T>(Graph<T>*)> loss_fn,
                   std::vector<Tensor<T>> leaves, double tol,
                   int probes = 0) {
    FdReport<T> rep =
        finite_difference_check<T>(loss_fn, std::move(leaves), rng, 1e-3, probes);
    out.push_back({name, rep.rel_err(), tol});
  };

  auto probe_dir = [&](const Shape& s) {
    return rand_distinct<T>(rng, s, -1.0, 1.0);
  };

  {  // elementwise & reductions
    Tensor<T> a = rand_distinct<T>(rng, {3, 4}, -1.2, 1.2);
    Tensor<T> b = rand_distinct<T>(rng, {3, 4}, 0.3, 1.5);  // safe divisor
    Tensor<T> r = probe_dir({3, 4});
    check("add", detail::dotted<T>([=](Graph<T>* g) { return add(g, a, b); }, r), {a, b}, kOpTol);
    check("sub", detail::dotted<T>([=](Graph<T>* g) { return sub(g, a, b); }, r), {a, b}, kOpTol);
    check("mul", detail::dotted<T>([=](Graph<T>* g) { return mul(g, a, b); }, r), {a, b}, kOpTol);
    check("div", detail::dotted<T>([=](Graph<T>* g) { return div(g, a, b); }, r), {a, b}, kOpTol);
    check("mul_scalar", detail::dotted<T>([=](Graph<T>* g) { return mul_scalar(g, a, T(1.7)); }, r), {a}, kOpTol);
    check("add_scalar", detail::dotted<T>([=](Graph<T>* g) { return add_scalar(g, a, T(-0.4)); }, r), {a}, kOpTol);
    check("log", detail::dotted<T>([=](Graph<T>* g) { return log(g, b); }, r), {b}, kOpTol);
    check("pow_scalar", detail::dotted<T>([=](Graph<T>* g) { return pow_scalar(g, b, T(2.0)); }, r), {b}, kOpTol);
    // Clamp bounds must not coincide with grid values of `a` (kink at the
    // bound); +/-0.85 sits between grid points.
    check("clamp", detail::dotted<T>([=](Graph<T>* g) { return clamp(g, a, T(-0.85), T(0.85)); }, r), {a}, kOpTol);
    check("relu", detail::dotted<T>([=](Graph<T>* g) { return relu(g, a); }, r), {a}, kOpTol);
    check("gelu", detail::dotted<T>([=](Graph<T>* g) { return gelu(g, a); }, r), {a}, kOpTol);
    check("sum_all", [=](Graph<T>* g) { return sum_all(g, a); }, {a}, kOpTol);
    check("mean_all", [=](Graph<T>* g) { return mean_all(g, a); }, {a}, kOpTol);
  }
  {  // linear algebra & shape ops
    Tensor<T> a = rand_distinct<T>(rng, {4, 5}, -1.0, 1.0);
    Tensor<T> b = rand_distinct<T>(rng, {5, 3}, -1.0, 1.0);
    check("matmul",
          detail::dotted<T>([=](Graph<T>* g) { return matmul(g, a, b); },
                            probe_dir({4, 3})),
          {a, b}, kOpTol);
    check("transpose2d",
          detail::dotted<T>([=](Graph<T>* g) { return transpose2d(g, a); },
                            probe_dir({5, 4})),
          {a}, kOpTol);
    Tensor<T> x = rand_distinct<T>(rng, {2, 3, 8}, -1.0, 1.0);
    check("softmax",
          detail::dotted<T>([=](Graph<T>* g) { return softmax(g, x, 2); },
                            probe_dir({2, 3, 8})),
          {x}, kOpTol);
    Tensor<T> gamma = rand_distinct<T>(rng, {8}, 0.5, 1.5);
    Tensor<T> beta = rand_distinct<T>(rng, {8}, -0.5, 0.5);
    check("layer_norm",
          detail::dotted<T>(
              [=](Graph<T>* g) { return layer_norm(g, x, gamma, beta); },
              probe_dir({2, 3, 8})),
          {x, gamma, beta}, kOpTol);
    Tensor<T> c1 = rand_distinct<T>(rng, {2, 2, 3}, -1.0, 1.0);
    Tensor<T> c2 = rand_distinct<T>(rng, {2, 2, 5}, -1.0, 1.0);
    check("concat",
          detail::dotted<T>(
              [=](Graph<T>* g) {
                return concat(g, std::vector<Tensor<T>>{c1, c2}, 2);
              },
              probe_dir({2, 2, 8})),
          {c1, c2}, kOpTol);
    check("split",
          detail::dotted<T>(
              [=](Graph<T>* g) { return split(g, x, 2, 2)[1]; },
              probe_dir({2, 3, 4})),
          {x}, kOpTol);
  }
  {  // spatial kernels
    Tensor<T> x = rand_distinct<T>(rng, {6, 6, 3}, -1.0, 1.0);
    Tensor<T> w = rand_distinct<T>(rng, {3, 3, 3, 4}, -0.7, 0.7);
    Tensor<T> b = rand_distinct<T>(rng, {4}, -0.3, 0.3);
    check("conv2d",
          detail::dotted<T>(
              [=](Graph<T>* g) { return conv2d(g, x, w, b, 1, 1); },
              probe_dir({6, 6, 4})),
          {x, w, b}, kOpTol);
    Tensor<T> wd = rand_distinct<T>(rng, {3, 3, 3}, -0.7, 0.7);
    Tensor<T> bd = rand_distinct<T>(rng, {3}, -0.3, 0.3);
    check("depthwise_conv2d",
          detail::dotted<T>(
              [=](Graph<T>* g) { return depthwise_conv2d(g, x, wd, bd, 1, 1); },
              probe_dir({6, 6, 3})),
          {x, wd, bd}, kOpTol);
    Tensor<T> wt = rand_distinct<T>(rng, {4, 4, 3, 2}, -0.7, 0.7);
    Tensor<T> bt = rand_distinct<T>(rng, {2}, -0.3, 0.3);
    check("transpose_conv2d",
          detail::dotted<T>(
              [=](Graph<T>* g) { return transpose_conv2d(g, x, wt, bt, 2, 1); },
              probe_dir({12, 12, 2})),
          {x, wt, bt}, kOpTol);
    check("avg_pool",
          detail::dotted<T>(
              [=](Graph<T>* g) { return avg_pool(g, x, 3, 2, 1); },
              probe_dir({3, 3, 3})),
          {x}, kOpTol);
    check("max_pool",
          detail::dotted<T>(
              [=](Graph<T>* g) { return max_pool(g, x, 2, 2, 0); },
              probe_dir({3, 3, 3})),
          {x}, kOpTol);
    check("bilinear_upsample",
          detail::dotted<T>(
              [=](Graph<T>* g) { return bilinear_upsample(g, x, 12, 12); },
              probe_dir({12, 12, 3})),
          {x}, kOpTol);
  }
  {  // attention and the full aggregator block
    Tensor<T> q = rand_distinct<T>(rng, {4, 4, 2}, -1.0, 1.0);
    Tensor<T> k = rand_distinct<T>(rng, {4, 4, 2}, -1.0, 1.0);
    Tensor<T> v = rand_distinct<T>(rng, {4, 4, 2}, -1.0, 1.0);
    check("pt_attention",
          detail::dotted<T>(
              [=](Graph<T>* g) {
                return pt_attention(g, q, k, v, PoolingMode::avg_q_max_k);
              },
              probe_dir({4, 4, 2})),
          {q, k, v}, kOpTol);
    check("standard_self_attention",
          detail::dotted<T>(
              [=](Graph<T>* g) { return standard_self_attention(g, q, k, v); },
              probe_dir({4, 4, 2})),
          {q, k, v}, kOpTol);

    ParamRegistry<T> reg;
    Rng init_rng(seed ^ 0x5eedULL);
    Builder<T> bld{reg, init_rng};
    EncoderBlock<T> block =
        EncoderBlock<T>::make(bld, "block", 8, 2, ElgcaOptions{});
    Tensor<T> bx = rand_distinct<T>(rng, {4, 4, 8}, -1.0, 1.0);
    Tensor<T> br = probe_dir({4, 4, 8});
    std::vector<Tensor<T>> leaves{bx};
    for (auto& [name, t] : reg.items()) leaves.push_back(t);
    check("encoder_block",
          detail::dotted<T>(
              [=](Graph<T>* g) { return block.forward(g, bx); }, br),
          leaves, kOpTol);
  }
  {  // losses
    Tensor<T> logits = rand_distinct<T>(rng, {5, 5, 2}, -1.5, 1.5);
    Tensor<T> labels(Shape{5, 5});
    for (std::int64_t i = 0; i < labels.size(); ++i)
      labels[i] = rng.coin() ? T(1) : T(0);
    check("cross_entropy",
          [=](Graph<T>* g) { return cross_entropy(g, logits, labels); },
          {logits}, kOpTol);
    check("focal_loss",
          [=](Graph<T>* g) { return focal_loss(g, logits, labels, T(2)); },
          {logits}, kOpTol);
    check("miou_loss",
          [=](Graph<T>* g) { return miou_loss(g, logits, labels); },
          {logits}, kOpTol);
  }
  if (include_end_to_end) {  // end-to-end reduced model at 64x64
    ModelConfig cfg = ModelConfig::reduced();
    ElgcNet<T> net(cfg, seed ^ 0xe2eULL);
    Rng data_rng(seed ^ 0xda7aULL);
    ChangeSample s = synth_one(data_rng, cfg.input_h);
    Tensor<T> pre = cast_tensor<T>(s.pre);
    Tensor<T> post = cast_tensor<T>(s.post);
    Tensor<T> labels = cast_tensor<T>(s.label);
    std::vector<Tensor<T>> leaves;
    for (auto& [name, t] : net.params().items()) leaves.push_back(t);
    FdReport<T> rep = finite_difference_check<T>(
        [&net, pre, post, labels](Graph<T>* g) {
          return cross_entropy(g, net.forward(g, pre, post), labels);
        },
        leaves, rng, /*h=*/1e-4, /*probes_per_leaf=*/2);
    out.push_back({"model_end_to_end", rep.rel_err(), 1e-4});
  }
  return out;
}

}  // namespace elgc
