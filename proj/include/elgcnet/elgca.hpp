#pragma once

// Efficient local-global context aggregator: the input is split channel-wise
// into a local half (3x3 depthwise conv) and a global half that a 1x1
// projection expands into Z, Q, K, V quarter-width slices. Q and K are pooled
// to quarter token count, attention is the C/4 x C/4 channel-mixing matrix
// softmax(K^T Q) applied to V, and the surviving branches are concatenated and
// fused by a 1x1 projection back to C channels. Each branch can be disabled
// independently; the projections then shrink so that parameter counts are
// exactly additive per branch.

#include <optional>
#include <string>
#include <vector>

#include "elgcnet/layers.hpp"

namespace elgc {

enum class PoolingMode { avg_q_max_k, avg_avg, max_max, max_q_avg_k, none };
enum class AttentionKind { pt, standard_sa };

inline std::string to_string(PoolingMode m) {
  switch (m) {
    case PoolingMode::avg_q_max_k: return "avg_q_max_k";
    case PoolingMode::avg_avg: return "avg_avg";
    case PoolingMode::max_max: return "max_max";
    case PoolingMode::max_q_avg_k: return "max_q_avg_k";
    case PoolingMode::none: return "none";
  }
  throw UsageError("unknown pooling mode value");
}

inline PoolingMode parse_pooling_mode(const std::string& s) {
  if (s == "avg_q_max_k") return PoolingMode::avg_q_max_k;
  if (s == "avg_avg") return PoolingMode::avg_avg;
  if (s == "max_max") return PoolingMode::max_max;
  if (s == "max_q_avg_k") return PoolingMode::max_q_avg_k;
  if (s == "none") return PoolingMode::none;
  throw UsageError("unknown pooling mode '" + s +
                   "' (expected avg_q_max_k|avg_avg|max_max|max_q_avg_k|none)");
}

inline std::string to_string(AttentionKind k) {
  return k == AttentionKind::pt ? "pt" : "sa";
}

inline AttentionKind parse_attention_kind(const std::string& s) {
  if (s == "pt") return AttentionKind::pt;
  if (s == "sa" || s == "standard_sa") return AttentionKind::standard_sa;
  throw UsageError("unknown attention kind '" + s + "' (expected pt|sa)");
}

struct ElgcaOptions {
  PoolingMode pooling = PoolingMode::avg_q_max_k;
  AttentionKind attention = AttentionKind::pt;
  bool use_local = true;
  bool use_z = true;
  bool use_att = true;

  bool any_global() const { return use_z || use_att; }
  bool any_branch() const { return use_local || use_z || use_att; }
  // Number of quarter-width slices proj_in must emit: one for Z, three (Q,K,V)
  // for the attention branch.
  int global_slices() const { return (use_z ? 1 : 0) + (use_att ? 3 : 0); }
  // Channel width of the branch concatenation feeding proj_out.
  int concat_width(int c) const {
    return (use_local ? c / 2 : 0) + (use_z ? c / 4 : 0) + (use_att ? c / 4 : 0);
  }
};

// Pools Q and K down to one quarter of the token count according to the mode.
// The two pooling geometries (3x3 avg, stride 2, pad 1 and 2x2 max, stride 2)
// produce equal output extents exactly when H and W are even, which the
// caller's config invariants guarantee.
template <class T>
inline void pool_qk(Graph<T>* g, const Tensor<T>& q, const Tensor<T>& k,
                    PoolingMode mode, Tensor<T>& qb, Tensor<T>& kb) {
  if (mode != PoolingMode::none)
    require_dims(q.dim(0) % 2 == 0 && q.dim(1) % 2 == 0,
                 "pooled attention requires even spatial extents, got " +
                     shape_str(q.shape()));
  switch (mode) {
    case PoolingMode::avg_q_max_k:
      qb = avg_pool(g, q, 3, 2, 1);
      kb = max_pool(g, k, 2, 2, 0);
      break;
    case PoolingMode::avg_avg:
      qb = avg_pool(g, q, 3, 2, 1);
      kb = avg_pool(g, k, 3, 2, 1);
      break;
    case PoolingMode::max_max:
      qb = max_pool(g, q, 2, 2, 0);
      kb = max_pool(g, k, 2, 2, 0);
      break;
    case PoolingMode::max_q_avg_k:
      qb = max_pool(g, q, 2, 2, 0);
      kb = avg_pool(g, k, 3, 2, 1);
      break;
    case PoolingMode::none:
      qb = q;
      kb = k;
      break;
  }
}

// Pooled-transpose attention. Q, K, V are [H, W, C4]; the attention matrix M
// lives in channel space: M = softmax over the contracted axis of
// (pooled K)^T (pooled Q), shape [C4, C4] with columns summing to 1, and the
// output is V_flat * M reshaped back to the map. No temperature scaling. Cost
// is linear in the token count H*W.
template <class T>
Tensor<T> pt_attention(Graph<T>* g, const Tensor<T>& q, const Tensor<T>& k,
                       const Tensor<T>& v, PoolingMode mode) {
  require_dims(q.rank() == 3 && k.rank() == 3 && v.rank() == 3 &&
                   q.shape() == k.shape() && q.shape() == v.shape(),
               "pt_attention expects three equal [H,W,C4] tensors");
  const int H = q.dim(0), W = q.dim(1), C4 = q.dim(2);
  Tensor<T> qb, kb;
  pool_qk(g, q, k, mode, qb, kb);
  Tensor<T> qf = flatten_spatial(g, qb);
  Tensor<T> kf = flatten_spatial(g, kb);
  Tensor<T> m = softmax(g, matmul(g, transpose2d(g, kf), qf), 0);
  Tensor<T> vf = flatten_spatial(g, v);
  return reshape(g, matmul(g, vf, m), Shape{H, W, C4});
}

// Conventional token-space attention on the same C/4 slice, kept for the
// efficiency comparison: softmax(Q K^T / sqrt(C4)) V with an N x N matrix.
template <class T>
Tensor<T> standard_self_attention(Graph<T>* g, const Tensor<T>& q,
                                  const Tensor<T>& k, const Tensor<T>& v) {
  require_dims(q.rank() == 3 && k.rank() == 3 && v.rank() == 3 &&
                   q.shape() == k.shape() && q.shape() == v.shape(),
               "standard_self_attention expects three equal [H,W,C4] tensors");
  const int H = q.dim(0), W = q.dim(1), C4 = q.dim(2);
  Tensor<T> qf = flatten_spatial(g, q);
  Tensor<T> kf = flatten_spatial(g, k);
  Tensor<T> vf = flatten_spatial(g, v);
  const T scale = T(1) / std::sqrt(T(C4));
  Tensor<T> scores =
      mul_scalar(g, matmul(g, qf, transpose2d(g, kf)), scale);
  Tensor<T> attn = softmax(g, scores, 1);
  return reshape(g, matmul(g, attn, vf), Shape{H, W, C4});
}

template <class T>
struct ElgcaModule {
  std::string name;
  int channels = 0;
  ElgcaOptions opt;
  std::optional<DepthwiseConv2dLayer<T>> dw_local;
  std::optional<Conv2dLayer<T>> proj_in;
  Conv2dLayer<T> proj_out;

  static ElgcaModule make(Builder<T>& bld, const std::string& name, int c,
                          const ElgcaOptions& opt) {
    require_dims(c % 4 == 0, "elgca channels must be divisible by 4, got " +
                                 std::to_string(c));
    if (!opt.any_branch())
      throw UsageError("elgca needs at least one enabled branch");
    ElgcaModule m;
    m.name = name;
    m.channels = c;
    m.opt = opt;
    if (opt.use_local)
      m.dw_local = DepthwiseConv2dLayer<T>::make(bld, name + ".dw_local", 3,
                                                 c / 2, 1, 1);
    if (opt.any_global())
      m.proj_in = Conv2dLayer<T>::make(bld, name + ".proj_in", 1, c / 2,
                                       opt.global_slices() * (c / 4), 1, 0);
    m.proj_out = Conv2dLayer<T>::make(bld, name + ".proj_out", 1,
                                      opt.concat_width(c), c, 1, 0);
    return m;
  }

  Tensor<T> forward(Graph<T>* g, const Tensor<T>& x) const {
    ScopedOpLabel label(name);
    require_dims(x.rank() == 3 && x.dim(2) == channels,
                 name + ": expected [H,W," + std::to_string(channels) +
                     "], got " + shape_str(x.shape()));
    auto halves = split(g, x, 2, 2);
    const Tensor<T>& x_gl = halves[0];
    const Tensor<T>& x_lo = halves[1];
    std::vector<Tensor<T>> parts;
    if (opt.use_local) parts.push_back((*dw_local)(g, x_lo));
    if (opt.any_global()) {
      Tensor<T> global = (*proj_in)(g, x_gl);
      auto slices = split(g, global, 2, opt.global_slices());
      std::size_t idx = 0;
      if (opt.use_z) parts.push_back(slices[idx++]);
      if (opt.use_att) {
        const Tensor<T>& q = slices[idx];
        const Tensor<T>& k = slices[idx + 1];
        const Tensor<T>& v = slices[idx + 2];
        parts.push_back(opt.attention == AttentionKind::pt
                            ? pt_attention(g, q, k, v, opt.pooling)
                            : standard_self_attention(g, q, k, v));
      }
    }
    Tensor<T> merged = parts.size() == 1 ? parts.front() : concat(g, parts, 2);
    return proj_out(g, merged);
  }
};

// 1x1 expand -> 3x3 depthwise -> GELU -> 1x1 project.
template <class T>
struct ConvMlp {
  std::string name;
  Conv2dLayer<T> fc1;
  DepthwiseConv2dLayer<T> dw;
  Conv2dLayer<T> fc2;

  static ConvMlp make(Builder<T>& bld, const std::string& name, int c,
                      int ratio) {
    ConvMlp m;
    m.name = name;
    const int hidden = c * ratio;
    m.fc1 = Conv2dLayer<T>::make(bld, name + ".fc1", 1, c, hidden, 1, 0);
    m.dw = DepthwiseConv2dLayer<T>::make(bld, name + ".dw", 3, hidden, 1, 1);
    m.fc2 = Conv2dLayer<T>::make(bld, name + ".fc2", 1, hidden, c, 1, 0);
    return m;
  }

  Tensor<T> forward(Graph<T>* g, const Tensor<T>& x) const {
    ScopedOpLabel label(name);
    return fc2(g, gelu(g, dw(g, fc1(g, x))));
  }
};

// Pre-norm residual block: x + elgca(norm1(x)), then + mlp(norm2(.)).
template <class T>
struct EncoderBlock {
  std::string name;
  LayerNormLayer<T> norm1, norm2;
  ElgcaModule<T> elgca;
  ConvMlp<T> mlp;

  static EncoderBlock make(Builder<T>& bld, const std::string& name, int c,
                           int mlp_ratio, const ElgcaOptions& opt) {
    EncoderBlock b;
    b.name = name;
    b.norm1 = LayerNormLayer<T>::make(bld, name + ".norm1", c);
    b.elgca = ElgcaModule<T>::make(bld, name + ".elgca", c, opt);
    b.norm2 = LayerNormLayer<T>::make(bld, name + ".norm2", c);
    b.mlp = ConvMlp<T>::make(bld, name + ".mlp", c, mlp_ratio);
    return b;
  }

  Tensor<T> forward(Graph<T>* g, const Tensor<T>& x) const {
    ScopedOpLabel label(name);
    Tensor<T> h = add(g, x, elgca.forward(g, norm1(g, x)));
    return add(g, h, mlp.forward(g, norm2(g, h)));
  }
};

}  // namespace elgc
