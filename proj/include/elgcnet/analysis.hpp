#pragma once

// Static cost accounting for any ModelConfig: per-layer parameter counts,
// multiply-accumulate counts (MACs), and FLOPs, plus a live-set simulation
// that upper-bounds activation memory at inference time. Everything here is
// symbolic — it walks the same structure ElgcNet builds, but never allocates
// parameters — so reports are deterministic and value-independent.
//
// Counting conventions (FLOPs = 2*MACs identically, so only MACs are stated):
//   conv k x k, Cin -> Cout          out_H * out_W * k^2 * Cin * Cout
//   depthwise conv                   out_H * out_W * k^2 * C
//   transpose conv                   in_H * in_W * k^2 * Cin * Cout
//   matmul [MxK][KxN]                M * K * N
//   avg/max pool, window k           out_elems * k^2
//   softmax                          3 * elems
//   layer norm                       4 * elems
//   relu / gelu / residual add       elems
//   bilinear resample                4 * out_elems
// The pool/softmax/norm/activation entries are MAC-equivalents chosen so the
// FLOPs identity stays exact; they are small next to the conv/matmul terms and
// all gated comparisons use ratios or directions, which do not depend on the
// convention. Encoder rows carry MACs for BOTH Siamese passes (params once —
// the encoder is weight-shared); fusion and decoder rows run once.

#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "elgcnet/network.hpp"

namespace elgc {

struct CostRow {
  std::string name;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  std::int64_t flops() const { return 2 * macs; }
};

struct CostReport {
  int input_h = 0, input_w = 0;
  std::vector<CostRow> rows;

  std::int64_t total_params() const {
    std::int64_t n = 0;
    for (const auto& r : rows) n += r.params;
    return n;
  }
  std::int64_t total_macs() const {
    std::int64_t n = 0;
    for (const auto& r : rows) n += r.macs;
    return n;
  }
  std::int64_t total_flops() const { return 2 * total_macs(); }

  std::int64_t section_macs(const std::string& prefix) const {
    std::int64_t n = 0;
    for (const auto& r : rows)
      if (r.name.rfind(prefix, 0) == 0) n += r.macs;
    return n;
  }
  std::int64_t section_params(const std::string& prefix) const {
    std::int64_t n = 0;
    for (const auto& r : rows)
      if (r.name.rfind(prefix, 0) == 0) n += r.params;
    return n;
  }

  // One tab-separated record per layer: name, params, macs, flops.
  void write_records(std::ostream& os) const {
    for (const auto& r : rows)
      os << r.name << '\t' << r.params << '\t' << r.macs << '\t' << r.flops()
         << '\n';
    os << "TOTAL\t" << total_params() << '\t' << total_macs() << '\t'
       << total_flops() << '\n';
  }

  void write_table(std::ostream& os) const {
    std::size_t w = 5;
    for (const auto& r : rows) w = std::max(w, r.name.size());
    os << std::left << std::setw(int(w) + 2) << "layer" << std::right
       << std::setw(14) << "params" << std::setw(18) << "macs" << std::setw(18)
       << "flops" << '\n';
    for (const auto& r : rows)
      os << std::left << std::setw(int(w) + 2) << r.name << std::right
         << std::setw(14) << r.params << std::setw(18) << r.macs
         << std::setw(18) << r.flops() << '\n';
    os << std::left << std::setw(int(w) + 2) << "TOTAL" << std::right
       << std::setw(14) << total_params() << std::setw(18) << total_macs()
       << std::setw(18) << total_flops() << '\n';
  }
};

namespace cost {

inline std::int64_t conv_params(int k, int cin, int cout) {
  return std::int64_t(k) * k * cin * cout + cout;
}
inline std::int64_t dw_params(int k, int c) {
  return std::int64_t(k) * k * c + c;
}
inline std::int64_t norm_params(int c) { return 2 * std::int64_t(c); }

inline std::int64_t conv_macs(std::int64_t oh, std::int64_t ow, int k, int cin,
                              int cout) {
  return oh * ow * k * k * std::int64_t(cin) * cout;
}
inline std::int64_t dw_macs(std::int64_t oh, std::int64_t ow, int k, int c) {
  return oh * ow * k * k * std::int64_t(c);
}
inline std::int64_t tconv_macs(std::int64_t ih, std::int64_t iw, int k, int cin,
                               int cout) {
  return ih * iw * k * k * std::int64_t(cin) * cout;
}
inline std::int64_t matmul_macs(std::int64_t m, std::int64_t kk, std::int64_t n) {
  return m * kk * n;
}
inline std::int64_t pool_macs(std::int64_t oh, std::int64_t ow, std::int64_t c,
                              int k) {
  return oh * ow * c * k * k;
}
inline std::int64_t softmax_macs(std::int64_t elems) { return 3 * elems; }
inline std::int64_t norm_macs(std::int64_t elems) { return 4 * elems; }
inline std::int64_t act_macs(std::int64_t elems) { return elems; }
inline std::int64_t bilinear_macs(std::int64_t out_elems) { return 4 * out_elems; }

}  // namespace cost

// MACs of one attention evaluation on an H x W map with C4 channels per
// tensor. Covers pooling, the score matmuls, softmax, and the value product;
// proj_in/proj_out live outside this count.
inline std::int64_t attention_macs(AttentionKind kind, PoolingMode pooling,
                                   int h, int w, int c4) {
  const std::int64_t n = std::int64_t(h) * w;
  if (kind == AttentionKind::standard_sa) {
    std::int64_t m = 0;
    m += cost::matmul_macs(n, c4, n);        // Q K^T
    m += n * n;                              // 1/sqrt(d) scale
    m += cost::softmax_macs(n * n);          // row softmax
    m += cost::matmul_macs(n, n, c4);        // scores V
    return m;
  }
  std::int64_t m = 0;
  std::int64_t np = n;  // token count after pooling
  if (pooling != PoolingMode::none) {
    np = std::int64_t(h / 2) * (w / 2);
    auto one_pool = [&](bool is_avg) {
      return cost::pool_macs(h / 2, w / 2, c4, is_avg ? 3 : 2);
    };
    switch (pooling) {
      case PoolingMode::avg_q_max_k: m += one_pool(true) + one_pool(false); break;
      case PoolingMode::avg_avg: m += 2 * one_pool(true); break;
      case PoolingMode::max_max: m += 2 * one_pool(false); break;
      case PoolingMode::max_q_avg_k: m += one_pool(false) + one_pool(true); break;
      case PoolingMode::none: break;
    }
  }
  m += cost::matmul_macs(c4, np, c4);              // K^T Q
  m += cost::softmax_macs(std::int64_t(c4) * c4);  // column softmax
  m += cost::matmul_macs(n, c4, c4);               // V M
  return m;
}

namespace detail {

// Appends one block's rows; spatial extent (h, w) is constant inside a block.
inline void elgca_rows(std::vector<CostRow>& rows, const std::string& prefix,
                       const ElgcaOptions& opt, int c, std::int64_t h,
                       std::int64_t w, std::int64_t pass_mult) {
  const std::int64_t elems = h * w * c;
  if (opt.use_local)
    rows.push_back({prefix + ".dw_local", cost::dw_params(3, c / 2),
                    pass_mult * cost::dw_macs(h, w, 3, c / 2)});
  if (opt.any_global())
    rows.push_back(
        {prefix + ".proj_in",
         cost::conv_params(1, c / 2, opt.global_slices() * (c / 4)),
         pass_mult *
             cost::conv_macs(h, w, 1, c / 2, opt.global_slices() * (c / 4))});
  if (opt.use_att)
    rows.push_back({prefix + ".attention", 0,
                    pass_mult * attention_macs(opt.attention, opt.pooling,
                                               int(h), int(w), c / 4)});
  rows.push_back({prefix + ".proj_out",
                  cost::conv_params(1, opt.concat_width(c), c),
                  pass_mult * cost::conv_macs(h, w, 1, opt.concat_width(c), c)});
  (void)elems;
}

inline void block_rows(std::vector<CostRow>& rows, const std::string& prefix,
                       const ElgcaOptions& opt, int c, int mlp_ratio,
                       std::int64_t h, std::int64_t w, std::int64_t pass_mult) {
  const std::int64_t elems = h * w * c;
  const int hidden = c * mlp_ratio;
  rows.push_back({prefix + ".norm1", cost::norm_params(c),
                  pass_mult * cost::norm_macs(elems)});
  elgca_rows(rows, prefix + ".elgca", opt, c, h, w, pass_mult);
  rows.push_back({prefix + ".norm2", cost::norm_params(c),
                  pass_mult * cost::norm_macs(elems)});
  rows.push_back({prefix + ".mlp.fc1", cost::conv_params(1, c, hidden),
                  pass_mult * cost::conv_macs(h, w, 1, c, hidden)});
  rows.push_back({prefix + ".mlp.dw", cost::dw_params(3, hidden),
                  pass_mult * (cost::dw_macs(h, w, 3, hidden) +
                               cost::act_macs(h * w * hidden))});
  rows.push_back({prefix + ".mlp.fc2", cost::conv_params(1, hidden, c),
                  pass_mult * cost::conv_macs(h, w, 1, hidden, c)});
  rows.push_back({prefix + ".residual", 0, pass_mult * 2 * cost::act_macs(elems)});
}

}  // namespace detail

inline CostReport analyze(const ModelConfig& cfg) {
  cfg.validate();
  CostReport rep;
  rep.input_h = cfg.input_h;
  rep.input_w = cfg.input_w;
  const ElgcaOptions opt = cfg.elgca_options();
  const int n = cfg.num_stages();

  std::int64_t h = cfg.input_h, w = cfg.input_w;
  std::vector<std::int64_t> sh(n), sw(n);
  for (int i = 0; i < n; ++i) {
    const int cin = i == 0 ? cfg.input_c : cfg.stage_channels[std::size_t(i - 1)];
    const int cout = cfg.stage_channels[std::size_t(i)];
    const int k = i == 0 ? 7 : 3;
    h /= cfg.patch_strides[std::size_t(i)];
    w /= cfg.patch_strides[std::size_t(i)];
    sh[std::size_t(i)] = h;
    sw[std::size_t(i)] = w;
    const std::string stage = "enc.stage" + std::to_string(i + 1);
    // Encoder MACs count both Siamese passes; parameters are shared.
    rep.rows.push_back({stage + ".embed.conv", cost::conv_params(k, cin, cout),
                        2 * cost::conv_macs(h, w, k, cin, cout)});
    rep.rows.push_back({stage + ".embed.norm", cost::norm_params(cout),
                        2 * cost::norm_macs(h * w * cout)});
    for (int d = 0; d < cfg.stage_depths[std::size_t(i)]; ++d)
      detail::block_rows(rep.rows, stage + ".block" + std::to_string(d + 1),
                         opt, cout, cfg.mlp_ratio, h, w, 2);
    rep.rows.push_back({stage + ".norm_out", cost::norm_params(cout),
                        2 * cost::norm_macs(h * w * cout)});
  }

  const int f = cfg.fusion_width;
  for (int i = 0; i < n; ++i) {
    const int c = cfg.stage_channels[std::size_t(i)];
    const std::int64_t hi = sh[std::size_t(i)], wi = sw[std::size_t(i)];
    const std::string stage = "fuse.stage" + std::to_string(i + 1);
    // The shared projection runs once per stream.
    rep.rows.push_back({stage + ".proj", cost::conv_params(1, c, f),
                        2 * cost::conv_macs(hi, wi, 1, c, f)});
    rep.rows.push_back({stage + ".combine", cost::conv_params(1, 2 * f, f),
                        cost::conv_macs(hi, wi, 1, 2 * f, f) +
                            cost::act_macs(hi * wi * f)});
  }

  const std::int64_t h1 = sh[0], w1 = sw[0];
  std::int64_t up_macs = 0;
  for (int i = 1; i < n; ++i) up_macs += cost::bilinear_macs(h1 * w1 * f);
  if (n > 1) rep.rows.push_back({"decoder.align", 0, up_macs});

  const int cw = n * f;
  const int d1 = cfg.decoder_width, d2 = d1 / 2, d3 = d1 / 4;
  const int classes = cfg.num_classes;
  rep.rows.push_back({"decoder.conv_in", cost::conv_params(1, cw, d1),
                      cost::conv_macs(h1, w1, 1, cw, d1) +
                          cost::act_macs(h1 * w1 * d1)});
  if (cfg.decoder == DecoderKind::standard) {
    rep.rows.push_back({"decoder.up1", cost::conv_params(4, d1, d2),
                        cost::tconv_macs(h1, w1, 4, d1, d2)});
    rep.rows.push_back(
        {"decoder.res1", 2 * cost::conv_params(3, d2, d2),
         2 * cost::conv_macs(2 * h1, 2 * w1, 3, d2, d2) +
             3 * cost::act_macs(2 * h1 * 2 * w1 * d2)});
    rep.rows.push_back({"decoder.up2", cost::conv_params(4, d2, d3),
                        cost::tconv_macs(2 * h1, 2 * w1, 4, d2, d3)});
    rep.rows.push_back(
        {"decoder.res2", 2 * cost::conv_params(3, d3, d3),
         2 * cost::conv_macs(4 * h1, 4 * w1, 3, d3, d3) +
             3 * cost::act_macs(4 * h1 * 4 * w1 * d3)});
    rep.rows.push_back({"decoder.head", cost::conv_params(1, d3, classes),
                        cost::conv_macs(4 * h1, 4 * w1, 1, d3, classes)});
  } else {
    rep.rows.push_back({"decoder.dw1", cost::dw_params(3, d1),
                        cost::dw_macs(h1, w1, 3, d1)});
    rep.rows.push_back({"decoder.pw1", cost::conv_params(1, d1, d2),
                        cost::conv_macs(h1, w1, 1, d1, d2) +
                            cost::act_macs(h1 * w1 * d2) +
                            cost::bilinear_macs(2 * h1 * 2 * w1 * d2)});
    rep.rows.push_back({"decoder.dw2", cost::dw_params(3, d2),
                        cost::dw_macs(2 * h1, 2 * w1, 3, d2)});
    rep.rows.push_back({"decoder.pw2", cost::conv_params(1, d2, d3),
                        cost::conv_macs(2 * h1, 2 * w1, 1, d2, d3) +
                            cost::act_macs(2 * h1 * 2 * w1 * d3) +
                            cost::bilinear_macs(4 * h1 * 4 * w1 * d3)});
    rep.rows.push_back({"decoder.head", cost::conv_params(1, d3, classes),
                        cost::conv_macs(4 * h1, 4 * w1, 1, d3, classes)});
  }
  return rep;
}

inline std::int64_t count_params(const ModelConfig& cfg) {
  return analyze(cfg).total_params();
}

enum class ElgcaBranch { local, z, att };

// Parameters attributable to one branch of the aggregator at width C: its own
// operator plus its slices of proj_in/proj_out weights. The proj_out bias (C
// scalars) belongs to the shared base, so disabling a branch removes exactly
// this count.
inline std::int64_t elgca_branch_params(int c, ElgcaBranch b) {
  const std::int64_t half = c / 2, quarter = c / 4;
  switch (b) {
    case ElgcaBranch::local:
      return cost::dw_params(3, int(half)) + half * c;
    case ElgcaBranch::z:
      return (half * quarter + quarter) + quarter * c;
    case ElgcaBranch::att:
      return 3 * (half * quarter + quarter) + quarter * c;
  }
  throw UsageError("unknown elgca branch");
}

inline std::int64_t elgca_base_params(int c) { return c; }  // proj_out bias

// ---------------------------------------------------------------------------
// Activation-memory estimate: a live-set walk of the inference schedule. Each
// op allocates its output, then frees inputs that nothing later reads. The
// returned number is the peak of the running byte total (32-bit scalars).

class ActivationSim {
 public:
  explicit ActivationSim(int elem_bytes = 4) : elem_bytes_(elem_bytes) {}

  struct Handle {
    std::int64_t bytes = 0;
  };

  Handle alloc(std::int64_t elems) {
    Handle h{elems * elem_bytes_};
    live_ += h.bytes;
    peak_ = std::max(peak_, live_);
    return h;
  }
  void release(Handle& h) {
    live_ -= h.bytes;
    h.bytes = 0;
  }
  std::int64_t live_bytes() const { return live_; }
  std::int64_t peak_bytes() const { return peak_; }

 private:
  int elem_bytes_;
  std::int64_t live_ = 0;
  std::int64_t peak_ = 0;
};

namespace detail {

// One encoder block at h x w x c: returns the new feature handle.
inline ActivationSim::Handle sim_block(ActivationSim& sim,
                                       ActivationSim::Handle x,
                                       const ElgcaOptions& opt, int c,
                                       int mlp_ratio, std::int64_t h,
                                       std::int64_t w) {
  const std::int64_t elems = h * w * c;
  // x stays live across the residual.
  auto n1 = sim.alloc(elems);
  auto halves_gl = sim.alloc(elems / 2);
  auto halves_lo = sim.alloc(elems / 2);
  sim.release(n1);
  ActivationSim::Handle branch_local{}, branch_z{}, branch_att{};
  if (opt.use_local) branch_local = sim.alloc(elems / 2);
  sim.release(halves_lo);
  if (opt.any_global()) {
    auto proj = sim.alloc(std::int64_t(opt.global_slices()) * (elems / 4));
    sim.release(halves_gl);
    if (opt.use_z) branch_z = sim.alloc(elems / 4);
    if (opt.use_att) {
      // Pooled q/k (quarter token count unless pooling is off) then the
      // channel-space matrix.
      const std::int64_t qk_elems =
          opt.pooling == PoolingMode::none ? elems / 4 : elems / 16;
      auto qb = sim.alloc(qk_elems);
      auto kb = sim.alloc(qk_elems);
      auto m = sim.alloc(std::int64_t(c / 4) * (c / 4));
      sim.release(qb);
      sim.release(kb);
      branch_att = sim.alloc(elems / 4);
      sim.release(m);
    }
    sim.release(proj);
  } else {
    sim.release(halves_gl);
  }
  auto cat = sim.alloc(std::int64_t(opt.concat_width(c)) * h * w);
  sim.release(branch_local);
  sim.release(branch_z);
  sim.release(branch_att);
  auto agg = sim.alloc(elems);
  sim.release(cat);
  auto h1 = sim.alloc(elems);  // x + elgca(...)
  sim.release(agg);
  sim.release(x);
  // MLP: h1 stays live across its residual.
  auto n2 = sim.alloc(elems);
  auto hid = sim.alloc(elems * mlp_ratio);
  sim.release(n2);
  auto hid2 = sim.alloc(elems * mlp_ratio);
  sim.release(hid);
  auto proj_back = sim.alloc(elems);
  sim.release(hid2);
  auto out = sim.alloc(elems);
  sim.release(proj_back);
  sim.release(h1);
  return out;
}

}  // namespace detail

inline std::int64_t estimate_activation_memory(const ModelConfig& cfg,
                                               int elem_bytes = 4) {
  cfg.validate();
  ActivationSim sim(elem_bytes);
  const ElgcaOptions opt = cfg.elgca_options();
  const int n = cfg.num_stages();

  std::vector<std::int64_t> sh(n), sw(n);
  {
    std::int64_t h = cfg.input_h, w = cfg.input_w;
    for (int i = 0; i < n; ++i) {
      h /= cfg.patch_strides[std::size_t(i)];
      w /= cfg.patch_strides[std::size_t(i)];
      sh[std::size_t(i)] = h;
      sw[std::size_t(i)] = w;
    }
  }

  auto pre_img = sim.alloc(std::int64_t(cfg.input_h) * cfg.input_w * cfg.input_c);
  auto post_img = sim.alloc(std::int64_t(cfg.input_h) * cfg.input_w * cfg.input_c);

  // Encode one stream; each stage output stays live until fusion reads it,
  // and also serves as the next stage's input.
  auto encode = [&](ActivationSim::Handle img) {
    std::vector<ActivationSim::Handle> feats;
    ActivationSim::Handle h = img;
    bool h_is_kept = false;
    for (int i = 0; i < n; ++i) {
      const int c = cfg.stage_channels[std::size_t(i)];
      const std::int64_t elems = sh[std::size_t(i)] * sw[std::size_t(i)] * c;
      auto emb = sim.alloc(elems);
      if (!h_is_kept) sim.release(h);
      auto cur = sim.alloc(elems);  // embed norm
      sim.release(emb);
      for (int d = 0; d < cfg.stage_depths[std::size_t(i)]; ++d)
        cur = detail::sim_block(sim, cur, opt, c, cfg.mlp_ratio,
                                sh[std::size_t(i)], sw[std::size_t(i)]);
      auto out = sim.alloc(elems);  // stage norm_out
      sim.release(cur);
      feats.push_back(out);
      h = out;
      h_is_kept = true;
    }
    return feats;
  };

  auto pre_feats = encode(pre_img);
  auto post_feats = encode(post_img);

  const int f = cfg.fusion_width;
  std::vector<ActivationSim::Handle> fused;
  for (int i = 0; i < n; ++i) {
    const std::int64_t hw = sh[std::size_t(i)] * sw[std::size_t(i)];
    auto a = sim.alloc(hw * f);
    auto b = sim.alloc(hw * f);
    sim.release(pre_feats[std::size_t(i)]);
    sim.release(post_feats[std::size_t(i)]);
    auto cat = sim.alloc(hw * 2 * f);
    sim.release(a);
    sim.release(b);
    auto comb = sim.alloc(hw * f);
    sim.release(cat);
    fused.push_back(comb);
  }

  const std::int64_t h1 = sh[0], w1 = sw[0];
  // Align to stage-1 resolution and concatenate.
  for (int i = 1; i < n; ++i) {
    auto up = sim.alloc(h1 * w1 * f);
    sim.release(fused[std::size_t(i)]);
    fused[std::size_t(i)] = up;
  }
  auto cat = sim.alloc(h1 * w1 * std::int64_t(n) * f);
  for (auto& fh : fused) sim.release(fh);

  const int d1 = cfg.decoder_width, d2 = d1 / 2, d3 = d1 / 4;
  auto trunk = sim.alloc(h1 * w1 * d1);
  sim.release(cat);
  if (cfg.decoder == DecoderKind::standard) {
    auto u1 = sim.alloc(4 * h1 * w1 * d2);
    sim.release(trunk);
    // Residual block: input, conv1 output, conv2 output live together.
    auto c1 = sim.alloc(4 * h1 * w1 * d2);
    auto c2 = sim.alloc(4 * h1 * w1 * d2);
    sim.release(c1);
    auto r1 = sim.alloc(4 * h1 * w1 * d2);
    sim.release(c2);
    sim.release(u1);
    auto u2 = sim.alloc(16 * h1 * w1 * d3);
    sim.release(r1);
    auto c3 = sim.alloc(16 * h1 * w1 * d3);
    auto c4 = sim.alloc(16 * h1 * w1 * d3);
    sim.release(c3);
    auto r2 = sim.alloc(16 * h1 * w1 * d3);
    sim.release(c4);
    sim.release(u2);
    auto logits = sim.alloc(16 * h1 * w1 * cfg.num_classes);
    sim.release(r2);
    sim.release(logits);
  } else {
    auto p1 = sim.alloc(h1 * w1 * d2);
    sim.release(trunk);
    auto u1 = sim.alloc(4 * h1 * w1 * d2);
    sim.release(p1);
    auto p2 = sim.alloc(4 * h1 * w1 * d3);
    sim.release(u1);
    auto u2 = sim.alloc(16 * h1 * w1 * d3);
    sim.release(p2);
    auto logits = sim.alloc(16 * h1 * w1 * cfg.num_classes);
    sim.release(u2);
    sim.release(logits);
  }
  sim.release(pre_img);
  sim.release(post_img);
  return sim.peak_bytes();
}

// Least-squares slope of log(y) against log(x); used for the token-count
// complexity check.
inline double loglog_slope(const std::vector<double>& xs,
                           const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw UsageError("loglog_slope needs matching xs/ys with >= 2 points");
  const std::size_t n = xs.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lx = std::log(xs[i]), ly = std::log(ys[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (double(n) * sxy - sx * sy) / (double(n) * sxx - sx * sx);
}

}  // namespace elgc
