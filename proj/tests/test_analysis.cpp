#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"

using namespace elgc;

namespace {

// A one-stage configuration small enough to count by hand.
ModelConfig tiny_config() {
  ModelConfig c;
  c.stage_depths = {1};
  c.stage_channels = {8};
  c.patch_strides = {4};
  c.mlp_ratio = 2;
  c.fusion_width = 8;
  c.decoder_width = 8;
  c.input_h = 16;
  c.input_w = 16;
  return c;
}

}  // namespace

TEST_CASE("parameter count of a one-stage config, counted by hand") {
  const ModelConfig cfg = tiny_config();
  // Encoder stage (c=8): 7x7x3x8+8 embed conv, 2*8 embed norm.
  const std::int64_t embed = 7 * 7 * 3 * 8 + 8 + 16;
  // Block: two norms (16 each); aggregator = dw(3x3x4+4) + proj_in
  // (1x1x4x8+8) + proj_out (1x1x8x8+8); mlp ratio 2 = fc1 (8->16), dw(16),
  // fc2 (16->8).
  const std::int64_t elgca = (36 + 4) + (32 + 8) + (64 + 8);
  const std::int64_t mlp = (128 + 16) + (144 + 16) + (128 + 8);
  const std::int64_t block = 16 + elgca + 16 + mlp;
  const std::int64_t stage_norm = 16;
  // Fusion: shared 1x1 proj (8->8) + combine (16->8).
  const std::int64_t fuse = (64 + 8) + (128 + 8);
  // Standard decoder, d1=8, d2=4, d3=2.
  const std::int64_t dec = (64 + 8)            // conv_in 8->8
                           + (4 * 4 * 8 * 4 + 4)  // up1
                           + 2 * (144 + 4)     // res1: two 3x3x4x4 convs
                           + (4 * 4 * 4 * 2 + 2)  // up2
                           + 2 * (36 + 2)      // res2: two 3x3x2x2 convs
                           + (2 * 2 + 2);      // head 2->2 classes
  const std::int64_t want = embed + block + stage_norm + fuse + dec;

  REQUIRE(count_params(cfg) == want);
  ElgcNet<float> net(cfg, 0);
  REQUIRE(net.params().total_scalars() == want);
}

TEST_CASE("analysis totals equal the built registry on 50 random configs") {
  Rng rng(71);
  for (int inst = 0; inst < 50; ++inst) {
    ModelConfig cfg;
    const int n = rng.uniform_int(1, 3);
    cfg.stage_depths.assign(std::size_t(n), 1);
    cfg.stage_channels.clear();
    cfg.patch_strides.clear();
    int prod = 1;
    for (int i = 0; i < n; ++i) {
      cfg.stage_depths[std::size_t(i)] = rng.uniform_int(1, 2);
      cfg.stage_channels.push_back(4 * rng.uniform_int(2, 8));
      cfg.patch_strides.push_back(i == 0 ? 4 : 2);
      prod *= cfg.patch_strides.back();
    }
    cfg.mlp_ratio = rng.uniform_int(1, 3);
    cfg.fusion_width = 4 * rng.uniform_int(2, 6);
    cfg.decoder_width = 4 * rng.uniform_int(2, 6);
    cfg.decoder = rng.coin() ? DecoderKind::standard : DecoderKind::lw;
    cfg.attention = rng.coin() ? AttentionKind::pt : AttentionKind::standard_sa;
    cfg.pooling = static_cast<PoolingMode>(rng.uniform_int(0, 4));
    do {
      cfg.use_local = rng.coin();
      cfg.use_z = rng.coin();
      cfg.use_att = rng.coin();
    } while (!cfg.use_local && !cfg.use_z && !cfg.use_att);
    cfg.input_h = 2 * prod * rng.uniform_int(1, 2);
    cfg.input_w = 2 * prod * rng.uniform_int(1, 2);
    cfg.input_c = rng.uniform_int(1, 3);
    CAPTURE(inst, n, cfg.input_h, cfg.input_w);

    ElgcNet<float> net(cfg, 7);
    REQUIRE(count_params(cfg) == net.params().total_scalars());
  }
}

TEST_CASE("aggregator branch parameters are additive") {
  for (int c : {8, 16, 32}) {
    for (int mask = 1; mask < 8; ++mask) {
      ElgcaOptions opt;
      opt.use_local = (mask & 1) != 0;
      opt.use_z = (mask & 2) != 0;
      opt.use_att = (mask & 4) != 0;
      CAPTURE(c, opt.use_local, opt.use_z, opt.use_att);
      std::int64_t want = elgca_base_params(c);
      if (opt.use_local) want += elgca_branch_params(c, ElgcaBranch::local);
      if (opt.use_z) want += elgca_branch_params(c, ElgcaBranch::z);
      if (opt.use_att) want += elgca_branch_params(c, ElgcaBranch::att);
      ParamRegistry<double> reg;
      Rng rng(72);
      Builder<double> bld{reg, rng};
      ElgcaModule<double>::make(bld, "m", c, opt);
      REQUIRE(reg.total_scalars() == want);
    }
  }
}

TEST_CASE("pooled-transpose attention cost is linear in tokens, standard is quadratic") {
  const int c4 = 16;
  auto slope = [&](AttentionKind kind) {
    const double m1 =
        double(attention_macs(kind, PoolingMode::avg_q_max_k, 16, 16, c4));
    const double m2 =
        double(attention_macs(kind, PoolingMode::avg_q_max_k, 32, 32, c4));
    return std::log(m2 / m1) / std::log(4.0);  // tokens grow 4x
  };
  const double pt_slope = slope(AttentionKind::pt);
  const double sa_slope = slope(AttentionKind::standard_sa);
  REQUIRE(pt_slope > 0.9);
  REQUIRE(pt_slope < 1.1);
  REQUIRE(sa_slope > 1.8);
  REQUIRE(sa_slope <= 2.0 + 1e-9);
  // At a stage-1-sized map the gap is orders of magnitude.
  const std::int64_t pt =
      attention_macs(AttentionKind::pt, PoolingMode::avg_q_max_k, 64, 64, 16);
  const std::int64_t sa = attention_macs(AttentionKind::standard_sa,
                                         PoolingMode::avg_q_max_k, 64, 64, 16);
  REQUIRE(sa > 100 * pt);
}

TEST_CASE("calibrated totals for the default configurations") {
  ModelConfig std_cfg;
  const CostReport std_rep = analyze(std_cfg);
  REQUIRE(std_rep.total_params() == 10967522);
  REQUIRE(std_rep.total_macs() == 65985528448);

  ModelConfig lw_cfg;
  lw_cfg.decoder = DecoderKind::lw;
  const CostReport lw_rep = analyze(lw_cfg);
  REQUIRE(lw_rep.total_params() == 7042274);
  REQUIRE(lw_rep.total_macs() == 11297047168);

  // The lightweight variant must be cheaper on every axis, with a FLOPs
  // ratio a bit under 6.
  REQUIRE(lw_rep.total_params() < std_rep.total_params());
  REQUIRE(lw_rep.total_macs() < std_rep.total_macs());
  const double ratio =
      double(std_rep.total_flops()) / double(lw_rep.total_flops());
  REQUIRE(ratio > 5.5);
  REQUIRE(ratio < 6.2);
}

TEST_CASE("report sections partition the totals; flops = 2 x macs") {
  const CostReport rep = analyze(ModelConfig{});
  std::int64_t sect_params = rep.section_params("enc.") +
                             rep.section_params("fuse.") +
                             rep.section_params("decoder");
  std::int64_t sect_macs = rep.section_macs("enc.") +
                           rep.section_macs("fuse.") +
                           rep.section_macs("decoder");
  REQUIRE(sect_params == rep.total_params());
  REQUIRE(sect_macs == rep.total_macs());
  for (const auto& row : rep.rows) REQUIRE(row.flops() == 2 * row.macs);
  REQUIRE(rep.total_flops() == 2 * rep.total_macs());
}

TEST_CASE("activation-memory estimates for the default configurations") {
  ModelConfig std_cfg;
  ModelConfig lw_cfg;
  lw_cfg.decoder = DecoderKind::lw;
  const std::int64_t std_bytes = estimate_activation_memory(std_cfg);
  const std::int64_t lw_bytes = estimate_activation_memory(lw_cfg);
  REQUIRE(std_bytes == 100663296);
  REQUIRE(lw_bytes == 67108864);
  REQUIRE(lw_bytes < std_bytes);
  // Doubling the element width doubles the estimate.
  REQUIRE(estimate_activation_memory(std_cfg, 8) == 2 * std_bytes);
}

TEST_CASE("macs track input resolution quadratically") {
  ModelConfig big;
  ModelConfig small;
  small.input_h = small.input_w = 128;
  const double r =
      double(analyze(big).total_macs()) / double(analyze(small).total_macs());
  REQUIRE(r > 3.5);
  REQUIRE(r < 4.5);
}
