#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

using namespace elgc;

namespace {

Tensor<float> rand_image(Rng& rng, const ModelConfig& cfg) {
  return rand_uniform<float>(rng, Shape{cfg.input_h, cfg.input_w, cfg.input_c});
}

}  // namespace

TEST_CASE("encoder produces the expected per-stage feature shapes") {
  ModelConfig cfg = ModelConfig::reduced();
  ElgcNet<float> net(cfg, 1);
  Rng rng(61);
  Tensor<float> img = rand_image(rng, cfg);
  std::vector<Tensor<float>> feats = net.encode(nullptr, img);
  REQUIRE(feats.size() == 4);
  // Strides 4,2,2,2 on a 64x64 input: 16, 8, 4, 2.
  const int extents[] = {16, 8, 4, 2};
  for (int i = 0; i < 4; ++i) {
    REQUIRE(feats[std::size_t(i)].dim(0) == extents[i]);
    REQUIRE(feats[std::size_t(i)].dim(1) == extents[i]);
    REQUIRE(feats[std::size_t(i)].dim(2) ==
            cfg.stage_channels[std::size_t(i)]);
  }
}

TEST_CASE("forward returns per-pixel logits at input resolution") {
  for (DecoderKind dk : {DecoderKind::standard, DecoderKind::lw}) {
    ModelConfig cfg = ModelConfig::reduced();
    cfg.decoder = dk;
    ElgcNet<float> net(cfg, 2);
    Rng rng(62);
    Tensor<float> pre = rand_image(rng, cfg);
    Tensor<float> post = rand_image(rng, cfg);
    Tensor<float> logits = net.forward(nullptr, pre, post);
    REQUIRE(logits.shape() == Shape{cfg.input_h, cfg.input_w, cfg.num_classes});
    for (std::int64_t i = 0; i < logits.size(); ++i)
      REQUIRE(std::isfinite(double(logits[i])));
  }
}

TEST_CASE("freshly built networks emit zero logits (zero-initialized head)") {
  ModelConfig cfg = ModelConfig::reduced();
  ElgcNet<float> net(cfg, 3);
  Rng rng(63);
  Tensor<float> pre = rand_image(rng, cfg);
  Tensor<float> post = rand_image(rng, cfg);
  Tensor<float> logits = net.forward(nullptr, pre, post);
  for (std::int64_t i = 0; i < logits.size(); ++i)
    REQUIRE(logits[i] == 0.0f);
}

TEST_CASE("same seed, same network; different seed, different network") {
  ModelConfig cfg = ModelConfig::reduced();
  ElgcNet<float> a(cfg, 5), b(cfg, 5), c(cfg, 6);
  const auto& pa = a.params().items();
  const auto& pb = b.params().items();
  const auto& pc = c.params().items();
  REQUIRE(pa.size() == pb.size());
  REQUIRE(pa.size() == pc.size());
  double diff_ab = 0.0, diff_ac = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].first == pb[i].first);
    REQUIRE(pa[i].first == pc[i].first);
    for (std::int64_t j = 0; j < pa[i].second.size(); ++j) {
      diff_ab = std::max(diff_ab,
                         std::abs(double(pa[i].second[j] - pb[i].second[j])));
      diff_ac = std::max(diff_ac,
                         std::abs(double(pa[i].second[j] - pc[i].second[j])));
    }
  }
  REQUIRE(diff_ab == 0.0);
  REQUIRE(diff_ac > 0.0);

  Rng rng(64);
  Tensor<float> pre = rand_image(rng, cfg);
  Tensor<float> post = rand_image(rng, cfg);
  Tensor<float> ya = a.forward(nullptr, pre, post);
  Tensor<float> yb = b.forward(nullptr, pre, post);
  REQUIRE(oracle::max_abs_diff(ya, yb) == 0.0f);
}

TEST_CASE("the two streams share one encoder and one fusion projection") {
  ModelConfig cfg = ModelConfig::reduced();
  ElgcNet<float> net(cfg, 7);
  // A weight-shared design has exactly one parameter set per encoder stage
  // and a single projection per fusion module; no *_pre / *_post twins.
  int proj_count = 0;
  for (const auto& [name, t] : net.params().items()) {
    REQUIRE(name.find("pre") == std::string::npos);
    REQUIRE(name.find("post") == std::string::npos);
    if (name.find(".proj.w") != std::string::npos) ++proj_count;
  }
  REQUIRE(proj_count == 4);  // one per stage

  // Swapping the input order permutes the concatenated projection channels,
  // so the fused map differs in general but the projection outputs swap
  // exactly. Verify at stage level: fuse(a,b) and fuse(b,a) agree after the
  // shared conv when both inputs are identical.
  Rng rng(65);
  Tensor<float> img = rand_image(rng, cfg);
  auto f = net.encode(nullptr, img);
  Tensor<float> s =
      net.fuse_stage(nullptr, 0, f[0], f[0]);  // symmetric input
  Tensor<float> s2 = net.fuse_stage(nullptr, 0, f[0], f[0]);
  REQUIRE(oracle::max_abs_diff(s, s2) == 0.0f);
}

TEST_CASE("standard and lightweight decoders use distinct parameter sets") {
  ModelConfig std_cfg = ModelConfig::reduced();
  ModelConfig lw_cfg = ModelConfig::reduced();
  lw_cfg.decoder = DecoderKind::lw;
  ElgcNet<float> std_net(std_cfg, 8);
  ElgcNet<float> lw_net(lw_cfg, 8);
  auto has = [](const ElgcNet<float>& n, const std::string& name) {
    return const_cast<ElgcNet<float>&>(n).params().find(name) != nullptr;
  };
  REQUIRE(has(std_net, "decoder.up1.w"));
  REQUIRE(!has(std_net, "decoder.dw1.w"));
  REQUIRE(has(lw_net, "decoder.dw1.w"));
  REQUIRE(!has(lw_net, "decoder.up1.w"));
  REQUIRE(has(std_net, "decoder.head.w"));
  REQUIRE(has(lw_net, "decoder.head.w"));
  REQUIRE(lw_net.params().total_scalars() < std_net.params().total_scalars());
}

TEST_CASE("forward validates input shapes") {
  ModelConfig cfg = ModelConfig::reduced();
  ElgcNet<float> net(cfg, 9);
  Rng rng(66);
  Tensor<float> good = rand_image(rng, cfg);
  Tensor<float> wrong_h = rand_uniform<float>(rng, Shape{32, 64, 3});
  Tensor<float> wrong_c = rand_uniform<float>(rng, Shape{64, 64, 1});
  REQUIRE_THROWS_AS(net.forward(nullptr, wrong_h, wrong_h), Error);
  REQUIRE_THROWS_AS(net.forward(nullptr, wrong_c, wrong_c), Error);
  REQUIRE_THROWS_AS(net.forward(nullptr, good, wrong_h), Error);
  REQUIRE_THROWS_AS(net.encode(nullptr, wrong_c), Error);
}

TEST_CASE("config validation rejects malformed settings") {
  ModelConfig cfg = ModelConfig::reduced();
  cfg.stage_channels = {16, 24, 32};  // length mismatch
  REQUIRE_THROWS_AS(cfg.validate(), Error);
  ModelConfig odd = ModelConfig::reduced();
  odd.stage_channels = {16, 24, 32, 66};  // not a multiple of 4
  REQUIRE_THROWS_AS(odd.validate(), Error);
  ModelConfig st = ModelConfig::reduced();
  st.patch_strides = {2, 2, 2, 2};  // first stride must restore 4x
  REQUIRE_THROWS_AS(st.validate(), Error);
  ModelConfig cls = ModelConfig::reduced();
  cls.num_classes = 1;
  REQUIRE_THROWS_AS(cls.validate(), Error);
  ModelConfig ok = ModelConfig::reduced();
  REQUIRE_NOTHROW(ok.validate());
  REQUIRE_NOTHROW(ModelConfig{}.validate());
}

TEST_CASE("default configuration builds the calibrated parameter counts") {
  ModelConfig std_cfg;
  ElgcNet<float> std_net(std_cfg, 0);
  REQUIRE(std_net.params().total_scalars() == 10967522);
  ModelConfig lw_cfg;
  lw_cfg.decoder = DecoderKind::lw;
  ElgcNet<float> lw_net(lw_cfg, 0);
  REQUIRE(lw_net.params().total_scalars() == 7042274);
}
