#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"

using namespace elgc;
namespace fs = std::filesystem;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path(name) { fs::remove(path); }
  ~TempFile() { fs::remove(path); }
};

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os.write(bytes.data(), std::streamsize(bytes.size()));
}

}  // namespace

TEST_CASE("save -> load -> apply reproduces the model bit-exactly") {
  ModelConfig cfg = ModelConfig::reduced();
  ElgcNet<float> net(cfg, 13);
  TempFile f("ckpt_roundtrip.bin");
  save_checkpoint(f.path, cfg, net.params());

  const Checkpoint ck = load_checkpoint(f.path);
  REQUIRE(ck.config == cfg);
  REQUIRE(ck.tensors.size() == net.params().items().size());

  ElgcNet<float> other(ck.config, 999);  // different random init
  apply_checkpoint(ck, other.params());
  const auto& pa = net.params().items();
  const auto& pb = other.params().items();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].first == pb[i].first);
    REQUIRE(oracle::max_abs_diff(pa[i].second, pb[i].second) == 0.0f);
  }

  // Forward passes agree bit for bit.
  Rng rng(131);
  Tensor<float> pre = rand_uniform<float>(rng, Shape{64, 64, 3});
  Tensor<float> post = rand_uniform<float>(rng, Shape{64, 64, 3});
  Tensor<float> ya = net.forward(nullptr, pre, post);
  Tensor<float> yb = other.forward(nullptr, pre, post);
  REQUIRE(oracle::max_abs_diff(ya, yb) == 0.0f);
}

TEST_CASE("every corrupted byte region is detected") {
  ModelConfig cfg = ModelConfig::reduced();
  ElgcNet<float> net(cfg, 14);
  TempFile f("ckpt_corrupt.bin");
  save_checkpoint(f.path, cfg, net.params());
  const std::string good = slurp(f.path);

  // Flip one byte in several file regions: magic, config, tensor data, crc.
  const std::size_t probes[] = {0, 9, 40, good.size() / 2, good.size() - 1};
  for (std::size_t pos : probes) {
    std::string bad = good;
    bad[pos] = char(bad[pos] ^ 0x5a);
    spit(f.path, bad);
    CAPTURE(pos);
    REQUIRE_THROWS_AS(load_checkpoint(f.path), CheckpointError);
  }

  // Truncations at every structural boundary kind.
  for (std::size_t keep : {std::size_t(0), std::size_t(4), std::size_t(20),
                           good.size() / 3, good.size() - 1}) {
    spit(f.path, good.substr(0, keep));
    CAPTURE(keep);
    REQUIRE_THROWS_AS(load_checkpoint(f.path), CheckpointError);
  }

  // Trailing garbage is rejected even though the prefix is intact.
  spit(f.path, good + "x");
  REQUIRE_THROWS_AS(load_checkpoint(f.path), CheckpointError);

  spit(f.path, good);
  REQUIRE_NOTHROW(load_checkpoint(f.path));
}

TEST_CASE("missing files and foreign content are rejected") {
  REQUIRE_THROWS_AS(load_checkpoint("definitely_absent.bin"), CheckpointError);
  TempFile f("ckpt_foreign.bin");
  spit(f.path, "PNG\x89 this is not a checkpoint at all, but long enough");
  REQUIRE_THROWS_AS(load_checkpoint(f.path), CheckpointError);
}

TEST_CASE("apply rejects config, count, order, and shape mismatches") {
  ModelConfig cfg = ModelConfig::reduced();
  ElgcNet<float> net(cfg, 15);
  TempFile f("ckpt_apply.bin");
  save_checkpoint(f.path, cfg, net.params());
  Checkpoint ck = load_checkpoint(f.path);

  // Different architecture: parameter count differs.
  ModelConfig lw = ModelConfig::reduced();
  lw.decoder = DecoderKind::lw;
  ElgcNet<float> lw_net(lw, 15);
  REQUIRE_THROWS_AS(apply_checkpoint(ck, lw_net.params()), CheckpointError);

  // Same count, renamed tensor.
  Checkpoint renamed = ck;
  renamed.tensors[0].name += "_x";
  ElgcNet<float> target(cfg, 16);
  REQUIRE_THROWS_AS(apply_checkpoint(renamed, target.params()),
                    CheckpointError);

  // Same names, wrong shape.
  Checkpoint reshaped = ck;
  std::swap(reshaped.tensors[0].shape[0], reshaped.tensors[0].shape[3]);
  REQUIRE_THROWS_AS(apply_checkpoint(reshaped, target.params()),
                    CheckpointError);

  REQUIRE_NOTHROW(apply_checkpoint(ck, target.params()));
}

TEST_CASE("config json: unknown keys, wrong types, round-trip") {
  const json good = model_config_to_json(ModelConfig::reduced());
  REQUIRE_NOTHROW(model_config_from_json(good));

  json unknown = good;
  unknown["no_such_knob"] = 3;
  REQUIRE_THROWS_AS(model_config_from_json(unknown), UsageError);

  json bad_type = good;
  bad_type["decoder"] = 12;
  REQUIRE_THROWS_AS(model_config_from_json(bad_type), UsageError);

  json bad_value = good;
  bad_value["pooling"] = "avg_q_min_k";
  REQUIRE_THROWS_AS(model_config_from_json(bad_value), UsageError);

  // Partial JSON overlays a base config instead of resetting it.
  json partial;
  partial["decoder"] = "lw";
  ModelConfig base = ModelConfig::reduced();
  const ModelConfig merged = model_config_from_json(partial, base);
  REQUIRE(merged.decoder == DecoderKind::lw);
  REQUIRE(merged.stage_channels == base.stage_channels);
}

TEST_CASE("double-precision models save at 32-bit precision") {
  ModelConfig cfg = ModelConfig::reduced();
  ElgcNet<double> net(cfg, 17);
  TempFile f("ckpt_double.bin");
  save_checkpoint(f.path, cfg, net.params());
  const Checkpoint ck = load_checkpoint(f.path);
  const auto& items = net.params().items();
  for (std::size_t i = 0; i < items.size(); ++i)
    for (std::int64_t k = 0; k < items[i].second.size(); ++k)
      REQUIRE(ck.tensors[i].values[std::size_t(k)] ==
              float(items[i].second[k]));
}
