// Contract tests for the command-line tool. They shell out to the real
// binary (path in $ELGCNET_CLI) and check exit codes, output artifacts, and
// the error-line format.
#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"

using namespace elgc;
namespace fs = std::filesystem;

namespace {

std::string cli_path() {
  const char* p = std::getenv("ELGCNET_CLI");
  REQUIRE(p != nullptr);
  REQUIRE(fs::exists(p));
  return p;
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
}

struct RunResult {
  int code = -1;
  std::string out, err;
};

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  const std::string so = "cli_out_" + std::to_string(counter) + ".txt";
  const std::string se = "cli_err_" + std::to_string(counter) + ".txt";
  ++counter;
  const std::string cmd = cli_path() + " " + args + " >" + so + " 2>" + se;
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(so);
  r.err = slurp(se);
  fs::remove(so);
  fs::remove(se);
  return r;
}

// Parses "TOTAL <params> <macs> <flops>" from the analyze table.
bool parse_total(const std::string& text, long long& params, long long& macs,
                 long long& flops) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string head;
    ls >> head;
    if (head == "TOTAL") return bool(ls >> params >> macs >> flops);
  }
  return false;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("cli_test_tmp") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  REQUIRE(run_cli("").code == 2);
  REQUIRE(run_cli("frobnicate").code == 2);
  REQUIRE(run_cli("analyze --no_such_flag 1").code == 2);
  const RunResult bad_val = run_cli("train --epochs banana");
  REQUIRE(bad_val.code == 2);
  REQUIRE(bad_val.err.find("elgcnet: error: usage:") != std::string::npos);
  REQUIRE(run_cli("--help").code == 0);
}

TEST_CASE("analyze prints the calibrated totals") {
  const RunResult def = run_cli("analyze");
  REQUIRE(def.code == 0);
  long long p = 0, m = 0, f = 0;
  REQUIRE(parse_total(def.out, p, m, f));
  REQUIRE(p == 10967522);
  REQUIRE(m == 65985528448);
  REQUIRE(f == 2 * m);
  REQUIRE(def.out.find("activation_bytes=100663296") != std::string::npos);

  const RunResult lw = run_cli("analyze --decoder lw");
  REQUIRE(lw.code == 0);
  REQUIRE(parse_total(lw.out, p, m, f));
  REQUIRE(p == 7042274);
  REQUIRE(m == 11297047168);
  REQUIRE(lw.out.find("activation_bytes=67108864") != std::string::npos);

  const RunResult red = run_cli("analyze --preset reduced");
  REQUIRE(red.code == 0);
  REQUIRE(parse_total(red.out, p, m, f));
  REQUIRE(p == 129010);
}

TEST_CASE("analyze writes records and the config echo") {
  TempDir tmp("analyze");
  const RunResult r =
      run_cli("analyze --preset reduced --out_dir " + tmp.str());
  REQUIRE(r.code == 0);

  const std::string tsv = slurp(tmp.path / "cost_report.tsv");
  REQUIRE(tsv.find("TOTAL\t129010\t") != std::string::npos);
  REQUIRE(tsv.find("ACTIVATION_BYTES\t") != std::string::npos);

  const json echo = json::parse(slurp(tmp.path / "config.json"));
  REQUIRE(echo.at("preset") == "reduced");
  REQUIRE(echo.at("decoder") == "standard");
  REQUIRE(echo.at("stage_channels") == std::vector<int>{16, 24, 32, 64});
  // The echo is itself a valid flat config: model keys reload cleanly.
  json model_part;
  const json schema = model_config_to_json(ModelConfig{});
  for (auto& [k, v] : echo.items())
    if (schema.contains(k)) model_part[k] = v;
  const ModelConfig back = model_config_from_json(model_part);
  REQUIRE(count_params(back) == 129010);
}

TEST_CASE("invalid model geometry is a dimension error (exit 2)") {
  const RunResult r = run_cli("analyze --input_h 100");
  REQUIRE(r.code == 2);
  REQUIRE(r.err.find("elgcnet: error: dimension:") != std::string::npos);
}

TEST_CASE("flags override config-file values") {
  TempDir tmp("override");
  const fs::path cfg = tmp.path / "cfg.json";
  {
    std::ofstream os(cfg);
    os << R"({"preset": "reduced", "epochs": 5, "synth_pairs": 2})";
  }
  const RunResult r = run_cli("analyze --config " + cfg.string() +
                              " --out_dir " + tmp.str());
  REQUIRE(r.code == 0);
  json echo = json::parse(slurp(tmp.path / "config.json"));
  REQUIRE(echo.at("epochs") == 5);

  const RunResult r2 = run_cli("analyze --config " + cfg.string() +
                               " --epochs 1 --out_dir " + tmp.str());
  REQUIRE(r2.code == 0);
  echo = json::parse(slurp(tmp.path / "config.json"));
  REQUIRE(echo.at("epochs") == 1);

  const fs::path bad = tmp.path / "bad.json";
  {
    std::ofstream os(bad);
    os << R"({"volume": 11})";
  }
  REQUIRE(run_cli("analyze --config " + bad.string()).code == 2);
}

TEST_CASE("train -> eval -> infer round trip on synthetic data") {
  TempDir tmp("pipeline");
  const std::string train_dir = (tmp.path / "run1").string();
  const std::string args =
      "train --preset reduced --epochs 2 --batch_size 2 --synth_pairs 2 ";
  const RunResult tr = run_cli(args + "--out_dir " + train_dir);
  REQUIRE(tr.code == 0);
  REQUIRE(tr.out.find("epoch=0 ") != std::string::npos);
  REQUIRE(tr.out.find("epoch=1 ") != std::string::npos);
  REQUIRE(tr.out.find("checkpoint=") != std::string::npos);
  const fs::path ckpt = fs::path(train_dir) / "model.ckpt";
  REQUIRE(fs::exists(ckpt));
  const std::string log = slurp(fs::path(train_dir) / "train_log.txt");
  REQUIRE(log.find("epoch=0 ") != std::string::npos);
  REQUIRE(log.find("iou=") != std::string::npos);

  // Training is reproducible: a second identical run writes the same bytes.
  const std::string train_dir2 = (tmp.path / "run2").string();
  REQUIRE(run_cli(args + "--out_dir " + train_dir2).code == 0);
  REQUIRE(slurp(ckpt) == slurp(fs::path(train_dir2) / "model.ckpt"));

  // Eval on a fresh synthetic split.
  const RunResult ev = run_cli("eval --checkpoint " + ckpt.string() +
                               " --synth_pairs 2 --data_seed 99 --out_dir " +
                               (tmp.path / "eval").string());
  REQUIRE(ev.code == 0);
  REQUIRE(ev.out.find("iou=") != std::string::npos);
  const std::string metrics = slurp(tmp.path / "eval" / "metrics.txt");
  REQUIRE(metrics.find("f1=") != std::string::npos);

  // Infer on one written pair.
  Rng rng(301);
  auto pair = synth(rng, 1, 64);
  const std::string pre_p = (tmp.path / "pre.png").string();
  const std::string post_p = (tmp.path / "post.png").string();
  const std::string mask_p = (tmp.path / "mask.png").string();
  write_image(pre_p, tensor_to_image(pair[0].pre));
  write_image(post_p, tensor_to_image(pair[0].post));
  const RunResult inf =
      run_cli("infer --checkpoint " + ckpt.string() + " --pre " + pre_p +
              " --post " + post_p + " --out " + mask_p);
  REQUIRE(inf.code == 0);
  REQUIRE(fs::exists(mask_p));
  const Image8 mask = read_image(mask_p, 1);
  REQUIRE(mask.h == 64);
  REQUIRE(mask.w == 64);
  for (std::uint8_t px : mask.pixels) REQUIRE((px == 0 || px == 255));

  // Wrong image size for the model is an ingestion error (exit 3).
  Rng rng2(302);
  auto small = synth(rng2, 1, 32);
  const std::string small_p = (tmp.path / "small.png").string();
  write_image(small_p, tensor_to_image(small[0].pre));
  const RunResult bad =
      run_cli("infer --checkpoint " + ckpt.string() + " --pre " + small_p +
              " --post " + small_p + " --out " + mask_p);
  REQUIRE(bad.code == 3);
  REQUIRE(bad.err.find("elgcnet: error: ingestion:") != std::string::npos);
}

TEST_CASE("missing and corrupt checkpoints exit with code 5") {
  TempDir tmp("ckpt");
  const RunResult absent =
      run_cli("eval --checkpoint " + (tmp.path / "none.ckpt").string());
  REQUIRE(absent.code == 5);
  REQUIRE(absent.err.find("elgcnet: error: checkpoint:") != std::string::npos);

  const fs::path junk = tmp.path / "junk.ckpt";
  {
    std::ofstream os(junk, std::ios::binary);
    os << "not a checkpoint, definitely long enough to pass the size gate";
  }
  REQUIRE(run_cli("eval --checkpoint " + junk.string()).code == 5);
}

TEST_CASE("missing dataset directory exits with code 3") {
  const RunResult r = run_cli(
      "train --preset reduced --epochs 1 --data_root no_such_dataset_root "
      "--out_dir cli_test_tmp/missing_root");
  REQUIRE(r.code == 3);
  REQUIRE(r.err.find("elgcnet: error: ingestion:") != std::string::npos);
  fs::remove_all("cli_test_tmp/missing_root");
}

TEST_CASE("train on a written dataset directory") {
  TempDir tmp("disk_data");
  Rng rng(303);
  write_dataset(synth(rng, 2, 64), tmp.str(), "train");
  const RunResult r = run_cli(
      "train --preset reduced --epochs 1 --batch_size 2 --data_root " +
      tmp.str() + " --out_dir " + (tmp.path / "run").string());
  REQUIRE(r.code == 0);
  REQUIRE(fs::exists(tmp.path / "run" / "model.ckpt"));
}
