// elgcnet command-line tool: analyze | gradcheck | train | eval | infer.
//
// Configuration is a flat JSON record uniting model, training, and run keys;
// a --config file provides values and individual --key flags override them.
// Unknown keys are rejected. The effective config is echoed to
// <out_dir>/config.json before any computation.
//
// Exit codes: 0 ok, 2 usage/config error, 3 ingestion error, 4 numeric
// failure, 5 checkpoint mismatch. Errors print one machine-parsable line:
//   elgcnet: error: <kind>: <message>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "elgcnet/elgcnet.hpp"

namespace fs = std::filesystem;
using namespace elgc;

namespace {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string preset = "default";  // default | reduced (model base)
  std::string data_root;           // empty -> synthetic data
  std::string split = "train";
  std::string out_dir;
  std::string checkpoint;
  std::string pre, post, out;  // infer inputs/output
  int synth_pairs = 8;
  int synth_size = 0;  // 0 -> model input_h
  std::uint64_t data_seed = 4242;
};

json run_level_defaults() {
  json j;
  j["preset"] = "default";
  j["data_root"] = "";
  j["split"] = "train";
  j["out_dir"] = "";
  j["checkpoint"] = "";
  j["pre"] = "";
  j["post"] = "";
  j["out"] = "";
  j["synth_pairs"] = 8;
  j["synth_size"] = 0;
  j["data_seed"] = std::uint64_t(4242);
  return j;
}

json run_config_to_json(const RunConfig& rc) {
  json j = model_config_to_json(rc.model);
  json t = train_config_to_json(rc.train);
  j.update(t);
  j["preset"] = rc.preset;
  j["data_root"] = rc.data_root;
  j["split"] = rc.split;
  j["out_dir"] = rc.out_dir;
  j["checkpoint"] = rc.checkpoint;
  j["pre"] = rc.pre;
  j["post"] = rc.post;
  j["out"] = rc.out;
  j["synth_pairs"] = rc.synth_pairs;
  j["synth_size"] = rc.synth_size;
  j["data_seed"] = rc.data_seed;
  return j;
}

// Converts a raw flag string to a typed JSON value, using the default value
// of the same key as the type reference.
json convert_flag(const std::string& key, const std::string& s,
                  const json& ref) {
  auto bad = [&](const std::string& why) {
    return UsageError("flag --" + key + ": " + why + " ('" + s + "')");
  };
  try {
    if (ref.is_array()) {  // comma-separated integers
      std::vector<int> v;
      std::size_t pos = 0;
      while (pos <= s.size()) {
        std::size_t comma = s.find(',', pos);
        if (comma == std::string::npos) comma = s.size();
        std::size_t used = 0;
        const std::string item = s.substr(pos, comma - pos);
        v.push_back(std::stoi(item, &used));
        if (used != item.size()) throw bad("expected comma-separated ints");
        pos = comma + 1;
      }
      return json(v);
    }
    if (ref.is_boolean()) {
      if (s == "true" || s == "1") return json(true);
      if (s == "false" || s == "0") return json(false);
      throw bad("expected true|false");
    }
    if (ref.is_number_float()) {
      std::size_t used = 0;
      const double d = std::stod(s, &used);
      if (used != s.size()) throw bad("expected a number");
      return json(d);
    }
    if (ref.is_number_unsigned()) {
      std::size_t used = 0;
      const unsigned long long u = std::stoull(s, &used);
      if (used != s.size()) throw bad("expected a non-negative integer");
      return json(std::uint64_t(u));
    }
    if (ref.is_number_integer()) {
      std::size_t used = 0;
      const long long i = std::stoll(s, &used);
      if (used != s.size()) throw bad("expected an integer");
      return json(std::int64_t(i));
    }
    return json(s);
  } catch (const std::invalid_argument&) {
    throw bad("not a number");
  } catch (const std::out_of_range&) {
    throw bad("out of range");
  }
}

// CLI state: one string slot per key; presence tracked by CLI11.
struct FlagSet {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> opts;
  std::string config_path;
};

void register_flags(CLI::App* cmd, FlagSet& fs_) {
  cmd->add_option("--config", fs_.config_path,
                  "JSON config file; flags override its values");
  std::vector<std::string> keys;
  const json mj = model_config_to_json(ModelConfig{});
  const json tj = train_config_to_json(TrainConfig{});
  const json rj = run_level_defaults();
  for (auto& [k, v] : mj.items()) keys.push_back(k);
  for (auto& [k, v] : tj.items()) keys.push_back(k);
  for (auto& [k, v] : rj.items()) keys.push_back(k);
  for (const std::string& k : keys)
    fs_.opts[k] = cmd->add_option("--" + k, fs_.values[k]);
}

RunConfig resolve_config(const FlagSet& fs_) {
  json file_j = json::object();
  if (!fs_.config_path.empty()) {
    std::ifstream is(fs_.config_path);
    if (!is)
      throw UsageError("cannot open config file: " + fs_.config_path);
    try {
      is >> file_j;
    } catch (const json::exception& e) {
      throw UsageError("config file " + fs_.config_path + ": " + e.what());
    }
    if (!file_j.is_object())
      throw UsageError("config file must hold a JSON object");
  }

  auto flag_given = [&](const std::string& k) {
    auto it = fs_.opts.find(k);
    return it != fs_.opts.end() && it->second->count() > 0;
  };

  // The preset decides the model-config base and must be resolved first.
  std::string preset = "default";
  if (file_j.contains("preset")) {
    if (!file_j["preset"].is_string())
      throw UsageError("config: 'preset' must be a string");
    preset = file_j["preset"].get<std::string>();
  }
  if (flag_given("preset")) preset = fs_.values.at("preset");
  if (preset != "default" && preset != "reduced")
    throw UsageError("unknown preset '" + preset +
                     "' (expected default|reduced)");

  RunConfig rc;
  rc.preset = preset;
  const ModelConfig model_base =
      preset == "reduced" ? ModelConfig::reduced() : ModelConfig{};
  const json model_schema = model_config_to_json(model_base);
  const json train_schema = train_config_to_json(TrainConfig{});
  const json run_schema = run_level_defaults();

  // Route file keys, then overlay flag values (flags win).
  json mj = json::object(), tj = json::object(), rj = json::object();
  for (auto& [k, v] : file_j.items()) {
    if (model_schema.contains(k))
      mj[k] = v;
    else if (train_schema.contains(k))
      tj[k] = v;
    else if (run_schema.contains(k))
      rj[k] = v;
    else
      throw UsageError("config: unknown key '" + k + "'");
  }
  for (auto& [k, raw] : fs_.values) {
    if (!flag_given(k)) continue;
    if (model_schema.contains(k))
      mj[k] = convert_flag(k, raw, model_schema[k]);
    else if (train_schema.contains(k))
      tj[k] = convert_flag(k, raw, train_schema[k]);
    else if (run_schema.contains(k))
      rj[k] = convert_flag(k, raw, run_schema[k]);
  }

  rc.model = model_config_from_json(mj, model_base);
  rc.train = train_config_from_json(tj);
  try {
    if (rj.contains("data_root")) rc.data_root = rj["data_root"].get<std::string>();
    if (rj.contains("split")) rc.split = rj["split"].get<std::string>();
    if (rj.contains("out_dir")) rc.out_dir = rj["out_dir"].get<std::string>();
    if (rj.contains("checkpoint")) rc.checkpoint = rj["checkpoint"].get<std::string>();
    if (rj.contains("pre")) rc.pre = rj["pre"].get<std::string>();
    if (rj.contains("post")) rc.post = rj["post"].get<std::string>();
    if (rj.contains("out")) rc.out = rj["out"].get<std::string>();
    if (rj.contains("synth_pairs")) rc.synth_pairs = rj["synth_pairs"].get<int>();
    if (rj.contains("synth_size")) rc.synth_size = rj["synth_size"].get<int>();
    if (rj.contains("data_seed")) rc.data_seed = rj["data_seed"].get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("run config: ") + e.what());
  }
  if (rc.synth_pairs < 1) throw UsageError("synth_pairs must be >= 1");
  return rc;
}

// Echo the effective config before any computation (when an output directory
// is configured).
void echo_config(const RunConfig& rc) {
  if (rc.out_dir.empty()) return;
  fs::create_directories(rc.out_dir);
  const fs::path path = fs::path(rc.out_dir) / "config.json";
  std::ofstream os(path);
  if (!os) throw UsageError("cannot write config echo: " + path.string());
  os << run_config_to_json(rc).dump(2) << '\n';
}

std::vector<ChangeSample> load_dataset(const RunConfig& rc) {
  std::vector<ChangeSample> samples;
  if (!rc.data_root.empty()) {
    DatasetIndex idx = scan(rc.data_root, rc.split);
    if (idx.size() == 0)
      throw IngestionError("split '" + rc.split + "' under " + rc.data_root +
                           " holds no samples");
    for (std::size_t i = 0; i < idx.size(); ++i)
      samples.push_back(load(idx, i));
  } else {
    Rng rng(rc.data_seed);
    const int size = rc.synth_size > 0 ? rc.synth_size : rc.model.input_h;
    samples = synth(rng, rc.synth_pairs, size);
  }
  return samples;
}

int cmd_analyze(const RunConfig& rc) {
  rc.model.validate();
  echo_config(rc);
  const CostReport rep = analyze(rc.model);
  rep.write_table(std::cout);
  const std::int64_t act = estimate_activation_memory(rc.model);
  std::cout << "activation_bytes=" << act << '\n';
  if (!rc.out_dir.empty()) {
    const fs::path path = fs::path(rc.out_dir) / "cost_report.tsv";
    std::ofstream os(path);
    if (!os) throw UsageError("cannot write report: " + path.string());
    rep.write_records(os);
    os << "ACTIVATION_BYTES\t" << act << '\n';
  }
  return 0;
}

int cmd_gradcheck(const RunConfig& rc) {
  echo_config(rc);
  const std::vector<GradCheckEntry> entries =
      run_gradcheck_suite(rc.train.seed);
  bool all_pass = true;
  for (const GradCheckEntry& e : entries) {
    std::printf("%-24s rel_err=%.3e tol=%.0e %s\n", e.name.c_str(), e.rel_err,
                e.tolerance, e.pass() ? "PASS" : "FAIL");
    all_pass = all_pass && e.pass();
  }
  std::printf("gradcheck %s (%zu checks)\n", all_pass ? "PASS" : "FAIL",
              entries.size());
  return all_pass ? 0 : 4;
}

int cmd_train(const RunConfig& rc) {
  if (rc.out_dir.empty()) throw UsageError("train requires --out_dir");
  rc.model.validate();
  rc.train.validate();
  echo_config(rc);
  const std::vector<ChangeSample> data = load_dataset(rc);
  ElgcNet<float> net(rc.model, rc.train.seed);
  const fs::path log_path = fs::path(rc.out_dir) / "train_log.txt";
  std::ofstream log_file(log_path);
  if (!log_file) throw UsageError("cannot write log: " + log_path.string());
  const std::string ckpt_path =
      (fs::path(rc.out_dir) / "model.ckpt").string();
  train_loop(net, rc.train, data, {&std::cout, &log_file}, ckpt_path);
  std::cout << "checkpoint=" << ckpt_path << '\n';
  return 0;
}

int cmd_eval(const RunConfig& rc) {
  if (rc.checkpoint.empty()) throw UsageError("eval requires --checkpoint");
  echo_config(rc);
  const Checkpoint ck = load_checkpoint(rc.checkpoint);
  ElgcNet<float> net(ck.config, 0);
  apply_checkpoint(ck, net.params());
  RunConfig sized = rc;
  sized.model = ck.config;
  const std::vector<ChangeSample> data = load_dataset(sized);
  ConfusionCounts counts;
  for (const ChangeSample& s : data) {
    const Tensor<float> logits = net.forward(nullptr, s.pre, s.post);
    counts += accumulate(argmax_map(logits), s.label);
  }
  char line[128];
  std::snprintf(line, sizeof(line), "iou=%.6f f1=%.6f oa=%.6f", iou(counts),
                f1(counts), oa(counts));
  std::cout << line << '\n';
  if (!rc.out_dir.empty()) {
    const fs::path path = fs::path(rc.out_dir) / "metrics.txt";
    std::ofstream os(path);
    if (!os) throw UsageError("cannot write metrics: " + path.string());
    os << line << '\n';
  }
  return 0;
}

int cmd_infer(const RunConfig& rc) {
  if (rc.checkpoint.empty()) throw UsageError("infer requires --checkpoint");
  if (rc.pre.empty() || rc.post.empty() || rc.out.empty())
    throw UsageError("infer requires --pre, --post, and --out");
  echo_config(rc);
  const Checkpoint ck = load_checkpoint(rc.checkpoint);
  ElgcNet<float> net(ck.config, 0);
  apply_checkpoint(ck, net.params());
  const Image8 ia = read_image(rc.pre, 3);
  const Image8 ib = read_image(rc.post, 3);
  if (ia.h != ib.h || ia.w != ib.w)
    throw IngestionError("pre/post image sizes differ");
  if (ia.h != ck.config.input_h || ia.w != ck.config.input_w)
    throw IngestionError(
        "image size " + std::to_string(ia.h) + "x" + std::to_string(ia.w) +
        " does not match model input " + std::to_string(ck.config.input_h) +
        "x" + std::to_string(ck.config.input_w));
  const Tensor<float> pre = elgc::detail::image_to_unit_tensor(ia);
  const Tensor<float> post = elgc::detail::image_to_unit_tensor(ib);
  const Tensor<float> mask = argmax_map(net.forward(nullptr, pre, post));
  Image8 out;
  out.h = int(mask.dim(0));
  out.w = int(mask.dim(1));
  out.c = 1;
  out.pixels.resize(std::size_t(out.h * out.w));
  for (std::int64_t i = 0; i < mask.size(); ++i)
    out.pixels[std::size_t(i)] = mask[i] > 0.5f ? 255 : 0;
  write_image(rc.out, out);
  std::cout << "wrote " << rc.out << '\n';
  return 0;
}

std::string error_kind(ErrorCode c) {
  switch (c) {
    case ErrorCode::usage: return "usage";
    case ErrorCode::dimension: return "dimension";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::ingestion: return "ingestion";
    case ErrorCode::checkpoint: return "checkpoint";
  }
  return "usage";
}

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::usage: return 2;
    case ErrorCode::dimension: return 2;
    case ErrorCode::numeric: return 4;
    case ErrorCode::ingestion: return 3;
    case ErrorCode::checkpoint: return 5;
  }
  return 2;
}

int fail(const std::string& kind, std::string msg, int code) {
  for (char& ch : msg)
    if (ch == '\n' || ch == '\r') ch = ' ';
  std::cerr << "elgcnet: error: " << kind << ": " << msg << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"elgcnet: change-detection model tool"};
  app.require_subcommand(1);

  struct Cmd {
    CLI::App* sub;
    FlagSet flags;
    int (*run)(const RunConfig&);
  };
  std::vector<Cmd> cmds;
  cmds.reserve(5);  // CLI11 keeps references into each FlagSet; no reallocation
  auto add = [&](const char* name, const char* desc,
                 int (*run)(const RunConfig&)) {
    cmds.push_back(Cmd{app.add_subcommand(name, desc), FlagSet{}, run});
    register_flags(cmds.back().sub, cmds.back().flags);
  };
  add("analyze", "print the per-layer parameter/MAC/FLOP report", cmd_analyze);
  add("gradcheck", "run the finite-difference gradient suite", cmd_gradcheck);
  add("train", "train a model and write checkpoint + logs", cmd_train);
  add("eval", "evaluate a checkpoint on a dataset", cmd_eval);
  add("infer", "run one image pair through a checkpoint", cmd_infer);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    for (Cmd& c : cmds)
      if (c.sub->parsed()) return c.run(resolve_config(c.flags));
    return fail("usage", "no subcommand given", 2);
  } catch (const Error& e) {
    return fail(error_kind(e.code()), e.what(), exit_code(e.code()));
  } catch (const std::exception& e) {
    return fail("usage", e.what(), 2);
  }
}
