#pragma once

// Dataset ingestion and synthesis. On-disk layout contract:
//   <root>/<split>/A/<stem>.<ext>      pre-change image
//   <root>/<split>/B/<stem>.<ext>      post-change image
//   <root>/<split>/label/<stem>.<ext>  binary change mask
// with identical stems across the three subdirectories. The synthetic
// generator builds smooth-background pairs where the post image additionally
// contains a few rectangles/ellipses; the mask is the exact shape union.

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "elgcnet/image_io.hpp"
#include "elgcnet/random.hpp"
#include "elgcnet/tensor.hpp"

namespace elgc {

struct ChangeSample {
  Tensor<float> pre;    // [H,W,3] in [0,1]
  Tensor<float> post;   // [H,W,3] in [0,1]
  Tensor<float> label;  // [H,W] in {0,1}
};

struct DatasetIndex {
  std::string root;
  std::string split;
  struct Triple {
    std::string stem;
    std::string pre_path, post_path, label_path;
  };
  std::vector<Triple> triples;

  std::size_t size() const { return triples.size(); }
};

namespace detail {

inline bool supported_image_ext(const std::string& ext) {
  return ext == ".png" || ext == ".ppm" || ext == ".pgm";
}

// stem -> full path for every supported image directly inside `dir`.
inline std::map<std::string, std::string> list_images(
    const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw IngestionError("missing dataset directory: " + dir.string());
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto p = entry.path();
    if (!supported_image_ext(p.extension().string())) continue;
    const std::string stem = p.stem().string();
    if (out.count(stem))
      throw IngestionError("duplicate stem '" + stem + "' in " + dir.string());
    out[stem] = p.string();
  }
  return out;
}

}  // namespace detail

// Builds a deterministic (lexicographically ordered) index and enforces
// strict triple matching.
inline DatasetIndex scan(const std::string& root, const std::string& split) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(root) / split;
  auto a = detail::list_images(base / "A");
  auto b = detail::list_images(base / "B");
  auto lab = detail::list_images(base / "label");

  auto check_subset = [](const std::map<std::string, std::string>& from,
                         const std::map<std::string, std::string>& to,
                         const std::string& from_name,
                         const std::string& to_name) {
    for (const auto& [stem, _] : from)
      if (!to.count(stem))
        throw IngestionError("stem '" + stem + "' present in " + from_name +
                             "/ but missing from " + to_name + "/");
  };
  check_subset(a, b, "A", "B");
  check_subset(a, lab, "A", "label");
  check_subset(b, a, "B", "A");
  check_subset(lab, a, "label", "A");

  DatasetIndex idx;
  idx.root = root;
  idx.split = split;
  for (const auto& [stem, path] : a)  // std::map iterates lexicographically
    idx.triples.push_back({stem, path, b[stem], lab[stem]});
  return idx;
}

namespace detail {

inline Tensor<float> image_to_unit_tensor(const Image8& img) {
  Tensor<float> t(Shape{img.h, img.w, img.c});
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = float(img.pixels[std::size_t(i)]) / 255.0f;
  return t;
}

}  // namespace detail

inline ChangeSample load(const DatasetIndex& idx, std::size_t i) {
  if (i >= idx.triples.size())
    throw UsageError("dataset index out of range: " + std::to_string(i));
  const auto& tr = idx.triples[i];
  const Image8 a = read_image(tr.pre_path, 3);
  const Image8 b = read_image(tr.post_path, 3);
  const Image8 lab = read_image(tr.label_path, 1);
  if (a.h != b.h || a.w != b.w || a.h != lab.h || a.w != lab.w)
    throw IngestionError("size mismatch across triple '" + tr.stem + "': A " +
                         std::to_string(a.h) + "x" + std::to_string(a.w) +
                         ", B " + std::to_string(b.h) + "x" +
                         std::to_string(b.w) + ", label " +
                         std::to_string(lab.h) + "x" + std::to_string(lab.w));
  ChangeSample s;
  s.pre = detail::image_to_unit_tensor(a);
  s.post = detail::image_to_unit_tensor(b);
  s.label = Tensor<float>(Shape{lab.h, lab.w});
  for (std::int64_t k = 0; k < s.label.size(); ++k)
    s.label[k] = lab.pixels[std::size_t(k)] > 127 ? 1.0f : 0.0f;
  return s;
}

namespace detail {

// Smooth field in [lo, hi]: bilinear interpolation of a coarse uniform grid.
inline Tensor<float> smooth_field(Rng& rng, int size, int grid, float lo,
                                  float hi) {
  std::vector<float> coarse(std::size_t(grid) * grid);
  for (auto& v : coarse) v = float(rng.uniform(lo, hi));
  Tensor<float> out(Shape{size, size});
  const double scale = double(grid - 1) / double(size - 1);
  for (int y = 0; y < size; ++y) {
    const double fy = y * scale;
    const int y0 = std::min(grid - 2, int(fy));
    const double wy = fy - y0;
    for (int x = 0; x < size; ++x) {
      const double fx = x * scale;
      const int x0 = std::min(grid - 2, int(fx));
      const double wx = fx - x0;
      const double v00 = coarse[std::size_t(y0) * grid + x0];
      const double v01 = coarse[std::size_t(y0) * grid + x0 + 1];
      const double v10 = coarse[std::size_t(y0 + 1) * grid + x0];
      const double v11 = coarse[std::size_t(y0 + 1) * grid + x0 + 1];
      out.at(y, x) = float((1 - wy) * ((1 - wx) * v00 + wx * v01) +
                           wy * ((1 - wx) * v10 + wx * v11));
    }
  }
  return out;
}

inline float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

}  // namespace detail

// Generates one synthetic pair. The label is exactly the union of the
// inserted shapes; the change-pixel fraction is kept within [0.15, 0.5] by
// rejection, which terminates quickly because shape areas are bounded. The
// lower bound keeps the classes balanced enough that a short training run is
// not dominated by the majority class.
inline ChangeSample synth_one(Rng& rng, int size) {
  require_dims(size >= 16, "synthetic samples need size >= 16");
  for (int attempt = 0; attempt < 100; ++attempt) {
    Tensor<float> field = detail::smooth_field(rng, size, 8, 0.25f, 0.75f);
    ChangeSample s;
    s.pre = Tensor<float>(Shape{size, size, 3});
    s.post = Tensor<float>(Shape{size, size, 3});
    s.label = Tensor<float>(Shape{size, size});

    // Mild per-channel tint so the background is not pure gray.
    float tint[3];
    for (float& t : tint) t = float(rng.uniform(0.9, 1.1));

    // 1-4 shapes, half rectangles, half ellipses, each with its own
    // brightness offset strong enough to be learnable.
    const int n_shapes = rng.uniform_int(2, 4);
    struct ShapeSpec {
      bool ellipse;
      int cy, cx, ry, rx;
      float delta;
    };
    std::vector<ShapeSpec> shapes;
    for (int i = 0; i < n_shapes; ++i) {
      ShapeSpec sp;
      sp.ellipse = rng.coin();
      sp.ry = rng.uniform_int(size / 8, size / 3);
      sp.rx = rng.uniform_int(size / 8, size / 3);
      sp.cy = rng.uniform_int(sp.ry, size - 1 - sp.ry);
      sp.cx = rng.uniform_int(sp.rx, size - 1 - sp.rx);
      sp.delta = float(rng.uniform(0.25, 0.5)) * (rng.coin() ? 1.0f : -1.0f);
      shapes.push_back(sp);
    }

    std::int64_t changed = 0;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        float inside_delta = 0.0f;
        bool inside = false;
        for (const auto& sp : shapes) {
          const double dy = double(y - sp.cy) / sp.ry;
          const double dx = double(x - sp.cx) / sp.rx;
          const bool hit = sp.ellipse ? (dy * dy + dx * dx <= 1.0)
                                      : (std::abs(y - sp.cy) <= sp.ry &&
                                         std::abs(x - sp.cx) <= sp.rx);
          if (hit && !inside) {
            inside = true;
            inside_delta = sp.delta;
          }
        }
        s.label.at(y, x) = inside ? 1.0f : 0.0f;
        changed += inside ? 1 : 0;
        const float base = field.at(y, x);
        for (int c = 0; c < 3; ++c) {
          const float pre_noise = float(rng.normal()) * 0.01f;
          const float post_noise = float(rng.normal()) * 0.01f;
          const float bg = base * tint[c];
          s.pre.at(y, x, c) = detail::clamp01(bg + pre_noise);
          s.post.at(y, x, c) =
              detail::clamp01(bg + (inside ? inside_delta : 0.0f) + post_noise);
        }
      }

    const double frac = double(changed) / double(std::int64_t(size) * size);
    if (frac >= 0.15 && frac <= 0.5) return s;
  }
  throw UsageError("synthetic generator failed to hit the change-fraction "
                   "window after 100 attempts");
}

inline std::vector<ChangeSample> synth(Rng& rng, int n, int size) {
  std::vector<ChangeSample> out;
  out.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i) out.push_back(synth_one(rng, size));
  return out;
}

// Writes samples to disk in the standard layout (PNG), so the CLI's train and
// eval paths can run end to end on generated data.
inline void write_dataset(const std::vector<ChangeSample>& samples,
                          const std::string& root, const std::string& split) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(root) / split;
  fs::create_directories(base / "A");
  fs::create_directories(base / "B");
  fs::create_directories(base / "label");
  char name[32];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "pair_%04zu.png", i);
    write_png((base / "A" / name).string(), tensor_to_image(samples[i].pre));
    write_png((base / "B" / name).string(), tensor_to_image(samples[i].post));
    write_png((base / "label" / name).string(),
              tensor_to_image(samples[i].label));
  }
}

}  // namespace elgc
