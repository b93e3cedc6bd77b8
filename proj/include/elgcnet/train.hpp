#pragma once

// Training machinery: the three losses (cross-entropy, focal, soft-mIoU) built
// from differentiable primitives, AdamW with decoupled weight decay and a
// linear-to-zero learning-rate schedule, geometric augmentation, and the
// deterministic training loop.

#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "elgcnet/checkpoint.hpp"
#include "elgcnet/data.hpp"
#include "elgcnet/metrics.hpp"
#include "elgcnet/network.hpp"

namespace elgc {

enum class LossKind { ce, focal, miou };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::ce: return "ce";
    case LossKind::focal: return "focal";
    case LossKind::miou: return "miou";
  }
  throw UsageError("unknown loss kind value");
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "ce") return LossKind::ce;
  if (s == "focal") return LossKind::focal;
  if (s == "miou") return LossKind::miou;
  throw UsageError("unknown loss '" + s + "' (expected ce|focal|miou)");
}

struct TrainConfig {
  double lr = 3.1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 200;
  int batch_size = 8;
  LossKind loss = LossKind::ce;
  double focal_gamma = 2.0;
  std::uint64_t seed = 0;
  bool augment_hflip = false;
  bool augment_vflip = false;
  bool augment_scale_crop = false;

  void validate() const {
    if (!(lr > 0)) throw UsageError("lr must be positive");
    if (epochs < 1) throw UsageError("epochs must be >= 1");
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (focal_gamma < 0) throw UsageError("focal_gamma must be >= 0");
  }
};

inline json train_config_to_json(const TrainConfig& c) {
  json j;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["loss"] = to_string(c.loss);
  j["focal_gamma"] = c.focal_gamma;
  j["seed"] = c.seed;
  j["augment_hflip"] = c.augment_hflip;
  j["augment_vflip"] = c.augment_vflip;
  j["augment_scale_crop"] = c.augment_scale_crop;
  return j;
}

inline TrainConfig train_config_from_json(const json& j,
                                          TrainConfig base = TrainConfig{}) {
  require_known_keys(j,
                     {"lr", "weight_decay", "beta1", "beta2", "adam_eps",
                      "epochs", "batch_size", "loss", "focal_gamma", "seed",
                      "augment_hflip", "augment_vflip", "augment_scale_crop"},
                     "train config");
  try {
    if (j.contains("lr")) base.lr = j["lr"].get<double>();
    if (j.contains("weight_decay"))
      base.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("beta1")) base.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) base.beta2 = j["beta2"].get<double>();
    if (j.contains("adam_eps")) base.adam_eps = j["adam_eps"].get<double>();
    if (j.contains("epochs")) base.epochs = j["epochs"].get<int>();
    if (j.contains("batch_size"))
      base.batch_size = j["batch_size"].get<int>();
    if (j.contains("loss"))
      base.loss = parse_loss_kind(j["loss"].get<std::string>());
    if (j.contains("focal_gamma"))
      base.focal_gamma = j["focal_gamma"].get<double>();
    if (j.contains("seed")) base.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("augment_hflip"))
      base.augment_hflip = j["augment_hflip"].get<bool>();
    if (j.contains("augment_vflip"))
      base.augment_vflip = j["augment_vflip"].get<bool>();
    if (j.contains("augment_scale_crop"))
      base.augment_scale_crop = j["augment_scale_crop"].get<bool>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("train config: ") + e.what());
  }
  return base;
}

// lr at epoch e of E: lr * (1 - e/E); exactly linear, reaching lr/E last.
inline double scheduled_lr(double lr0, int epoch, int epochs) {
  return lr0 * (1.0 - double(epoch) / double(epochs));
}

inline constexpr double kLogEps = 1e-7;

namespace detail {

// Per-pixel probability of the true class: p1 where y==1, p0 where y==0.
// labels is a constant {0,1} mask of shape [H,W].
template <class T>
Tensor<T> true_class_prob(Graph<T>* g, const Tensor<T>& logits,
                          const Tensor<T>& labels) {
  require_dims(logits.rank() == 3 && logits.dim(2) == 2,
               "loss expects [H,W,2] logits");
  require_dims(labels.rank() == 2 && labels.dim(0) == logits.dim(0) &&
                   labels.dim(1) == logits.dim(1),
               "loss labels must be [H,W] matching the logits");
  const Shape hw{logits.dim(0), logits.dim(1)};
  Tensor<T> p = softmax(g, logits, 2);
  auto parts = split(g, p, 2, 2);
  Tensor<T> p0 = parts[0].reshaped(hw);
  Tensor<T> p1 = parts[1].reshaped(hw);
  Tensor<T> y = labels;
  Tensor<T> not_y(hw);
  for (std::int64_t i = 0; i < not_y.size(); ++i) not_y[i] = T(1) - labels[i];
  return add(g, mul(g, p1, y), mul(g, p0, not_y));
}

}  // namespace detail

// Mean negative log-likelihood through a 2-channel softmax.
template <class T>
Tensor<T> cross_entropy(Graph<T>* g, const Tensor<T>& logits,
                        const Tensor<T>& labels) {
  Tensor<T> pt = detail::true_class_prob(g, logits, labels);
  Tensor<T> lg = log(g, clamp(g, pt, T(kLogEps), T(1)));
  return mul_scalar(g, mean_all(g, lg), T(-1));
}

// Mean of -(1-p_t)^gamma * log(p_t); gamma = 0 reduces exactly to
// cross-entropy.
template <class T>
Tensor<T> focal_loss(Graph<T>* g, const Tensor<T>& logits,
                     const Tensor<T>& labels, T gamma = T(2)) {
  Tensor<T> pt = detail::true_class_prob(g, logits, labels);
  Tensor<T> weight =
      pow_scalar(g, sub(g, Tensor<T>::ones(pt.shape()), pt), gamma);
  Tensor<T> lg = log(g, clamp(g, pt, T(kLogEps), T(1)));
  return mul_scalar(g, mean_all(g, mul(g, weight, lg)), T(-1));
}

// 1 - (sum p1*y + eps) / (sum p1 + sum y - sum p1*y + eps), eps = 1.
template <class T>
Tensor<T> miou_loss(Graph<T>* g, const Tensor<T>& logits,
                    const Tensor<T>& labels) {
  require_dims(logits.rank() == 3 && logits.dim(2) == 2,
               "loss expects [H,W,2] logits");
  const Shape hw{logits.dim(0), logits.dim(1)};
  Tensor<T> p = softmax(g, logits, 2);
  Tensor<T> p1 = split(g, p, 2, 2)[1].reshaped(hw);
  Tensor<T> inter = sum_all(g, mul(g, p1, labels));
  Tensor<T> uni =
      sub(g, add(g, sum_all(g, p1), sum_all(g, labels)), inter);
  Tensor<T> frac = div(g, add_scalar(g, inter, T(1)), add_scalar(g, uni, T(1)));
  return add_scalar(g, mul_scalar(g, frac, T(-1)), T(1));
}

template <class T>
Tensor<T> compute_loss(Graph<T>* g, LossKind kind, const Tensor<T>& logits,
                       const Tensor<T>& labels, T focal_gamma = T(2)) {
  switch (kind) {
    case LossKind::ce: return cross_entropy(g, logits, labels);
    case LossKind::focal: return focal_loss(g, logits, labels, focal_gamma);
    case LossKind::miou: return miou_loss(g, logits, labels);
  }
  throw UsageError("unknown loss kind value");
}

// AdamW with decoupled weight decay. Moments are kept in double to make the
// update identical across runs regardless of accumulation order subtleties.
template <class T>
class AdamW {
 public:
  AdamW(ParamRegistry<T>& reg, const TrainConfig& tc)
      : reg_(&reg),
        beta1_(tc.beta1),
        beta2_(tc.beta2),
        eps_(tc.adam_eps),
        wd_(tc.weight_decay) {
    for (const auto& [name, t] : reg.items()) {
      m_.emplace_back(std::size_t(t.size()), 0.0);
      v_.emplace_back(std::size_t(t.size()), 0.0);
    }
  }

  std::int64_t steps_taken() const { return t_; }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    auto& items = reg_->items();
    for (std::size_t i = 0; i < items.size(); ++i) {
      Tensor<T>& p = items[i].second;
      if (!p.has_grad()) continue;
      const std::vector<T>& grad = p.grad();
      for (std::int64_t j = 0; j < p.size(); ++j) {
        const double gj = double(grad[std::size_t(j)]);
        double& mj = m_[i][std::size_t(j)];
        double& vj = v_[i][std::size_t(j)];
        mj = beta1_ * mj + (1.0 - beta1_) * gj;
        vj = beta2_ * vj + (1.0 - beta2_) * gj * gj;
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        double pj = double(p[j]);
        pj -= lr * wd_ * pj;  // decoupled decay, not routed through moments
        pj -= lr * mhat / (std::sqrt(vhat) + eps_);
        p[j] = T(pj);
      }
    }
  }

 private:
  ParamRegistry<T>* reg_;
  double beta1_, beta2_, eps_, wd_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Augmentation: one geometric transform applied identically to pre, post, and
// label. Images are resampled bilinearly, labels with nearest neighbor so
// they stay binary.

struct AugmentOps {
  bool hflip = false;
  bool vflip = false;
  bool crop = false;
  int y0 = 0, x0 = 0, ch = 0, cw = 0;  // crop window, resized back to full
};

inline AugmentOps draw_augment_ops(Rng& rng, const TrainConfig& tc, int h,
                                   int w) {
  AugmentOps ops;
  if (tc.augment_hflip) ops.hflip = rng.coin();
  if (tc.augment_vflip) ops.vflip = rng.coin();
  if (tc.augment_scale_crop && rng.coin()) {
    const double scale = rng.uniform(0.7, 1.0);
    ops.ch = std::max(8, int(h * scale));
    ops.cw = std::max(8, int(w * scale));
    ops.y0 = rng.uniform_int(0, h - ops.ch);
    ops.x0 = rng.uniform_int(0, w - ops.cw);
    ops.crop = ops.ch < h || ops.cw < w;
  }
  return ops;
}

namespace detail {

template <class T>
Tensor<T> flip_tensor(const Tensor<T>& t, bool hflip, bool vflip) {
  if (!hflip && !vflip) return t;
  Tensor<T> out(t.shape());
  const int h = t.dim(0), w = t.dim(1);
  const int c = t.rank() == 3 ? t.dim(2) : 1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sy = vflip ? h - 1 - y : y;
      const int sx = hflip ? w - 1 - x : x;
      for (int k = 0; k < c; ++k)
        out.data()[(std::int64_t(y) * w + x) * c + k] =
            t.data()[(std::int64_t(sy) * w + sx) * c + k];
    }
  return out;
}

template <class T>
Tensor<T> crop_tensor(const Tensor<T>& t, int y0, int x0, int ch, int cw) {
  const int c = t.rank() == 3 ? t.dim(2) : 1;
  Tensor<T> out(t.rank() == 3 ? Shape{ch, cw, c} : Shape{ch, cw});
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x)
      for (int k = 0; k < c; ++k)
        out.data()[(std::int64_t(y) * cw + x) * c + k] =
            t.data()[(std::int64_t(y + y0) * t.dim(1) + (x + x0)) * c + k];
  return out;
}

template <class T>
Tensor<T> nearest_resize2d(const Tensor<T>& t, int oh, int ow) {
  Tensor<T> out(Shape{oh, ow});
  const int h = t.dim(0), w = t.dim(1);
  for (int y = 0; y < oh; ++y) {
    int sy = int((double(y) + 0.5) * h / oh);
    sy = std::min(h - 1, sy);
    for (int x = 0; x < ow; ++x) {
      int sx = int((double(x) + 0.5) * w / ow);
      sx = std::min(w - 1, sx);
      out.at(y, x) = t.at(sy, sx);
    }
  }
  return out;
}

}  // namespace detail

inline ChangeSample apply_augment(const ChangeSample& s, const AugmentOps& ops) {
  ChangeSample out = s;
  const int h = s.pre.dim(0), w = s.pre.dim(1);
  if (ops.crop) {
    Tensor<float> pre_c = detail::crop_tensor(s.pre, ops.y0, ops.x0, ops.ch, ops.cw);
    Tensor<float> post_c =
        detail::crop_tensor(s.post, ops.y0, ops.x0, ops.ch, ops.cw);
    Tensor<float> lab_c =
        detail::crop_tensor(s.label, ops.y0, ops.x0, ops.ch, ops.cw);
    out.pre = bilinear_upsample<float>(nullptr, pre_c, h, w);
    out.post = bilinear_upsample<float>(nullptr, post_c, h, w);
    out.label = detail::nearest_resize2d(lab_c, h, w);
  }
  out.pre = detail::flip_tensor(out.pre, ops.hflip, ops.vflip);
  out.post = detail::flip_tensor(out.post, ops.hflip, ops.vflip);
  out.label = detail::flip_tensor(out.label, ops.hflip, ops.vflip);
  return out;
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> cast_tensor(const Tensor<float>& src) {
  Tensor<T> out(src.shape());
  for (std::int64_t i = 0; i < src.size(); ++i) out[i] = T(src[i]);
  return out;
}

struct EpochLog {
  int epoch = 0;
  double lr = 0, loss = 0, iou = 0, f1 = 0, oa = 0;
};

inline std::string format_epoch_log(const EpochLog& e) {
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "epoch=%d lr=%.8g loss=%.6f iou=%.4f f1=%.4f oa=%.4f", e.epoch,
                e.lr, e.loss, e.iou, e.f1, e.oa);
  return buf;
}

struct TrainResult {
  std::vector<EpochLog> log;
};

// Deterministic training loop: seeded shuffling and augmentation, one AdamW
// step per batch, one log record per epoch. A non-finite loss aborts after a
// diagnostic re-run that names the first layer producing a non-finite value.
template <class T>
TrainResult train_loop(ElgcNet<T>& net, const TrainConfig& tc,
                       const std::vector<ChangeSample>& data,
                       const std::vector<std::ostream*>& sinks = {},
                       const std::string& checkpoint_path = {}) {
  tc.validate();
  if (data.empty()) throw UsageError("train_loop: empty dataset");
  Rng rng(tc.seed);
  AdamW<T> opt(net.params(), tc);
  TrainResult result;

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const bool any_augment =
      tc.augment_hflip || tc.augment_vflip || tc.augment_scale_crop;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = scheduled_lr(tc.lr, epoch, tc.epochs);
    // Fisher-Yates with the loop's own stream keeps runs reproducible.
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[std::size_t(rng.uniform_int(0, int(i) - 1))]);

    double loss_sum = 0;
    std::int64_t loss_count = 0;
    ConfusionCounts confusion;

    for (std::size_t start = 0; start < order.size();
         start += std::size_t(tc.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + std::size_t(tc.batch_size));
      Graph<T> graph;
      Tensor<T> batch_loss;
      for (std::size_t bi = start; bi < end; ++bi) {
        ChangeSample s = data[order[bi]];
        if (any_augment) {
          const AugmentOps ops =
              draw_augment_ops(rng, tc, s.pre.dim(0), s.pre.dim(1));
          s = apply_augment(s, ops);
        }
        Tensor<T> pre = cast_tensor<T>(s.pre);
        Tensor<T> post = cast_tensor<T>(s.post);
        Tensor<T> labels = cast_tensor<T>(s.label);
        Tensor<T> logits = net.forward(&graph, pre, post);
        confusion += accumulate(argmax_map(logits), labels);
        Tensor<T> loss = compute_loss(&graph, tc.loss, logits, labels,
                                      T(tc.focal_gamma));
        batch_loss = bi == start ? loss : add(&graph, batch_loss, loss);
      }
      batch_loss =
          mul_scalar(&graph, batch_loss, T(1) / T(std::int64_t(end - start)));
      const double loss_value = double(batch_loss[0]);
      if (!std::isfinite(loss_value)) {
        // Re-run the same batch with per-op finite checks to locate the layer.
        set_finite_checks(true);
        try {
          Graph<T> probe;
          for (std::size_t bi = start; bi < end; ++bi) {
            const ChangeSample& s = data[order[bi]];
            Tensor<T> logits = net.forward(&probe, cast_tensor<T>(s.pre),
                                           cast_tensor<T>(s.post));
            compute_loss(&probe, tc.loss, logits, cast_tensor<T>(s.label),
                         T(tc.focal_gamma));
          }
        } catch (const NumericError&) {
          set_finite_checks(false);
          throw;
        }
        set_finite_checks(false);
        throw NumericError("non-finite loss (layer not identified on re-run)");
      }
      loss_sum += loss_value * double(end - start);
      loss_count += std::int64_t(end - start);
      graph.backward(batch_loss);
      opt.step(lr);
      net.params().zero_grads();
    }

    EpochLog e;
    e.epoch = epoch;
    e.lr = lr;
    e.loss = loss_sum / double(loss_count);
    e.iou = iou(confusion);
    e.f1 = f1(confusion);
    e.oa = oa(confusion);
    result.log.push_back(e);
    const std::string line = format_epoch_log(e);
    for (std::ostream* os : sinks)
      if (os) (*os) << line << '\n' << std::flush;
  }

  if (!checkpoint_path.empty())
    save_checkpoint(checkpoint_path, net.config(), net.params());
  return result;
}

}  // namespace elgc
