#pragma once

// Binary change-detection evaluation: pixel confusion tallies with the change
// class as positive, and the derived IoU / F1 / overall-accuracy scores.
// Dataset-level scores sum counts over images first (aggregate protocol),
// they are not means of per-image scores.

#include <cstdint>

#include "elgcnet/tensor.hpp"

namespace elgc {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

inline ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) {
  return a += b;
}

// Both masks must be {0,1}-valued and the same shape.
template <class T>
ConfusionCounts accumulate(const Tensor<T>& pred, const Tensor<T>& gt) {
  if (pred.shape() != gt.shape())
    throw UsageError("accumulate: mask shapes differ, " +
                     shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  ConfusionCounts c;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    const T p = pred[i], y = gt[i];
    if ((p != T(0) && p != T(1)) || (y != T(0) && y != T(1)))
      throw UsageError("accumulate: masks must be binary {0,1}");
    if (p == T(1) && y == T(1))
      ++c.tp;
    else if (p == T(1) && y == T(0))
      ++c.fp;
    else if (p == T(0) && y == T(1))
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

// Change-class intersection over union; an empty union scores 1 by convention.
inline double iou(const ConfusionCounts& c) {
  const std::int64_t u = c.tp + c.fp + c.fn;
  return u == 0 ? 1.0 : double(c.tp) / double(u);
}

inline double f1(const ConfusionCounts& c) {
  const std::int64_t d = 2 * c.tp + c.fp + c.fn;
  return d == 0 ? 1.0 : 2.0 * double(c.tp) / double(d);
}

inline double oa(const ConfusionCounts& c) {
  const std::int64_t t = c.total();
  return t == 0 ? 1.0 : double(c.tp + c.tn) / double(t);
}

}  // namespace elgc
