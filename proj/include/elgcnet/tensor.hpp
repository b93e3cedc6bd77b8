#pragma once

// Dense row-major tensors with an optional gradient buffer, plus the tape
// (Graph) used for reverse-mode differentiation. Tensors are cheap handles:
// copies share storage, clone() deep-copies. A Graph records one backward
// closure per differentiable op and replays them in exact reverse order.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace elgc {

enum class ErrorCode { usage, dimension, numeric, ingestion, checkpoint };

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

  static const char* code_name(ErrorCode c) {
    switch (c) {
      case ErrorCode::usage: return "usage";
      case ErrorCode::dimension: return "dimension";
      case ErrorCode::numeric: return "numeric";
      case ErrorCode::ingestion: return "ingestion";
      case ErrorCode::checkpoint: return "checkpoint";
    }
    return "unknown";
  }

 private:
  ErrorCode code_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& m) : Error(ErrorCode::dimension, m) {}
};
struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error(ErrorCode::usage, m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error(ErrorCode::numeric, m) {}
};
struct IngestionError : Error {
  explicit IngestionError(const std::string& m) : Error(ErrorCode::ingestion, m) {}
};
struct CheckpointError : Error {
  explicit CheckpointError(const std::string& m) : Error(ErrorCode::checkpoint, m) {}
};

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline void require_dims(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

// When enabled, every kernel scans its output for NaN/Inf and throws a
// NumericError naming the op label in scope. Off by default (fast mode).
inline std::atomic<bool>& finite_check_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}
inline void set_finite_checks(bool on) { finite_check_flag().store(on); }
inline bool finite_checks_enabled() { return finite_check_flag().load(); }

namespace detail {
inline std::vector<std::string>& op_label_stack() {
  thread_local std::vector<std::string> stack;
  return stack;
}
}  // namespace detail

inline std::string current_op_label() {
  const auto& s = detail::op_label_stack();
  return s.empty() ? std::string("<unlabeled>") : s.back();
}

// RAII label for the layer currently executing; NumericError messages use it.
class ScopedOpLabel {
 public:
  explicit ScopedOpLabel(std::string label) {
    detail::op_label_stack().push_back(std::move(label));
  }
  ~ScopedOpLabel() { detail::op_label_stack().pop_back(); }
  ScopedOpLabel(const ScopedOpLabel&) = delete;
  ScopedOpLabel& operator=(const ScopedOpLabel&) = delete;
};

template <class T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  Tensor() : Tensor(Shape{0}) {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    for (int d : shape_)
      require_dims(d >= 0, "tensor extent must be non-negative");
    st_ = std::make_shared<Storage>();
    st_->v.assign(static_cast<std::size_t>(numel(shape_)), T(0));
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)) {
    require_dims(static_cast<std::int64_t>(data.size()) == numel(shape_),
                 "data length does not match shape " + shape_str(shape_));
    st_ = std::make_shared<Storage>();
    st_->v = std::move(data);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.st_->v.begin(), t.st_->v.end(), value);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

  static Tensor scalar(T value) { return Tensor(Shape{1}, {value}); }

  static Tensor identity(int n) {
    Tensor t(Shape{n, n});
    for (int i = 0; i < n; ++i) t.st_->v[std::size_t(i) * n + i] = T(1);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::int64_t size() const noexcept { return static_cast<std::int64_t>(st_->v.size()); }

  T* data() noexcept { return st_->v.data(); }
  const T* data() const noexcept { return st_->v.data(); }
  std::vector<T>& vec() noexcept { return st_->v; }
  const std::vector<T>& vec() const noexcept { return st_->v; }

  T& operator[](std::int64_t i) { return st_->v[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return st_->v[static_cast<std::size_t>(i)]; }

  // Row-major element access for the common ranks.
  T& at(int i, int j) { return st_->v[idx2(i, j)]; }
  const T& at(int i, int j) const { return st_->v[idx2(i, j)]; }
  T& at(int i, int j, int k) { return st_->v[idx3(i, j, k)]; }
  const T& at(int i, int j, int k) const { return st_->v[idx3(i, j, k)]; }
  T& at(int i, int j, int k, int l) { return st_->v[idx4(i, j, k, l)]; }
  const T& at(int i, int j, int k, int l) const { return st_->v[idx4(i, j, k, l)]; }

  bool requires_grad() const noexcept { return st_->requires_grad; }
  void set_requires_grad(bool on) { st_->requires_grad = on; }

  bool has_grad() const noexcept { return !st_->g.empty(); }
  void ensure_grad() {
    if (st_->g.empty()) st_->g.assign(st_->v.size(), T(0));
  }
  void zero_grad() {
    if (!st_->g.empty()) std::fill(st_->g.begin(), st_->g.end(), T(0));
  }
  T* grad_data() {
    ensure_grad();
    return st_->g.data();
  }
  const std::vector<T>& grad() const {
    if (st_->g.empty())
      throw UsageError("gradient not available; run backward first");
    return st_->g;
  }
  // Gradient as a tensor of the same shape (copy).
  Tensor grad_tensor() const { return Tensor(shape_, grad()); }

  // Deep copy: fresh storage, same values; grad not copied.
  Tensor clone() const {
    Tensor t(shape_, st_->v);
    t.st_->requires_grad = st_->requires_grad;
    return t;
  }

  // Same storage, new shape. Gradients flow through without a tape node.
  Tensor reshaped(Shape new_shape) const {
    require_dims(numel(new_shape) == size(),
                 "reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                     " changes element count");
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.st_ = st_;
    return t;
  }

  bool same_storage(const Tensor& other) const noexcept { return st_ == other.st_; }

  void check_finite(std::string_view what) const {
    for (std::size_t i = 0; i < st_->v.size(); ++i) {
      if (!std::isfinite(st_->v[i])) {
        std::ostringstream os;
        os << "non-finite value " << st_->v[i] << " at flat index " << i << " in "
           << what << " (op label: " << current_op_label() << ")";
        throw NumericError(os.str());
      }
    }
  }

 private:
  struct Storage {
    std::vector<T> v;
    std::vector<T> g;
    bool requires_grad = false;
  };

  std::size_t idx2(int i, int j) const {
    return std::size_t(i) * shape_[1] + j;
  }
  std::size_t idx3(int i, int j, int k) const {
    return (std::size_t(i) * shape_[1] + j) * shape_[2] + k;
  }
  std::size_t idx4(int i, int j, int k, int l) const {
    return ((std::size_t(i) * shape_[1] + j) * std::size_t(shape_[2]) + k) * shape_[3] + l;
  }

  Shape shape_;
  std::shared_ptr<Storage> st_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Tape of executed differentiable ops. Confined to one logical thread from
// first record to backward. backward() replays closures in reverse execution
// order; each closure adds (never overwrites) into its inputs' grad buffers,
// so a tensor consumed k times receives the sum of k adjoints.
template <class T>
class Graph {
 public:
  void record(std::function<void()> backward_fn) {
    tape_.push_back(std::move(backward_fn));
  }

  std::size_t size() const noexcept { return tape_.size(); }
  void clear() { tape_.clear(); }

  void backward(Tensor<T> loss) {
    if (loss.size() != 1)
      throw UsageError("backward requires a scalar loss, got shape " +
                       shape_str(loss.shape()));
    loss.ensure_grad();
    loss.grad_data()[0] += T(1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> tape_;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

namespace detail {

// Shared epilogue for kernels: decide grad participation and run the
// finite-value check when verification mode is on.
template <class T>
bool wants_grad(const Graph<T>* g, std::initializer_list<const Tensor<T>*> inputs) {
  if (g == nullptr) return false;
  for (const Tensor<T>* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <class T>
void finish_op(Tensor<T>& out, std::string_view opname) {
  if (finite_checks_enabled()) out.check_finite(opname);
}

}  // namespace detail

}  // namespace elgc
