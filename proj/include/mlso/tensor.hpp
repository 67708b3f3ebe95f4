#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "mlso/errors.hpp"

namespace mlso {

using Shape = std::vector<int>;

std::int64_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  Tape* tape = nullptr;          // tape that recorded this value, if any
  std::uint64_t tape_epoch = 0;  // disambiguates address reuse across tapes
  int node = -1;                 // node id on that tape
};

Tape* active_tape();

}  // namespace detail

/// Dense row-major f64 tensor. Copies of a Tensor share storage; ops produce
/// fresh storage. When a Tape is active (see TapeScope), every op involving a
/// tracked input records its backward rule.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  /// Leaf that accumulates gradients during backward passes.
  static Tensor param(Shape shape, std::vector<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int axis) const { return impl_->shape[static_cast<std::size_t>(axis)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(impl_->data.size()); }
  const std::vector<double>& data() const { return impl_->data; }
  /// Mutable storage access, for initialization and optimizer updates only;
  /// mutating a value that is already on a tape invalidates recorded rules.
  std::vector<double>& raw() { return impl_->data; }
  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  bool is_scalar() const { return size() == 1; }
  double value() const;

  double operator[](std::int64_t i) const { return impl_->data[static_cast<std::size_t>(i)]; }

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
  friend class Tape;
};

/// Gradients produced by one backward pass, keyed by leaf tensor identity and
/// ordered by tape registration order (deterministic).
class GradientMap {
 public:
  bool contains(const Tensor& t) const;
  /// Accumulated gradient of `t`, shaped like `t`; zeros if `t` never
  /// influenced the loss.
  Tensor grad(const Tensor& t) const;
  std::size_t size() const { return entries_.size(); }

 private:
  friend class Tape;
  std::vector<std::pair<std::shared_ptr<detail::TensorImpl>, std::vector<double>>> entries_;
};

/// Records one training step's operations in topological (creation) order.
/// A tape is single-threaded; concurrent workers each own a private tape.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Reverse pass from a scalar loss. Visits each recorded node exactly once,
  /// in reverse creation order, accumulating into per-node buffers in fixed
  /// order. May be called once per tape.
  GradientMap backward(const Tensor& loss);

  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  // --- recording interface used by the op implementations ---

  /// Node id of `t` on this tape; registers requires_grad leaves on first
  /// use; returns -1 for constants.
  int track(const Tensor& t);
  using BackwardRule = std::function<void(Tape&, const std::vector<double>&)>;
  int emit(Tensor& out, BackwardRule rule);
  /// Gradient buffer of a node, allocated on first touch.
  std::vector<double>& grad_buffer(int node, std::int64_t size);

  bool owns(const detail::TensorImpl* impl) const {
    return impl->tape == this && impl->tape_epoch == epoch_ && impl->node >= 0;
  }

 private:
  struct NodeRecord {
    BackwardRule rule;                            // empty for leaves
    std::shared_ptr<detail::TensorImpl> leaf;     // set for leaves
    std::int64_t out_size = 0;
  };
  std::vector<NodeRecord> nodes_;
  std::vector<std::vector<double>> grads_;
  std::uint64_t epoch_;
  bool consumed_ = false;
};

/// Makes `tape` the recording target for ops on the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// --- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor pow_scalar(const Tensor& a, double p);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// min(a, c) elementwise. Subgradient convention: the tensor argument wins
/// ties, so d/da = 1 where a <= c.
Tensor min_scalar(const Tensor& a, double c);
/// max(a, c) elementwise; d/da = 1 where a >= c.
Tensor max_scalar(const Tensor& a, double c);
/// Soft maximum against zero: (1/alpha) * log(exp(0) + exp(alpha*x)),
/// evaluated in a numerically stable form. Derivative sigmoid(alpha*x).
Tensor soft_max0(const Tensor& a, double alpha);

/// Broadcast multiply by a scalar tensor (gradient flows to both).
Tensor scale(const Tensor& a, const Tensor& s);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor trace(const Tensor& a);
Tensor logsumexp(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);

/// Cross-correlation of [C_in,H,W] with kernels [C_out,C_in,kh,kw].
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding);
/// 2x2 max pooling, stride 2, remainder rows/columns dropped. Gradient routes
/// to the first maximal entry in scan order.
Tensor maxpool2x2(const Tensor& a);
/// 2x2 average pooling, stride 2; odd edges are replicate-padded so constants
/// are preserved and the output extent is ceil(n/2).
Tensor avgpool2x2(const Tensor& a);
Tensor spatial_mean(const Tensor& a);  // [C,H,W] -> [C]
Tensor channel_affine(const Tensor& x, const Tensor& gamma, const Tensor& beta);
Tensor linear(const Tensor& weights, const Tensor& x, const Tensor& bias);  // [m,n]·[n]+[m]

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

/// Central-finite-difference check of a scalar-valued tensor function.
/// Returns max over entries of |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
double check_gradients(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                       double eps = 1e-5);

}  // namespace mlso
