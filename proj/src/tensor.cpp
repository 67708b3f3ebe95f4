#include "mlso/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace mlso {

std::int64_t shape_size(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace detail {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

namespace {
Tape* swap_active(Tape* t) {
  Tape* prev = g_active_tape;
  g_active_tape = t;
  return prev;
}
}  // namespace

}  // namespace detail

TapeScope::TapeScope(Tape& tape) { previous_ = detail::swap_active(&tape); }
TapeScope::~TapeScope() { detail::swap_active(previous_); }

// --- Tensor ----------------------------------------------------------------

namespace {

std::shared_ptr<detail::TensorImpl> make_impl(Shape shape, std::vector<double> values) {
  auto impl = std::make_shared<detail::TensorImpl>();
  const std::int64_t n = shape_size(shape);
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
  }
  if (static_cast<std::int64_t>(values.size()) != n) {
    throw ShapeError("data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return impl;
}

}  // namespace

Tensor Tensor::zeros(Shape shape) {
  const auto n = static_cast<std::size_t>(shape_size(shape));
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape shape, double value) {
  const auto n = static_cast<std::size_t>(shape_size(shape));
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return Tensor(make_impl(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::param(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.impl_->requires_grad = true;
  return t;
}

double Tensor::value() const {
  if (!is_scalar()) throw ContractError("value() requires a scalar, got " + shape_str(shape()));
  return impl_->data[0];
}

// --- GradientMap -----------------------------------------------------------

bool GradientMap::contains(const Tensor& t) const {
  for (const auto& [impl, grad] : entries_) {
    if (impl.get() == t.impl()) return true;
  }
  return false;
}

Tensor GradientMap::grad(const Tensor& t) const {
  for (const auto& [impl, grad] : entries_) {
    if (impl.get() == t.impl()) {
      if (grad.empty()) return Tensor::zeros(t.shape());
      return Tensor::from(t.shape(), grad);
    }
  }
  throw ContractError("tensor is not a tracked leaf of this tape");
}

// --- Tape ------------------------------------------------------------------

namespace {
std::atomic<std::uint64_t> g_tape_epoch{0};
}

Tape::Tape() : epoch_(++g_tape_epoch) {}

int Tape::track(const Tensor& t) {
  auto* impl = t.impl();
  if (!impl) throw ContractError("undefined tensor used in an operation");
  if (owns(impl)) return impl->node;
  if (!impl->requires_grad) return -1;
  // First use of a leaf on this tape.
  NodeRecord rec;
  rec.leaf = t.impl_ptr();
  rec.out_size = t.size();
  nodes_.push_back(std::move(rec));
  grads_.emplace_back();
  impl->tape = this;
  impl->tape_epoch = epoch_;
  impl->node = static_cast<int>(nodes_.size()) - 1;
  return impl->node;
}

int Tape::emit(Tensor& out, BackwardRule rule) {
  NodeRecord rec;
  rec.rule = std::move(rule);
  rec.out_size = out.size();
  nodes_.push_back(std::move(rec));
  grads_.emplace_back();
  const int id = static_cast<int>(nodes_.size()) - 1;
  out.impl()->tape = this;
  out.impl()->tape_epoch = epoch_;
  out.impl()->node = id;
  return id;
}

std::vector<double>& Tape::grad_buffer(int node, std::int64_t size) {
  auto& buf = grads_[static_cast<std::size_t>(node)];
  if (buf.empty()) buf.assign(static_cast<std::size_t>(size), 0.0);
  return buf;
}

GradientMap Tape::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("tape already consumed by a backward pass");
  if (!loss.is_scalar()) {
    throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  if (!owns(loss.impl())) {
    throw ContractError("loss is not recorded on this tape");
  }
  consumed_ = true;
  grad_buffer(loss.impl()->node, 1)[0] = 1.0;
  for (int i = loss.impl()->node; i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    const auto& gout = grads_[static_cast<std::size_t>(i)];
    if (gout.empty() || !node.rule) continue;
    node.rule(*this, gout);
  }
  GradientMap result;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].leaf) {
      result.entries_.emplace_back(nodes_[i].leaf, grads_[i]);
      // Leaves can re-register on the next step's tape.
      nodes_[i].leaf->tape = nullptr;
      nodes_[i].leaf->node = -1;
    }
  }
  return result;
}

// --- op plumbing ------------------------------------------------------------

namespace {

struct Recorder {
  Tape* tape = nullptr;
  bool active = false;

  explicit Recorder(std::initializer_list<const Tensor*> inputs) {
    tape = detail::active_tape();
    if (!tape) return;
    for (const Tensor* t : inputs) {
      auto* impl = t->impl();
      if (!impl) throw ContractError("undefined tensor used in an operation");
      if (impl->requires_grad || tape->owns(impl)) {
        active = true;
        break;
      }
    }
  }
};

// Adds g into the buffer of `node` (no-op for constants).
void accumulate(Tape& tape, int node, std::int64_t size,
                const std::function<void(std::vector<double>&)>& fn) {
  if (node < 0) return;
  fn(tape.grad_buffer(node, size));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

using UnaryFn = double (*)(double);
using UnaryGradFn = double (*)(double x, double y);  // local derivative from input and output

Tensor unary_op(const Tensor& a, UnaryFn fwd, UnaryGradFn dfdx) {
  Recorder rec({&a});
  const auto n = a.size();
  std::vector<double> out(static_cast<std::size_t>(n));
  const auto& x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  Tensor result = Tensor::from(a.shape(), std::move(out));
  if (rec.active) {
    const int pa = rec.tape->track(a);
    auto ai = a.impl_ptr();
    auto oi = result.impl_ptr();
    rec.tape->emit(result, [pa, ai, oi, dfdx, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(ai->data[i], oi->data[i]);
      });
    });
  }
  return result;
}

}  // namespace

// --- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Recorder rec({&a, &b});
  std::vector<double> out(a.data());
  const auto& y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  Tensor result = Tensor::from(a.shape(), std::move(out));
  if (rec.active) {
    const int pa = rec.tape->track(a);
    const int pb = rec.tape->track(b);
    const auto n = a.size();
    rec.tape->emit(result, [pa, pb, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      });
      accumulate(t, pb, n, [&](std::vector<double>& gb) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      });
    });
  }
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Recorder rec({&a, &b});
  std::vector<double> out(a.data());
  const auto& y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  Tensor result = Tensor::from(a.shape(), std::move(out));
  if (rec.active) {
    const int pa = rec.tape->track(a);
    const int pb = rec.tape->track(b);
    const auto n = a.size();
    rec.tape->emit(result, [pa, pb, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      });
      accumulate(t, pb, n, [&](std::vector<double>& gb) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      });
    });
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Recorder rec({&a, &b});
  std::vector<double> out(a.data());
  const auto& y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  Tensor result = Tensor::from(a.shape(), std::move(out));
  if (rec.active) {
    const int pa = rec.tape->track(a);
    const int pb = rec.tape->track(b);
    auto ai = a.impl_ptr();
    auto bi = b.impl_ptr();
    const auto n = a.size();
    rec.tape->emit(result, [pa, pb, ai, bi, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
      });
      accumulate(t, pb, n, [&](std::vector<double>& gb) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
      });
    });
  }
  return result;
}

Tensor divide(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "divide");
  Recorder rec({&a, &b});
  std::vector<double> out(a.data());
  const auto& y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (y[i] == 0.0) throw DomainError("divide: zero divisor");
    out[i] /= y[i];
  }
  Tensor result = Tensor::from(a.shape(), std::move(out));
  if (rec.active) {
    const int pa = rec.tape->track(a);
    const int pb = rec.tape->track(b);
    auto ai = a.impl_ptr();
    auto bi = b.impl_ptr();
    const auto n = a.size();
    rec.tape->emit(result, [pa, pb, ai, bi, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bi->data[i];
      });
      accumulate(t, pb, n, [&](std::vector<double>& gb) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          gb[i] -= g[i] * ai->data[i] / (bi->data[i] * bi->data[i]);
        }
      });
    });
  }
  return result;
}

Tensor add_scalar(const Tensor& a, double c) {
  Recorder rec({&a});
  std::vector<double> out(a.data());
  for (double& v : out) v += c;
  Tensor result = Tensor::from(a.shape(), std::move(out));
  if (rec.active) {
    const int pa = rec.tape->track(a);
    const auto n = a.size();
    rec.tape->emit(result, [pa, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      });
    });
  }
  return result;
}

Tensor mul_scalar(const Tensor& a, double c) {
  Recorder rec({&a});
  std::vector<double> out(a.data());
  for (double& v : out) v *= c;
  Tensor result = Tensor::from(a.shape(), std::move(out));
  if (rec.active) {
    const int pa = rec.tape->track(a);
    const auto n = a.size();
    rec.tape->emit(result, [pa, c, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
      });
    });
  }
  return result;
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor pow_scalar(const Tensor& a, double p) {
  Recorder rec({&a});
  const auto& x = a.data();
  std::vector<double> out(x.size());
  const bool integral_p = p == std::floor(p);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < 0.0 && !integral_p) throw DomainError("pow: negative base with fractional exponent");
    if (x[i] == 0.0 && p < 0.0) throw DomainError("pow: zero base with negative exponent");
    out[i] = std::pow(x[i], p);
  }
  Tensor result = Tensor::from(a.shape(), std::move(out));
  if (rec.active) {
    const int pa = rec.tape->track(a);
    auto ai = a.impl_ptr();
    const auto n = a.size();
    rec.tape->emit(result, [pa, ai, p, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * p * std::pow(ai->data[i], p - 1.0);
        }
      });
    });
  }
  return result;
}

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (v <= 0.0) throw DomainError("log: non-positive argument");
  }
  return unary_op(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor min_scalar(const Tensor& a, double c) {
  Recorder rec({&a});
  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::min(x[i], c);
  Tensor result = Tensor::from(a.shape(), std::move(out));
  if (rec.active) {
    const int pa = rec.tape->track(a);
    auto ai = a.impl_ptr();
    const auto n = a.size();
    rec.tape->emit(result, [pa, ai, c, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (ai->data[i] <= c) ga[i] += g[i];
        }
      });
    });
  }
  return result;
}

Tensor max_scalar(const Tensor& a, double c) {
  Recorder rec({&a});
  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::max(x[i], c);
  Tensor result = Tensor::from(a.shape(), std::move(out));
  if (rec.active) {
    const int pa = rec.tape->track(a);
    auto ai = a.impl_ptr();
    const auto n = a.size();
    rec.tape->emit(result, [pa, ai, c, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (ai->data[i] >= c) ga[i] += g[i];
        }
      });
    });
  }
  return result;
}

Tensor soft_max0(const Tensor& a, double alpha) {
  if (alpha <= 0.0) throw DomainError("soft_max0: alpha must be positive");
  Recorder rec({&a});
  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double ax = alpha * x[i];
    // log(1 + e^ax)/alpha = max(x,0) + log1p(e^{-|ax|})/alpha
    out[i] = std::max(x[i], 0.0) + std::log1p(std::exp(-std::abs(ax))) / alpha;
  }
  Tensor result = Tensor::from(a.shape(), std::move(out));
  if (rec.active) {
    const int pa = rec.tape->track(a);
    auto ai = a.impl_ptr();
    const auto n = a.size();
    rec.tape->emit(result, [pa, ai, alpha, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double ax = alpha * ai->data[i];
          const double s = ax >= 0.0 ? 1.0 / (1.0 + std::exp(-ax))
                                     : std::exp(ax) / (1.0 + std::exp(ax));
          ga[i] += g[i] * s;
        }
      });
    });
  }
  return result;
}

Tensor scale(const Tensor& a, const Tensor& s) {
  if (!s.is_scalar()) throw ShapeError("scale: second argument must be scalar");
  Recorder rec({&a, &s});
  const double c = s.data()[0];
  std::vector<double> out(a.data());
  for (double& v : out) v *= c;
  Tensor result = Tensor::from(a.shape(), std::move(out));
  if (rec.active) {
    const int pa = rec.tape->track(a);
    const int ps = rec.tape->track(s);
    auto ai = a.impl_ptr();
    const auto n = a.size();
    rec.tape->emit(result, [pa, ps, ai, c, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
      });
      accumulate(t, ps, 1, [&](std::vector<double>& gs) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * ai->data[i];
        gs[0] += acc;
      });
    });
  }
  return result;
}

// --- reductions -------------------------------------------------------------

Tensor sum(const Tensor& a) {
  Recorder rec({&a});
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  Tensor result = Tensor::scalar(acc);
  if (rec.active) {
    const int pa = rec.tape->track(a);
    const auto n = a.size();
    rec.tape->emit(result, [pa, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        for (double& v : ga) v += g[0];
      });
    });
  }
  return result;
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor trace(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw ShapeError("trace requires a square matrix, got " + shape_str(a.shape()));
  }
  Recorder rec({&a});
  const int k = a.dim(0);
  double acc = 0.0;
  for (int i = 0; i < k; ++i) acc += a.data()[static_cast<std::size_t>(i) * k + i];
  Tensor result = Tensor::scalar(acc);
  if (rec.active) {
    const int pa = rec.tape->track(a);
    const auto n = a.size();
    rec.tape->emit(result, [pa, k, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        for (int i = 0; i < k; ++i) ga[static_cast<std::size_t>(i) * k + i] += g[0];
      });
    });
  }
  return result;
}

Tensor logsumexp(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("logsumexp of empty tensor");
  Recorder rec({&a});
  const auto& x = a.data();
  const double m = *std::max_element(x.begin(), x.end());
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - m);
  Tensor result = Tensor::scalar(m + std::log(acc));
  if (rec.active) {
    const int pa = rec.tape->track(a);
    auto ai = a.impl_ptr();
    auto oi = result.impl_ptr();
    const auto n = a.size();
    rec.tape->emit(result, [pa, ai, oi, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        const double y = oi->data[0];
        for (std::size_t i = 0; i < ga.size(); ++i) {
          ga[i] += g[0] * std::exp(ai->data[i] - y);
        }
      });
    });
  }
  return result;
}

Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

// --- structure --------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape to " + shape_str(shape) + " from " + shape_str(a.shape()));
  }
  Recorder rec({&a});
  Tensor result = Tensor::from(std::move(shape), a.data());
  if (rec.active) {
    const int pa = rec.tape->track(a);
    const auto n = a.size();
    rec.tape->emit(result, [pa, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      });
    });
  }
  return result;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const int rank = parts.front().rank();
  if (axis < 0 || axis >= rank) throw ShapeError("concat: invalid axis");
  Shape out_shape = parts.front().shape();
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const auto& s = parts[p].shape();
    if (static_cast<int>(s.size()) != rank) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < rank; ++d) {
      if (d == axis) continue;
      if (s[static_cast<std::size_t>(d)] != out_shape[static_cast<std::size_t>(d)]) {
        throw ShapeError("concat: incompatible shapes off the concat axis");
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }

  // View each part as [outer, part_axis * inner] and interleave blocks.
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<std::size_t>(d)];
  for (int d = axis + 1; d < rank; ++d) inner *= out_shape[static_cast<std::size_t>(d)];

  std::vector<double> out(static_cast<std::size_t>(shape_size(out_shape)));
  const std::int64_t out_block = out_shape[static_cast<std::size_t>(axis)] * inner;
  std::vector<std::int64_t> offsets(parts.size());
  {
    std::int64_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      offsets[p] = off;
      const std::int64_t blk = parts[p].dim(axis) * inner;
      for (std::int64_t o = 0; o < outer; ++o) {
        const double* src = parts[p].data().data() + o * blk;
        std::copy(src, src + blk, out.data() + o * out_block + off);
      }
      off += blk;
    }
  }
  std::vector<const Tensor*> input_ptrs;
  input_ptrs.reserve(parts.size());
  for (const auto& p : parts) input_ptrs.push_back(&p);

  Tape* tape = detail::active_tape();
  bool active = false;
  if (tape) {
    for (const Tensor* t : input_ptrs) {
      auto* impl = t->impl();
      if (impl->requires_grad || tape->owns(impl)) {
        active = true;
        break;
      }
    }
  }
  Tensor result = Tensor::from(out_shape, std::move(out));
  if (active) {
    struct Piece {
      int node;
      std::int64_t offset, block, size;
    };
    std::vector<Piece> pieces;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      pieces.push_back({tape->track(parts[p]), offsets[p],
                        static_cast<std::int64_t>(parts[p].dim(axis)) * inner, parts[p].size()});
    }
    tape->emit(result, [pieces, outer, out_block](Tape& t, const std::vector<double>& g) {
      for (const auto& piece : pieces) {
        if (piece.node < 0) continue;
        accumulate(t, piece.node, piece.size, [&](std::vector<double>& gp) {
          for (std::int64_t o = 0; o < outer; ++o) {
            const double* src = g.data() + o * out_block + piece.offset;
            double* dst = gp.data() + o * piece.block;
            for (std::int64_t i = 0; i < piece.block; ++i) dst[i] += src[i];
          }
        });
      }
    });
  }
  return result;
}

// --- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul requires rank-2 tensors");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Recorder rec({&a, &b});
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  {
    const double* A = a.data().data();
    const double* B = b.data().data();
    for (int i = 0; i < m; ++i) {
      for (int kk = 0; kk < k; ++kk) {
        const double aik = A[static_cast<std::size_t>(i) * k + kk];
        const double* brow = B + static_cast<std::size_t>(kk) * n;
        double* orow = out.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
      }
    }
  }
  Tensor result = Tensor::from({m, n}, std::move(out));
  if (rec.active) {
    const int pa = rec.tape->track(a);
    const int pb = rec.tape->track(b);
    auto ai = a.impl_ptr();
    auto bi = b.impl_ptr();
    rec.tape->emit(result, [pa, pb, ai, bi, m, k, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, static_cast<std::int64_t>(m) * k, [&](std::vector<double>& ga) {
        // dA = G · B^T
        for (int i = 0; i < m; ++i) {
          for (int kk = 0; kk < k; ++kk) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j) {
              acc += g[static_cast<std::size_t>(i) * n + j] *
                     bi->data[static_cast<std::size_t>(kk) * n + j];
            }
            ga[static_cast<std::size_t>(i) * k + kk] += acc;
          }
        }
      });
      accumulate(t, pb, static_cast<std::int64_t>(k) * n, [&](std::vector<double>& gb) {
        // dB = A^T · G
        for (int kk = 0; kk < k; ++kk) {
          for (int i = 0; i < m; ++i) {
            const double aik = ai->data[static_cast<std::size_t>(i) * k + kk];
            for (int j = 0; j < n; ++j) {
              gb[static_cast<std::size_t>(kk) * n + j] +=
                  aik * g[static_cast<std::size_t>(i) * n + j];
            }
          }
        }
      });
    });
  }
  return result;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose requires a rank-2 tensor");
  Recorder rec({&a});
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(j) * m + i] = a.data()[static_cast<std::size_t>(i) * n + j];
    }
  }
  Tensor result = Tensor::from({n, m}, std::move(out));
  if (rec.active) {
    const int pa = rec.tape->track(a);
    rec.tape->emit(result, [pa, m, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, static_cast<std::int64_t>(m) * n, [&](std::vector<double>& ga) {
        for (int j = 0; j < n; ++j) {
          for (int i = 0; i < m; ++i) {
            ga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
          }
        }
      });
    });
  }
  return result;
}

Tensor linear(const Tensor& weights, const Tensor& x, const Tensor& bias) {
  if (weights.rank() != 2 || x.rank() != 1 || bias.rank() != 1) {
    throw ShapeError("linear expects weights [m,n], x [n], bias [m]");
  }
  const int m = weights.dim(0), n = weights.dim(1);
  if (x.dim(0) != n || bias.dim(0) != m) {
    throw ShapeError("linear: incompatible shapes " + shape_str(weights.shape()) + ", " +
                     shape_str(x.shape()) + ", " + shape_str(bias.shape()));
  }
  Recorder rec({&weights, &x, &bias});
  std::vector<double> out(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    double acc = bias.data()[static_cast<std::size_t>(i)];
    const double* wrow = weights.data().data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) acc += wrow[j] * x.data()[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = acc;
  }
  Tensor result = Tensor::from({m}, std::move(out));
  if (rec.active) {
    const int pw = rec.tape->track(weights);
    const int px = rec.tape->track(x);
    const int pb = rec.tape->track(bias);
    auto wi = weights.impl_ptr();
    auto xi = x.impl_ptr();
    rec.tape->emit(result, [pw, px, pb, wi, xi, m, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pw, static_cast<std::int64_t>(m) * n, [&](std::vector<double>& gw) {
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) {
            gw[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(i)] *
                                                       xi->data[static_cast<std::size_t>(j)];
          }
        }
      });
      accumulate(t, px, n, [&](std::vector<double>& gx) {
        for (int i = 0; i < m; ++i) {
          const double gi = g[static_cast<std::size_t>(i)];
          const double* wrow = wi->data.data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j) gx[static_cast<std::size_t>(j)] += gi * wrow[j];
        }
      });
      accumulate(t, pb, m, [&](std::vector<double>& gb) {
        for (int i = 0; i < m; ++i) gb[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
      });
    });
  }
  return result;
}

// --- convolution and pooling -------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding) {
  if (input.rank() != 3 || kernels.rank() != 4) {
    throw ShapeError("conv2d expects input [C,H,W] and kernels [O,C,kh,kw]");
  }
  const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int cout = kernels.dim(0), kc = kernels.dim(1), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kc != cin) throw ShapeError("conv2d: kernel channel count mismatch");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (w + 2 * padding - kw) / stride + 1;

  Recorder rec({&input, &kernels});
  std::vector<double> out(static_cast<std::size_t>(cout) * oh * ow, 0.0);
  const double* X = input.data().data();
  const double* K = kernels.data().data();
  for (int co = 0; co < cout; ++co) {
    for (int ci = 0; ci < cin; ++ci) {
      const double* kbase = K + ((static_cast<std::size_t>(co) * cin + ci) * kh) * kw;
      const double* xbase = X + static_cast<std::size_t>(ci) * h * w;
      for (int oy = 0; oy < oh; ++oy) {
        const int iy0 = oy * stride - padding;
        for (int ox = 0; ox < ow; ++ox) {
          const int ix0 = ox * stride - padding;
          double acc = 0.0;
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= w) continue;
              acc += xbase[static_cast<std::size_t>(iy) * w + ix] *
                     kbase[static_cast<std::size_t>(ky) * kw + kx];
            }
          }
          out[(static_cast<std::size_t>(co) * oh + oy) * ow + ox] += acc;
        }
      }
    }
  }
  Tensor result = Tensor::from({cout, oh, ow}, std::move(out));
  if (rec.active) {
    const int pi = rec.tape->track(input);
    const int pk = rec.tape->track(kernels);
    auto xi = input.impl_ptr();
    auto ki = kernels.impl_ptr();
    rec.tape->emit(result, [=](Tape& t, const std::vector<double>& g) {
      accumulate(t, pi, static_cast<std::int64_t>(cin) * h * w, [&](std::vector<double>& gx) {
        for (int co = 0; co < cout; ++co) {
          for (int ci = 0; ci < cin; ++ci) {
            const double* kbase = ki->data.data() + ((static_cast<std::size_t>(co) * cin + ci) * kh) * kw;
            double* gxbase = gx.data() + static_cast<std::size_t>(ci) * h * w;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy0 = oy * stride - padding;
              for (int ox = 0; ox < ow; ++ox) {
                const int ix0 = ox * stride - padding;
                const double go = g[(static_cast<std::size_t>(co) * oh + oy) * ow + ox];
                if (go == 0.0) continue;
                for (int ky = 0; ky < kh; ++ky) {
                  const int iy = iy0 + ky;
                  if (iy < 0 || iy >= h) continue;
                  for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ix0 + kx;
                    if (ix < 0 || ix >= w) continue;
                    gxbase[static_cast<std::size_t>(iy) * w + ix] +=
                        go * kbase[static_cast<std::size_t>(ky) * kw + kx];
                  }
                }
              }
            }
          }
        }
      });
      accumulate(t, pk, static_cast<std::int64_t>(cout) * cin * kh * kw,
                 [&](std::vector<double>& gk) {
        for (int co = 0; co < cout; ++co) {
          for (int ci = 0; ci < cin; ++ci) {
            double* gkbase = gk.data() + ((static_cast<std::size_t>(co) * cin + ci) * kh) * kw;
            const double* xbase = xi->data.data() + static_cast<std::size_t>(ci) * h * w;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy0 = oy * stride - padding;
              for (int ox = 0; ox < ow; ++ox) {
                const int ix0 = ox * stride - padding;
                const double go = g[(static_cast<std::size_t>(co) * oh + oy) * ow + ox];
                if (go == 0.0) continue;
                for (int ky = 0; ky < kh; ++ky) {
                  const int iy = iy0 + ky;
                  if (iy < 0 || iy >= h) continue;
                  for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ix0 + kx;
                    if (ix < 0 || ix >= w) continue;
                    gkbase[static_cast<std::size_t>(ky) * kw + kx] +=
                        go * xbase[static_cast<std::size_t>(iy) * w + ix];
                  }
                }
              }
            }
          }
        }
      });
    });
  }
  return result;
}

Tensor maxpool2x2(const Tensor& a) {
  if (a.rank() == 2) {
    // Promote [H,W] to [1,H,W] for convenience in tests and heads.
    return reshape(maxpool2x2(reshape(a, {1, a.dim(0), a.dim(1)})),
                   {a.dim(0) / 2, a.dim(1) / 2});
  }
  if (a.rank() != 3) throw ShapeError("maxpool2x2 expects [C,H,W]");
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  const int oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw ShapeError("maxpool2x2: spatial extent collapses to zero");
  Recorder rec({&a});
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
  std::vector<std::int32_t> argmax(out.size());
  const double* X = a.data().data();
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double best = -1e308;
        std::int32_t best_idx = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int iy = oy * 2 + dy, ix = ox * 2 + dx;
            const std::int32_t idx =
                static_cast<std::int32_t>((static_cast<std::size_t>(ch) * h + iy) * w + ix);
            if (X[idx] > best) {
              best = X[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(ch) * oh + oy) * ow + ox;
        out[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
  Tensor result = Tensor::from({c, oh, ow}, std::move(out));
  if (rec.active) {
    const int pa = rec.tape->track(a);
    const auto n = a.size();
    rec.tape->emit(result, [pa, argmax, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[static_cast<std::size_t>(argmax[i])] += g[i];
        }
      });
    });
  }
  return result;
}

Tensor avgpool2x2(const Tensor& a) {
  if (a.rank() != 3) throw ShapeError("avgpool2x2 expects [C,H,W]");
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;
  Recorder rec({&a});
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow, 0.0);
  const double* X = a.data().data();
  auto clampi = [](int v, int hi) { return v < hi ? v : hi - 1; };
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int iy = clampi(oy * 2 + dy, h), ix = clampi(ox * 2 + dx, w);
            acc += X[(static_cast<std::size_t>(ch) * h + iy) * w + ix];
          }
        }
        out[(static_cast<std::size_t>(ch) * oh + oy) * ow + ox] = acc / 4.0;
      }
    }
  }
  Tensor result = Tensor::from({c, oh, ow}, std::move(out));
  if (rec.active) {
    const int pa = rec.tape->track(a);
    const auto n = a.size();
    rec.tape->emit(result, [pa, c, h, w, oh, ow, n, clampi](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        for (int ch = 0; ch < c; ++ch) {
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              const double go = g[(static_cast<std::size_t>(ch) * oh + oy) * ow + ox] / 4.0;
              for (int dy = 0; dy < 2; ++dy) {
                for (int dx = 0; dx < 2; ++dx) {
                  const int iy = clampi(oy * 2 + dy, h), ix = clampi(ox * 2 + dx, w);
                  ga[(static_cast<std::size_t>(ch) * h + iy) * w + ix] += go;
                }
              }
            }
          }
        }
      });
    });
  }
  return result;
}

Tensor spatial_mean(const Tensor& a) {
  if (a.rank() != 3) throw ShapeError("spatial_mean expects [C,H,W]");
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  Recorder rec({&a});
  std::vector<double> out(static_cast<std::size_t>(c), 0.0);
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    const double* base = a.data().data() + static_cast<std::size_t>(ch) * h * w;
    for (int i = 0; i < h * w; ++i) acc += base[i];
    out[static_cast<std::size_t>(ch)] = acc * inv;
  }
  Tensor result = Tensor::from({c}, std::move(out));
  if (rec.active) {
    const int pa = rec.tape->track(a);
    const auto n = a.size();
    rec.tape->emit(result, [pa, c, h, w, inv, n](Tape& t, const std::vector<double>& g) {
      accumulate(t, pa, n, [&](std::vector<double>& ga) {
        for (int ch = 0; ch < c; ++ch) {
          const double go = g[static_cast<std::size_t>(ch)] * inv;
          double* base = ga.data() + static_cast<std::size_t>(ch) * h * w;
          for (int i = 0; i < h * w; ++i) base[i] += go;
        }
      });
    });
  }
  return result;
}

Tensor channel_affine(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.rank() != 3 || gamma.rank() != 1 || beta.rank() != 1) {
    throw ShapeError("channel_affine expects x [C,H,W], gamma [C], beta [C]");
  }
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (gamma.dim(0) != c || beta.dim(0) != c) throw ShapeError("channel_affine: channel mismatch");
  Recorder rec({&x, &gamma, &beta});
  std::vector<double> out(x.data());
  for (int ch = 0; ch < c; ++ch) {
    const double gm = gamma.data()[static_cast<std::size_t>(ch)];
    const double bt = beta.data()[static_cast<std::size_t>(ch)];
    double* base = out.data() + static_cast<std::size_t>(ch) * h * w;
    for (int i = 0; i < h * w; ++i) base[i] = base[i] * gm + bt;
  }
  Tensor result = Tensor::from(x.shape(), std::move(out));
  if (rec.active) {
    const int px = rec.tape->track(x);
    const int pg = rec.tape->track(gamma);
    const int pb = rec.tape->track(beta);
    auto xi = x.impl_ptr();
    auto gi = gamma.impl_ptr();
    rec.tape->emit(result, [=](Tape& t, const std::vector<double>& g) {
      const std::int64_t hw = static_cast<std::int64_t>(h) * w;
      accumulate(t, px, static_cast<std::int64_t>(c) * hw, [&](std::vector<double>& gx) {
        for (int ch = 0; ch < c; ++ch) {
          const double gm = gi->data[static_cast<std::size_t>(ch)];
          const double* gbase = g.data() + static_cast<std::size_t>(ch) * hw;
          double* base = gx.data() + static_cast<std::size_t>(ch) * hw;
          for (std::int64_t i = 0; i < hw; ++i) base[i] += gbase[i] * gm;
        }
      });
      accumulate(t, pg, c, [&](std::vector<double>& gg) {
        for (int ch = 0; ch < c; ++ch) {
          const double* gbase = g.data() + static_cast<std::size_t>(ch) * hw;
          const double* xbase = xi->data.data() + static_cast<std::size_t>(ch) * hw;
          double acc = 0.0;
          for (std::int64_t i = 0; i < hw; ++i) acc += gbase[i] * xbase[i];
          gg[static_cast<std::size_t>(ch)] += acc;
        }
      });
      accumulate(t, pb, c, [&](std::vector<double>& gb) {
        for (int ch = 0; ch < c; ++ch) {
          const double* gbase = g.data() + static_cast<std::size_t>(ch) * hw;
          double acc = 0.0;
          for (std::int64_t i = 0; i < hw; ++i) acc += gbase[i];
          gb[static_cast<std::size_t>(ch)] += acc;
        }
      });
    });
  }
  return result;
}

// --- gradient checking --------------------------------------------------------

double check_gradients(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                       double eps) {
  Tensor probe = Tensor::param(x.shape(), x.data());
  Tape tape;
  Tensor analytic_grad;
  {
    TapeScope scope(tape);
    Tensor y = f(probe);
    if (!y.is_scalar()) throw ContractError("check_gradients requires a scalar-valued function");
    GradientMap grads = tape.backward(y);
    analytic_grad = grads.grad(probe);
  }
  double worst = 0.0;
  std::vector<double>& values = probe.raw();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    values[i] = keep + eps;
    const double up = f(probe).value();
    values[i] = keep - eps;
    const double down = f(probe).value();
    values[i] = keep;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = analytic_grad.data()[i];
    const double rel =
        std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace mlso
