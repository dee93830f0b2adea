#include "unispoof/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <type_traits>
#include <numeric>
#include <sstream>

#include "unispoof/rng.hpp"

namespace unispoof {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
std::vector<T>& grad_buffer(TensorNode<T>& node) {
  if (node.grad.empty()) node.grad.assign(node.data.size(), T(0));
  return node.grad;
}

// Builds the output node and, when a tape is active and any input needs a
// gradient, records the backward closure produced by make_backward(out).
template <typename T, typename MakeBackward>
Tensor<T> emit(const char* op, Shape shape, std::vector<T> data,
               std::initializer_list<const Tensor<T>*> inputs, MakeBackward&& make_backward) {
  auto out = std::make_shared<TensorNode<T>>();
  out->shape = std::move(shape);
  out->data = std::move(data);
  Tape<T>* tape = Tape<T>::active();
  bool needed = false;
  if (tape != nullptr) {
    for (const Tensor<T>* t : inputs) needed = needed || (t->defined() && t->requires_grad());
  }
  if (needed) {
    out->requires_grad = true;
    out->leaf = false;
    std::vector<NodePtr<T>> nodes;
    for (const Tensor<T>* t : inputs) {
      if (t->defined()) nodes.push_back(t->node());
    }
    tape->record(op, std::move(nodes), out, make_backward(out.get()));
  }
  return Tensor<T>(std::move(out));
}

void check_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) fail(ErrorCode::kShape, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void check_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    fail(ErrorCode::kShape, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

// c[m x n] += a[m x k] * b[k x n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* cr = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ar = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* br = b + j * k;
      T s = T(0);
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      c[i * n + j] += s;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* br = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      T* cr = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- Tensor

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    fail(ErrorCode::kShape, "tensor: shape " + shape_str(shape) + " does not hold " +
                                std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  require(numel() == 1, ErrorCode::kShape, "item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(shape(), node_->data, false);
}

// ---------------------------------------------------------------- Tape

namespace {
template <typename T>
Tape<T>*& active_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}
}  // namespace

template <typename T>
Tape<T>* Tape<T>::active() {
  return active_slot<T>();
}

template <typename T>
Tape<T>::Scope::Scope(Tape* tape) : previous_(active_slot<T>()) {
  active_slot<T>() = tape;
}

template <typename T>
Tape<T>::Scope::~Scope() {
  active_slot<T>() = previous_;
}

template <typename T>
void Tape<T>::record(const char* op, std::vector<NodePtr> inputs, NodePtr output,
                     std::function<void()> backward) {
  require(!consumed_, ErrorCode::kRuntime, std::string("tape: cannot record '") + op + "' after backward");
  entries_.push_back(Entry{op, std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  require(!consumed_, ErrorCode::kRuntime,
          "backward: tape already traversed; run the forward pass again before a second backward");
  require(loss.defined() && loss.numel() == 1, ErrorCode::kShape,
          "backward: loss must be a scalar, got " + (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  const auto on_tape = std::find_if(entries_.begin(), entries_.end(),
                                    [&](const Entry& e) { return e.output == loss.node(); });
  require(on_tape != entries_.end(), ErrorCode::kRuntime,
          "backward: loss is detached from the tape (no recorded operation produced it)");
  consumed_ = true;

  loss.node()->grad.assign(1, T(1));
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
    // Intermediate gradients are dead once propagated.
    if (!it->output->leaf) std::vector<T>().swap(it->output->grad);
  }
  for (const Entry& e : entries_) {
    for (const NodePtr& in : e.inputs) {
      if (in->leaf && in->requires_grad && in->grad.empty()) in->grad.assign(in->data.size(), T(0));
    }
  }
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("add", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto an = a.node(), bn = b.node();
  return emit<T>("add", a.shape(), std::move(out), {&a, &b}, [an, bn](TensorNode<T>* o) {
    return [an, bn, o] {
      for (auto* n : {an.get(), bn.get()}) {
        if (!n->requires_grad) continue;
        auto& g = grad_buffer(*n);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      }
    };
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("sub", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto an = a.node(), bn = b.node();
  return emit<T>("sub", a.shape(), std::move(out), {&a, &b}, [an, bn](TensorNode<T>* o) {
    return [an, bn, o] {
      if (an->requires_grad) {
        auto& g = grad_buffer(*an);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      }
      if (bn->requires_grad) {
        auto& g = grad_buffer(*bn);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o->grad[i];
      }
    };
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("mul", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto an = a.node(), bn = b.node();
  return emit<T>("mul", a.shape(), std::move(out), {&a, &b}, [an, bn](TensorNode<T>* o) {
    return [an, bn, o] {
      if (an->requires_grad) {
        auto& g = grad_buffer(*an);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto& g = grad_buffer(*bn);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * an->data[i];
      }
    };
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  auto an = a.node();
  return emit<T>("scale", a.shape(), std::move(out), {&a}, [an, factor](TensorNode<T>* o) {
    return [an, factor, o] {
      auto& g = grad_buffer(*an);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * factor;
    };
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + value;
  auto an = a.node();
  return emit<T>("add_scalar", a.shape(), std::move(out), {&a}, [an](TensorNode<T>* o) {
    return [an, o] {
      auto& g = grad_buffer(*an);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
    };
  });
}

template <typename T>
Tensor<T> add_broadcast(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  bool trailing = bs.size() <= as.size() && std::equal(bs.rbegin(), bs.rend(), as.rbegin());
  if (!trailing) {
    fail(ErrorCode::kShape, "add_broadcast: " + shape_str(bs) + " is not a trailing shape of " + shape_str(as));
  }
  const std::size_t period = b.numel();
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i % period];
  auto an = a.node(), bn = b.node();
  return emit<T>("add_broadcast", as, std::move(out), {&a, &b}, [an, bn, period](TensorNode<T>* o) {
    return [an, bn, period, o] {
      if (an->requires_grad) {
        auto& g = grad_buffer(*an);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      }
      if (bn->requires_grad) {
        auto& g = grad_buffer(*bn);
        for (std::size_t i = 0; i < o->grad.size(); ++i) g[i % period] += o->grad[i];
      }
    };
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  auto xn = x.node();
  return emit<T>("relu", x.shape(), std::move(out), {&x}, [xn](TensorNode<T>* o) {
    return [xn, o] {
      auto& g = grad_buffer(*xn);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xn->data[i] > T(0)) g[i] += o->grad[i];
      }
    };
  });
}

namespace {
// tanh approximation of GELU
constexpr double kGeluK0 = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluK1 = 0.044715;
}  // namespace

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.data()[i];
    const T u = T(kGeluK0) * (v + T(kGeluK1) * v * v * v);
    out[i] = T(0.5) * v * (T(1) + std::tanh(u));
  }
  auto xn = x.node();
  return emit<T>("gelu", x.shape(), std::move(out), {&x}, [xn](TensorNode<T>* o) {
    return [xn, o] {
      auto& g = grad_buffer(*xn);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = xn->data[i];
        const T u = T(kGeluK0) * (v + T(kGeluK1) * v * v * v);
        const T t = std::tanh(u);
        const T du = T(kGeluK0) * (T(1) + T(3 * kGeluK1) * v * v);
        g[i] += o->grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du);
      }
    };
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.data()[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  auto xn = x.node();
  return emit<T>("sigmoid", x.shape(), std::move(out), {&x}, [xn](TensorNode<T>* o) {
    return [xn, o] {
      auto& g = grad_buffer(*xn);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T y = o->data[i];
        g[i] += o->grad[i] * y * (T(1) - y);
      }
    };
  });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.data()) s += v;
  auto xn = x.node();
  return emit<T>("sum", {1}, {s}, {&x}, [xn](TensorNode<T>* o) {
    return [xn, o] {
      auto& g = grad_buffer(*xn);
      for (T& v : g) v += o->grad[0];
    };
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.numel() > 0, ErrorCode::kShape, "mean: empty tensor");
  T s = T(0);
  for (T v : x.data()) s += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  auto xn = x.node();
  return emit<T>("mean", {1}, {s * inv}, {&x}, [xn, inv](TensorNode<T>* o) {
    return [xn, inv, o] {
      auto& g = grad_buffer(*xn);
      for (T& v : g) v += o->grad[0] * inv;
    };
  });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  check_rank("global_avg_pool", x.shape(), 4);
  const std::size_t n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  const T inv = T(1) / static_cast<T>(hw);
  std::vector<T> out(n * c, T(0));
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t p = 0; p < hw; ++p) {
      const T* src = x.data().data() + (b * hw + p) * c;
      for (std::size_t k = 0; k < c; ++k) out[b * c + k] += src[k];
    }
    for (std::size_t k = 0; k < c; ++k) out[b * c + k] *= inv;
  }
  auto xn = x.node();
  return emit<T>("global_avg_pool", {n, c}, std::move(out), {&x}, [xn, n, hw, c, inv](TensorNode<T>* o) {
    return [xn, n, hw, c, inv, o] {
      auto& g = grad_buffer(*xn);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t p = 0; p < hw; ++p) {
          T* dst = g.data() + (b * hw + p) * c;
          for (std::size_t k = 0; k < c; ++k) dst[k] += o->grad[b * c + k] * inv;
        }
      }
    };
  });
}

// ---------------------------------------------------------------- linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check_rank("matmul", a.shape(), 2);
  check_rank("matmul", b.shape(), 2);
  if (a.dim(1) != b.dim(0)) {
    fail(ErrorCode::kShape, "matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto an = a.node(), bn = b.node();
  return emit<T>("matmul", {m, n}, std::move(out), {&a, &b}, [an, bn, m, k, n](TensorNode<T>* o) {
    return [an, bn, m, k, n, o] {
      if (an->requires_grad) gemm_nt(o->grad.data(), bn->data.data(), grad_buffer(*an).data(), m, n, k);
      if (bn->requires_grad) gemm_tn(an->data.data(), o->grad.data(), grad_buffer(*bn).data(), m, k, n);
    };
  });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  check_rank("matmul_nt", a.shape(), 2);
  check_rank("matmul_nt", b.shape(), 2);
  if (a.dim(1) != b.dim(1)) {
    fail(ErrorCode::kShape, "matmul_nt: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()) + "^T");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<T> out(m * n, T(0));
  gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto an = a.node(), bn = b.node();
  return emit<T>("matmul_nt", {m, n}, std::move(out), {&a, &b}, [an, bn, m, k, n](TensorNode<T>* o) {
    return [an, bn, m, k, n, o] {
      if (an->requires_grad) gemm_nn(o->grad.data(), bn->data.data(), grad_buffer(*an).data(), m, n, k);
      if (bn->requires_grad) gemm_tn(o->grad.data(), an->data.data(), grad_buffer(*bn).data(), m, n, k);
    };
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  check_rank("bmm", a.shape(), 3);
  check_rank("bmm", b.shape(), 3);
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  if (b.dim(0) != batch || bk != k) {
    fail(ErrorCode::kShape, "bmm: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                                (transpose_b ? "^T" : ""));
  }
  std::vector<T> out(batch * m * n, T(0));
  for (std::size_t i = 0; i < batch; ++i) {
    const T* ap = a.data().data() + i * m * k;
    const T* bp = b.data().data() + i * k * n;
    T* op = out.data() + i * m * n;
    if (transpose_b) {
      gemm_nt(ap, bp, op, m, k, n);
    } else {
      gemm_nn(ap, bp, op, m, k, n);
    }
  }
  auto an = a.node(), bn = b.node();
  return emit<T>("bmm", {batch, m, n}, std::move(out), {&a, &b},
                 [an, bn, batch, m, k, n, transpose_b](TensorNode<T>* o) {
    return [an, bn, batch, m, k, n, transpose_b, o] {
      T* ga = an->requires_grad ? grad_buffer(*an).data() : nullptr;
      T* gb = bn->requires_grad ? grad_buffer(*bn).data() : nullptr;
      for (std::size_t i = 0; i < batch; ++i) {
        const T* ap = an->data.data() + i * m * k;
        const T* bp = bn->data.data() + i * k * n;
        const T* gy = o->grad.data() + i * m * n;
        if (transpose_b) {
          // y = a b^T, b is [n x k]
          if (ga) gemm_nn(gy, bp, ga + i * m * k, m, n, k);
          if (gb) gemm_tn(gy, ap, gb + i * k * n, m, n, k);
        } else {
          if (ga) gemm_nt(gy, bp, ga + i * m * k, m, n, k);
          if (gb) gemm_tn(ap, gy, gb + i * k * n, m, k, n);
        }
      }
    };
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  check_rank("linear(weight)", weight.shape(), 2);
  const std::size_t k = weight.dim(0), n = weight.dim(1);
  if (x.rank() == 0 || x.shape().back() != k) {
    fail(ErrorCode::kShape, "linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != n)) {
    fail(ErrorCode::kShape, "linear: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(weight.shape()));
  }
  const std::size_t rows = x.numel() / k;
  std::vector<T> out(rows * n, T(0));
  if (bias.defined()) {
    for (std::size_t r = 0; r < rows; ++r) std::copy(bias.data().begin(), bias.data().end(), out.begin() + r * n);
  }
  gemm_nn(x.data().data(), weight.data().data(), out.data(), rows, k, n);
  Shape shape = x.shape();
  shape.back() = n;
  auto xn = x.node(), wn = weight.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  return emit<T>("linear", std::move(shape), std::move(out), {&x, &weight, &bias},
                 [xn, wn, bn, rows, k, n](TensorNode<T>* o) {
    return [xn, wn, bn, rows, k, n, o] {
      if (xn->requires_grad) gemm_nt(o->grad.data(), wn->data.data(), grad_buffer(*xn).data(), rows, n, k);
      if (wn->requires_grad) gemm_tn(xn->data.data(), o->grad.data(), grad_buffer(*wn).data(), rows, k, n);
      if (bn && bn->requires_grad) {
        auto& gb = grad_buffer(*bn);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) gb[j] += o->grad[r * n + j];
        }
      }
    };
  });
}

// ---------------------------------------------------------------- layout

namespace {

// Element gather: out[i] = x[index[i]]; backward scatters.
template <typename T>
Tensor<T> gather_elements(const char* op, const Tensor<T>& x, std::vector<std::size_t> index, Shape shape) {
  std::vector<T> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = x.data()[index[i]];
  auto xn = x.node();
  auto idx = std::make_shared<const std::vector<std::size_t>>(std::move(index));
  return emit<T>(op, std::move(shape), std::move(out), {&x}, [xn, idx](TensorNode<T>* o) {
    return [xn, idx, o] {
      auto& g = grad_buffer(*xn);
      for (std::size_t i = 0; i < idx->size(); ++i) g[(*idx)[i]] += o->grad[i];
    };
  });
}

}  // namespace

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    fail(ErrorCode::kShape, "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  auto xn = x.node();
  return emit<T>("reshape", std::move(shape), std::move(out), {&x}, [xn](TensorNode<T>* o) {
    return [xn, o] {
      auto& g = grad_buffer(*xn);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
    };
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  const std::size_t rank = in.size();
  std::vector<bool> seen(rank, false);
  bool valid = axes.size() == rank;
  for (std::size_t a : axes) {
    if (!valid || a >= rank || seen[a]) {
      valid = false;
      break;
    }
    seen[a] = true;
  }
  if (!valid) fail(ErrorCode::kShape, "permute: invalid axis order for " + shape_str(in));

  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  Shape out_shape(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in[axes[i]];
    strides[i] = in_strides[axes[i]];
  }
  std::vector<std::size_t> index(x.numel());
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    index[i] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      offset += strides[d];
      if (++counter[d] < out_shape[d]) break;
      offset -= strides[d] * out_shape[d];
      counter[d] = 0;
    }
  }
  return gather_elements("permute", x, std::move(index), std::move(out_shape));
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::size_t rows_in, std::size_t width, const IndexMap& map,
                      Shape out_shape) {
  require(rows_in > 0 && width > 0 && x.numel() % (rows_in * width) == 0, ErrorCode::kShape,
          "gather_rows: " + shape_str(x.shape()) + " is not a stack of " + std::to_string(rows_in) + " rows of " +
              std::to_string(width));
  const std::size_t batch = x.numel() / (rows_in * width);
  const std::size_t rows_out = map->size();
  require(shape_numel(out_shape) == batch * rows_out * width, ErrorCode::kShape,
          "gather_rows: output shape " + shape_str(out_shape) + " does not hold the gathered rows");
  for (std::uint32_t r : *map) {
    require(r < rows_in, ErrorCode::kShape, "gather_rows: row index out of range");
  }
  std::vector<T> out(batch * rows_out * width);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* src = x.data().data() + b * rows_in * width;
    T* dst = out.data() + b * rows_out * width;
    for (std::size_t r = 0; r < rows_out; ++r) {
      std::copy_n(src + (*map)[r] * width, width, dst + r * width);
    }
  }
  auto xn = x.node();
  return emit<T>("gather_rows", std::move(out_shape), std::move(out), {&x},
                 [xn, map, batch, rows_in, rows_out, width](TensorNode<T>* o) {
    return [xn, map, batch, rows_in, rows_out, width, o] {
      auto& g = grad_buffer(*xn);
      for (std::size_t b = 0; b < batch; ++b) {
        T* dst = g.data() + b * rows_in * width;
        const T* src = o->grad.data() + b * rows_out * width;
        for (std::size_t r = 0; r < rows_out; ++r) {
          T* d = dst + (*map)[r] * width;
          const T* s = src + r * width;
          for (std::size_t c = 0; c < width; ++c) d[c] += s[c];
        }
      }
    };
  });
}

template <typename T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), ErrorCode::kShape, "concat_last: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    const std::size_t w = s.back();
    s.pop_back();
    if (s != lead) fail(ErrorCode::kShape, "concat_last: leading shapes differ: " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    widths.push_back(w);
    total += w;
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<T> out(rows * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].data().data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(src + r * widths[k], widths[k], out.data() + r * total + off);
    off += widths[k];
  }
  Shape shape = lead;
  shape.push_back(total);

  // Tape recording needs a fixed input list; record one entry per part.
  auto out_node = std::make_shared<TensorNode<T>>();
  out_node->shape = std::move(shape);
  out_node->data = std::move(out);
  Tape<T>* tape = Tape<T>::active();
  bool needed = false;
  for (const auto& p : parts) needed = needed || p.requires_grad();
  if (tape != nullptr && needed) {
    out_node->requires_grad = true;
    out_node->leaf = false;
    std::vector<NodePtr<T>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    TensorNode<T>* o = out_node.get();
    tape->record("concat_last", nodes, out_node, [nodes, widths, rows, total, o] {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (nodes[k]->requires_grad) {
          auto& g = grad_buffer(*nodes[k]);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += o->grad[r * total + offset + c];
          }
        }
        offset += widths[k];
      }
    });
  }
  return Tensor<T>(std::move(out_node));
}

template <typename T>
Tensor<T> slice_last(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require(x.rank() > 0 && begin < end && end <= x.shape().back(), ErrorCode::kShape,
          "slice_last: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " + shape_str(x.shape()));
  const std::size_t width = x.shape().back(), w = end - begin, rows = x.numel() / width;
  std::vector<T> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.data().data() + r * width + begin, w, out.data() + r * w);
  Shape shape = x.shape();
  shape.back() = w;
  auto xn = x.node();
  return emit<T>("slice_last", std::move(shape), std::move(out), {&x}, [xn, rows, width, begin, w](TensorNode<T>* o) {
    return [xn, rows, width, begin, w, o] {
      auto& g = grad_buffer(*xn);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < w; ++c) g[r * width + begin + c] += o->grad[r * w + c];
      }
    };
  });
}

template <typename T>
Tensor<T> slice_first(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require(x.rank() > 0 && begin < end && end <= x.dim(0), ErrorCode::kShape,
          "slice_first: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " + shape_str(x.shape()));
  const std::size_t inner = x.numel() / x.dim(0);
  std::vector<T> out(x.data().begin() + begin * inner, x.data().begin() + end * inner);
  Shape shape = x.shape();
  shape[0] = end - begin;
  auto xn = x.node();
  const std::size_t off = begin * inner;
  return emit<T>("slice_first", std::move(shape), std::move(out), {&x}, [xn, off](TensorNode<T>* o) {
    return [xn, off, o] {
      auto& g = grad_buffer(*xn);
      for (std::size_t i = 0; i < o->grad.size(); ++i) g[off + i] += o->grad[i];
    };
  });
}

// ---------------------------------------------------------------- neural network

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  require(x.rank() > 0 && x.shape().back() > 0, ErrorCode::kShape, "softmax: empty last axis");
  const std::size_t n = x.shape().back(), rows = x.numel() / n;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data().data() + r * n;
    T* dst = out.data() + r * n;
    const T mx = *std::max_element(src, src + n);
    T s = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      dst[j] = std::exp(src[j] - mx);
      s += dst[j];
    }
    const T inv = T(1) / s;
    for (std::size_t j = 0; j < n; ++j) dst[j] *= inv;
  }
  auto xn = x.node();
  return emit<T>("softmax", x.shape(), std::move(out), {&x}, [xn, rows, n](TensorNode<T>* o) {
    return [xn, rows, n, o] {
      auto& g = grad_buffer(*xn);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = o->data.data() + r * n;
        const T* gy = o->grad.data() + r * n;
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (gy[j] - dot);
      }
    };
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require(x.rank() > 0 && x.shape().back() > 0, ErrorCode::kShape, "layer_norm: empty last axis");
  require(eps > T(0), ErrorCode::kInvalidArgument, "layer_norm: eps must be positive");
  const std::size_t d = x.shape().back(), rows = x.numel() / d;
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    fail(ErrorCode::kShape, "layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                                " do not match last axis of " + shape_str(x.shape()));
  }
  std::vector<T> out(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data().data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += src[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (src[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gamma.data()[j] + beta.data()[j];
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return emit<T>("layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
                 [xn, gn, bn, xhat, rstd, rows, d](TensorNode<T>* o) {
    return [xn, gn, bn, xhat, rstd, rows, d, o] {
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gy = o->grad.data() + r * d;
        const T* h = xhat->data() + r * d;
        if (gn->requires_grad) {
          auto& gg = grad_buffer(*gn);
          for (std::size_t j = 0; j < d; ++j) gg[j] += gy[j] * h[j];
        }
        if (bn->requires_grad) {
          auto& gb = grad_buffer(*bn);
          for (std::size_t j = 0; j < d; ++j) gb[j] += gy[j];
        }
        if (xn->requires_grad) {
          auto& gx = grad_buffer(*xn);
          T mean_g = T(0), mean_gh = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = gy[j] * gn->data[j];
            mean_g += dh;
            mean_gh += dh * h[j];
          }
          mean_g /= static_cast<T>(d);
          mean_gh /= static_cast<T>(d);
          const T rs = (*rstd)[r];
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = gy[j] * gn->data[j];
            gx[r * d + j] += rs * (dh - mean_g - h[j] * mean_gh);
          }
        }
      }
    };
  });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& v, T eps) {
  require(v.rank() > 0 && v.shape().back() > 0, ErrorCode::kShape, "l2_normalize: empty last axis");
  const std::size_t d = v.shape().back(), rows = v.numel() / d;
  std::vector<T> out(v.numel());
  auto norms = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = v.data().data() + r * d;
    T ss = T(0);
    for (std::size_t j = 0; j < d; ++j) ss += src[j] * src[j];
    const T nrm = std::sqrt(ss);
    (*norms)[r] = nrm;
    const T denom = std::max(nrm, eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = src[j] / denom;
  }
  auto vn = v.node();
  return emit<T>("l2_normalize", v.shape(), std::move(out), {&v}, [vn, norms, rows, d, eps](TensorNode<T>* o) {
    return [vn, norms, rows, d, eps, o] {
      auto& g = grad_buffer(*vn);
      for (std::size_t r = 0; r < rows; ++r) {
        const T nrm = (*norms)[r];
        const T* y = o->data.data() + r * d;
        const T* gy = o->grad.data() + r * d;
        if (nrm > eps) {
          T dot = T(0);
          for (std::size_t j = 0; j < d; ++j) dot += gy[j] * y[j];
          for (std::size_t j = 0; j < d; ++j) g[r * d + j] += (gy[j] - y[j] * dot) / nrm;
        } else {
          for (std::size_t j = 0; j < d; ++j) g[r * d + j] += gy[j] / eps;
        }
      }
    };
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  check_rank("conv2d", x.shape(), 4);
  check_rank("conv2d(weight)", weight.shape(), 4);
  require(stride >= 1, ErrorCode::kInvalidArgument, "conv2d: stride must be >= 1");
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t kh = weight.dim(0), kw = weight.dim(1), f = weight.dim(3);
  if (weight.dim(2) != c) {
    fail(ErrorCode::kShape, "conv2d: kernel " + shape_str(weight.shape()) + " expects " + std::to_string(weight.dim(2)) +
                                " input channels, input is " + shape_str(x.shape()));
  }
  if (kh > h + 2 * padding || kw > w + 2 * padding) {
    fail(ErrorCode::kShape, "conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                                " is larger than padded input " + std::to_string(h + 2 * padding) + "x" +
                                std::to_string(w + 2 * padding));
  }
  if (bias.defined() && bias.shape() != Shape{f}) {
    fail(ErrorCode::kShape, "conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(f) + " filters");
  }
  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kw) / stride + 1;
  const T* xd = x.data().data();
  const T* wd = weight.data().data();
  std::vector<T> out(n * oh * ow * f, T(0));
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T* op = out.data() + ((b * oh + oy) * ow + ox) * f;
        if (bias.defined()) std::copy_n(bias.data().data(), f, op);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const T* xp = xd + ((b * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)) * c;
            const T* wp = wd + (ky * kw + kx) * c * f;
            gemm_nn(xp, wp, op, 1, c, f);
          }
        }
      }
    }
  }
  auto xn = x.node(), wn = weight.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  return emit<T>("conv2d", {n, oh, ow, f}, std::move(out), {&x, &weight, &bias},
                 [=](TensorNode<T>* o) {
    return [=] {
      T* gx = xn->requires_grad ? grad_buffer(*xn).data() : nullptr;
      T* gw = wn->requires_grad ? grad_buffer(*wn).data() : nullptr;
      T* gb = (bn && bn->requires_grad) ? grad_buffer(*bn).data() : nullptr;
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const T* gy = o->grad.data() + ((b * oh + oy) * ow + ox) * f;
            if (gb) {
              for (std::size_t k = 0; k < f; ++k) gb[k] += gy[k];
            }
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                const std::size_t xoff = ((b * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)) * c;
                const std::size_t woff = (ky * kw + kx) * c * f;
                if (gx) gemm_nt(gy, wn->data.data() + woff, gx + xoff, 1, f, c);
                if (gw) gemm_tn(xn->data.data() + xoff, gy, gw + woff, 1, c, f);
              }
            }
          }
        }
      }
    };
  });
}

template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, std::size_t window, PoolMode mode) {
  check_rank("pool2d", x.shape(), 4);
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (window == 0 || h % window != 0 || w % window != 0) {
    fail(ErrorCode::kShape, "pool2d: window " + std::to_string(window) + " does not divide " + std::to_string(h) + "x" +
                                std::to_string(w));
  }
  const std::size_t oh = h / window, ow = w / window;
  std::vector<T> out(n * oh * ow * c);
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (mode == PoolMode::kMax) argmax->resize(out.size());
  const T inv = T(1) / static_cast<T>(window * window);
  const T* xd = x.data().data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        for (std::size_t k = 0; k < c; ++k) {
          const std::size_t oi = ((b * oh + oy) * ow + ox) * c + k;
          T acc = T(0);
          std::size_t best = 0;
          bool first = true;
          for (std::size_t ky = 0; ky < window; ++ky) {
            for (std::size_t kx = 0; kx < window; ++kx) {
              const std::size_t ii = ((b * h + oy * window + ky) * w + ox * window + kx) * c + k;
              if (mode == PoolMode::kAvg) {
                acc += xd[ii];
              } else if (first || xd[ii] > acc) {
                // strict '>' keeps the first maximum in scan order
                acc = xd[ii];
                best = ii;
                first = false;
              }
            }
          }
          if (mode == PoolMode::kAvg) {
            out[oi] = acc * inv;
          } else {
            out[oi] = acc;
            (*argmax)[oi] = best;
          }
        }
      }
    }
  }
  auto xn = x.node();
  return emit<T>("pool2d", {n, oh, ow, c}, std::move(out), {&x}, [=](TensorNode<T>* o) {
    return [=] {
      auto& g = grad_buffer(*xn);
      if (mode == PoolMode::kMax) {
        for (std::size_t i = 0; i < o->grad.size(); ++i) g[(*argmax)[i]] += o->grad[i];
        return;
      }
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ox = 0; ox < ow; ++ox) {
            for (std::size_t k = 0; k < c; ++k) {
              const T gy = o->grad[((b * oh + oy) * ow + ox) * c + k] * inv;
              for (std::size_t ky = 0; ky < window; ++ky) {
                for (std::size_t kx = 0; kx < window; ++kx) {
                  g[((b * h + oy * window + ky) * w + ox * window + kx) * c + k] += gy;
                }
              }
            }
          }
        }
      }
    };
  });
}

// ---------------------------------------------------------------- losses

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  check_rank("cross_entropy", logits.shape(), 2);
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  require(labels.size() == n, ErrorCode::kShape, "cross_entropy: " + std::to_string(labels.size()) +
                                                     " labels for " + std::to_string(n) + " rows");
  auto probs = std::make_shared<std::vector<T>>(n * c);
  auto lab = std::make_shared<std::vector<std::size_t>>(labels.begin(), labels.end());
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    require(labels[i] < c, ErrorCode::kInvalidArgument,
            "cross_entropy: label " + std::to_string(labels[i]) + " out of range for " + std::to_string(c) + " classes");
    const T* z = logits.data().data() + i * c;
    const T mx = *std::max_element(z, z + c);
    T s = T(0);
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z[j] - mx);
    const T lse = mx + std::log(s);
    total += lse - z[labels[i]];
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(z[j] - lse);
  }
  auto ln = logits.node();
  return emit<T>("cross_entropy", {1}, {total / static_cast<T>(n)}, {&logits}, [=](TensorNode<T>* o) {
    return [=] {
      auto& g = grad_buffer(*ln);
      const T gs = o->grad[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          g[i * c + j] += gs * ((*probs)[i * c + j] - (j == (*lab)[i] ? T(1) : T(0)));
        }
      }
    };
  });
}

template <typename T>
Tensor<T> arcface_logits(const Tensor<T>& cosines, std::span<const std::size_t> labels, T scale_s, T margin) {
  check_rank("arcface_logits", cosines.shape(), 2);
  require(scale_s > T(0), ErrorCode::kInvalidArgument, "arcface: scale must be positive");
  require(margin >= T(0) && margin < T(std::numbers::pi / 2), ErrorCode::kInvalidArgument,
          "arcface: margin must lie in [0, pi/2)");
  const std::size_t n = cosines.dim(0), c = cosines.dim(1);
  require(labels.size() == n, ErrorCode::kShape, "arcface: label count does not match batch");
  const T eps = std::is_same_v<T, float> ? T(1e-6) : T(1e-7);
  const T lo = T(-1) + eps, hi = T(1) - eps;
  auto dtarget = std::make_shared<std::vector<T>>(n);
  auto lab = std::make_shared<std::vector<std::size_t>>(labels.begin(), labels.end());
  std::vector<T> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    require(labels[i] < c, ErrorCode::kInvalidArgument,
            "arcface: label " + std::to_string(labels[i]) + " out of range for " + std::to_string(c) + " classes");
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = scale_s * cosines.data()[i * c + j];
    const T cy = cosines.data()[i * c + labels[i]];
    if (margin == T(0)) {
      (*dtarget)[i] = scale_s;
      continue;
    }
    const T cc = std::clamp(cy, lo, hi);
    const T theta = std::acos(cc);
    out[i * c + labels[i]] = scale_s * std::cos(theta + margin);
    (*dtarget)[i] = (cy == cc) ? scale_s * std::sin(theta + margin) / std::sin(theta) : T(0);
  }
  auto cn = cosines.node();
  return emit<T>("arcface_logits", {n, c}, std::move(out), {&cosines}, [=](TensorNode<T>* o) {
    return [=] {
      auto& g = grad_buffer(*cn);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const std::size_t k = i * c + j;
          g[k] += o->grad[k] * (j == (*lab)[i] ? (*dtarget)[i] : scale_s);
        }
      }
    };
  });
}

template <typename T>
Tensor<T> bce(const Tensor<T>& pred, std::span<const T> labels, T eps) {
  const std::size_t n = pred.numel();
  require(n > 0 && labels.size() == n, ErrorCode::kShape, "bce: " + std::to_string(labels.size()) +
                                                              " labels for " + std::to_string(n) + " predictions");
  auto lab = std::make_shared<std::vector<T>>(labels.begin(), labels.end());
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T p = std::clamp(pred.data()[i], eps, T(1) - eps);
    const T y = labels[i];
    total -= y * std::log(p) + (T(1) - y) * std::log(T(1) - p);
  }
  auto pn = pred.node();
  return emit<T>("bce", {1}, {total / static_cast<T>(n)}, {&pred}, [=](TensorNode<T>* o) {
    return [=] {
      auto& g = grad_buffer(*pn);
      const T gs = o->grad[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T p = pn->data[i];
        if (p < eps || p > T(1) - eps) continue;
        const T y = (*lab)[i];
        g[i] += gs * (-y / p + (T(1) - y) / (T(1) - p));
      }
    };
  });
}

// ---------------------------------------------------------------- optimisation

template <typename T>
void sgd_step(std::span<Tensor<T>> params, T lr) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i].has_grad(), ErrorCode::kInvalidArgument,
            "sgd_step: parameter " + std::to_string(i) + " " + shape_str(params[i].shape()) + " has no gradient");
  }
  for (auto& p : params) {
    auto data = p.data_mut();
    auto grad = p.grad_mut();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr * grad[i];
    p.zero_grad();
  }
}

GradCheckResult grad_check(const std::function<Tensor<double>(std::span<const Tensor<double>>)>& fn,
                           std::vector<Tensor<double>> inputs, const GradCheckOptions& options) {
  for (auto& in : inputs) {
    in.clear_grad();
    in.set_requires_grad(true);
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    Tape<double>::Scope scope(&tape);
    Tensor<double> out = fn(inputs);
    tape.backward(out);
    for (auto& in : inputs) {
      analytic.emplace_back(in.grad().begin(), in.grad().end());
      in.clear_grad();
    }
  }

  Tape<double>::Scope no_grad(nullptr);
  auto eval = [&] { return fn(inputs).item(); };
  GradCheckResult result;
  Rng rng(options.seed);
  const double h = options.step;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].data_mut();
    std::vector<std::size_t> coords(data.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords != 0 && options.max_coords < coords.size()) {
      for (std::size_t i = 0; i < options.max_coords; ++i) {
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      }
      coords.resize(options.max_coords);
    }
    for (std::size_t j : coords) {
      const double orig = data[j];
      data[j] = orig + h;
      const double fp = eval();
      data[j] = orig - h;
      const double fm = eval();
      data[j] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error || std::isnan(rel)) {
        result.max_rel_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
        result.worst_input = k;
        result.worst_index = j;
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------- instantiation

#define UNISPOOF_INSTANTIATE(T)                                                                           \
  template class Tensor<T>;                                                                               \
  template class Tape<T>;                                                                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> scale(const Tensor<T>&, T);                                                          \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                     \
  template Tensor<T> add_broadcast(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> relu(const Tensor<T>&);                                                              \
  template Tensor<T> gelu(const Tensor<T>&);                                                              \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                           \
  template Tensor<T> sum(const Tensor<T>&);                                                               \
  template Tensor<T> mean(const Tensor<T>&);                                                              \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                                       \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                    \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                          \
  template Tensor<T> gather_rows(const Tensor<T>&, std::size_t, std::size_t, const IndexMap&, Shape);     \
  template Tensor<T> concat_last(const std::vector<Tensor<T>>&);                                          \
  template Tensor<T> slice_last(const Tensor<T>&, std::size_t, std::size_t);                              \
  template Tensor<T> slice_first(const Tensor<T>&, std::size_t, std::size_t);                             \
  template Tensor<T> softmax(const Tensor<T>&);                                                           \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                 \
  template Tensor<T> l2_normalize(const Tensor<T>&, T);                                                   \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> pool2d(const Tensor<T>&, std::size_t, PoolMode);                                     \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::size_t>);                       \
  template Tensor<T> arcface_logits(const Tensor<T>&, std::span<const std::size_t>, T, T);                \
  template Tensor<T> bce(const Tensor<T>&, std::span<const T>, T);                                        \
  template void sgd_step(std::span<Tensor<T>>, T);

UNISPOOF_INSTANTIATE(float)
UNISPOOF_INSTANTIATE(double)

#undef UNISPOOF_INSTANTIATE

}  // namespace unispoof
