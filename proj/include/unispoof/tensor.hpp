#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// Image and feature-map tensors are laid out N x H x W x C everywhere.
// Operations record themselves on the thread's active Tape when one is
// installed (Tape::Scope) and at least one input requires a gradient;
// otherwise they run as plain forward computations.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "unispoof/error.hpp"

namespace unispoof {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  bool leaf = true;
};

template <typename T>
class Tensor {
 public:
  using Node = TensorNode<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<T> data_mut() { return node_->data; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool is_leaf() const { return node_->leaf; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() { return node_->grad; }
  void zero_grad();
  void clear_grad() { node_->grad.clear(); }

  // Fresh leaf holding a copy of the data.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Ordered record of differentiable operations. Entries are appended in
// execution order, so the reverse of the tape is a valid topological order.
template <typename T>
class Tape {
 public:
  using NodePtr = std::shared_ptr<TensorNode<T>>;

  struct Entry {
    const char* op;
    std::vector<NodePtr> inputs;
    NodePtr output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const char* op, std::vector<NodePtr> inputs, NodePtr output,
              std::function<void()> backward);

  // Accumulates d(loss)/d(leaf) into every requires_grad leaf seen on the
  // tape. Leaves that do not reach the loss get a zero gradient. A tape can
  // be traversed once; a second call throws.
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  static Tape* active();

  // Installs a tape (or nullptr for no recording) for the current thread.
  class Scope {
   public:
    explicit Scope(Tape* tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

 private:
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

// Row-gather index shared between calls (window layouts cache these).
using IndexMap = std::shared_ptr<const std::vector<std::uint32_t>>;

enum class PoolMode { kMax, kAvg };

// ---- elementwise ----
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T value);
// `b` must match the trailing dimensions of `a`; it is repeated over the rest.
template <typename T> Tensor<T> add_broadcast(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);

// ---- reductions ----
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
// [N x H x W x C] -> [N x C]
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);

// ---- linear algebra ----
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a [m x k] times b[n x k] transposed.
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
// Batched: a [B x m x k], b [B x k x n] (or [B x n x k] when transpose_b).
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);
// x [... x k] times weight [k x n] plus optional bias [n].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// ---- layout ----
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
// Views x as [B x rows_in x width] and gathers rows: out[b, r] = x[b, map[r]].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::size_t rows_in, std::size_t width,
                      const IndexMap& map, Shape out_shape);
template <typename T> Tensor<T> concat_last(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_last(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> slice_first(const Tensor<T>& x, std::size_t begin, std::size_t end);

// ---- neural network ----
template <typename T> Tensor<T> softmax(const Tensor<T>& x);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));
template <typename T> Tensor<T> l2_normalize(const Tensor<T>& v, T eps = T(1e-12));
// x [N x H x W x C], weight [kh x kw x C x F], bias [F] (may be undefined).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding);
template <typename T> Tensor<T> pool2d(const Tensor<T>& x, std::size_t window, PoolMode mode);

// ---- losses ----
// Mean softmax cross-entropy of logits [N x C].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels);
// Additive angular margin on the target cosine: s*cos(acos(c_y) + m) for the
// target column, s*c_j elsewhere. Cosines are clamped to [-1+eps, 1-eps].
template <typename T>
Tensor<T> arcface_logits(const Tensor<T>& cosines, std::span<const std::size_t> labels,
                         T scale, T margin);
// Mean binary cross-entropy; predictions clamped to [eps, 1-eps].
template <typename T>
Tensor<T> bce(const Tensor<T>& pred, std::span<const T> labels, T eps = T(1e-7));

// ---- optimisation ----
// p <- p - lr * grad(p), then zero the gradients.
template <typename T> void sgd_step(std::span<Tensor<T>> params, T lr);

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates checked per input; 0 = all. Sampled with `seed` otherwise.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-4;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Central finite differences against the tape gradient. `fn` must return a
// scalar. Inputs are treated as leaves that require gradients.
GradCheckResult grad_check(
    const std::function<Tensor<double>(std::span<const Tensor<double>>)>& fn,
    std::vector<Tensor<double>> inputs, const GradCheckOptions& options = {});

}  // namespace unispoof
