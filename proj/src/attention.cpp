#include <cmath>

#include "unispoof/layers.hpp"

namespace unispoof {

namespace {

// [B x n x H*d] -> [B*H x n x d]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2) / heads;
  auto t = permute(reshape(x, {b, n, heads, d}), {0, 2, 1, 3});
  return reshape(t, {b * heads, n, d});
}

}  // namespace

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                               const Tensor<T>& bias, const Tensor<T>& mask) {
  require(q.rank() == 3 && k.rank() == 3 && v.rank() == 3, ErrorCode::kShape, "attention: expected rank-3 q/k/v");
  const std::size_t b = q.dim(0), nq = q.dim(1), width = q.dim(2), nk = k.dim(1);
  require(heads > 0 && width % heads == 0, ErrorCode::kShape,
          "attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(width));
  require(k.shape() == v.shape() && k.dim(0) == b && k.dim(2) == width, ErrorCode::kShape,
          "attention: q " + shape_str(q.shape()) + " incompatible with k " + shape_str(k.shape()) + " / v " +
              shape_str(v.shape()));
  const std::size_t d = width / heads;

  auto scores = scale(bmm(split_heads(q, heads), split_heads(k, heads), true), T(1) / std::sqrt(static_cast<T>(d)));
  if (bias.defined()) {
    scores = add_broadcast(reshape(scores, {b, heads, nq, nk}), bias);
  }
  if (mask.defined()) {
    const std::size_t groups = mask.dim(0);
    require(b % groups == 0, ErrorCode::kShape, "attention: mask groups do not divide the batch");
    scores = add_broadcast(reshape(scores, {b / groups, groups, heads, nq, nk}), mask);
  }
  auto attn = softmax(reshape(scores, {b * heads, nq, nk}));
  auto out = bmm(attn, split_heads(v, heads));
  out = permute(reshape(out, {b, heads, nq, d}), {0, 2, 1, 3});
  return reshape(out, {b, nq, width});
}

template Tensor<float> multi_head_attention(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                            std::size_t, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> multi_head_attention(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                             std::size_t, const Tensor<double>&, const Tensor<double>&);

}  // namespace unispoof
