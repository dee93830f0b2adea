#pragma once

// Reference shifted-window block built from the straight-loop oracles.

#include <functional>
#include <memory>

#include "oracles.hpp"
#include "unispoof/swin.hpp"

namespace oracle {

using namespace unispoof;

template <typename T>
void randomize_block(SwinBlock<T>& b, Rng& rng) {
  oracle::randomize(b.norm1.gamma, rng, 0.5, 1.5);
  oracle::randomize(b.norm1.beta, rng);
  oracle::randomize(b.qkv.weight, rng);
  oracle::randomize(b.qkv.bias, rng);
  oracle::randomize(b.rel_bias_table, rng, -1.0, 1.0);
  oracle::randomize(b.proj.weight, rng);
  oracle::randomize(b.proj.bias, rng);
  oracle::randomize(b.norm2.gamma, rng, 0.5, 1.5);
  oracle::randomize(b.norm2.beta, rng);
  oracle::randomize(b.fc1.weight, rng);
  oracle::randomize(b.fc1.bias, rng);
  oracle::randomize(b.fc2.weight, rng);
  oracle::randomize(b.fc2.bias, rng);
}

inline Mat finish_block(const SwinBlock<double>& b, const Mat& x, const Mat& attn, std::size_t T);

// Reference block for one sample, tokens in original raster order. Window
// membership and relative positions are taken in the rolled grid; with a
// shift, two tokens may attend only if both or neither wrapped around each
// axis during the roll.
inline Mat block_oracle(const SwinBlock<double>& b, const Mat& x, std::size_t h, std::size_t w, Mat* weights = nullptr) {
  const std::size_t D = b.dim, H = b.heads, d = D / H, M = b.layout->window, shift = b.layout->shift, T = h * w;
  auto ry = [&](std::size_t t) { return (t / w + h - shift) % h; };
  auto rx = [&](std::size_t t) { return (t % w + w - shift) % w; };
  auto allowed = [&](std::size_t i, std::size_t j) {
    if (ry(i) / M != ry(j) / M || rx(i) / M != rx(j) / M) return false;
    if (shift == 0) return true;
    return ((i / w) < shift) == ((j / w) < shift) && ((i % w) < shift) == ((j % w) < shift);
  };
  std::function<double(std::size_t, std::size_t, std::size_t)> bias;
  if (b.rel_bias_table.defined()) {
    const Mat table = values(b.rel_bias_table);
    bias = [&, table](std::size_t hh, std::size_t i, std::size_t j) {
      const std::size_t dy = ry(i) % M + M - 1 - ry(j) % M;
      const std::size_t dx = rx(i) % M + M - 1 - rx(j) % M;
      return table[(dy * (2 * M - 1) + dx) * H + hh];
    };
  }
  const Mat a = oracle::layer_norm(x, T, D, values(b.norm1.gamma), values(b.norm1.beta));
  const Mat qkv_b = values(b.qkv.bias);
  const Mat qkv = oracle::linear(a, T, D, values(b.qkv.weight), 3 * D, &qkv_b);
  const Mat attn = oracle::attention(oracle::columns(qkv, T, 3 * D, 0, D), oracle::columns(qkv, T, 3 * D, D, 2 * D),
                                     oracle::columns(qkv, T, 3 * D, 2 * D, 3 * D), T, T, H, d, allowed, bias, weights);
  return finish_block(b, x, attn, T);
}

// Output projection, residual and FFN applied to attention output `attn`.
inline Mat finish_block(const SwinBlock<double>& b, const Mat& x, const Mat& attn, std::size_t T) {
  const std::size_t D = b.dim, hidden = b.fc1.weight.dim(1);
  const Mat pb = values(b.proj.bias);
  const Mat proj = oracle::linear(attn, T, D, values(b.proj.weight), D, &pb);
  Mat x1(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) x1[i] = x[i] + proj[i];
  const Mat a2 = oracle::layer_norm(x1, T, D, values(b.norm2.gamma), values(b.norm2.beta));
  const Mat b1 = values(b.fc1.bias), b2 = values(b.fc2.bias);
  Mat f = oracle::linear(a2, T, D, values(b.fc1.weight), hidden, &b1);
  for (auto& v : f) v = oracle::gelu(v);
  const Mat f2 = oracle::linear(f, T, hidden, values(b.fc2.weight), D, &b2);
  for (std::size_t i = 0; i < x1.size(); ++i) x1[i] += f2[i];
  return x1;
}

inline SwinBlock<double> random_block(std::size_t h, std::size_t w, std::size_t M, bool shifted, std::size_t dim,
                               std::size_t heads, bool rel_bias, std::uint64_t seed) {
  Rng rng(seed);
  auto layout = std::make_shared<const WindowLayout>(build_window_layout(h, w, M, shifted));
  auto b = make_swin_block<double>(dim, heads, 2 * dim, layout, rel_bias, rng);
  randomize_block(b, rng);
  return b;
}

}  // namespace oracle
