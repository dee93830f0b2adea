#pragma once

// Hierarchical shifted-window transformer encoder.
//
// Four stages of transformer blocks with 2x2 patch merging in between.
// Within a stage, even-indexed blocks use regular windows and odd-indexed
// blocks use windows cyclically shifted by floor(M/2). When the window
// covers the whole grid the shift is disabled, so late stages at small
// resolutions attend globally.

#include <array>
#include <memory>
#include <vector>

#include "unispoof/layers.hpp"

namespace unispoof {

struct SwinConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 4;
  std::size_t in_channels = 3;
  std::size_t embed_dim = 128;
  std::array<std::size_t, 4> depths{2, 2, 18, 2};
  std::array<std::size_t, 4> heads{4, 8, 16, 32};
  std::size_t window = 7;
  double mlp_ratio = 4.0;
  bool use_relative_bias = true;

  // Throws kInvalidArgument on any violated invariant.
  void validate() const;

  std::size_t stage_dim(std::size_t stage) const { return embed_dim << stage; }
  std::size_t stage_grid(std::size_t stage) const { return (image_size / patch_size) >> stage; }
  // Window clamped to the stage grid.
  std::size_t stage_window(std::size_t stage) const;
  std::size_t hidden_dim(std::size_t stage) const;

  bool operator==(const SwinConfig&) const = default;
};

// The full-scale base configuration and the small configuration used for
// training runs on a laptop CPU.
SwinConfig swin_base_paper_config();
SwinConfig swin_desk_config();

struct WindowLayout {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t window = 0;
  std::size_t shift = 0;
  std::size_t windows_y = 0;
  std::size_t windows_x = 0;
  // Row r = window * M*M + position maps to the source token index
  // (y * width + x) in the unshifted grid.
  IndexMap partition;
  // Inverse of `partition`: token index -> row.
  IndexMap reverse;
  // Region label of each shifted-grid cell, indexed like `partition` rows.
  std::vector<std::uint8_t> region;
  // [windows x M*M x M*M]; 1 where attention is allowed.
  std::vector<std::uint8_t> allowed;

  std::size_t num_windows() const { return windows_y * windows_x; }
  std::size_t tokens_per_window() const { return window * window; }
};

// Requires window <= min(h, w) and window dividing both sides. When
// `shifted` is set and the window is smaller than the grid, tokens are
// rolled by floor(window/2) and attention is masked across pre-shift
// regions.
WindowLayout build_window_layout(std::size_t height, std::size_t width, std::size_t window, bool shifted);

// [N x h x w x C] -> [N*windows x M*M x C]
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, const WindowLayout& layout);
// [N*windows x M*M x C] -> [N x h x w x C]
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, const WindowLayout& layout);

template <typename T>
struct SwinBlock {
  std::size_t dim = 0;
  std::size_t heads = 0;
  std::shared_ptr<const WindowLayout> layout;
  Norm<T> norm1;
  Linear<T> qkv;
  Tensor<T> rel_bias_table;  // [(2M-1)^2 x heads]; undefined when disabled
  IndexMap rel_index;        // table row*heads+head for each (head, i, j)
  Linear<T> proj;
  Norm<T> norm2;
  Linear<T> fc1;
  Linear<T> fc2;
  Tensor<T> mask;  // constant [windows x heads x n x n]; undefined when unshifted
};

template <typename T>
struct PatchMerge {
  Norm<T> norm;        // over 4*dim
  Linear<T> reduction; // 4*dim -> 2*dim, no bias
};

template <typename T>
struct StageFeatures {
  std::vector<Tensor<T>> stage3_blocks;  // every block output of the third stage
  Tensor<T> final;                       // normalised output of the last stage
};

template <typename T>
struct SwinBackbone {
  SwinConfig config;
  Linear<T> patch_proj;  // p*p*C_in -> embed_dim
  Norm<T> patch_norm;
  std::array<std::vector<SwinBlock<T>>, 4> stages;
  std::array<PatchMerge<T>, 3> merges;
  Norm<T> final_norm;

  // Truncated-normal (0.02) projections, zero biases, zero relative-bias
  // tables, unit layer-norm gains. Draw order is fixed, so the same seed
  // always yields the same weights.
  static SwinBackbone init(const SwinConfig& config, Rng& rng);

  ParamList<T> params(const std::string& prefix = "backbone") const;
};

template <typename T>
SwinBlock<T> make_swin_block(std::size_t dim, std::size_t heads, std::size_t hidden,
                             std::shared_ptr<const WindowLayout> layout, bool relative_bias, Rng& rng);

// [N x H x W x C_in] -> [N x H/p x W/p x embed_dim]
template <typename T>
Tensor<T> patch_embed(const SwinBackbone<T>& model, const Tensor<T>& image);

// tokens + attn(LN(tokens)), then + FFN(LN(.)). Shape preserving.
template <typename T>
Tensor<T> swin_block(const SwinBlock<T>& block, const Tensor<T>& tokens);

// [N x h x w x D] -> [N x h/2 x w/2 x 2D]
template <typename T>
Tensor<T> patch_merge(const PatchMerge<T>& merge, const Tensor<T>& tokens);

template <typename T>
StageFeatures<T> encode(const SwinBackbone<T>& model, const Tensor<T>& image);

// Structural shape propagation, without weights.
struct StageShapes {
  Shape embed;                 // after patch embedding (batch 1)
  std::vector<Shape> stage3;   // one per third-stage block
  Shape final;
};
StageShapes infer_stage_shapes(const SwinConfig& config);

}  // namespace unispoof
