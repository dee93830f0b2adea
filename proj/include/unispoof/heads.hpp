#pragma once

#include <span>

#include "unispoof/hilo.hpp"

namespace unispoof {

// ---- face representation and matching ----

template <typename T>
struct FrmHead {
  Linear<T> embed;  // final-stage width -> embedding_dim

  static FrmHead init(std::size_t in_dim, std::size_t embedding_dim, Rng& rng);
  ParamList<T> params(const std::string& prefix = "frm") const;
};

// Global average pool over the final token map, project, L2-normalise.
// [N x h x w x C] -> [N x embedding_dim], unit rows.
template <typename T>
Tensor<T> frm_embed(const FrmHead<T>& head, const Tensor<T>& final_features);

struct ArcFaceConfig {
  std::size_t classes = 10572;
  std::size_t embedding_dim = 1024;
  double scale = 32.0;
  double margin = 0.5;

  void validate() const;
  bool operator==(const ArcFaceConfig&) const = default;
};

template <typename T>
struct ArcFaceHead {
  ArcFaceConfig config;
  Tensor<T> weight;  // [classes x embedding_dim]; rows normalised at use

  // Rows drawn from N(0, 1/embedding_dim) so they start near unit length.
  static ArcFaceHead init(const ArcFaceConfig& config, Rng& rng);
  ParamList<T> params(const std::string& prefix = "arcface") const;
};

// Cosine between each embedding and each normalised class vector, [N x classes].
template <typename T>
Tensor<T> arcface_cosines(const ArcFaceHead<T>& head, const Tensor<T>& embeddings);

// Mean over the batch of -log softmax(s * [cos(theta_y + m), cos(theta_j)...])_y.
template <typename T>
Tensor<T> arcface_loss(const ArcFaceHead<T>& head, const Tensor<T>& embeddings, std::span<const std::size_t> labels);

// ---- unified attack detection ----

struct UadHeadConfig {
  HiLoConfig hilo;
  std::size_t grid = 14;  // spatial side of the tapped feature map
  std::size_t conv1_filters = 64;
  std::size_t conv2_filters = 32;
  std::size_t hidden = 128;

  // Odd grids pool with floor semantics.
  std::size_t flat_dim() const { return (grid / 2) * (grid / 2) * conv2_filters; }
  void validate() const;
  bool operator==(const UadHeadConfig&) const = default;
};

// `base` re-targeted at a tap of the given width and grid. The HiLo window
// shrinks to the largest divisor of the grid not above the base window.
UadHeadConfig uad_config_for_tap(const UadHeadConfig& base, std::size_t channels, std::size_t grid);

template <typename T>
struct UadHead {
  UadHeadConfig config;
  HiLoParams<T> hilo;
  Tensor<T> conv1_weight, conv1_bias;  // 3x3, channels -> conv1_filters
  Tensor<T> conv2_weight, conv2_bias;  // 3x3, conv1_filters -> conv2_filters
  Linear<T> fc;                        // flat_dim -> hidden
  Linear<T> out;                       // hidden -> 1

  static UadHead init(const UadHeadConfig& config, Rng& rng);
  ParamList<T> params(const std::string& prefix = "uad") const;
};

// HiLo -> conv3x3+ReLU -> conv3x3+ReLU -> 2x2 max-pool -> flatten ->
// fc+ReLU -> linear -> sigmoid. Returns [N] bona fide probabilities.
template <typename T>
Tensor<T> uad_forward(const UadHead<T>& head, const Tensor<T>& block_features);

// Mean binary cross-entropy, label 1 = bona fide, 0 = attack.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, std::span<const T> labels);

}  // namespace unispoof
