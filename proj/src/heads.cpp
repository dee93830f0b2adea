#include "unispoof/heads.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

namespace unispoof {

namespace {

template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.truncated_normal(sigma));
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}

}  // namespace

template <typename T>
FrmHead<T> FrmHead<T>::init(std::size_t in_dim, std::size_t embedding_dim, Rng& rng) {
  return FrmHead<T>{make_linear<T>(in_dim, embedding_dim, false, rng)};
}

template <typename T>
ParamList<T> FrmHead<T>::params(const std::string& prefix) const {
  ParamList<T> out;
  add_params(out, prefix + ".embed", embed);
  return out;
}

template <typename T>
Tensor<T> frm_embed(const FrmHead<T>& head, const Tensor<T>& final_features) {
  require(final_features.rank() == 4, ErrorCode::kShape,
          "frm_embed: expected [N x h x w x C], got " + shape_str(final_features.shape()));
  return l2_normalize(head.embed(global_avg_pool(final_features)));
}

void ArcFaceConfig::validate() const {
  require(classes >= 1, ErrorCode::kInvalidArgument, "arcface: need at least one class");
  require(embedding_dim >= 1, ErrorCode::kInvalidArgument, "arcface: embedding_dim must be positive");
  require(scale > 0, ErrorCode::kInvalidArgument, "arcface: scale must be positive");
  require(margin >= 0 && margin < std::numbers::pi / 2, ErrorCode::kInvalidArgument, "arcface: margin must lie in [0, pi/2)");
}

template <typename T>
ArcFaceHead<T> ArcFaceHead<T>::init(const ArcFaceConfig& config, Rng& rng) {
  config.validate();
  const double sigma = 1.0 / std::sqrt(static_cast<double>(config.embedding_dim));
  std::vector<T> w(config.classes * config.embedding_dim);
  for (auto& v : w) v = static_cast<T>(rng.normal() * sigma);
  return ArcFaceHead<T>{config, Tensor<T>::from({config.classes, config.embedding_dim}, std::move(w), true)};
}

template <typename T>
ParamList<T> ArcFaceHead<T>::params(const std::string& prefix) const {
  ParamList<T> out;
  add_param(out, prefix + ".weight", weight);
  return out;
}

template <typename T>
Tensor<T> arcface_cosines(const ArcFaceHead<T>& head, const Tensor<T>& embeddings) {
  return matmul_nt(embeddings, l2_normalize(head.weight));
}

template <typename T>
Tensor<T> arcface_loss(const ArcFaceHead<T>& head, const Tensor<T>& embeddings, std::span<const std::size_t> labels) {
  head.config.validate();
  auto logits = arcface_logits(arcface_cosines(head, embeddings), labels, static_cast<T>(head.config.scale),
                               static_cast<T>(head.config.margin));
  return cross_entropy(logits, labels);
}

void UadHeadConfig::validate() const {
  hilo.validate();
  require(grid >= 2, ErrorCode::kInvalidArgument,
          "uad: tapped grid " + std::to_string(grid) + " is too small for the 2x2 max-pool");
  require(grid % hilo.window == 0, ErrorCode::kInvalidArgument,
          "uad: HiLo window " + std::to_string(hilo.window) + " does not divide grid " + std::to_string(grid));
  require(conv1_filters > 0 && conv2_filters > 0 && hidden > 0, ErrorCode::kInvalidArgument, "uad: layer widths must be positive");
}

UadHeadConfig uad_config_for_tap(const UadHeadConfig& base, std::size_t channels, std::size_t grid) {
  UadHeadConfig c = base;
  c.hilo.channels = channels;
  c.grid = grid;
  c.hilo.window = std::max<std::size_t>(1, std::min(base.hilo.window, grid));
  while (grid % c.hilo.window != 0) --c.hilo.window;
  return c;
}

template <typename T>
UadHead<T> UadHead<T>::init(const UadHeadConfig& config, Rng& rng) {
  config.validate();
  UadHead<T> h;
  h.config = config;
  h.hilo = HiLoParams<T>::init(config.hilo, rng, true);
  const std::size_t c = config.hilo.channels;
  h.conv1_weight = he_normal<T>({3, 3, c, config.conv1_filters}, 9 * c, rng);
  h.conv1_bias = Tensor<T>::zeros({config.conv1_filters}, true);
  h.conv2_weight = he_normal<T>({3, 3, config.conv1_filters, config.conv2_filters}, 9 * config.conv1_filters, rng);
  h.conv2_bias = Tensor<T>::zeros({config.conv2_filters}, true);
  h.fc = Linear<T>{he_normal<T>({config.flat_dim(), config.hidden}, config.flat_dim(), rng),
                   Tensor<T>::zeros({config.hidden}, true)};
  h.out = make_linear<T>(config.hidden, 1, true, rng);
  return h;
}

template <typename T>
ParamList<T> UadHead<T>::params(const std::string& prefix) const {
  ParamList<T> out = hilo.params(prefix + ".hilo");
  add_param(out, prefix + ".conv1.weight", conv1_weight);
  add_param(out, prefix + ".conv1.bias", conv1_bias);
  add_param(out, prefix + ".conv2.weight", conv2_weight);
  add_param(out, prefix + ".conv2.bias", conv2_bias);
  add_params(out, prefix + ".fc", fc);
  add_params(out, prefix + ".out", this->out);
  return out;
}

template <typename T>
Tensor<T> uad_forward(const UadHead<T>& head, const Tensor<T>& block_features) {
  const UadHeadConfig& c = head.config;
  require(block_features.rank() == 4 && block_features.dim(1) == c.grid && block_features.dim(2) == c.grid &&
              block_features.dim(3) == c.hilo.channels,
          ErrorCode::kShape, "uad_forward: features " + shape_str(block_features.shape()) + " do not match a " +
                                 std::to_string(c.grid) + "x" + std::to_string(c.grid) + "x" +
                                 std::to_string(c.hilo.channels) + " tap");
  const std::size_t n = block_features.dim(0);
  auto x = hilo_attend(head.hilo, block_features);
  x = relu(conv2d(x, head.conv1_weight, head.conv1_bias, 1, 1));
  x = relu(conv2d(x, head.conv2_weight, head.conv2_bias, 1, 1));
  if (c.grid % 2 != 0) {
    // floor pooling: the last row and column are dropped
    const std::size_t e = c.grid - 1;
    auto rows = std::make_shared<std::vector<std::uint32_t>>();
    for (std::size_t y = 0; y < e; ++y) {
      for (std::size_t xx = 0; xx < e; ++xx) rows->push_back(static_cast<std::uint32_t>(y * c.grid + xx));
    }
    x = gather_rows(x, c.grid * c.grid, c.conv2_filters, IndexMap(rows), {n, e, e, c.conv2_filters});
  }
  x = pool2d(x, 2, PoolMode::kMax);
  x = relu(head.fc(reshape(x, {n, c.flat_dim()})));
  return reshape(sigmoid(head.out(x)), {n});
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, std::span<const T> labels) {
  return bce(pred, labels, T(1e-7));
}

#define UNISPOOF_INSTANTIATE(T)                                                                   \
  template struct FrmHead<T>;                                                                     \
  template struct ArcFaceHead<T>;                                                                 \
  template struct UadHead<T>;                                                                     \
  template Tensor<T> frm_embed(const FrmHead<T>&, const Tensor<T>&);                              \
  template Tensor<T> arcface_cosines(const ArcFaceHead<T>&, const Tensor<T>&);                    \
  template Tensor<T> arcface_loss(const ArcFaceHead<T>&, const Tensor<T>&, std::span<const std::size_t>); \
  template Tensor<T> uad_forward(const UadHead<T>&, const Tensor<T>&);                            \
  template Tensor<T> bce_loss(const Tensor<T>&, std::span<const T>);

UNISPOOF_INSTANTIATE(float)
UNISPOOF_INSTANTIATE(double)

#undef UNISPOOF_INSTANTIATE

}  // namespace unispoof
