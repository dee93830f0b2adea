#include "unispoof/hilo.hpp"

#include <cmath>

#include "unispoof/swin.hpp"

namespace unispoof {

void HiLoConfig::validate() const {
  require(total_heads > 0 && channels % total_heads == 0, ErrorCode::kInvalidArgument,
          "hilo: " + std::to_string(total_heads) + " heads do not divide " + std::to_string(channels) + " channels");
  require(hi_heads <= total_heads, ErrorCode::kInvalidArgument, "hilo: hi_heads exceeds total_heads");
  require(window > 0, ErrorCode::kInvalidArgument, "hilo: window must be positive");
}

template <typename T>
HiLoParams<T> HiLoParams<T>::init(const HiLoConfig& config, Rng& rng, bool fan_in_scale) {
  config.validate();
  HiLoParams<T> p;
  p.config = config;
  const std::size_t d = config.channels, hi = config.hi_dim(), lo = config.lo_dim();
  auto sigma = [&](std::size_t fan_in) { return fan_in_scale ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 0.02; };
  if (hi > 0) {
    p.hi_qkv = make_linear<T>(d, 3 * hi, true, rng, sigma(d));
    p.hi_proj = make_linear<T>(hi, hi, true, rng, sigma(hi));
  }
  if (lo > 0) {
    p.lo_q = make_linear<T>(d, lo, true, rng, sigma(d));
    p.lo_kv = make_linear<T>(d, 2 * lo, true, rng, sigma(d));
    p.lo_proj = make_linear<T>(lo, lo, true, rng, sigma(lo));
  }
  return p;
}

template <typename T>
ParamList<T> HiLoParams<T>::params(const std::string& prefix) const {
  ParamList<T> out;
  if (hi_qkv.weight.defined()) {
    add_params(out, prefix + ".hi.qkv", hi_qkv);
    add_params(out, prefix + ".hi.proj", hi_proj);
  }
  if (lo_q.weight.defined()) {
    add_params(out, prefix + ".lo.q", lo_q);
    add_params(out, prefix + ".lo.kv", lo_kv);
    add_params(out, prefix + ".lo.proj", lo_proj);
  }
  return out;
}

template <typename T>
Tensor<T> hilo_attend(const HiLoParams<T>& p, const Tensor<T>& x) {
  const HiLoConfig& c = p.config;
  c.validate();
  require(x.rank() == 4 && x.dim(3) == c.channels, ErrorCode::kShape,
          "hilo: expected [N x h x w x " + std::to_string(c.channels) + "], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), s = c.window;
  require(h % s == 0 && w % s == 0, ErrorCode::kShape,
          "hilo: window " + std::to_string(s) + " does not divide " + std::to_string(h) + "x" + std::to_string(w));
  const std::size_t hi = c.hi_dim(), lo = c.lo_dim(), lo_heads = c.total_heads - c.hi_heads;

  std::vector<Tensor<T>> parts;
  if (hi > 0) {
    const WindowLayout layout = build_window_layout(h, w, s, false);
    auto qkv = p.hi_qkv(window_partition(x, layout));
    auto out = multi_head_attention(slice_last(qkv, 0, hi), slice_last(qkv, hi, 2 * hi), slice_last(qkv, 2 * hi, 3 * hi),
                                    c.hi_heads);
    parts.push_back(window_reverse(p.hi_proj(out), layout));
  }
  if (lo > 0) {
    auto q = reshape(p.lo_q(x), {n, h * w, lo});
    auto pooled = s > 1 ? pool2d(x, s, PoolMode::kAvg) : x;
    const std::size_t cells = (h / s) * (w / s);
    auto kv = reshape(p.lo_kv(pooled), {n, cells, 2 * lo});
    auto out = multi_head_attention(q, slice_last(kv, 0, lo), slice_last(kv, lo, 2 * lo), lo_heads);
    parts.push_back(reshape(p.lo_proj(out), {n, h, w, lo}));
  }
  return parts.size() == 1 ? parts[0] : concat_last(parts);
}

template struct HiLoParams<float>;
template struct HiLoParams<double>;
template Tensor<float> hilo_attend(const HiLoParams<float>&, const Tensor<float>&);
template Tensor<double> hilo_attend(const HiLoParams<double>&, const Tensor<double>&);

}  // namespace unispoof
