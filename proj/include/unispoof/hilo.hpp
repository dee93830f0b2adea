#pragma once

// HiLo attention: heads are split into a high-frequency group that attends
// inside non-overlapping s x s windows, and a low-frequency group whose
// queries (every position) attend to keys/values computed from the s x s
// average-pooled map. Each path has its own Q/K/V and output projection;
// the two outputs are concatenated channel-wise, high-frequency first.

#include "unispoof/layers.hpp"

namespace unispoof {

struct HiLoConfig {
  std::size_t channels = 512;
  std::size_t total_heads = 8;
  std::size_t hi_heads = 4;
  std::size_t window = 2;

  std::size_t head_dim() const { return channels / total_heads; }
  std::size_t hi_dim() const { return hi_heads * head_dim(); }
  std::size_t lo_dim() const { return channels - hi_dim(); }

  void validate() const;
  bool operator==(const HiLoConfig&) const = default;
};

template <typename T>
struct HiLoParams {
  HiLoConfig config;
  Linear<T> hi_qkv;   // channels -> 3*hi_dim
  Linear<T> hi_proj;  // hi_dim -> hi_dim
  Linear<T> lo_q;     // channels -> lo_dim
  Linear<T> lo_kv;    // channels -> 2*lo_dim
  Linear<T> lo_proj;  // lo_dim -> lo_dim

  // Projections draw from N(0, 0.02^2), or N(0, 1/fan_in) with fan_in_scale.
  static HiLoParams init(const HiLoConfig& config, Rng& rng, bool fan_in_scale = false);
  ParamList<T> params(const std::string& prefix) const;
};

// [N x h x w x D] -> [N x h x w x D]
template <typename T>
Tensor<T> hilo_attend(const HiLoParams<T>& p, const Tensor<T>& x);

}  // namespace unispoof
