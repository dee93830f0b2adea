#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "unispoof/rng.hpp"
#include "unispoof/tensor.hpp"

namespace unispoof {

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out], undefined for bias-free projections

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct Norm {
  Tensor<T> gamma;
  Tensor<T> beta;

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

// Truncated normal (sigma, cut at 2 sigma) weights; zero bias.
template <typename T>
Linear<T> make_linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng, double sigma = 0.02) {
  std::vector<T> w(in * out);
  for (auto& v : w) v = static_cast<T>(rng.truncated_normal(sigma));
  Linear<T> l{Tensor<T>::from({in, out}, std::move(w), true), Tensor<T>()};
  if (with_bias) l.bias = Tensor<T>::zeros({out}, true);
  return l;
}

template <typename T>
Norm<T> make_norm(std::size_t dim) {
  return Norm<T>{Tensor<T>::full({dim}, T(1), true), Tensor<T>::zeros({dim}, true)};
}

template <typename T>
void add_param(ParamList<T>& out, const std::string& name, const Tensor<T>& t) {
  if (t.defined()) out.push_back({name, t});
}

template <typename T>
void add_params(ParamList<T>& out, const std::string& prefix, const Linear<T>& l) {
  add_param(out, prefix + ".weight", l.weight);
  add_param(out, prefix + ".bias", l.bias);
}

template <typename T>
void add_params(ParamList<T>& out, const std::string& prefix, const Norm<T>& n) {
  add_param(out, prefix + ".gamma", n.gamma);
  add_param(out, prefix + ".beta", n.beta);
}

template <typename T>
std::vector<Tensor<T>> tensors_of(const ParamList<T>& params) {
  std::vector<Tensor<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

template <typename T>
std::size_t count_elements(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

template <typename T>
void set_trainable(const ParamList<T>& params, bool on) {
  for (auto p : params) p.tensor.set_requires_grad(on);
}

// Copies values by name (with numeric conversion). Every destination tensor
// must have a same-shaped source.
template <typename To, typename From>
void copy_params(const ParamList<To>& dst, const ParamList<From>& src) {
  std::unordered_map<std::string, const Tensor<From>*> index;
  for (const auto& p : src) index.emplace(p.name, &p.tensor);
  for (auto p : dst) {
    auto it = index.find(p.name);
    require(it != index.end(), ErrorCode::kInvalidArgument, "copy_params: missing parameter '" + p.name + "'");
    require(it->second->shape() == p.tensor.shape(), ErrorCode::kShape,
            "copy_params: '" + p.name + "' has shape " + shape_str(it->second->shape()) + ", expected " +
                shape_str(p.tensor.shape()));
    auto dst_data = p.tensor.data_mut();
    auto src_data = it->second->data();
    for (std::size_t i = 0; i < dst_data.size(); ++i) dst_data[i] = static_cast<To>(src_data[i]);
  }
}

// Scaled dot-product multi-head attention.
//   q [B x nq x H*d], k/v [B x nk x H*d] -> [B x nq x H*d]
// `bias` (optional) has shape [H x nq x nk] and is shared by every batch row.
// `mask` (optional, constant) has shape [G x H x nq x nk] and repeats over
// B / G; blocked pairs carry a large negative value.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                               const Tensor<T>& bias = Tensor<T>(), const Tensor<T>& mask = Tensor<T>());

}  // namespace unispoof
