#pragma once

// Model presets, tap selection, analytic parameter counting and the
// partial encoder used to feed the attack-detection head.

#include <optional>
#include <string>
#include <vector>

#include "unispoof/heads.hpp"
#include "unispoof/swin.hpp"

namespace unispoof {

// A third-stage block index, or the normalised output of the last stage.
struct Tap {
  bool final = false;
  std::size_t block = 0;

  static Tap at(std::size_t block) { return Tap{false, block}; }
  static Tap final_stage() { return Tap{true, 0}; }
  // "0".."N" or "final"; throws kInvalidArgument otherwise.
  static Tap parse(const std::string& text);
  std::string str() const;
  void validate(const SwinConfig& swin) const;
  bool operator==(const Tap&) const = default;
};

struct ModelConfig {
  std::string preset;
  SwinConfig swin;
  ArcFaceConfig arcface;  // embedding_dim is shared with the FRM head
  UadHeadConfig uad;      // channels and grid are re-targeted per tap

  void validate() const;
  UadHeadConfig uad_for(const Tap& tap) const;
  bool operator==(const ModelConfig&) const = default;
};

ModelConfig swin_base_paper_model();
ModelConfig swin_desk_model();
// Built-in presets by name; throws kInvalidArgument for unknown names.
ModelConfig builtin_model(const std::string& name);
std::vector<std::string> builtin_model_names();

// [1 x h x w x C] of the features at `tap`.
Shape tap_shape(const SwinConfig& swin, const Tap& tap);

struct ParamRow {
  std::string component;
  std::size_t params = 0;
};

struct ParamTable {
  std::vector<ParamRow> rows;  // backbone sub-rows are prefixed "backbone."
  std::size_t get(const std::string& component) const;
};

// Counts from the configuration alone; no weights are allocated.
ParamTable count_params(const ModelConfig& config, const Tap& tap = Tap::at(0));

// Runs the encoder only as far as `tap` needs.
template <typename T>
Tensor<T> forward_tap(const SwinBackbone<T>& model, const Tensor<T>& image, const Tap& tap);

}  // namespace unispoof
