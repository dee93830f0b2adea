#include "unispoof/model.hpp"

#include <algorithm>
#include <cmath>

namespace unispoof {

Tap Tap::parse(const std::string& text) {
  if (text == "final") return final_stage();
  const bool digits = !text.empty() && text.size() <= 6 && std::all_of(text.begin(), text.end(), ::isdigit);
  require(digits, ErrorCode::kInvalidArgument, "tap '" + text + "' is neither a block index nor 'final'");
  return at(std::stoul(text));
}

std::string Tap::str() const { return final ? "final" : std::to_string(block); }

void Tap::validate(const SwinConfig& swin) const {
  require(final || block < swin.depths[2], ErrorCode::kInvalidArgument,
          "tap " + std::to_string(block) + " is out of range; the third stage has " + std::to_string(swin.depths[2]) +
              " blocks (0.." + std::to_string(swin.depths[2] - 1) + " or 'final')");
}

void ModelConfig::validate() const {
  swin.validate();
  arcface.validate();
  uad_for(Tap::at(0)).validate();
  uad_for(Tap::final_stage()).validate();
}

UadHeadConfig ModelConfig::uad_for(const Tap& tap) const {
  const Shape s = tap_shape(swin, tap);
  return uad_config_for_tap(uad, s[3], s[1]);
}

ModelConfig swin_base_paper_model() {
  ModelConfig m;
  m.preset = "swin-base-paper";
  m.swin = swin_base_paper_config();
  return m;
}

ModelConfig swin_desk_model() {
  ModelConfig m;
  m.preset = "swin-desk";
  m.swin = swin_desk_config();
  m.arcface.classes = 16;
  m.arcface.embedding_dim = 64;
  // s = 32 over a dozen classes drives training to the degenerate solution
  // where every embedding sits opposite every class vector.
  m.arcface.scale = 8.0;
  m.uad.hilo = HiLoConfig{64, 4, 2, 2};
  m.uad.grid = 4;
  return m;
}

std::vector<std::string> builtin_model_names() { return {"swin-base-paper", "swin-desk"}; }

ModelConfig builtin_model(const std::string& name) {
  if (name == "swin-base-paper") return swin_base_paper_model();
  if (name == "swin-desk") return swin_desk_model();
  fail(ErrorCode::kInvalidArgument, "unknown preset '" + name + "' (known: swin-base-paper, swin-desk)");
}

Shape tap_shape(const SwinConfig& swin, const Tap& tap) {
  tap.validate(swin);
  const std::size_t stage = tap.final ? 3 : 2;
  return {1, swin.stage_grid(stage), swin.stage_grid(stage), swin.stage_dim(stage)};
}

std::size_t ParamTable::get(const std::string& component) const {
  for (const auto& r : rows) {
    if (r.component == component) return r.params;
  }
  fail(ErrorCode::kInvalidArgument, "no parameter row named '" + component + "'");
}

namespace {

std::size_t linear_params(std::size_t in, std::size_t out, bool bias) { return in * out + (bias ? out : 0); }

std::size_t hilo_params(const HiLoConfig& c) {
  std::size_t n = 0;
  if (c.hi_dim() > 0) n += linear_params(c.channels, 3 * c.hi_dim(), true) + linear_params(c.hi_dim(), c.hi_dim(), true);
  if (c.lo_dim() > 0) {
    n += linear_params(c.channels, c.lo_dim(), true) + linear_params(c.channels, 2 * c.lo_dim(), true) +
         linear_params(c.lo_dim(), c.lo_dim(), true);
  }
  return n;
}

}  // namespace

ParamTable count_params(const ModelConfig& config, const Tap& tap) {
  const SwinConfig& s = config.swin;
  s.validate();
  ParamTable t;
  std::size_t backbone = 0;
  auto row = [&](const std::string& name, std::size_t n) {
    t.rows.push_back({"backbone." + name, n});
    backbone += n;
  };
  row("patch_embed", linear_params(s.patch_size * s.patch_size * s.in_channels, s.embed_dim, true) + 2 * s.embed_dim);
  for (std::size_t st = 0; st < 4; ++st) {
    const std::size_t d = s.stage_dim(st), hid = s.hidden_dim(st), m = s.stage_window(st);
    std::size_t block = 2 * d + linear_params(d, 3 * d, true) + linear_params(d, d, true) + 2 * d +
                        linear_params(d, hid, true) + linear_params(hid, d, true);
    if (s.use_relative_bias) block += (2 * m - 1) * (2 * m - 1) * s.heads[st];
    row("stage" + std::to_string(st + 1), block * s.depths[st]);
    if (st < 3) row("merge" + std::to_string(st + 1), 2 * 4 * d + linear_params(4 * d, 2 * d, false));
  }
  row("final_norm", 2 * s.stage_dim(3));
  t.rows.push_back({"backbone", backbone});

  t.rows.push_back({"frm_head", linear_params(s.stage_dim(3), config.arcface.embedding_dim, false)});
  t.rows.push_back({"arcface_head", config.arcface.classes * config.arcface.embedding_dim});

  const UadHeadConfig u = config.uad_for(tap);
  const std::size_t c = u.hilo.channels;
  t.rows.push_back({"uad_head", hilo_params(u.hilo) + 9 * c * u.conv1_filters + u.conv1_filters +
                                    9 * u.conv1_filters * u.conv2_filters + u.conv2_filters +
                                    linear_params(u.flat_dim(), u.hidden, true) + linear_params(u.hidden, 1, true)});
  t.rows.push_back({"total", backbone + t.get("frm_head") + t.get("arcface_head") + t.get("uad_head")});
  return t;
}

template <typename T>
Tensor<T> forward_tap(const SwinBackbone<T>& model, const Tensor<T>& image, const Tap& tap) {
  const SwinConfig& c = model.config;
  tap.validate(c);
  if (tap.final) return encode(model, image).final;
  require(image.rank() == 4 && image.dim(1) == c.image_size && image.dim(2) == c.image_size, ErrorCode::kShape,
          "forward_tap: image " + shape_str(image.shape()) + " does not match configured size " +
              std::to_string(c.image_size));
  auto x = patch_embed(model, image);
  for (std::size_t s = 0; s < 2; ++s) {
    for (const auto& block : model.stages[s]) x = swin_block(block, x);
    x = patch_merge(model.merges[s], x);
  }
  for (std::size_t b = 0; b <= tap.block; ++b) x = swin_block(model.stages[2][b], x);
  return x;
}

template Tensor<float> forward_tap(const SwinBackbone<float>&, const Tensor<float>&, const Tap&);
template Tensor<double> forward_tap(const SwinBackbone<double>&, const Tensor<double>&, const Tap&);

}  // namespace unispoof
