#include "unispoof/swin.hpp"

#include <algorithm>
#include <cmath>

namespace unispoof {

namespace {

constexpr double kMaskValue = -1e9;

void check_config(bool ok, const std::string& what) {
  require(ok, ErrorCode::kInvalidArgument, "swin config: " + what);
}

}  // namespace

void SwinConfig::validate() const {
  check_config(patch_size > 0 && image_size > 0, "image_size and patch_size must be positive");
  check_config(image_size % patch_size == 0,
               "image_size " + std::to_string(image_size) + " is not divisible by patch_size " + std::to_string(patch_size));
  const std::size_t grid = image_size / patch_size;
  check_config(grid % 8 == 0, "token grid " + std::to_string(grid) + " must be divisible by 8 for three merges");
  check_config(in_channels > 0 && embed_dim > 0, "channel counts must be positive");
  check_config(window > 0, "window must be positive");
  check_config(mlp_ratio > 0, "mlp_ratio must be positive");
  for (std::size_t s = 0; s < 4; ++s) {
    check_config(depths[s] > 0, "stage " + std::to_string(s) + " needs at least one block");
    check_config(heads[s] > 0 && stage_dim(s) % heads[s] == 0,
                 "heads " + std::to_string(heads[s]) + " do not divide stage " + std::to_string(s) + " width " +
                     std::to_string(stage_dim(s)));
    check_config(stage_grid(s) % stage_window(s) == 0,
                 "window " + std::to_string(stage_window(s)) + " does not divide stage " + std::to_string(s) +
                     " grid " + std::to_string(stage_grid(s)));
    check_config(hidden_dim(s) > 0, "FFN hidden width must be positive");
  }
}

std::size_t SwinConfig::stage_window(std::size_t stage) const {
  return std::min(window, stage_grid(stage));
}

std::size_t SwinConfig::hidden_dim(std::size_t stage) const {
  return static_cast<std::size_t>(std::llround(static_cast<double>(stage_dim(stage)) * mlp_ratio));
}

SwinConfig swin_base_paper_config() {
  return SwinConfig{};
}

SwinConfig swin_desk_config() {
  SwinConfig c;
  c.image_size = 64;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.depths = {2, 2, 6, 2};
  c.heads = {1, 2, 4, 8};
  c.window = 4;
  return c;
}

// ---------------------------------------------------------------- windows

WindowLayout build_window_layout(std::size_t height, std::size_t width, std::size_t window, bool shifted) {
  require(window > 0, ErrorCode::kInvalidArgument, "window layout: window must be positive");
  require(window <= std::min(height, width), ErrorCode::kInvalidArgument,
          "window layout: window " + std::to_string(window) + " exceeds grid " + std::to_string(height) + "x" +
              std::to_string(width));
  require(height % window == 0 && width % window == 0, ErrorCode::kInvalidArgument,
          "window layout: window " + std::to_string(window) + " does not divide grid " + std::to_string(height) + "x" +
              std::to_string(width));
  WindowLayout L;
  L.height = height;
  L.width = width;
  L.window = window;
  L.shift = (shifted && window < std::min(height, width)) ? window / 2 : 0;
  L.windows_y = height / window;
  L.windows_x = width / window;

  const std::size_t n = window * window;
  const std::size_t tokens = height * width;
  std::vector<std::uint32_t> part(tokens), rev(tokens);
  L.region.resize(tokens);
  auto band = [&](std::size_t coord, std::size_t extent) -> std::uint8_t {
    if (L.shift == 0) return 0;
    if (coord < extent - window) return 0;
    if (coord < extent - L.shift) return 1;
    return 2;
  };
  for (std::size_t wy = 0; wy < L.windows_y; ++wy) {
    for (std::size_t wx = 0; wx < L.windows_x; ++wx) {
      for (std::size_t py = 0; py < window; ++py) {
        for (std::size_t px = 0; px < window; ++px) {
          const std::size_t row = (wy * L.windows_x + wx) * n + py * window + px;
          const std::size_t sy = wy * window + py, sx = wx * window + px;  // rolled-grid cell
          const std::size_t oy = (sy + L.shift) % height, ox = (sx + L.shift) % width;
          const std::size_t token = oy * width + ox;
          part[row] = static_cast<std::uint32_t>(token);
          rev[token] = static_cast<std::uint32_t>(row);
          L.region[row] = static_cast<std::uint8_t>(band(sy, height) * 3 + band(sx, width));
        }
      }
    }
  }
  L.allowed.assign(L.num_windows() * n * n, 1);
  if (L.shift > 0) {
    for (std::size_t wi = 0; wi < L.num_windows(); ++wi) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          L.allowed[(wi * n + i) * n + j] = L.region[wi * n + i] == L.region[wi * n + j];
        }
      }
    }
  }
  L.partition = std::make_shared<const std::vector<std::uint32_t>>(std::move(part));
  L.reverse = std::make_shared<const std::vector<std::uint32_t>>(std::move(rev));
  return L;
}

template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, const WindowLayout& layout) {
  require(x.rank() == 4 && x.dim(1) == layout.height && x.dim(2) == layout.width, ErrorCode::kShape,
          "window_partition: input " + shape_str(x.shape()) + " does not match a " + std::to_string(layout.height) +
              "x" + std::to_string(layout.width) + " layout");
  const std::size_t n = x.dim(0), c = x.dim(3);
  return gather_rows(x, layout.height * layout.width, c, layout.partition,
                     {n * layout.num_windows(), layout.tokens_per_window(), c});
}

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, const WindowLayout& layout) {
  require(windows.rank() == 3 && windows.dim(1) == layout.tokens_per_window() &&
              windows.dim(0) % layout.num_windows() == 0,
          ErrorCode::kShape, "window_reverse: windows " + shape_str(windows.shape()) + " do not match the layout");
  const std::size_t n = windows.dim(0) / layout.num_windows(), c = windows.dim(2);
  return gather_rows(windows, layout.height * layout.width, c, layout.reverse, {n, layout.height, layout.width, c});
}

// ---------------------------------------------------------------- blocks

template <typename T>
SwinBlock<T> make_swin_block(std::size_t dim, std::size_t heads, std::size_t hidden,
                             std::shared_ptr<const WindowLayout> layout, bool relative_bias, Rng& rng) {
  require(heads > 0 && dim % heads == 0, ErrorCode::kShape,
          "swin block: " + std::to_string(heads) + " heads do not divide width " + std::to_string(dim));
  SwinBlock<T> b;
  b.dim = dim;
  b.heads = heads;
  b.layout = std::move(layout);
  const std::size_t m = b.layout->window;
  const std::size_t n = m * m;
  b.norm1 = make_norm<T>(dim);
  b.qkv = make_linear<T>(dim, 3 * dim, true, rng);
  if (relative_bias) {
    const std::size_t span = 2 * m - 1;
    b.rel_bias_table = Tensor<T>::zeros({span * span, heads}, true);
    std::vector<std::uint32_t> index(heads * n * n);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t dy = i / m + m - 1 - j / m;
          const std::size_t dx = i % m + m - 1 - j % m;
          index[(h * n + i) * n + j] = static_cast<std::uint32_t>((dy * span + dx) * heads + h);
        }
      }
    }
    b.rel_index = std::make_shared<const std::vector<std::uint32_t>>(std::move(index));
  }
  b.proj = make_linear<T>(dim, dim, true, rng);
  b.norm2 = make_norm<T>(dim);
  b.fc1 = make_linear<T>(dim, hidden, true, rng);
  b.fc2 = make_linear<T>(hidden, dim, true, rng);
  if (b.layout->shift > 0) {
    const std::size_t windows = b.layout->num_windows();
    std::vector<T> mask(windows * heads * n * n);
    for (std::size_t w = 0; w < windows; ++w) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t k = 0; k < n * n; ++k) {
          mask[(w * heads + h) * n * n + k] = b.layout->allowed[w * n * n + k] ? T(0) : T(kMaskValue);
        }
      }
    }
    b.mask = Tensor<T>::from({windows, heads, n, n}, std::move(mask));
  }
  return b;
}

template <typename T>
Tensor<T> swin_block(const SwinBlock<T>& block, const Tensor<T>& tokens) {
  const WindowLayout& L = *block.layout;
  require(tokens.rank() == 4 && tokens.dim(1) == L.height && tokens.dim(2) == L.width && tokens.dim(3) == block.dim,
          ErrorCode::kShape, "swin_block: tokens " + shape_str(tokens.shape()) + " do not match block (" +
                                 std::to_string(L.height) + "x" + std::to_string(L.width) + "x" +
                                 std::to_string(block.dim) + ")");
  require(block.dim % block.heads == 0, ErrorCode::kShape, "swin_block: heads do not divide width");
  const std::size_t d = block.dim, n = L.tokens_per_window();

  auto windows = window_partition(block.norm1(tokens), L);
  auto qkv = block.qkv(windows);
  Tensor<T> bias;
  if (block.rel_bias_table.defined()) {
    bias = gather_rows(block.rel_bias_table, block.rel_bias_table.numel(), 1, block.rel_index, {block.heads, n, n});
  }
  auto attn = multi_head_attention(slice_last(qkv, 0, d), slice_last(qkv, d, 2 * d), slice_last(qkv, 2 * d, 3 * d),
                                   block.heads, bias, block.mask);
  auto x = add(tokens, window_reverse(block.proj(attn), L));
  return add(x, block.fc2(gelu(block.fc1(block.norm2(x)))));
}

template <typename T>
Tensor<T> patch_merge(const PatchMerge<T>& merge, const Tensor<T>& tokens) {
  require(tokens.rank() == 4, ErrorCode::kShape, "patch_merge: expected [N x h x w x D], got " + shape_str(tokens.shape()));
  const std::size_t n = tokens.dim(0), h = tokens.dim(1), w = tokens.dim(2), d = tokens.dim(3);
  require(h % 2 == 0 && w % 2 == 0, ErrorCode::kShape,
          "patch_merge: grid " + std::to_string(h) + "x" + std::to_string(w) + " is not even");
  std::vector<std::uint32_t> map;
  map.reserve(h * w);
  // neighbourhood order (row, col): (0,0), (1,0), (0,1), (1,1)
  static constexpr std::size_t kOffsets[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  for (std::size_t i = 0; i < h / 2; ++i) {
    for (std::size_t j = 0; j < w / 2; ++j) {
      for (const auto& o : kOffsets) map.push_back(static_cast<std::uint32_t>((2 * i + o[0]) * w + 2 * j + o[1]));
    }
  }
  auto grouped = gather_rows(tokens, h * w, d, std::make_shared<const std::vector<std::uint32_t>>(std::move(map)),
                             {n, h / 2, w / 2, 4 * d});
  return merge.reduction(merge.norm(grouped));
}

template <typename T>
Tensor<T> patch_embed(const SwinBackbone<T>& model, const Tensor<T>& image) {
  const SwinConfig& c = model.config;
  require(image.rank() == 4 && image.dim(3) == c.in_channels, ErrorCode::kShape,
          "patch_embed: expected [N x H x W x " + std::to_string(c.in_channels) + "], got " + shape_str(image.shape()));
  const std::size_t n = image.dim(0), h = image.dim(1), w = image.dim(2), p = c.patch_size;
  require(h % p == 0 && w % p == 0, ErrorCode::kShape,
          "patch_embed: image " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by patch size " +
              std::to_string(p));
  std::vector<std::uint32_t> map;
  map.reserve(h * w);
  for (std::size_t i = 0; i < h / p; ++i) {
    for (std::size_t j = 0; j < w / p; ++j) {
      for (std::size_t py = 0; py < p; ++py) {
        for (std::size_t px = 0; px < p; ++px) map.push_back(static_cast<std::uint32_t>((i * p + py) * w + j * p + px));
      }
    }
  }
  auto patches = gather_rows(image, h * w, c.in_channels, std::make_shared<const std::vector<std::uint32_t>>(std::move(map)),
                             {n, h / p, w / p, p * p * c.in_channels});
  return model.patch_norm(model.patch_proj(patches));
}

template <typename T>
StageFeatures<T> encode(const SwinBackbone<T>& model, const Tensor<T>& image) {
  const SwinConfig& c = model.config;
  require(image.rank() == 4 && image.dim(1) == c.image_size && image.dim(2) == c.image_size, ErrorCode::kShape,
          "encode: image " + shape_str(image.shape()) + " does not match configured size " + std::to_string(c.image_size));
  StageFeatures<T> out;
  auto x = patch_embed(model, image);
  for (std::size_t s = 0; s < 4; ++s) {
    for (const auto& block : model.stages[s]) {
      x = swin_block(block, x);
      if (s == 2) out.stage3_blocks.push_back(x);
    }
    if (s < 3) x = patch_merge(model.merges[s], x);
  }
  out.final = model.final_norm(x);
  return out;
}

template <typename T>
SwinBackbone<T> SwinBackbone<T>::init(const SwinConfig& config, Rng& rng) {
  config.validate();
  SwinBackbone<T> m;
  m.config = config;
  const std::size_t p = config.patch_size;
  m.patch_proj = make_linear<T>(p * p * config.in_channels, config.embed_dim, true, rng);
  m.patch_norm = make_norm<T>(config.embed_dim);
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t grid = config.stage_grid(s), win = config.stage_window(s);
    auto plain = std::make_shared<const WindowLayout>(build_window_layout(grid, grid, win, false));
    auto shifted = std::make_shared<const WindowLayout>(build_window_layout(grid, grid, win, true));
    for (std::size_t b = 0; b < config.depths[s]; ++b) {
      m.stages[s].push_back(make_swin_block<T>(config.stage_dim(s), config.heads[s], config.hidden_dim(s),
                                               b % 2 == 0 ? plain : shifted, config.use_relative_bias, rng));
    }
    if (s < 3) {
      const std::size_t d = config.stage_dim(s);
      m.merges[s] = PatchMerge<T>{make_norm<T>(4 * d), make_linear<T>(4 * d, 2 * d, false, rng)};
    }
  }
  m.final_norm = make_norm<T>(config.stage_dim(3));
  return m;
}

template <typename T>
ParamList<T> SwinBackbone<T>::params(const std::string& prefix) const {
  ParamList<T> out;
  add_params(out, prefix + ".patch_embed.proj", patch_proj);
  add_params(out, prefix + ".patch_embed.norm", patch_norm);
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t b = 0; b < stages[s].size(); ++b) {
      const auto& blk = stages[s][b];
      const std::string base = prefix + ".stages." + std::to_string(s) + ".blocks." + std::to_string(b);
      add_params(out, base + ".norm1", blk.norm1);
      add_params(out, base + ".attn.qkv", blk.qkv);
      add_param(out, base + ".attn.relative_bias", blk.rel_bias_table);
      add_params(out, base + ".attn.proj", blk.proj);
      add_params(out, base + ".norm2", blk.norm2);
      add_params(out, base + ".mlp.fc1", blk.fc1);
      add_params(out, base + ".mlp.fc2", blk.fc2);
    }
    if (s < 3) {
      const std::string base = prefix + ".stages." + std::to_string(s) + ".merge";
      add_params(out, base + ".norm", merges[s].norm);
      add_params(out, base + ".reduction", merges[s].reduction);
    }
  }
  add_params(out, prefix + ".norm", final_norm);
  return out;
}

StageShapes infer_stage_shapes(const SwinConfig& config) {
  config.validate();
  StageShapes s;
  const std::size_t g = config.stage_grid(0);
  s.embed = {1, g, g, config.embed_dim};
  for (std::size_t b = 0; b < config.depths[2]; ++b) {
    s.stage3.push_back({1, config.stage_grid(2), config.stage_grid(2), config.stage_dim(2)});
  }
  s.final = {1, config.stage_grid(3), config.stage_grid(3), config.stage_dim(3)};
  return s;
}

#define UNISPOOF_INSTANTIATE(T)                                                                               \
  template struct SwinBackbone<T>;                                                                            \
  template Tensor<T> window_partition(const Tensor<T>&, const WindowLayout&);                                 \
  template Tensor<T> window_reverse(const Tensor<T>&, const WindowLayout&);                                   \
  template SwinBlock<T> make_swin_block(std::size_t, std::size_t, std::size_t,                                \
                                        std::shared_ptr<const WindowLayout>, bool, Rng&);                     \
  template Tensor<T> swin_block(const SwinBlock<T>&, const Tensor<T>&);                                       \
  template Tensor<T> patch_merge(const PatchMerge<T>&, const Tensor<T>&);                                     \
  template Tensor<T> patch_embed(const SwinBackbone<T>&, const Tensor<T>&);                                   \
  template StageFeatures<T> encode(const SwinBackbone<T>&, const Tensor<T>&);

UNISPOOF_INSTANTIATE(float)
UNISPOOF_INSTANTIATE(double)

#undef UNISPOOF_INSTANTIATE

}  // namespace unispoof
