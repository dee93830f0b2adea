#include "unispoof/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "unispoof/error.hpp"
#include "unispoof/rng.hpp"

namespace unispoof {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double draw(Rng& rng, const Range& r) { return r.lo == r.hi ? r.lo : rng.uniform(r.lo, r.hi); }

void check_range(const Range& r, const char* name) {
  require(r.lo <= r.hi, ErrorCode::kInvalidArgument,
          std::string("augment spec: range '") + name + "' has lo > hi (" + std::to_string(r.lo) + " > " +
              std::to_string(r.hi) + ")");
}

float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

float clamp01f(float v) { return std::clamp(v, 0.0f, 1.0f); }

// Bilinear sample with replicated borders.
float sample(const Image& img, double y, double x, std::size_t c) {
  const double yc = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const double xc = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(yc)), x0 = static_cast<std::size_t>(std::floor(xc));
  const std::size_t y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  const double fy = yc - static_cast<double>(y0), fx = xc - static_cast<double>(x0);
  if (fy == 0.0 && fx == 0.0) return img.at(y0, x0, c);
  const double top = img.at(y0, x0, c) * (1 - fx) + img.at(y0, x1, c) * fx;
  const double bot = img.at(y1, x0, c) * (1 - fx) + img.at(y1, x1, c) * fx;
  return static_cast<float>(top * (1 - fy) + bot * fy);
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double total = 0;
  for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;
  return k;
}

// Blur of a double field, replicated borders.
std::vector<double> blur_field(const std::vector<double>& f, std::size_t h, std::size_t w, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(f.size()), out(f.size());
  auto clampi = [](long v, std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1)); };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * f[y * w + clampi(static_cast<long>(x) + i, w)];
      tmp[y * w + x] = acc;
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[clampi(static_cast<long>(y) + i, h) * w + x];
      out[y * w + x] = acc;
    }
  }
  return out;
}

}  // namespace

void AugmentSpec::validate() const {
  check_range(brightness, "brightness");
  check_range(contrast, "contrast");
  check_range(saturation, "saturation");
  check_range(moire_frequency, "moire_frequency");
  check_range(moire_angular, "moire_angular");
  check_range(moire_phase, "moire_phase");
  check_range(source_translate, "source_translate");
  check_range(source_scale, "source_scale");
  check_range(source_brightness, "source_brightness");
  require(brightness.lo >= 0 && contrast.lo >= 0 && saturation.lo >= 0 && source_brightness.lo >= 0,
          ErrorCode::kInvalidArgument, "augment spec: jitter factors must be non-negative");
  require(source_scale.lo > 0, ErrorCode::kInvalidArgument, "augment spec: source_scale must be positive");
  require(hue >= 0 && hue <= 0.5 && source_hue >= 0 && source_hue <= 0.5, ErrorCode::kInvalidArgument,
          "augment spec: hue shifts must lie in [0, 0.5] turns");
  require(moire_amplitude >= 0 && moire_amplitude <= 1, ErrorCode::kInvalidArgument,
          "augment spec: moire_amplitude must lie in [0, 1]");
  require(moire_frequency.lo >= 0 && moire_angular.lo >= 0, ErrorCode::kInvalidArgument,
          "augment spec: moire frequencies must be non-negative");
  require(moire_center_jitter >= 0 && moire_center_jitter <= 0.5, ErrorCode::kInvalidArgument,
          "augment spec: moire_center_jitter must lie in [0, 0.5]");
  require(mask_translate >= 0 && mask_scale >= 0 && mask_scale < 1 && mask_rotate >= 0, ErrorCode::kInvalidArgument,
          "augment spec: mask affine jitter must be non-negative (scale < 1)");
  require(elastic_alpha >= 0 && elastic_sigma >= 0 && mask_blur_sigma >= 0, ErrorCode::kInvalidArgument,
          "augment spec: elastic and blur parameters must be non-negative");
}

AugmentSpec AugmentSpec::identity() {
  AugmentSpec s;
  s.brightness = s.contrast = s.saturation = {1.0, 1.0};
  s.hue = 0.0;
  s.moire_amplitude = 0.0;
  s.source_translate = {0.0, 0.0};
  s.source_scale = {1.0, 1.0};
  s.source_brightness = {1.0, 1.0};
  s.source_hue = 0.0;
  s.mask_translate = s.mask_scale = s.mask_rotate = 0.0;
  s.elastic_alpha = 0.0;
  s.mask_blur_sigma = 0.0;
  return s;
}

const char* branch_name(SpscBranch b) { return b == SpscBranch::kPrint ? "print" : "replay"; }

// ---------------------------------------------------------------- colour

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0.0f;
  if (d <= 0) {
    h = 0;
    return;
  }
  float hh;
  if (mx == r) {
    hh = (g - b) / d;
    if (hh < 0) hh += 6.0f;
  } else if (mx == g) {
    hh = (b - r) / d + 2.0f;
  } else {
    hh = (r - g) / d + 4.0f;
  }
  h = hh / 6.0f;
  if (h >= 1.0f) h -= 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  const float hh = (h - std::floor(h)) * 6.0f;
  const int sector = std::min(5, static_cast<int>(hh));
  const float f = hh - static_cast<float>(sector);
  const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

JitterFactors sample_jitter(const AugmentSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "jitter"));
  JitterFactors f;
  f.brightness = draw(rng, spec.brightness);
  f.contrast = draw(rng, spec.contrast);
  f.saturation = draw(rng, spec.saturation);
  f.hue = draw(rng, {-spec.hue, spec.hue});
  return f;
}

Image apply_jitter(const Image& img, const JitterFactors& f) {
  require(img.channels == 3, ErrorCode::kInvalidArgument, "color_jitter: expected an RGB image");
  Image out = img;
  const std::size_t n = img.pixels();
  float* px = out.data.data();
  if (f.brightness != 1.0) {
    for (auto& v : out.data) v = clamp01f(v * static_cast<float>(f.brightness));
  }
  if (f.contrast != 1.0) {
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += luma(px[3 * i], px[3 * i + 1], px[3 * i + 2]);
    const auto m = static_cast<float>(mean / static_cast<double>(n));
    const auto c = static_cast<float>(f.contrast);
    for (auto& v : out.data) v = clamp01f(c * v + (1 - c) * m);
  }
  if (f.saturation != 1.0) {
    const auto s = static_cast<float>(f.saturation);
    for (std::size_t i = 0; i < n; ++i) {
      const float l = luma(px[3 * i], px[3 * i + 1], px[3 * i + 2]);
      for (std::size_t c = 0; c < 3; ++c) px[3 * i + c] = clamp01f(s * px[3 * i + c] + (1 - s) * l);
    }
  }
  if (f.hue != 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      float h, s, v;
      rgb_to_hsv(px[3 * i], px[3 * i + 1], px[3 * i + 2], h, s, v);
      h += static_cast<float>(f.hue);
      h -= std::floor(h);
      hsv_to_rgb(h, s, v, px[3 * i], px[3 * i + 1], px[3 * i + 2]);
      for (std::size_t c = 0; c < 3; ++c) px[3 * i + c] = clamp01f(px[3 * i + c]);
    }
  }
  return out;
}

Image color_jitter(const Image& img, const AugmentSpec& spec, std::uint64_t seed) {
  spec.validate();
  return apply_jitter(img, sample_jitter(spec, seed));
}

// ---------------------------------------------------------------- moire

MoireParams sample_moire(const AugmentSpec& spec, std::size_t height, std::size_t width, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "moire"));
  MoireParams p;
  p.amplitude = spec.moire_amplitude;
  p.frequency = draw(rng, spec.moire_frequency);
  p.angular_cycles = static_cast<int>(std::lround(draw(rng, spec.moire_angular)));
  p.phase_r = draw(rng, spec.moire_phase);
  p.phase_theta = draw(rng, spec.moire_phase);
  const double j = spec.moire_center_jitter;
  p.center_x = (0.5 + draw(rng, {-j, j})) * static_cast<double>(width - 1);
  p.center_y = (0.5 + draw(rng, {-j, j})) * static_cast<double>(height - 1);
  return p;
}

std::vector<double> moire_pattern(const MoireParams& p, std::size_t height, std::size_t width) {
  std::vector<double> out(height * width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double dx = static_cast<double>(x) - p.center_x, dy = static_cast<double>(y) - p.center_y;
      const double r = std::hypot(dx, dy), theta = std::atan2(dy, dx);
      out[y * width + x] = p.amplitude * std::sin(kTwoPi * p.frequency * r + p.phase_r) *
                           std::sin(p.angular_cycles * theta + p.phase_theta);
    }
  }
  return out;
}

Image moire_synthesize(const Image& img, const AugmentSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.moire_amplitude == 0.0) return img;
  const auto pattern = moire_pattern(sample_moire(spec, img.height, img.width, seed), img.height, img.width);
  Image out = img;
  for (std::size_t i = 0; i < img.pixels(); ++i) {
    for (std::size_t c = 0; c < img.channels; ++c) {
      float& v = out.data[i * img.channels + c];
      v = clamp01f(static_cast<float>(v + pattern[i]));
    }
  }
  return out;
}

// ---------------------------------------------------------------- spsc

std::uint64_t spsc_branch_seed(std::uint64_t seed, SpscBranch branch) {
  return derive_seed(seed, branch == SpscBranch::kPrint ? "spsc.print" : "spsc.replay");
}

SpscResult spsc(const Image& img, const AugmentSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "spsc.branch"));
  SpscResult r;
  r.branch = rng.coin() ? SpscBranch::kReplay : SpscBranch::kPrint;
  r.sub_seed = spsc_branch_seed(seed, r.branch);
  r.image = r.branch == SpscBranch::kPrint ? color_jitter(img, spec, r.sub_seed) : moire_synthesize(img, spec, r.sub_seed);
  return r;
}

// ---------------------------------------------------------------- sdsc

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0) return img;
  Image out = img;
  std::vector<double> plane(img.pixels());
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = img.data[i * img.channels + c];
    const auto b = blur_field(plane, img.height, img.width, sigma);
    for (std::size_t i = 0; i < plane.size(); ++i) out.data[i * img.channels + c] = static_cast<float>(b[i]);
  }
  return out;
}

Image deform_mask(const Image& mask, const AugmentSpec& spec, std::uint64_t seed) {
  spec.validate();
  require(mask.channels == 1, ErrorCode::kInvalidArgument, "deform_mask: expected a single-channel mask");
  const std::size_t h = mask.height, w = mask.width;
  Rng rng(derive_seed(seed, "mask.affine"));
  const double tx = draw(rng, {-spec.mask_translate, spec.mask_translate});
  const double ty = draw(rng, {-spec.mask_translate, spec.mask_translate});
  const double sc = draw(rng, {1 - spec.mask_scale, 1 + spec.mask_scale});
  const double rot = draw(rng, {-spec.mask_rotate, spec.mask_rotate});

  std::vector<double> ex(h * w, 0.0), ey(h * w, 0.0);
  if (spec.elastic_alpha > 0) {
    Rng er(derive_seed(seed, "mask.elastic"));
    for (auto& v : ex) v = er.uniform(-1, 1);
    for (auto& v : ey) v = er.uniform(-1, 1);
    if (spec.elastic_sigma > 0) {
      ex = blur_field(ex, h, w, spec.elastic_sigma);
      ey = blur_field(ey, h, w, spec.elastic_sigma);
    }
    double peak = 0;
    for (std::size_t i = 0; i < ex.size(); ++i) peak = std::max({peak, std::abs(ex[i]), std::abs(ey[i])});
    const double k = peak > 0 ? spec.elastic_alpha / peak : 0.0;
    for (std::size_t i = 0; i < ex.size(); ++i) ex[i] *= k, ey[i] *= k;
  }

  const double cx = 0.5 * static_cast<double>(w - 1), cy = 0.5 * static_cast<double>(h - 1);
  const double cr = std::cos(rot), sr = std::sin(rot);
  Image out(h, w, 1);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      // inverse affine about the centre
      const double px = static_cast<double>(x) - cx - tx, py = static_cast<double>(y) - cy - ty;
      const double sx = (cr * px + sr * py) / sc + cx + ex[y * w + x];
      const double sy = (-sr * px + cr * py) / sc + cy + ey[y * w + x];
      out.at(y, x) = sample(mask, sy, sx, 0);
    }
  }
  out = gaussian_blur(out, spec.mask_blur_sigma);
  clamp01(out);
  return out;
}

SdscResult sdsc(const Image& img, const Image& mask, const AugmentSpec& spec, std::uint64_t seed) {
  spec.validate();
  require(img.channels == 3, ErrorCode::kInvalidArgument, "sdsc: expected an RGB image");
  require(mask.channels == 1 && mask.same_size(img), ErrorCode::kShape,
          "sdsc: mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) + " does not match image " +
              std::to_string(img.height) + "x" + std::to_string(img.width));
  SdscResult r;
  r.target = img;

  AugmentSpec src_jitter = AugmentSpec::identity();
  src_jitter.brightness = spec.source_brightness;
  src_jitter.hue = spec.source_hue;
  const Image jittered = color_jitter(img, src_jitter, derive_seed(seed, "sdsc.color"));

  Rng rng(derive_seed(seed, "sdsc.spatial"));
  const double sc = draw(rng, spec.source_scale);
  const double tx = draw(rng, spec.source_translate), ty = draw(rng, spec.source_translate);
  const double cx = 0.5 * static_cast<double>(img.width - 1), cy = 0.5 * static_cast<double>(img.height - 1);
  r.source = Image(img.height, img.width, 3);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double sx = (static_cast<double>(x) - cx - tx) / sc + cx;
      const double sy = (static_cast<double>(y) - cy - ty) / sc + cy;
      for (std::size_t c = 0; c < 3; ++c) r.source.at(y, x, c) = sample(jittered, sy, sx, c);
    }
  }

  r.mask = deform_mask(mask, spec, derive_seed(seed, "sdsc.mask"));
  r.image = Image(img.height, img.width, 3);
  for (std::size_t i = 0; i < img.pixels(); ++i) {
    const float m = r.mask.data[i];
    for (std::size_t c = 0; c < 3; ++c) {
      const float s = r.source.data[3 * i + c], t = r.target.data[3 * i + c];
      r.image.data[3 * i + c] = std::clamp(t + m * (s - t), std::min(s, t), std::max(s, t));
    }
  }
  return r;
}

Image default_face_mask(std::size_t height, std::size_t width) {
  Image m(height, width, 1);
  const double cx = 0.5 * static_cast<double>(width - 1), cy = 0.5 * static_cast<double>(height - 1);
  const double rx = 0.32 * static_cast<double>(width), ry = 0.42 * static_cast<double>(height);
  const double edge = 1.5 / std::min(rx, ry);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double d = std::hypot((static_cast<double>(x) - cx) / rx, (static_cast<double>(y) - cy) / ry);
      m.at(y, x) = static_cast<float>(std::clamp((1.0 + edge - d) / (2 * edge), 0.0, 1.0));
    }
  }
  return m;
}

}  // namespace unispoof
