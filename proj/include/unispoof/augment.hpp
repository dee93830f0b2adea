#pragma once

// Simulated spoofing clues.
//
// SPSC turns a live image into a print-like (colour jitter) or replay-like
// (moire interference) sample. SDSC fakes a digital forgery by blending a
// jittered, misaligned copy of the image back into itself through a
// deformed face mask. Every operation is a pure function of its inputs and
// a 64-bit seed.

#include <cstdint>
#include <string>

#include "unispoof/image.hpp"

namespace unispoof {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

struct AugmentSpec {
  // colour jitter: multiplicative factors, hue shift in turns
  Range brightness{0.6, 1.4};
  Range contrast{0.6, 1.4};
  Range saturation{0.6, 1.4};
  double hue = 0.1;

  // moire: p = A sin(2 pi f r + phi) sin(k theta + phi'), k whole cycles per turn
  double moire_amplitude = 0.15;
  Range moire_frequency{0.05, 0.25};  // cycles per pixel along the radius
  Range moire_angular{2.0, 12.0};     // k, rounded to an integer
  Range moire_phase{0.0, 6.283185307179586};
  double moire_center_jitter = 0.25;  // centre drawn within +-this fraction of the size

  // sdsc source transform
  Range source_translate{-3.0, 3.0};  // pixels
  Range source_scale{0.94, 1.06};
  Range source_brightness{0.85, 1.15};
  double source_hue = 0.04;

  // sdsc mask deformation
  double mask_translate = 2.0;  // pixels
  double mask_scale = 0.06;     // relative
  double mask_rotate = 0.10;    // radians
  double elastic_alpha = 2.0;   // peak displacement, pixels
  double elastic_sigma = 4.0;   // smoothing of the displacement field, pixels
  double mask_blur_sigma = 1.5;

  void validate() const;
  bool operator==(const AugmentSpec&) const = default;

  // Every range collapsed to its identity value and every strength set to 0.
  static AugmentSpec identity();
};

struct JitterFactors {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;
};

struct MoireParams {
  double amplitude = 0.0;
  double frequency = 0.0;
  int angular_cycles = 0;
  double phase_r = 0.0;
  double phase_theta = 0.0;
  double center_x = 0.0;
  double center_y = 0.0;
};

enum class SpscBranch { kPrint, kReplay };

struct SpscResult {
  Image image;
  SpscBranch branch = SpscBranch::kPrint;
  std::uint64_t sub_seed = 0;
};

struct SdscResult {
  Image image;
  Image source;  // jittered, resized, translated copy
  Image target;  // the untouched image
  Image mask;    // deformed blend mask
};

// Standard hexcone conversions; h in turns [0, 1).
void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v);
void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b);

JitterFactors sample_jitter(const AugmentSpec& spec, std::uint64_t seed);
Image apply_jitter(const Image& img, const JitterFactors& f);
Image color_jitter(const Image& img, const AugmentSpec& spec, std::uint64_t seed);

MoireParams sample_moire(const AugmentSpec& spec, std::size_t height, std::size_t width, std::uint64_t seed);
// The additive pattern alone, one value per pixel.
std::vector<double> moire_pattern(const MoireParams& p, std::size_t height, std::size_t width);
Image moire_synthesize(const Image& img, const AugmentSpec& spec, std::uint64_t seed);

std::uint64_t spsc_branch_seed(std::uint64_t seed, SpscBranch branch);
SpscResult spsc(const Image& img, const AugmentSpec& spec, std::uint64_t seed);

Image deform_mask(const Image& mask, const AugmentSpec& spec, std::uint64_t seed);
SdscResult sdsc(const Image& img, const Image& mask, const AugmentSpec& spec, std::uint64_t seed);

// Centred soft ellipse used when no face mask is available.
Image default_face_mask(std::size_t height, std::size_t width);

// Separable Gaussian blur with replicated borders; sigma <= 0 copies.
Image gaussian_blur(const Image& img, double sigma);

const char* branch_name(SpscBranch b);

}  // namespace unispoof
