#pragma once

// Procedural identity-labelled faces with ground-truth face masks, dataset
// manifests and verification-pair sampling.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unispoof/augment.hpp"

namespace unispoof {

struct IdentitySpec {
  std::size_t identity_id = 0;
  // geometry, relative to the image side
  double face_cx = 0.5, face_cy = 0.52, face_rx = 0.3, face_ry = 0.38;
  double eye_dx = 0.12, eye_dy = 0.1, eye_r = 0.05;
  double mouth_dy = 0.17, mouth_w = 0.12, mouth_h = 0.035;
  // colours
  std::array<double, 3> skin{0.8, 0.6, 0.5};
  std::array<double, 3> eye{0.1, 0.1, 0.15};
  std::array<double, 3> mouth{0.6, 0.2, 0.2};
  std::array<double, 3> hair{0.2, 0.15, 0.1};
  double hair_line = 0.3;  // fraction of the face height covered from the top
  // skin texture
  double tex_fx = 3.0, tex_fy = 2.0, tex_phase = 0.0, tex_amp = 0.06;

  std::vector<double> vector() const;
  bool operator==(const IdentitySpec&) const = default;
};

IdentitySpec gen_identity(std::size_t identity_id, std::uint64_t global_seed);

struct FaceSample {
  Image image;
  Image mask;
};

// Per-variation pose, scale and lighting jitter around the identity.
FaceSample render_face(const IdentitySpec& spec, std::uint64_t variation_seed, std::size_t size);

// Mask value before the soft edge: 1 inside the ellipse, 0 outside.
double face_ellipse_distance(const IdentitySpec& spec, std::uint64_t variation_seed, std::size_t size, std::size_t y,
                             std::size_t x);

struct DatasetConfig {
  std::size_t n_identities = 16;
  std::size_t per_identity = 8;
  std::size_t image_size = 64;
  double spoof_ratio = 0.5;
  std::size_t test_identities = 4;
  std::size_t val_per_identity = 2;

  void validate() const;
  bool operator==(const DatasetConfig&) const = default;
};

struct ManifestRecord {
  std::string sample_id;
  std::size_t identity_id = 0;
  bool live = true;
  std::string spoof_kind = "none";  // none | spsc | sdsc
  std::string split;                // train | val | test
  std::string path;                 // relative to the manifest directory

  // Live sample a spoof was made from (sample ids encode it too).
  std::string source_id() const;
  bool operator==(const ManifestRecord&) const = default;
};

struct Dataset {
  DatasetConfig config;
  std::vector<ManifestRecord> records;
  std::vector<Image> images;
  std::vector<Image> masks;  // ground-truth face mask of each live record; empty for spoofs

  std::vector<std::size_t> indices(const std::string& split, bool live_only = false) const;
};

// Renders every live sample and derives spoofs from a spoof_ratio fraction
// of them (spsc and sdsc alternating). Test identities never appear in
// train/val. Pixel data is quantised to 8 bits so it equals what a reload
// from disk returns.
Dataset build_dataset(const DatasetConfig& config, const AugmentSpec& augment, std::uint64_t seed);

// Writes images/, masks/ and manifest.csv under `dir`.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
// Reads manifest.csv (and every referenced image) back.
Dataset read_dataset(const std::filesystem::path& dir);

void write_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

struct VerificationPair {
  std::size_t a = 0;  // record indices
  std::size_t b = 0;
  bool genuine = false;
};

// Without replacement, from live test records only.
std::vector<VerificationPair> sample_pairs(const std::vector<ManifestRecord>& records, std::size_t n_genuine,
                                           std::size_t n_impostor, std::uint64_t seed);

}  // namespace unispoof
