#include "unispoof/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "unispoof/error.hpp"
#include "unispoof/parallel.hpp"
#include "unispoof/rng.hpp"

namespace unispoof {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::array<double, 3> hsv(double h, double s, double v) {
  float r, g, b;
  hsv_to_rgb(static_cast<float>(h), static_cast<float>(s), static_cast<float>(v), r, g, b);
  return {r, g, b};
}

struct Variation {
  double dx, dy, scale, light, grad_angle, grad_strength, tex_shift;
  std::array<double, 3> bg_top, bg_bottom;
};

Variation sample_variation(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "variation"));
  Variation v;
  v.dx = rng.uniform(-0.02, 0.02);
  v.dy = rng.uniform(-0.02, 0.02);
  v.scale = rng.uniform(0.97, 1.03);
  v.light = rng.uniform(0.94, 1.06);
  v.grad_angle = rng.uniform(0, kTwoPi);
  v.grad_strength = rng.uniform(0.0, 0.08);
  v.tex_shift = rng.uniform(-0.3, 0.3);
  // fixed studio backdrop, lit slightly differently per capture
  const double bg_light = rng.uniform(0.98, 1.02);
  v.bg_top = {0.55 * bg_light, 0.60 * bg_light, 0.66 * bg_light};
  v.bg_bottom = {0.36 * bg_light, 0.42 * bg_light, 0.50 * bg_light};
  return v;
}

struct Geometry {
  double cx, cy, rx, ry, s;
};

Geometry geometry(const IdentitySpec& spec, const Variation& v, std::size_t size) {
  const double n = static_cast<double>(size);
  return {(spec.face_cx + v.dx) * n, (spec.face_cy + v.dy) * n, spec.face_rx * v.scale * n, spec.face_ry * v.scale * n,
          v.scale * n};
}

double ellipse(double x, double y, double cx, double cy, double rx, double ry) {
  return std::hypot((x - cx) / rx, (y - cy) / ry);
}

// Anti-aliased coverage of an ellipse edge, about one pixel wide.
double coverage(double d, double r_min) {
  const double e = 1.0 / std::max(r_min, 1.0);
  return std::clamp((1.0 + e - d) / (2 * e), 0.0, 1.0);
}

std::string pad(std::size_t v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*zu", width, v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::vector<double> IdentitySpec::vector() const {
  std::vector<double> v{face_cx, face_cy, face_rx, face_ry, eye_dx, eye_dy, eye_r, mouth_dy, mouth_w, mouth_h};
  for (const auto* c : {&skin, &eye, &mouth, &hair}) v.insert(v.end(), c->begin(), c->end());
  v.insert(v.end(), {hair_line, tex_fx, tex_fy, tex_phase, tex_amp});
  return v;
}

IdentitySpec gen_identity(std::size_t identity_id, std::uint64_t global_seed) {
  Rng rng(derive_seed(derive_seed(global_seed, "identity"), identity_id));
  IdentitySpec s;
  s.identity_id = identity_id;
  s.face_cx = rng.uniform(0.46, 0.54);
  s.face_cy = rng.uniform(0.49, 0.56);
  s.face_rx = rng.uniform(0.25, 0.34);
  s.face_ry = rng.uniform(0.33, 0.42);
  s.eye_dx = rng.uniform(0.08, 0.14);
  s.eye_dy = rng.uniform(0.05, 0.13);
  s.eye_r = rng.uniform(0.03, 0.06);
  s.mouth_dy = rng.uniform(0.12, 0.2);
  s.mouth_w = rng.uniform(0.06, 0.15);
  s.mouth_h = rng.uniform(0.02, 0.045);
  s.skin = hsv(rng.uniform(0.03, 0.09), rng.uniform(0.3, 0.5), rng.uniform(0.6, 0.8));
  s.eye = hsv(rng.uniform(), rng.uniform(0.2, 0.9), rng.uniform(0.05, 0.4));
  s.mouth = hsv(std::fmod(rng.uniform(0.95, 1.05), 1.0), rng.uniform(0.4, 0.9), rng.uniform(0.35, 0.8));
  s.hair = hsv(rng.uniform(0.0, 0.12), rng.uniform(0.1, 0.6), rng.uniform(0.05, 0.35));
  s.hair_line = rng.uniform(0.1, 0.45);
  s.tex_fx = rng.uniform(1.0, 6.0);
  s.tex_fy = rng.uniform(1.0, 6.0);
  s.tex_phase = rng.uniform(0, kTwoPi);
  s.tex_amp = rng.uniform(0.02, 0.1);
  return s;
}

double face_ellipse_distance(const IdentitySpec& spec, std::uint64_t variation_seed, std::size_t size, std::size_t y,
                             std::size_t x) {
  const Geometry g = geometry(spec, sample_variation(variation_seed), size);
  return ellipse(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, g.cx, g.cy, g.rx, g.ry);
}

FaceSample render_face(const IdentitySpec& spec, std::uint64_t variation_seed, std::size_t size) {
  require(size >= 8, ErrorCode::kInvalidArgument, "render_face: image size must be at least 8");
  const Variation v = sample_variation(variation_seed);
  const Geometry g = geometry(spec, v, size);
  const double n = static_cast<double>(size);
  const double gx = std::cos(v.grad_angle), gy = std::sin(v.grad_angle);
  FaceSample out{Image(size, size, 3), Image(size, size, 1)};
  for (std::size_t yi = 0; yi < size; ++yi) {
    for (std::size_t xi = 0; xi < size; ++xi) {
      const double x = static_cast<double>(xi) + 0.5, y = static_cast<double>(yi) + 0.5;
      const double t = y / n;
      std::array<double, 3> bg;
      for (int c = 0; c < 3; ++c) bg[c] = v.bg_top[c] * (1 - t) + v.bg_bottom[c] * t;

      const double d = ellipse(x, y, g.cx, g.cy, g.rx, g.ry);
      const double alpha = coverage(d, std::min(g.rx, g.ry));
      out.mask.at(yi, xi) = static_cast<float>(alpha);

      const double u = (x - g.cx) / g.rx, w = (y - g.cy) / g.ry;
      const double tex = 1.0 + spec.tex_amp * std::sin(kTwoPi * (spec.tex_fx * u + spec.tex_fy * w) / 2 + spec.tex_phase + v.tex_shift);
      std::array<double, 3> face;
      for (int c = 0; c < 3; ++c) face[c] = spec.skin[c] * tex;
      // hair over the top of the face
      const double hair = std::clamp((-1.0 + 2.0 * spec.hair_line - w) * g.ry, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) face[c] = face[c] * (1 - hair) + spec.hair[c] * hair;
      for (double side : {-1.0, 1.0}) {
        const double ex = g.cx + side * spec.eye_dx * g.s, ey = g.cy - spec.eye_dy * g.s, er = spec.eye_r * g.s;
        const double a = coverage(ellipse(x, y, ex, ey, er, er * 0.7), er * 0.7);
        for (int c = 0; c < 3; ++c) face[c] = face[c] * (1 - a) + spec.eye[c] * a;
      }
      const double mr = spec.mouth_h * g.s;
      const double ma = coverage(ellipse(x, y, g.cx, g.cy + spec.mouth_dy * g.s, spec.mouth_w * g.s, mr), mr);
      for (int c = 0; c < 3; ++c) face[c] = face[c] * (1 - ma) + spec.mouth[c] * ma;

      const double light = v.light * (1.0 + v.grad_strength * (gx * (x - g.cx) + gy * (y - g.cy)) / n);
      for (int c = 0; c < 3; ++c) {
        const double val = alpha * face[c] * light + (1 - alpha) * bg[c];
        out.image.at(yi, xi, static_cast<std::size_t>(c)) = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- dataset

void DatasetConfig::validate() const {
  require(n_identities >= 2, ErrorCode::kInvalidArgument, "dataset: need at least 2 identities");
  require(per_identity >= 2, ErrorCode::kInvalidArgument, "dataset: need at least 2 samples per identity");
  require(image_size >= 8, ErrorCode::kInvalidArgument, "dataset: image_size must be at least 8");
  require(spoof_ratio >= 0 && spoof_ratio <= 1, ErrorCode::kInvalidArgument, "dataset: spoof_ratio must lie in [0, 1]");
  require(test_identities < n_identities, ErrorCode::kInvalidArgument,
          "dataset: test_identities must leave at least one training identity");
  require(val_per_identity < per_identity, ErrorCode::kInvalidArgument,
          "dataset: val_per_identity must leave at least one training sample per identity");
}

std::string ManifestRecord::source_id() const {
  if (live) return sample_id;
  const auto pos = sample_id.rfind('_');
  return sample_id.substr(0, pos);
}

std::vector<std::size_t> Dataset::indices(const std::string& split, bool live_only) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split && (!live_only || records[i].live)) out.push_back(i);
  }
  return out;
}

Dataset build_dataset(const DatasetConfig& config, const AugmentSpec& augment, std::uint64_t seed) {
  config.validate();
  augment.validate();
  Dataset ds;
  ds.config = config;

  std::vector<std::size_t> ids(config.n_identities);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  Rng split_rng(derive_seed(seed, "split"));
  split_rng.shuffle(ids.begin(), ids.end());
  const std::set<std::size_t> test_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(config.test_identities));

  const auto spoofs_per_id = static_cast<std::size_t>(std::lround(config.spoof_ratio * static_cast<double>(config.per_identity)));
  struct Job {
    std::size_t record;
    std::size_t source;  // record index of the live source (for spoofs)
    std::uint64_t seed;
  };
  std::vector<Job> live_jobs, spoof_jobs;
  std::vector<IdentitySpec> specs;
  for (std::size_t id = 0; id < config.n_identities; ++id) {
    specs.push_back(gen_identity(id, seed));
    const std::string idname = "id" + pad(id, 3);
    std::vector<std::size_t> variants(config.per_identity);
    for (std::size_t v = 0; v < variants.size(); ++v) variants[v] = v;
    Rng vr(derive_seed(derive_seed(seed, "variants"), id));
    vr.shuffle(variants.begin(), variants.end());
    const std::set<std::size_t> val(variants.begin(), variants.begin() + static_cast<std::ptrdiff_t>(config.val_per_identity));
    Rng sr(derive_seed(derive_seed(seed, "spoof-pick"), id));
    std::vector<std::size_t> picks(config.per_identity);
    for (std::size_t v = 0; v < picks.size(); ++v) picks[v] = v;
    sr.shuffle(picks.begin(), picks.end());
    picks.resize(spoofs_per_id);
    std::sort(picks.begin(), picks.end());

    std::vector<std::size_t> live_index(config.per_identity);
    for (std::size_t v = 0; v < config.per_identity; ++v) {
      ManifestRecord r;
      r.sample_id = idname + "_v" + pad(v, 2);
      r.identity_id = id;
      r.split = test_ids.count(id) ? "test" : (val.count(v) ? "val" : "train");
      r.path = "images/" + r.sample_id + ".ppm";
      live_index[v] = ds.records.size();
      live_jobs.push_back({ds.records.size(), 0, derive_seed(seed, r.sample_id)});
      ds.records.push_back(r);
    }
    for (std::size_t k = 0; k < picks.size(); ++k) {
      const ManifestRecord& src = ds.records[live_index[picks[k]]];
      ManifestRecord r = src;
      r.live = false;
      r.spoof_kind = k % 2 == 0 ? "spsc" : "sdsc";
      r.sample_id = src.sample_id + "_" + r.spoof_kind;
      r.path = "images/" + r.sample_id + ".ppm";
      spoof_jobs.push_back({ds.records.size(), live_index[picks[k]], derive_seed(seed, r.sample_id)});
      ds.records.push_back(r);
    }
  }

  ds.images.resize(ds.records.size());
  ds.masks.resize(ds.records.size());
  parallel_for(live_jobs.size(), [&](std::size_t j) {
    const Job& job = live_jobs[j];
    FaceSample f = render_face(specs[ds.records[job.record].identity_id], job.seed, config.image_size);
    quantize8(f.image);
    quantize8(f.mask);
    ds.images[job.record] = std::move(f.image);
    ds.masks[job.record] = std::move(f.mask);
  });
  parallel_for(spoof_jobs.size(), [&](std::size_t j) {
    const Job& job = spoof_jobs[j];
    const Image& src = ds.images[job.source];
    Image out = ds.records[job.record].spoof_kind == "spsc" ? spsc(src, augment, job.seed).image
                                                            : sdsc(src, ds.masks[job.source], augment, job.seed).image;
    quantize8(out);
    ds.images[job.record] = std::move(out);
  });
  return ds;
}

void write_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  out << "sample_id,identity_id,label,spoof_kind,split,path\n";
  for (const auto& r : records) {
    out << r.sample_id << ',' << r.identity_id << ',' << (r.live ? "live" : "spoof") << ',' << r.spoof_kind << ','
        << r.split << ',' << r.path << '\n';
  }
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open manifest '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  require(line == "sample_id,identity_id,label,spoof_kind,split,path", ErrorCode::kIo,
          "manifest '" + path.string() + "' has an unexpected header");
  std::vector<ManifestRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    require(f.size() == 6, ErrorCode::kIo, "manifest " + where + ": expected 6 fields");
    ManifestRecord r;
    r.sample_id = f[0];
    try {
      r.identity_id = std::stoul(f[1]);
    } catch (const std::exception&) {
      fail(ErrorCode::kIo, "manifest " + where + ": bad identity_id '" + f[1] + "'");
    }
    require(f[2] == "live" || f[2] == "spoof", ErrorCode::kIo, "manifest " + where + ": bad label '" + f[2] + "'");
    r.live = f[2] == "live";
    r.spoof_kind = f[3];
    require(r.spoof_kind == "none" || r.spoof_kind == "spsc" || r.spoof_kind == "sdsc", ErrorCode::kIo,
            "manifest " + where + ": bad spoof_kind '" + f[3] + "'");
    r.split = f[4];
    require(r.split == "train" || r.split == "val" || r.split == "test", ErrorCode::kIo,
            "manifest " + where + ": bad split '" + f[4] + "'");
    r.path = f[5];
    out.push_back(r);
  }
  return out;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  parallel_for(ds.records.size(), [&](std::size_t i) {
    write_pnm(ds.images[i], dir / ds.records[i].path);
    if (ds.records[i].live) write_pnm(ds.masks[i], dir / "masks" / (ds.records[i].sample_id + ".pgm"));
  });
  write_manifest(ds.records, dir / "manifest.csv");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.records = read_manifest(dir / "manifest.csv");
  require(!ds.records.empty(), ErrorCode::kInvalidArgument, "manifest '" + (dir / "manifest.csv").string() + "' is empty");
  ds.images.resize(ds.records.size());
  ds.masks.resize(ds.records.size());
  parallel_for(ds.records.size(), [&](std::size_t i) {
    ds.images[i] = read_pnm(dir / ds.records[i].path);
    const auto mask = dir / "masks" / (ds.records[i].sample_id + ".pgm");
    if (ds.records[i].live && std::filesystem::exists(mask)) ds.masks[i] = read_pnm(mask);
  });
  std::set<std::size_t> ids, test;
  std::map<std::size_t, std::size_t> per;
  for (const auto& r : ds.records) {
    ids.insert(r.identity_id);
    if (r.split == "test") test.insert(r.identity_id);
    if (r.live) ++per[r.identity_id];
  }
  ds.config.n_identities = ids.size();
  ds.config.test_identities = test.size();
  ds.config.image_size = ds.images[0].height;
  ds.config.per_identity = per.empty() ? 0 : per.begin()->second;
  return ds;
}

std::vector<VerificationPair> sample_pairs(const std::vector<ManifestRecord>& records, std::size_t n_genuine,
                                           std::size_t n_impostor, std::uint64_t seed) {
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].live && records[i].split == "test") live.push_back(i);
  }
  std::vector<VerificationPair> genuine, impostor;
  for (std::size_t i = 0; i < live.size(); ++i) {
    for (std::size_t j = i + 1; j < live.size(); ++j) {
      const bool same = records[live[i]].identity_id == records[live[j]].identity_id;
      (same ? genuine : impostor).push_back({live[i], live[j], same});
    }
  }
  require(genuine.size() >= n_genuine && impostor.size() >= n_impostor, ErrorCode::kInvalidArgument,
          "sample_pairs: requested " + std::to_string(n_genuine) + " genuine / " + std::to_string(n_impostor) +
              " impostor pairs but the test split offers " + std::to_string(genuine.size()) + " / " +
              std::to_string(impostor.size()));
  Rng rng(derive_seed(seed, "pairs"));
  rng.shuffle(genuine.begin(), genuine.end());
  rng.shuffle(impostor.begin(), impostor.end());
  std::vector<VerificationPair> out(genuine.begin(), genuine.begin() + static_cast<std::ptrdiff_t>(n_genuine));
  out.insert(out.end(), impostor.begin(), impostor.begin() + static_cast<std::ptrdiff_t>(n_impostor));
  return out;
}

}  // namespace unispoof
