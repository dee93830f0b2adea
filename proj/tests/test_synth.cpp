#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "unispoof/error.hpp"
#include "unispoof/rng.hpp"
#include "unispoof/synth.hpp"

using namespace unispoof;
namespace fs = std::filesystem;

namespace {

double mean_l1(const Image& a, const Image& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += std::abs(double(a.data[i]) - b.data[i]);
  return s / double(a.data.size());
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("unispoof_test_synth_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("identity specs") {
  CHECK(gen_identity(3, 11) == gen_identity(3, 11));
  std::set<std::vector<double>> seen;
  for (std::size_t id = 0; id < 16; ++id) seen.insert(gen_identity(id, 11).vector());
  CHECK(seen.size() == 16);
  CHECK(gen_identity(3, 11).vector() != gen_identity(3, 12).vector());
}

TEST_CASE("render_face") {
  const IdentitySpec spec = gen_identity(0, 5);
  const FaceSample a = render_face(spec, 17, 64), b = render_face(spec, 17, 64);
  CHECK(a.image == b.image);
  CHECK(a.mask == b.mask);
  CHECK(a.image.channels == 3);
  CHECK(a.mask.channels == 1);
  // One pixel of soft edge either side of the ellipse boundary.
  const double edge = 2.0 / (spec.face_rx * 0.95 * 64);
  std::size_t inside = 0, outside = 0;
  for (std::size_t y = 0; y < 64; ++y) {
    for (std::size_t x = 0; x < 64; ++x) {
      const double d = face_ellipse_distance(spec, 17, 64, y, x);
      if (d <= 1.0 - edge) {
        CHECK(a.mask.at(y, x) == 1.0f);
        ++inside;
      } else if (d >= 1.0 + edge) {
        CHECK(a.mask.at(y, x) == 0.0f);
        ++outside;
      }
    }
  }
  CHECK(inside > 500);
  CHECK(outside > 500);
  for (float v : a.image.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(render_face(spec, 18, 64).image != a.image);
}

TEST_CASE("same-identity renders are closer than different-identity renders") {
  Rng rng(99);
  std::vector<IdentitySpec> specs;
  for (std::size_t id = 0; id < 16; ++id) specs.push_back(gen_identity(id, 1));
  double same = 0, diff = 0;
  for (int k = 0; k < 200; ++k) {
    const std::size_t i = rng.below(16);
    std::size_t j = rng.below(15);
    if (j >= i) ++j;
    const Image a = render_face(specs[i], rng.next_u64(), 32).image;
    same += mean_l1(a, render_face(specs[i], rng.next_u64(), 32).image);
    diff += mean_l1(a, render_face(specs[j], rng.next_u64(), 32).image);
  }
  MESSAGE("mean L1 same " << same / 200 << " different " << diff / 200);
  CHECK(same < diff);
}

TEST_CASE("dataset counts and splits") {
  DatasetConfig cfg;
  const Dataset ds = build_dataset(cfg, AugmentSpec{}, 7);
  std::size_t live = 0, spsc_n = 0, sdsc_n = 0;
  std::set<std::size_t> train_ids, test_ids;
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < ds.records.size(); ++i) by_id[ds.records[i].sample_id] = i;
  CHECK(by_id.size() == ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    live += r.live;
    spsc_n += r.spoof_kind == "spsc";
    sdsc_n += r.spoof_kind == "sdsc";
    (r.split == "test" ? test_ids : train_ids).insert(r.identity_id);
    CHECK(ds.images[i].height == 64);
    if (!r.live) {
      // a spoof points back at a live record of the same identity and split
      REQUIRE(by_id.count(r.source_id()) == 1);
      const auto& src = ds.records[by_id[r.source_id()]];
      CHECK(src.live);
      CHECK(src.identity_id == r.identity_id);
      CHECK(src.split == r.split);
      CHECK(ds.masks[i].data.empty());
    } else {
      CHECK(ds.masks[i].same_size(ds.images[i]));
    }
  }
  CHECK(live == 128);
  CHECK(spsc_n == 32);
  CHECK(sdsc_n == 32);
  CHECK(test_ids.size() == 4);
  for (std::size_t id : test_ids) CHECK(train_ids.count(id) == 0);
  CHECK(ds.indices("val", true).size() == 12 * 2);
  CHECK(ds.indices("test", true).size() == 4 * 8);

  // The sdsc spoof is exactly what the live image and its own mask produce.
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    if (ds.records[i].spoof_kind != "sdsc") continue;
    const std::size_t s = by_id[ds.records[i].source_id()];
    Image expect = sdsc(ds.images[s], ds.masks[s], AugmentSpec{}, derive_seed(7, ds.records[i].sample_id)).image;
    quantize8(expect);
    CHECK(expect == ds.images[i]);
    break;
  }

  DatasetConfig bad = cfg;
  bad.n_identities = 1;
  CHECK_THROWS_AS(build_dataset(bad, AugmentSpec{}, 1), Error);
}

TEST_CASE("materialisation round trip and determinism") {
  DatasetConfig cfg;
  cfg.n_identities = 4;
  cfg.per_identity = 4;
  cfg.image_size = 24;
  cfg.test_identities = 1;
  cfg.val_per_identity = 1;
  const Dataset ds = build_dataset(cfg, AugmentSpec{}, 3);
  const fs::path a = scratch("a"), b = scratch("b");
  write_dataset(ds, a);
  write_dataset(build_dataset(cfg, AugmentSpec{}, 3), b);
  for (const auto& r : ds.records) {
    CHECK(fs::exists(a / r.path));
    CHECK(slurp(a / r.path) == slurp(b / r.path));
  }
  CHECK(slurp(a / "manifest.csv") == slurp(b / "manifest.csv"));
  CHECK(slurp(a / "manifest.csv").rfind("sample_id,identity_id,label,spoof_kind,split,path\n", 0) == 0);

  const Dataset back = read_dataset(a);
  CHECK(back.records == ds.records);
  CHECK(back.images == ds.images);
  CHECK(back.masks == ds.masks);
  CHECK(back.config.n_identities == 4);
  CHECK(back.config.image_size == 24);

  CHECK(build_dataset(cfg, AugmentSpec{}, 4).images != ds.images);
  CHECK_THROWS_AS(read_dataset(scratch("missing")), Error);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("manifest parsing errors name the file") {
  const fs::path dir = scratch("bad");
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "manifest.csv");
    out << "sample_id,identity_id,label,spoof_kind,split,path\nx,0,maybe,none,train,images/x.ppm\n";
  }
  try {
    read_manifest(dir / "manifest.csv");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
    CHECK(std::string(e.what()).find("manifest.csv:2") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("verification pairs") {
  DatasetConfig cfg;
  const Dataset ds = build_dataset(cfg, AugmentSpec{}, 7);
  const auto pairs = sample_pairs(ds.records, 40, 60, 5);
  CHECK(pairs.size() == 100);
  std::size_t gen = 0;
  std::set<std::pair<std::size_t, std::size_t>> unique;
  for (const auto& p : pairs) {
    const auto &a = ds.records[p.a], &b = ds.records[p.b];
    CHECK(a.live);
    CHECK(b.live);
    CHECK(a.split == "test");
    CHECK(b.split == "test");
    CHECK(p.genuine == (a.identity_id == b.identity_id));
    gen += p.genuine;
    unique.insert({p.a, p.b});
  }
  CHECK(gen == 40);
  CHECK(unique.size() == 100);
  const auto again = sample_pairs(ds.records, 40, 60, 5);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(again[i].a == pairs[i].a);
    CHECK(again[i].b == pairs[i].b);
  }
  // 4 test identities x 8 variants: 4 * C(8,2) = 112 genuine pairs exist.
  CHECK_NOTHROW(sample_pairs(ds.records, 112, 10, 1));
  CHECK_THROWS_AS(sample_pairs(ds.records, 113, 10, 1), Error);
}

}  // TEST_SUITE
