// Acceptance report: one PASS/FAIL line per criterion. Pass criterion
// numbers to run a subset; exit status 1 if any selected criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "hilo_oracle.hpp"
#include "oracles.hpp"
#include "spectrum.hpp"
#include "swin_oracle.hpp"
#include "unispoof/augment.hpp"
#include "unispoof/config.hpp"
#include "unispoof/gradcheck.hpp"
#include "unispoof/heads.hpp"
#include "unispoof/metrics.hpp"
#include "unispoof/pipeline.hpp"
#include "unispoof/train.hpp"

using namespace unispoof;
using oracle::Mat;
using oracle::values;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Collects sub-check outcomes and a detail line for one criterion.
struct Verdict {
  bool ok = true;
  std::ostringstream detail;

  void check(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

// ---- 1: parameter reconciliation

void criterion_1(Verdict& v) {
  const auto t0 = Clock::now();
  ModelConfig m = swin_base_paper_model();
  m.arcface.classes = 10572;
  const ParamTable t = count_params(m, Tap::at(3));
  const double secs = seconds_since(t0);
  const double backbone = static_cast<double>(t.get("backbone"));
  const std::size_t arc = t.get("arcface_head"), uad = t.get("uad_head");
  v.check(arc == 10825728, "arcface head == 10,825,728");
  v.check(std::abs(backbone - 86.7e6) <= 0.03 * 86.7e6, "backbone within 3% of 86.7M");
  v.check(uad >= 1000000 && uad <= 1500000, "uad head in [1.0M, 1.5M]");
  v.check(secs < 5.0, "runtime < 5 s");
  v.detail << "arcface " << arc << ", backbone " << t.get("backbone") << " (" << (backbone / 86.7e6 - 1) * 100
           << "% vs 86.7M), uad " << uad << ", " << secs << " s";
}

// ---- 2: gradient suite

void criterion_2(Verdict& v) {
  const auto t0 = Clock::now();
  const auto suite = gradcheck_suite(0);
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string worst_name;
  bool end_to_end = false;
  for (const auto& e : suite) {
    v.check(e.pass(), e.name);
    v.check(e.checked > 0, e.name + " checked nothing");
    if (e.max_rel_error >= worst) {
      worst = e.max_rel_error;
      worst_name = e.name;
    }
    end_to_end = end_to_end || e.name == "model.end_to_end";
  }
  v.check(end_to_end, "end-to-end model check present");
  v.check(secs < 120.0, "runtime < 2 min");
  v.detail << suite.size() << " checks, worst " << worst << " (" << worst_name << ") <= " << kGradTolerance << ", "
           << secs << " s";
}

// ---- 3: shape contracts

void criterion_3(Verdict& v) {
  const auto t0 = Clock::now();
  const ModelConfig m = swin_base_paper_model();
  const auto taps = plan_sweep(m.swin);
  std::size_t stage3 = 0;
  for (const auto& tap : taps) {
    const Shape s = tap_shape(m.swin, tap);
    if (tap.final) {
      v.check(s == Shape{1, 7, 7, 1024}, "final tap is 7x7x1024, got " + shape_str(s));
    } else {
      v.check(s == Shape{1, 14, 14, 512}, "tap " + tap.str() + " is 14x14x512, got " + shape_str(s));
      ++stage3;
    }
  }
  v.check(stage3 == 18, "18 stage-3 taps");
  v.check(taps.size() == 19, "19 sweep reports");
  v.check(!taps.empty() && taps.back().final, "sweep ends at the final tap");
  const double secs = seconds_since(t0);
  v.check(secs < 60.0, "runtime < 1 min");
  v.detail << stage3 << " taps of 14x14x512 + final 7x7x1024, " << taps.size() << " sweep entries, " << secs << " s";
}

// ---- 4: attention correctness

void criterion_4(Verdict& v) {
  Rng rng(4);
  std::size_t layouts = 0;
  bool bijection = true;
  for (std::size_t h = 1; h <= 16; ++h) {
    for (std::size_t w = 1; w <= 16; ++w) {
      for (std::size_t M = 1; M <= std::min(h, w); ++M) {
        if (h % M || w % M) continue;
        for (bool shifted : {false, true}) {
          const auto L = build_window_layout(h, w, M, shifted);
          std::vector<std::uint32_t> sorted = *L.partition;
          std::sort(sorted.begin(), sorted.end());
          for (std::size_t i = 0; i < sorted.size(); ++i) bijection = bijection && sorted[i] == i;
          for (std::size_t r = 0; r < sorted.size(); ++r) bijection = bijection && (*L.reverse)[(*L.partition)[r]] == r;
          auto x = oracle::random_tensor({1, h, w, 2}, rng);
          bijection = bijection && values(window_reverse(window_partition(x, L), L)) == values(x);
          ++layouts;
        }
      }
    }
  }
  v.check(bijection, "(a) partition/reverse bijection");

  struct BlockCase {
    std::size_t h, w, M, dim, heads;
  };
  double swin_err = 0;
  std::uint64_t seed = 100;
  for (const BlockCase& c : {BlockCase{8, 8, 4, 8, 2}, BlockCase{12, 8, 4, 8, 4}, BlockCase{8, 8, 2, 12, 3},
                             BlockCase{16, 16, 4, 8, 2}, BlockCase{6, 6, 3, 6, 2}}) {
    auto b = oracle::random_block(c.h, c.w, c.M, true, c.dim, c.heads, true, ++seed);
    auto x = oracle::random_tensor({1, c.h, c.w, c.dim}, rng);
    swin_err = std::max(swin_err, oracle::max_abs_diff(oracle::block_oracle(b, values(x), c.h, c.w),
                                                       values(swin_block(b, x))));
  }
  v.check(swin_err <= 1e-6, "(b) shifted-window attention vs brute force");

  // Degenerate HiLo configs collapse to global multi-head attention.
  double hilo_err = 0;
  {
    auto p = oracle::random_hilo({8, 4, 0, 1}, 11);
    auto x = oracle::random_tensor({1, 3, 5, 8}, rng);
    const std::size_t T = 15;
    const Mat q = oracle::apply(p.lo_q, values(x), T), kv = oracle::apply(p.lo_kv, values(x), T);
    const Mat want = oracle::apply(
        p.lo_proj,
        oracle::attention(q, oracle::columns(kv, T, 16, 0, 8), oracle::columns(kv, T, 16, 8, 16), T, T, 4, 2), T);
    hilo_err = std::max(hilo_err, oracle::max_abs_diff(want, values(hilo_attend(p, x))));
  }
  {
    auto p = oracle::random_hilo({8, 2, 2, 4}, 21);
    auto x = oracle::random_tensor({1, 4, 4, 8}, rng);
    const std::size_t T = 16;
    const Mat qkv = oracle::apply(p.hi_qkv, values(x), T);
    const Mat want = oracle::apply(p.hi_proj,
                                   oracle::attention(oracle::columns(qkv, T, 24, 0, 8), oracle::columns(qkv, T, 24, 8, 16),
                                                     oracle::columns(qkv, T, 24, 16, 24), T, T, 2, 4),
                                   T);
    hilo_err = std::max(hilo_err, oracle::max_abs_diff(want, values(hilo_attend(p, x))));
  }
  v.check(hilo_err <= 1e-6, "(c) degenerate HiLo vs global attention");
  v.detail << "(a) " << layouts << " layouts, (b) max err " << swin_err << ", (c) max err " << hilo_err;
}

// ---- 5: loss identities

void criterion_5(Verdict& v) {
  Rng rng(5);
  double ce_err = 0;
  for (int batch = 0; batch < 50; ++batch) {
    const std::size_t n = 1 + rng.below(8), c = 2 + rng.below(10), d = 2 + rng.below(16);
    ArcFaceHead<double> head = ArcFaceHead<double>::init({c, d, 1.0, 0.0}, rng);
    oracle::randomize(head.weight, rng, -1.0, 1.0);
    auto emb = l2_normalize(oracle::random_tensor({n, d}, rng));
    std::vector<std::size_t> y(n);
    for (auto& l : y) l = rng.below(c);
    const Mat cos = values(arcface_cosines(head, emb));
    double want = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -1e300, sum = 0;
      for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, cos[i * c + j]);
      for (std::size_t j = 0; j < c; ++j) sum += std::exp(cos[i * c + j] - mx);
      want += -(cos[i * c + y[i]] - mx - std::log(sum));
    }
    want /= double(n);
    ce_err = std::max(ce_err, std::abs(arcface_loss(head, emb, y).item() - want));
  }
  v.check(ce_err <= 1e-7, "ArcFace(m=0, s=1) == softmax cross-entropy");

  const std::vector<double> labels{1.0, 0.0};
  const double bce = bce_loss(Tensor<double>::from({2}, {0.5, 0.5}), std::span<const double>(labels)).item();
  v.check(std::abs(bce - std::log(2.0)) <= 1e-12, "BCE at 0.5 == ln 2");

  // Correctly classified fixtures: the target cosine is the largest.
  std::size_t fixtures = 0;
  bool monotone = true;
  for (int f = 0; f < 50; ++f) {
    const std::size_t c = 2 + rng.below(8);
    std::vector<double> cos(c);
    for (auto& x : cos) x = rng.uniform(-0.9, 0.6);
    const std::size_t target = rng.below(c);
    cos[target] = rng.uniform(0.65, 0.99);
    const auto t = Tensor<double>::from({1, c}, cos);
    const std::vector<std::size_t> y{target};
    double prev = -1;
    for (int k = 0; k <= 10; ++k) {
      const double l = cross_entropy(arcface_logits(t, std::span<const std::size_t>(y), 32.0, 0.05 * k),
                                     std::span<const std::size_t>(y))
                           .item();
      monotone = monotone && l >= prev;
      prev = l;
    }
    ++fixtures;
  }
  v.check(monotone, "loss non-decreasing in m");
  v.detail << "softmax max err " << ce_err << " over 50 batches, BCE(0.5) - ln2 = " << bce - std::log(2.0) << ", "
           << fixtures << " margin fixtures monotone over m in [0, 0.5]";
}

// ---- 6: metric oracle

void criterion_6(Verdict& v) {
  Rng rng(6);
  double eer_err = 0;
  bool thresholds = true;
  for (int inst = 0; inst < 100; ++inst) {
    std::vector<double> g(1 + rng.below(60)), im(1 + rng.below(60));
    const bool coarse = inst % 2 == 0;
    for (auto& x : g) x = coarse ? double(rng.below(10)) / 10 : rng.uniform(0.2, 1.0);
    for (auto& x : im) x = coarse ? double(rng.below(10)) / 10 : rng.uniform(0.0, 0.8);
    const auto r = compute_eer(g, im);
    const auto b = oracle::brute_force_eer(g, im);
    eer_err = std::max(eer_err, std::abs(r.eer - b.eer));
    thresholds = thresholds && r.threshold == b.threshold;
  }
  v.check(eer_err <= 1e-12 && thresholds, "matches the exhaustive sweep");

  std::vector<double> g(200), im(300);
  for (auto& x : g) x = rng.uniform(0.6, 1.0);
  for (auto& x : im) x = rng.uniform(-1.0, 0.4);
  const double separated = compute_eer(g, im).eer;
  v.check(separated == 0.0, "perfect separation gives 0");

  std::vector<double> a(1000), b(1000);
  for (auto& x : a) x = rng.normal();
  for (auto& x : b) x = rng.normal();
  const double same = compute_eer(a, b).eer;
  v.check(std::abs(same - 0.5) <= 0.05, "same distribution gives 0.5 +- 0.05");
  v.detail << "100 sets, max |diff| " << eer_err << ", separated " << separated << ", same-distribution " << same;
}

// ---- 7 and 8: desk-scale training

struct SeedRun {
  std::uint64_t seed = 0;
  double loss_ratio = 0, frm_eer = 0, uad_accuracy = 0;
  double frm_secs = 0, uad_secs = 0;
  std::size_t frm_epochs = 0;
  bool frozen_hash_same = false;
};

std::vector<SeedRun> desk_runs() {
  std::vector<SeedRun> runs;
  for (std::uint64_t seed : {0, 1, 2}) {
    RunConfig c;
    c.seed = c.train.seed = c.uad_train.seed = seed;
    c.uad_train.freeze_backbone = true;
    const Dataset ds = build_dataset(c.dataset, c.augment, seed);
    SeedRun r;
    r.seed = seed;
    auto t0 = Clock::now();
    const FrmRun frm = train_frm(c.train, c.model, ds);
    r.frm_secs = seconds_since(t0);
    r.frm_epochs = frm.history.epochs.size();
    r.loss_ratio = frm.history.final_loss / frm.history.initial_loss;
    const auto pairs = sample_pairs(ds.records, c.genuine_pairs, c.impostor_pairs, derive_seed(seed, "pairs"));
    r.frm_eer = verify(frm.model, ds, pairs).eer.eer;
    const std::string before = params_sha256(frm.model.backbone.params());
    t0 = Clock::now();
    const UadRun uad = train_uad(c.uad_train, frm.model, ds);
    r.uad_secs = seconds_since(t0);
    r.uad_accuracy = uad.test.at_half.accuracy;
    r.frozen_hash_same = params_sha256(uad.backbone.params()) == before &&
                         params_sha256(frm.model.backbone.params()) == before && uad.backbone_hash_after == before;
    runs.push_back(r);
  }
  return runs;
}

const std::vector<SeedRun>& cached_desk_runs() {
  static const std::vector<SeedRun> runs = desk_runs();
  return runs;
}

void criterion_7(Verdict& v) {
  for (const auto& r : cached_desk_runs()) {
    const std::string s = "seed " + std::to_string(r.seed) + " ";
    v.check(r.frm_epochs <= 20, s + "FRM within 20 epochs");
    v.check(r.loss_ratio <= 0.5, s + "FRM loss reduced by >= 50%");
    v.check(r.frm_eer <= 0.25, s + "FRM EER <= 0.25");
    v.check(r.uad_accuracy >= 0.9, s + "UAD accuracy >= 0.9");
    v.check(r.frm_secs <= 900 && r.uad_secs <= 900, s + "each run <= 15 min");
    v.detail << "seed " << r.seed << ": loss x" << r.loss_ratio << ", EER " << r.frm_eer << ", UAD acc "
             << r.uad_accuracy << " (" << r.frm_secs << " s + " << r.uad_secs << " s); ";
  }
}

std::map<std::string, std::string> snapshot_dir(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    files[fs::relative(e.path(), dir).string()] = s.str();
  }
  return files;
}

void criterion_8(Verdict& v) {
  std::size_t frozen = 0;
  for (const auto& r : cached_desk_runs()) {
    v.check(r.frozen_hash_same, "seed " + std::to_string(r.seed) + " frozen backbone hash unchanged");
    frozen += r.frozen_hash_same;
  }

  // Whole pipeline twice with the same seed and config, compared byte for byte.
  const fs::path root = fs::temp_directory_path() / "unispoof_acceptance_rerun";
  fs::remove_all(root);
  fs::create_directories(root);
  const json config = json::parse(R"({
    "dataset": {"n_identities": 8, "per_identity": 4, "test_identities": 2, "val_per_identity": 1},
    "train": {"max_epochs": 3, "patience": 3},
    "uad_train": {"max_epochs": 3, "patience": 3},
    "genuine_pairs": 10, "impostor_pairs": 10})");
  write_json_file(config, root / "config.json");
  std::vector<std::map<std::string, std::string>> runs;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path out = root / ("run" + std::to_string(rep));
    const json base = {{"config", (root / "config.json").string()},
                       {"set", {{"out", out.string()}, {"seed", 8}}},
                       {"timestamp", false}};
    for (const char* cmd : {"gen-data", "train-frm", "train-uad", "sweep-blocks", "verify", "eval", "count-params"}) {
      run_command(cmd, base);
    }
    json g = base;
    g["only"] = "op.matmul";
    run_command("gradcheck", g);
    json a = base;
    a["input"] = (out / "data" / "images" / "id000_v00.ppm").string();
    a["kind"] = "sdsc";
    run_command("augment", a);
    runs.push_back(snapshot_dir(out));
  }
  // the run directory name appears in reports, so compare with it normalised
  std::size_t identical = 0;
  for (const auto& [name, bytes] : runs[0]) {
    const auto it = runs[1].find(name);
    std::string a = bytes, b = it == runs[1].end() ? "" : it->second;
    for (std::string* s : {&a, &b}) {
      for (const std::string from : {(root / "run0").string(), (root / "run1").string()}) {
        for (std::size_t p = s->find(from); p != std::string::npos; p = s->find(from, p)) s->replace(p, from.size(), "RUN");
      }
    }
    identical += a == b;
  }
  v.check(runs[0].size() == runs[1].size() && identical == runs[0].size(), "pipeline re-run byte-identical");
  v.detail << frozen << "/3 frozen runs keep the backbone hash; " << identical << "/" << runs[0].size()
           << " artifacts identical across re-runs";
  fs::remove_all(root);
}

// ---- 9: augmentation invariants

Image smooth_image(std::size_t n) {
  Image img(n, n, 3);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double d = std::hypot(double(x) - n / 2.0, double(y) - n / 2.0) / n;
      img.at(y, x, 0) = static_cast<float>(d < 0.3 ? 0.8 : 0.2 + 0.3 * x / n);
      img.at(y, x, 1) = static_cast<float>(d < 0.3 ? 0.6 : 0.3);
      img.at(y, x, 2) = static_cast<float>(d < 0.3 ? 0.5 : 0.4 + 0.2 * y / n);
    }
  }
  return img;
}

bool in_unit_range(const Image& img) {
  return std::all_of(img.data.begin(), img.data.end(), [](float x) { return x >= 0.0f && x <= 1.0f; });
}

void criterion_9(Verdict& v) {
  Rng rng(9);
  Image noise(32, 32, 3);
  for (auto& x : noise.data) x = static_cast<float>(rng.uniform());
  v.check(color_jitter(noise, AugmentSpec::identity(), 42) == noise, "identity jitter is a no-op");
  AugmentSpec zero;
  zero.moire_amplitude = 0.0;
  v.check(moire_synthesize(noise, zero, 5) == noise, "zero-amplitude moire is a no-op");

  const Image img = smooth_image(32);
  const Image face = default_face_mask(32, 32);
  AugmentSpec spec;
  bool convex = true;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto r = sdsc(img, face, spec, seed);
    for (std::size_t i = 0; i < r.image.data.size(); ++i) {
      const float lo = std::min(r.source.data[i], r.target.data[i]), hi = std::max(r.source.data[i], r.target.data[i]);
      convex = convex && r.image.data[i] >= lo && r.image.data[i] <= hi;
    }
  }
  v.check(convex, "sdsc blend is convex per pixel");
  v.check(sdsc(img, Image(32, 32, 1, 0.0f), spec, 3).image == img, "mask zero returns the original");
  v.check(sdsc(img, Image(32, 32, 1, 1.0f), AugmentSpec::identity(), 3).image == img,
          "mask one with an identity source returns the original");

  bool in_range = true;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    in_range = in_range && in_unit_range(spsc(img, spec, seed).image) && in_unit_range(sdsc(img, face, spec, seed).image);
  }
  v.check(in_range, "1000-seed sweep stays in [0, 1]");

  const std::size_t n = 256;
  const Image gray(n, n, 3, 0.5f);
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MoireParams p = sample_moire(spec, n, n, seed);
    const Image out = moire_synthesize(gray, spec, seed);
    std::vector<double> diff(n * n);
    for (std::size_t i = 0; i < n * n; ++i) diff[i] = double(out.data[3 * i]) - 0.5;
    worst = std::max(worst, std::abs(oracle::spectral_peak(diff, n) - p.frequency) / p.frequency);
  }
  v.check(worst <= 0.1, "moire spectral peak within 10% on every seed");
  v.detail << "no-ops hold, convex over 50 seeds, 1000 seeds in range, worst spectral-peak error " << worst * 100
           << "% over 20 seeds";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance report"};
  std::vector<int> only;
  app.add_option("criteria", only, "criterion numbers to run (default: all)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  const std::map<int, std::function<void(Verdict&)>> criteria{
      {1, criterion_1}, {2, criterion_2}, {3, criterion_3}, {4, criterion_4}, {5, criterion_5},
      {6, criterion_6}, {7, criterion_7}, {8, criterion_8}, {9, criterion_9}};
  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (const auto& [id, run] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    Verdict v;
    try {
      run(v);
    } catch (const std::exception& e) {
      v.ok = false;
      v.detail << "[error: " << e.what() << "]";
    }
    std::printf("criterion %d: %s  %s\n", id, v.ok ? "PASS" : "FAIL", v.detail.str().c_str());
    std::fflush(stdout);
    failed += !v.ok;
  }
  return failed == 0 ? 0 : 1;
}
