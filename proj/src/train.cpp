#include "unispoof/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "unispoof/config.hpp"
#include "unispoof/parallel.hpp"

namespace unispoof {

namespace {

// Evaluation chunk; fixed so results never depend on the worker count.
constexpr std::size_t kChunk = 16;

Tensor<float> image_batch(const Dataset& data, std::span<const std::size_t> records) {
  const Image& first = data.images.at(records[0]);
  const std::size_t per = first.data.size();
  std::vector<float> v(records.size() * per);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Image& img = data.images.at(records[i]);
    require(img.data.size() == per && img.channels == 3, ErrorCode::kShape,
            "sample '" + data.records[records[i]].sample_id + "' does not match the batch image shape");
    std::transform(img.data.begin(), img.data.end(), v.begin() + static_cast<std::ptrdiff_t>(i * per),
                   [](float p) { return (p - 0.5f) * 4.0f; });
  }
  return Tensor<float>::from({records.size(), first.height, first.width, 3}, std::move(v));
}

std::vector<std::span<const std::size_t>> chunks(const std::vector<std::size_t>& idx, std::size_t size) {
  std::vector<std::span<const std::size_t>> out;
  for (std::size_t b = 0; b < idx.size(); b += size) {
    out.emplace_back(idx.data() + b, std::min(size, idx.size() - b));
  }
  return out;
}

// Snapshot of parameter values, for restoring the best epoch.
std::vector<std::vector<float>> snapshot(const std::vector<Tensor<float>>& params) {
  std::vector<std::vector<float>> out;
  for (const auto& p : params) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

void restore(std::vector<Tensor<float>>& params, const std::vector<std::vector<float>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) std::copy(values[i].begin(), values[i].end(), params[i].data_mut().begin());
}

void check_finite(double loss, std::size_t epoch, const char* what) {
  require(std::isfinite(loss), ErrorCode::kNumerical,
          std::string(what) + " diverged: non-finite loss in epoch " + std::to_string(epoch));
}

// Shared epoch loop: `step` runs one minibatch and returns its loss,
// `evaluate` returns the full-pass loss of a record list.
template <typename Step, typename Eval>
TrainHistory run_epochs(const TrainConfig& cfg, const char* what, const std::vector<std::size_t>& train,
                        const std::vector<std::size_t>& val, std::vector<Tensor<float>>& params, Step step,
                        Eval evaluate) {
  TrainHistory h;
  h.initial_loss = evaluate(train);
  check_finite(h.initial_loss, 0, what);
  double best = std::numeric_limits<double>::infinity();
  auto best_values = snapshot(params);
  std::size_t bad = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::size_t> order = train;
    Rng(derive_seed(derive_seed(cfg.seed, what), epoch)).shuffle(order.begin(), order.end());
    double total = 0;
    for (auto batch : chunks(order, cfg.batch)) {
      const double loss = step(batch);
      check_finite(loss, epoch, what);
      total += loss * static_cast<double>(batch.size());
    }
    EpochRecord rec{epoch, total / static_cast<double>(order.size()), 0.0};
    rec.val_loss = evaluate(val.empty() ? train : val);
    check_finite(rec.val_loss, epoch, what);
    h.epochs.push_back(rec);
    if (rec.val_loss < best) {
      best = rec.val_loss;
      best_values = snapshot(params);
      h.best_epoch = epoch;
      bad = 0;
    } else if (++bad > 0 && bad >= cfg.patience) {
      h.stopped_early = true;
      break;
    }
  }
  restore(params, best_values);
  h.final_loss = evaluate(train);
  return h;
}

// Backbone parameters that influence the features at `tap`.
std::vector<Tensor<float>> params_up_to(const SwinBackbone<float>& backbone, const Tap& tap) {
  std::vector<Tensor<float>> out;
  for (const auto& p : backbone.params("backbone")) {
    bool used = true;
    if (!tap.final) {
      const std::string& n = p.name;
      used = n.rfind("backbone.patch_embed.", 0) == 0 || n.rfind("backbone.stages.0.", 0) == 0 ||
             n.rfind("backbone.stages.1.", 0) == 0;
      for (std::size_t b = 0; b <= tap.block && !used; ++b) {
        used = n.rfind("backbone.stages.2.blocks." + std::to_string(b) + ".", 0) == 0;
      }
    }
    if (used) out.push_back(p.tensor);
  }
  return out;
}

SwinBackbone<float> clone_backbone(const SwinBackbone<float>& src) {
  Rng rng(0);
  auto out = SwinBackbone<float>::init(src.config, rng);
  copy_params(out.params(), src.params());
  return out;
}

std::vector<float> row(const Tensor<float>& t, std::size_t i) {
  const std::size_t w = t.numel() / t.dim(0);
  return std::vector<float>(t.data().begin() + static_cast<std::ptrdiff_t>(i * w),
                            t.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * w));
}

}  // namespace

void TrainConfig::validate(const SwinConfig& swin) const {
  require(lr > 0 && std::isfinite(lr), ErrorCode::kInvalidArgument, "train: lr must be positive");
  require(batch >= 1, ErrorCode::kInvalidArgument, "train: batch must be at least 1");
  require(max_epochs >= 1, ErrorCode::kInvalidArgument, "train: max_epochs must be at least 1");
  tap.validate(swin);
}

TrainConfig desk_train_config() {
  TrainConfig c;
  c.lr = 0.005;
  c.batch = 4;
  c.max_epochs = 20;
  c.tap = Tap::at(3);
  return c;
}

TrainConfig desk_uad_train_config() {
  TrainConfig c = desk_train_config();
  c.lr = 0.01;
  c.max_epochs = 40;
  c.patience = 10;
  return c;
}

// ---------------------------------------------------------------- FRM

FrmModel FrmModel::init(const ModelConfig& config, std::vector<std::size_t> class_identity, std::uint64_t seed) {
  FrmModel m;
  m.config = config;
  m.config.arcface.classes = class_identity.size();
  m.config.validate();
  m.class_identity = std::move(class_identity);
  Rng rng(derive_seed(seed, "frm.init"));
  m.backbone = SwinBackbone<float>::init(m.config.swin, rng);
  m.frm = FrmHead<float>::init(m.config.swin.stage_dim(3), m.config.arcface.embedding_dim, rng);
  m.arcface = ArcFaceHead<float>::init(m.config.arcface, rng);
  return m;
}

Checkpoint FrmModel::to_checkpoint() const {
  Checkpoint c;
  c.meta = {{"kind", "frm"}, {"model", config}, {"class_identity", class_identity}};
  c.tensors = params();
  return c;
}

ParamList<float> FrmModel::params() const {
  ParamList<float> out = backbone.params("backbone");
  for (auto& p : frm.params("frm")) out.push_back(p);
  for (auto& p : arcface.params("arcface")) out.push_back(p);
  return out;
}

FrmModel FrmModel::from_checkpoint(const Checkpoint& ckpt) {
  require(ckpt.meta.contains("model") && ckpt.meta.contains("class_identity"), ErrorCode::kInvalidArgument,
          "checkpoint does not hold a recognition model");
  require(ckpt.find("frm.embed.weight") != nullptr, ErrorCode::kInvalidArgument, "checkpoint has no FRM head");
  FrmModel m = init(ckpt.meta.at("model").get<ModelConfig>(),
                    ckpt.meta.at("class_identity").get<std::vector<std::size_t>>(), 0);
  copy_params(m.params(), ckpt.tensors);
  return m;
}

std::vector<float> embed_image(const FrmModel& model, const Image& image) {
  Dataset one;
  one.images.push_back(image);
  one.records.resize(1);
  const std::size_t idx = 0;
  return row(frm_embed(model.frm, encode(model.backbone, image_batch(one, {&idx, 1})).final), 0);
}

std::vector<std::vector<float>> embed_records(const FrmModel& model, const Dataset& data,
                                              const std::vector<std::size_t>& records) {
  const auto parts = chunks(records, kChunk);
  std::vector<std::vector<float>> out(records.size());
  parallel_for(parts.size(), [&](std::size_t c) {
    const auto e = frm_embed(model.frm, encode(model.backbone, image_batch(data, parts[c])).final);
    for (std::size_t i = 0; i < parts[c].size(); ++i) out[c * kChunk + i] = row(e, i);
  });
  return out;
}

FrmRun train_frm(const TrainConfig& cfg, const ModelConfig& config, const Dataset& data) {
  cfg.validate(config.swin);
  const auto train = data.indices("train", true);
  auto val = data.indices("val", true);
  std::set<std::size_t> ids;
  for (std::size_t i : train) ids.insert(data.records[i].identity_id);
  require(ids.size() >= 2, ErrorCode::kInvalidArgument,
          "train_frm: the training split holds " + std::to_string(ids.size()) + " identity; at least 2 are required");
  std::map<std::size_t, std::size_t> label_of;
  std::vector<std::size_t> class_identity(ids.begin(), ids.end());
  for (std::size_t c = 0; c < class_identity.size(); ++c) label_of[class_identity[c]] = c;
  std::erase_if(val, [&](std::size_t i) { return !label_of.count(data.records[i].identity_id); });

  FrmRun run{FrmModel::init(config, class_identity, cfg.seed), {}};
  FrmModel& m = run.model;
  auto labels = [&](std::span<const std::size_t> batch) {
    std::vector<std::size_t> out;
    for (std::size_t i : batch) out.push_back(label_of.at(data.records[i].identity_id));
    return out;
  };
  auto params = tensors_of(m.params());
  auto step = [&](std::span<const std::size_t> batch) {
    Tape<float> tape;
    Tape<float>::Scope scope(&tape);
    const auto y = labels(batch);
    auto loss = arcface_loss(m.arcface, frm_embed(m.frm, encode(m.backbone, image_batch(data, batch)).final), y);
    const double value = loss.item();
    if (!std::isfinite(value)) return value;
    tape.backward(loss);
    sgd_step(std::span<Tensor<float>>(params), static_cast<float>(cfg.lr));
    return value;
  };
  auto evaluate = [&](const std::vector<std::size_t>& records) {
    const auto parts = chunks(records, kChunk);
    std::vector<double> sums(parts.size());
    parallel_for(parts.size(), [&](std::size_t c) {
      const auto y = labels(parts[c]);
      const auto e = frm_embed(m.frm, encode(m.backbone, image_batch(data, parts[c])).final);
      sums[c] = arcface_loss(m.arcface, e, y).item() * static_cast<double>(parts[c].size());
    });
    double total = 0;
    for (double s : sums) total += s;
    return total / static_cast<double>(records.size());
  };
  run.history = run_epochs(cfg, "train_frm", train, val, params, step, evaluate);
  return run;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  const double denom = std::sqrt(aa * bb);
  return denom > 0 ? std::clamp(ab / denom, -1.0, 1.0) : 0.0;
}

VerifyResult verify(const FrmModel& model, const Dataset& data, const std::vector<VerificationPair>& pairs) {
  std::vector<std::size_t> used;
  for (const auto& p : pairs) used.insert(used.end(), {p.a, p.b});
  std::sort(used.begin(), used.end());
  used.erase(std::unique(used.begin(), used.end()), used.end());
  const auto emb = embed_records(model, data, used);
  auto at = [&](std::size_t r) { return emb[static_cast<std::size_t>(std::lower_bound(used.begin(), used.end(), r) - used.begin())]; };
  VerifyResult v;
  v.pairs = pairs;
  std::vector<double> gen, imp;
  for (const auto& p : pairs) {
    const double s = cosine(at(p.a), at(p.b));
    v.scores.push_back(s);
    (p.genuine ? gen : imp).push_back(s);
  }
  v.eer = compute_eer(gen, imp);
  v.accuracy = verification_accuracy(gen, imp, v.eer.threshold);
  return v;
}

// ---------------------------------------------------------------- UAD

namespace {

std::vector<std::vector<float>> tap_features(const SwinBackbone<float>& backbone, const Tap& tap, const Dataset& data,
                                             const std::vector<std::size_t>& records) {
  const auto parts = chunks(records, kChunk);
  std::vector<std::vector<float>> out(records.size());
  parallel_for(parts.size(), [&](std::size_t c) {
    const auto f = forward_tap(backbone, image_batch(data, parts[c]), tap);
    for (std::size_t i = 0; i < parts[c].size(); ++i) out[c * kChunk + i] = row(f, i);
  });
  return out;
}

Tensor<float> feature_batch(const std::vector<std::vector<float>>& features, std::span<const std::size_t> rows,
                            const Shape& one) {
  const std::size_t per = shape_numel(one);
  std::vector<float> v(rows.size() * per);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(features[rows[i]].begin(), features[rows[i]].end(), v.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return Tensor<float>::from({rows.size(), one[1], one[2], one[3]}, std::move(v));
}

std::vector<float> bona_fide_labels(const Dataset& data, std::span<const std::size_t> records) {
  std::vector<float> y;
  for (std::size_t i : records) y.push_back(data.records[i].live ? 1.0f : 0.0f);
  return y;
}

PadReport pad_report(const Dataset& data, const std::vector<std::size_t>& records, std::vector<double> scores) {
  PadReport r;
  r.records = records;
  r.scores = std::move(scores);
  std::vector<bool> bona;
  std::vector<double> live, attack;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const bool b = data.records[records[i]].live;
    bona.push_back(b);
    (b ? live : attack).push_back(r.scores[i]);
  }
  r.at_half = compute_apcer_bpcer(r.scores, bona, 0.5);
  r.eer = compute_eer(live, attack);
  return r;
}

}  // namespace

PadReport evaluate_uad(const UadHead<float>& head, const SwinBackbone<float>& backbone, const Tap& tap,
                       const Dataset& data, const std::vector<std::size_t>& records) {
  const auto parts = chunks(records, kChunk);
  std::vector<double> scores(records.size());
  parallel_for(parts.size(), [&](std::size_t c) {
    const auto p = uad_forward(head, forward_tap(backbone, image_batch(data, parts[c]), tap));
    for (std::size_t i = 0; i < parts[c].size(); ++i) scores[c * kChunk + i] = p.data()[i];
  });
  return pad_report(data, records, std::move(scores));
}

double spoof_score(const UadModel& model, const Image& image) {
  Dataset one;
  one.images.push_back(image);
  one.records.resize(1);
  const std::size_t idx = 0;
  return uad_forward(model.head, forward_tap(model.base.backbone, image_batch(one, {&idx, 1}), model.tap)).data()[0];
}

UadRun train_uad(const TrainConfig& cfg, const FrmModel& base, const Dataset& data) {
  cfg.validate(base.config.swin);
  const auto train = data.indices("train"), val = data.indices("val"), test = data.indices("test");
  std::size_t live = 0;
  for (std::size_t i : train) live += data.records[i].live;
  require(live > 0 && live < train.size(), ErrorCode::kInvalidArgument,
          "train_uad: the training split needs both bona fide and spoof samples (got " + std::to_string(live) +
              " bona fide of " + std::to_string(train.size()) + ")");

  UadRun run;
  run.tap = cfg.tap;
  Rng rng(derive_seed(cfg.seed, "uad.init"));
  run.head = UadHead<float>::init(base.config.uad_for(cfg.tap), rng);
  run.backbone_hash_before = params_sha256(base.backbone.params());
  run.backbone = cfg.freeze_backbone ? base.backbone : clone_backbone(base.backbone);

  std::vector<Tensor<float>> params = tensors_of(run.head.params());
  if (cfg.freeze_backbone) {
    // The backbone never enters the tape: its features are computed once.
    const Shape one = tap_shape(base.config.swin, cfg.tap);
    std::vector<std::size_t> all(data.records.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto features = tap_features(run.backbone, cfg.tap, data, all);
    auto step = [&](std::span<const std::size_t> batch) {
      Tape<float> tape;
      Tape<float>::Scope scope(&tape);
      const auto y = bona_fide_labels(data, batch);
      auto loss = bce_loss(uad_forward(run.head, feature_batch(features, batch, one)), std::span<const float>(y));
      const double value = loss.item();
      if (!std::isfinite(value)) return value;
      tape.backward(loss);
      sgd_step(std::span<Tensor<float>>(params), static_cast<float>(cfg.lr));
      return value;
    };
    auto evaluate = [&](const std::vector<std::size_t>& records) {
      const auto parts = chunks(records, kChunk);
      std::vector<double> sums(parts.size());
      parallel_for(parts.size(), [&](std::size_t c) {
        const auto y = bona_fide_labels(data, parts[c]);
        sums[c] = bce_loss(uad_forward(run.head, feature_batch(features, parts[c], one)), std::span<const float>(y)).item() *
                  static_cast<double>(parts[c].size());
      });
      double total = 0;
      for (double s : sums) total += s;
      return total / static_cast<double>(records.size());
    };
    run.history = run_epochs(cfg, "train_uad", train, val, params, step, evaluate);
    std::vector<double> scores(test.size());
    const auto parts = chunks(test, kChunk);
    parallel_for(parts.size(), [&](std::size_t c) {
      const auto p = uad_forward(run.head, feature_batch(features, parts[c], one));
      for (std::size_t i = 0; i < parts[c].size(); ++i) scores[c * kChunk + i] = p.data()[i];
    });
    if (!test.empty()) run.test = pad_report(data, test, std::move(scores));
  } else {
    for (auto& t : params_up_to(run.backbone, cfg.tap)) params.push_back(t);
    auto step = [&](std::span<const std::size_t> batch) {
      Tape<float> tape;
      Tape<float>::Scope scope(&tape);
      const auto y = bona_fide_labels(data, batch);
      auto loss = bce_loss(uad_forward(run.head, forward_tap(run.backbone, image_batch(data, batch), cfg.tap)),
                           std::span<const float>(y));
      const double value = loss.item();
      if (!std::isfinite(value)) return value;
      tape.backward(loss);
      sgd_step(std::span<Tensor<float>>(params), static_cast<float>(cfg.lr));
      return value;
    };
    auto evaluate = [&](const std::vector<std::size_t>& records) {
      const auto parts = chunks(records, kChunk);
      std::vector<double> sums(parts.size());
      parallel_for(parts.size(), [&](std::size_t c) {
        const auto y = bona_fide_labels(data, parts[c]);
        sums[c] = bce_loss(uad_forward(run.head, forward_tap(run.backbone, image_batch(data, parts[c]), cfg.tap)),
                           std::span<const float>(y))
                      .item() *
                  static_cast<double>(parts[c].size());
      });
      double total = 0;
      for (double s : sums) total += s;
      return total / static_cast<double>(records.size());
    };
    run.history = run_epochs(cfg, "train_uad", train, val, params, step, evaluate);
    if (!test.empty()) run.test = evaluate_uad(run.head, run.backbone, cfg.tap, data, test);
  }

  if (cfg.freeze_backbone) {
    run.backbone_hash_after = params_sha256(base.backbone.params());
    require(run.backbone_hash_after == run.backbone_hash_before, ErrorCode::kRuntime,
            "train_uad: frozen backbone weights changed during training");
  } else {
    run.backbone_hash_after = params_sha256(run.backbone.params());
  }
  return run;
}

Checkpoint uad_checkpoint(const UadRun& run, const FrmModel& base, const TrainConfig& cfg) {
  Checkpoint c;
  c.meta = {{"kind", "uad"},
            {"model", base.config},
            {"class_identity", base.class_identity},
            {"train", cfg},
            {"tap", run.tap},
            {"frozen", cfg.freeze_backbone},
            {"backbone_sha256", run.backbone_hash_after},
            {"history", run.history}};
  // self-contained: the backbone the head was trained on travels with it
  c.tensors = run.backbone.params("backbone");
  for (auto& p : base.frm.params("frm")) c.tensors.push_back(p);
  for (auto& p : base.arcface.params("arcface")) c.tensors.push_back(p);
  for (auto& p : run.head.params("uad")) c.tensors.push_back(p);
  return c;
}

UadModel UadModel::from_checkpoint(const Checkpoint& ckpt) {
  require(ckpt.meta.value("kind", "") == "uad" && ckpt.meta.contains("tap"), ErrorCode::kInvalidArgument,
          "checkpoint does not hold an attack-detection head");
  UadModel m;
  m.base = FrmModel::from_checkpoint(ckpt);
  m.tap = ckpt.meta.at("tap").get<Tap>();
  Rng rng(0);
  m.head = UadHead<float>::init(m.base.config.uad_for(m.tap), rng);
  copy_params(m.head.params("uad"), ckpt.with_prefix("uad"));
  return m;
}

std::vector<Tap> plan_sweep(const SwinConfig& swin) {
  std::vector<Tap> taps;
  for (std::size_t b = 0; b < swin.depths[2]; ++b) taps.push_back(Tap::at(b));
  taps.push_back(Tap::final_stage());
  return taps;
}

SweepResult sweep_blocks(const TrainConfig& cfg, const FrmModel& base, const Dataset& data) {
  const auto taps = plan_sweep(base.config.swin);
  SweepResult out;
  out.entries.resize(taps.size());
  parallel_for(taps.size(), [&](std::size_t i) {
    TrainConfig c = cfg;
    c.tap = taps[i];
    c.seed = derive_seed(cfg.seed, "tap." + taps[i].str());
    out.entries[i] = {taps[i], train_uad(c, base, data)};
  });
  for (std::size_t i = 1; i < out.entries.size(); ++i) {
    if (out.entries[i].run.test.at_half.accuracy > out.entries[out.best].run.test.at_half.accuracy) out.best = i;
  }
  return out;
}

}  // namespace unispoof
