#include "unispoof/config.hpp"

#include <fstream>
#include <set>

namespace unispoof {

namespace {

// Reads present keys into fields and rejects keys it was never asked for.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    require(j.is_object(), ErrorCode::kInvalidArgument, where_ + ": expected a JSON object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      require(seen_.count(key) > 0, ErrorCode::kInvalidArgument, where_ + ": unknown key '" + key + "'");
    }
  }

  template <typename V>
  Reader& operator()(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return *this;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      fail(ErrorCode::kInvalidArgument, where_ + "." + key + ": " + e.what());
    }
    return *this;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

void to_json(json& j, const Range& r) { j = json::array({r.lo, r.hi}); }
void from_json(const json& j, Range& r) {
  require(j.is_array() && j.size() == 2, ErrorCode::kInvalidArgument, "range: expected [lo, hi]");
  r = {j[0].get<double>(), j[1].get<double>()};
}

void to_json(json& j, const SwinConfig& c) {
  j = {{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"in_channels", c.in_channels},
       {"embed_dim", c.embed_dim},   {"depths", c.depths},           {"heads", c.heads},
       {"window", c.window},         {"mlp_ratio", c.mlp_ratio},     {"use_relative_bias", c.use_relative_bias}};
}
void from_json(const json& j, SwinConfig& c) {
  Reader(j, "swin")("image_size", c.image_size)("patch_size", c.patch_size)("in_channels", c.in_channels)(
      "embed_dim", c.embed_dim)("depths", c.depths)("heads", c.heads)("window", c.window)("mlp_ratio", c.mlp_ratio)(
      "use_relative_bias", c.use_relative_bias);
}

void to_json(json& j, const ArcFaceConfig& c) {
  j = {{"classes", c.classes}, {"embedding_dim", c.embedding_dim}, {"scale", c.scale}, {"margin", c.margin}};
}
void from_json(const json& j, ArcFaceConfig& c) {
  Reader(j, "arcface")("classes", c.classes)("embedding_dim", c.embedding_dim)("scale", c.scale)("margin", c.margin);
}

void to_json(json& j, const HiLoConfig& c) {
  j = {{"channels", c.channels}, {"total_heads", c.total_heads}, {"hi_heads", c.hi_heads}, {"window", c.window}};
}
void from_json(const json& j, HiLoConfig& c) {
  Reader(j, "hilo")("channels", c.channels)("total_heads", c.total_heads)("hi_heads", c.hi_heads)("window", c.window);
}

void to_json(json& j, const UadHeadConfig& c) {
  j = {{"hilo", c.hilo},
       {"grid", c.grid},
       {"conv1_filters", c.conv1_filters},
       {"conv2_filters", c.conv2_filters},
       {"hidden", c.hidden}};
}
void from_json(const json& j, UadHeadConfig& c) {
  Reader(j, "uad")("hilo", c.hilo)("grid", c.grid)("conv1_filters", c.conv1_filters)("conv2_filters", c.conv2_filters)(
      "hidden", c.hidden);
}

void to_json(json& j, const ModelConfig& c) {
  j = {{"preset", c.preset}, {"swin", c.swin}, {"arcface", c.arcface}, {"uad", c.uad}};
}
void from_json(const json& j, ModelConfig& c) {
  Reader(j, "model")("preset", c.preset)("swin", c.swin)("arcface", c.arcface)("uad", c.uad);
}

void to_json(json& j, const Tap& t) { j = t.str(); }
void from_json(const json& j, Tap& t) {
  if (j.is_number_unsigned()) {
    t = Tap::at(j.get<std::size_t>());
  } else {
    require(j.is_string(), ErrorCode::kInvalidArgument, "tap: expected a block index or 'final'");
    t = Tap::parse(j.get<std::string>());
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"lr", c.lr},     {"batch", c.batch}, {"max_epochs", c.max_epochs}, {"patience", c.patience},
       {"seed", c.seed}, {"freeze_backbone", c.freeze_backbone}, {"tap", c.tap}};
}
void from_json(const json& j, TrainConfig& c) {
  Reader(j, "train")("lr", c.lr)("batch", c.batch)("max_epochs", c.max_epochs)("patience", c.patience)("seed", c.seed)(
      "freeze_backbone", c.freeze_backbone)("tap", c.tap);
}

void to_json(json& j, const AugmentSpec& c) {
  j = {{"brightness", c.brightness},
       {"contrast", c.contrast},
       {"saturation", c.saturation},
       {"hue", c.hue},
       {"moire_amplitude", c.moire_amplitude},
       {"moire_frequency", c.moire_frequency},
       {"moire_angular", c.moire_angular},
       {"moire_phase", c.moire_phase},
       {"moire_center_jitter", c.moire_center_jitter},
       {"source_translate", c.source_translate},
       {"source_scale", c.source_scale},
       {"source_brightness", c.source_brightness},
       {"source_hue", c.source_hue},
       {"mask_translate", c.mask_translate},
       {"mask_scale", c.mask_scale},
       {"mask_rotate", c.mask_rotate},
       {"elastic_alpha", c.elastic_alpha},
       {"elastic_sigma", c.elastic_sigma},
       {"mask_blur_sigma", c.mask_blur_sigma}};
}
void from_json(const json& j, AugmentSpec& c) {
  Reader(j, "augment")("brightness", c.brightness)("contrast", c.contrast)("saturation", c.saturation)("hue", c.hue)(
      "moire_amplitude", c.moire_amplitude)("moire_frequency", c.moire_frequency)("moire_angular", c.moire_angular)(
      "moire_phase", c.moire_phase)("moire_center_jitter", c.moire_center_jitter)("source_translate",
                                                                                   c.source_translate)(
      "source_scale", c.source_scale)("source_brightness", c.source_brightness)("source_hue", c.source_hue)(
      "mask_translate", c.mask_translate)("mask_scale", c.mask_scale)("mask_rotate", c.mask_rotate)(
      "elastic_alpha", c.elastic_alpha)("elastic_sigma", c.elastic_sigma)("mask_blur_sigma", c.mask_blur_sigma);
}

void to_json(json& j, const DatasetConfig& c) {
  j = {{"n_identities", c.n_identities}, {"per_identity", c.per_identity},
       {"image_size", c.image_size},     {"spoof_ratio", c.spoof_ratio},
       {"test_identities", c.test_identities}, {"val_per_identity", c.val_per_identity}};
}
void from_json(const json& j, DatasetConfig& c) {
  Reader(j, "dataset")("n_identities", c.n_identities)("per_identity", c.per_identity)("image_size", c.image_size)(
      "spoof_ratio", c.spoof_ratio)("test_identities", c.test_identities)("val_per_identity", c.val_per_identity);
}

void to_json(json& j, const TrainHistory& h) {
  json epochs = json::array();
  for (const auto& e : h.epochs) epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  j = {{"initial_loss", h.initial_loss},
       {"final_loss", h.final_loss},
       {"best_epoch", h.best_epoch},
       {"stopped_early", h.stopped_early},
       {"epochs", epochs}};
}
void from_json(const json& j, TrainHistory& h) {
  h.initial_loss = j.at("initial_loss").get<double>();
  h.final_loss = j.at("final_loss").get<double>();
  h.best_epoch = j.at("best_epoch").get<std::size_t>();
  h.stopped_early = j.at("stopped_early").get<bool>();
  h.epochs.clear();
  for (const auto& e : j.at("epochs")) {
    h.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(), e.at("val_loss").get<double>()});
  }
}

void RunConfig::validate() const {
  model.validate();
  train.validate(model.swin);
  uad_train.validate(model.swin);
  augment.validate();
  dataset.validate();
  require(!out.empty(), ErrorCode::kInvalidArgument, "out: output directory must not be empty");
}

void to_json(json& j, const RunConfig& c) {
  j = {{"model", c.model},
       {"train", c.train},
       {"uad_train", c.uad_train},
       {"augment", c.augment},
       {"dataset", c.dataset},
       {"genuine_pairs", c.genuine_pairs},
       {"impostor_pairs", c.impostor_pairs},
       {"seed", c.seed},
       {"out", c.out},
       {"data", c.data},
       {"checkpoint", c.checkpoint}};
}
void from_json(const json& j, RunConfig& c) {
  require(j.is_object(), ErrorCode::kInvalidArgument, "config: expected a JSON object");
  if (j.contains("preset")) c.model = resolve_preset(j.at("preset").get<std::string>());
  if (j.contains("model")) {
    json merged = c.model;
    merged.merge_patch(j.at("model"));
    c.model = merged.get<ModelConfig>();
  }
  if (j.contains("train")) {
    json merged = c.train;
    merged.merge_patch(j.at("train"));
    c.train = merged.get<TrainConfig>();
  }
  if (j.contains("uad_train")) {
    json merged = c.uad_train;
    merged.merge_patch(j.at("uad_train"));
    c.uad_train = merged.get<TrainConfig>();
  }
  // model and both train blocks were merged above; the reader only checks the keys
  std::string preset;
  json model_patch, train_patch, uad_patch;
  Reader(j, "config")("preset", preset)("model", model_patch)("train", train_patch)("uad_train", uad_patch)("augment", c.augment)(
      "dataset", c.dataset)("genuine_pairs", c.genuine_pairs)("impostor_pairs", c.impostor_pairs)("seed", c.seed)(
      "out", c.out)("data", c.data)("checkpoint", c.checkpoint);
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json_file(const json& j, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

ModelConfig resolve_preset(const std::string& name_or_path) {
  for (const auto& n : builtin_model_names()) {
    if (n == name_or_path) return builtin_model(n);
  }
  const std::filesystem::path p(name_or_path);
  require(p.extension() == ".json" && std::filesystem::exists(p), ErrorCode::kInvalidArgument,
          "unknown preset '" + name_or_path + "' (known: swin-base-paper, swin-desk, or a path to a .json model file)");
  return read_json_file(p).get<ModelConfig>();
}

}  // namespace unispoof
