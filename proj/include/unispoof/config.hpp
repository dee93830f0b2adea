#pragma once

// JSON forms of every configuration type. Missing keys keep their defaults;
// unknown keys are rejected so typos do not pass silently.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "unispoof/model.hpp"
#include "unispoof/synth.hpp"
#include "unispoof/train.hpp"

namespace unispoof {

using nlohmann::json;

void to_json(json& j, const Range& r);
void from_json(const json& j, Range& r);
void to_json(json& j, const SwinConfig& c);
void from_json(const json& j, SwinConfig& c);
void to_json(json& j, const ArcFaceConfig& c);
void from_json(const json& j, ArcFaceConfig& c);
void to_json(json& j, const HiLoConfig& c);
void from_json(const json& j, HiLoConfig& c);
void to_json(json& j, const UadHeadConfig& c);
void from_json(const json& j, UadHeadConfig& c);
void to_json(json& j, const ModelConfig& c);
void from_json(const json& j, ModelConfig& c);
void to_json(json& j, const Tap& t);
void from_json(const json& j, Tap& t);
void to_json(json& j, const TrainConfig& c);
void from_json(const json& j, TrainConfig& c);
void to_json(json& j, const AugmentSpec& c);
void from_json(const json& j, AugmentSpec& c);
void to_json(json& j, const DatasetConfig& c);
void from_json(const json& j, DatasetConfig& c);
void to_json(json& j, const TrainHistory& h);
void from_json(const json& j, TrainHistory& h);

// Everything one CLI invocation needs.
struct RunConfig {
  ModelConfig model = swin_desk_model();
  TrainConfig train = desk_train_config();          // recognition
  TrainConfig uad_train = desk_uad_train_config();  // attack detection
  AugmentSpec augment;
  DatasetConfig dataset;
  std::size_t genuine_pairs = 100;
  std::size_t impostor_pairs = 100;
  std::uint64_t seed = 0;
  std::string out = "run";
  std::string data;        // dataset directory; empty = <out>/data
  std::string checkpoint;  // backbone/FRM checkpoint for UAD, verify and eval

  void validate() const;
};

void to_json(json& j, const RunConfig& c);
// A "preset" key picks the model base; a "model" object then overrides it.
void from_json(const json& j, RunConfig& c);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const json& j, const std::filesystem::path& path);

// A built-in preset name, or a path to a JSON model file.
ModelConfig resolve_preset(const std::string& name_or_path);

}  // namespace unispoof
