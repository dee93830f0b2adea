#pragma once

// Training loops for the recognition and attack-detection heads, the tap
// sweep, and the evaluation protocol.

#include <optional>
#include <string>
#include <vector>

#include "unispoof/checkpoint.hpp"
#include "unispoof/metrics.hpp"
#include "unispoof/model.hpp"
#include "unispoof/synth.hpp"

namespace unispoof {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch = 64;
  std::size_t max_epochs = 20;
  std::size_t patience = 5;  // non-improving validation epochs tolerated
  std::uint64_t seed = 0;
  bool freeze_backbone = true;
  Tap tap = Tap::at(5);

  void validate(const SwinConfig& swin) const;
  bool operator==(const TrainConfig&) const = default;
};

// Step size and batch tuned for the small preset and dataset.
TrainConfig desk_train_config();
// The attack-detection head needs a larger step and more epochs.
TrainConfig desk_uad_train_config();

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;  // mean minibatch loss over the epoch
  double val_loss = 0;
};

struct TrainHistory {
  double initial_loss = 0;  // full pass over the training set before any step
  double final_loss = 0;    // same, with the restored best weights
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 = the initial weights were never beaten
  bool stopped_early = false;
};

struct FrmModel {
  ModelConfig config;
  SwinBackbone<float> backbone;
  FrmHead<float> frm;
  ArcFaceHead<float> arcface;
  std::vector<std::size_t> class_identity;  // ArcFace class -> identity id

  // Class count taken from `classes`.
  static FrmModel init(const ModelConfig& config, std::vector<std::size_t> class_identity, std::uint64_t seed);
  ParamList<float> params() const;  // backbone.*, frm.*, arcface.*
  Checkpoint to_checkpoint() const;
  static FrmModel from_checkpoint(const Checkpoint& ckpt);
};

struct FrmRun {
  FrmModel model;
  TrainHistory history;
};

FrmRun train_frm(const TrainConfig& cfg, const ModelConfig& config, const Dataset& data);

// Unit embeddings [N x E] of the given records, evaluated in fixed chunks
// (parallel across chunks).
std::vector<std::vector<float>> embed_records(const FrmModel& model, const Dataset& data,
                                              const std::vector<std::size_t>& records);

// Unit embedding of one RGB image at the model's input size.
std::vector<float> embed_image(const FrmModel& model, const Image& image);

struct VerifyResult {
  std::vector<VerificationPair> pairs;
  std::vector<double> scores;  // cosine per pair
  EerResult eer;
  double accuracy = 0;  // at the EER threshold
};

double cosine(const std::vector<float>& a, const std::vector<float>& b);
VerifyResult verify(const FrmModel& model, const Dataset& data, const std::vector<VerificationPair>& pairs);

struct PadReport {
  PadMetrics at_half;  // threshold 0.5
  EerResult eer;       // bona fide vs attack scores
  std::vector<std::size_t> records;
  std::vector<double> scores;
};

struct UadRun {
  Tap tap;
  UadHead<float> head;
  SwinBackbone<float> backbone;  // after training; unchanged when frozen
  TrainHistory history;
  std::string backbone_hash_before;
  std::string backbone_hash_after;
  PadReport test;
};

// Labels: live = 1 (bona fide), spsc/sdsc = 0. Early stopping on the val
// split; the report is on the test split.
UadRun train_uad(const TrainConfig& cfg, const FrmModel& base, const Dataset& data);

// Holds the backbone the head was trained on plus the FRM and ArcFace heads.
Checkpoint uad_checkpoint(const UadRun& run, const FrmModel& base, const TrainConfig& cfg);

struct UadModel {
  FrmModel base;  // backbone as trained with the head
  Tap tap;
  UadHead<float> head;

  static UadModel from_checkpoint(const Checkpoint& ckpt);
};

// Probability that one RGB image is bona fide.
double spoof_score(const UadModel& model, const Image& image);

PadReport evaluate_uad(const UadHead<float>& head, const SwinBackbone<float>& backbone, const Tap& tap,
                       const Dataset& data, const std::vector<std::size_t>& records);

// Third-stage blocks in order, then the final tap.
std::vector<Tap> plan_sweep(const SwinConfig& swin);

struct SweepEntry {
  Tap tap;
  UadRun run;
};

struct SweepResult {
  std::vector<SweepEntry> entries;
  std::size_t best = 0;  // index of the highest test accuracy; earliest on ties
};

// One head per tap with identical hyperparameters and a per-tap derived
// seed; taps run in parallel.
SweepResult sweep_blocks(const TrainConfig& cfg, const FrmModel& base, const Dataset& data);

}  // namespace unispoof
