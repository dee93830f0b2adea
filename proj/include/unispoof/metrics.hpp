#pragma once

// Biometric evaluation metrics.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace unispoof {

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
  double far = 0.0;  // at `threshold`
  double frr = 0.0;
};

// Candidate thresholds are the midpoints between consecutive distinct
// scores (the single score itself when all scores coincide). FAR counts
// impostors >= t, FRR genuines < t. The threshold minimising |FAR - FRR|
// wins, the lowest on ties, and EER = (FAR + FRR) / 2 there.
EerResult compute_eer(std::span<const double> genuine, std::span<const double> impostor);

struct PadMetrics {
  double apcer = 0.0;
  double bpcer = 0.0;
  double accuracy = 0.0;
  std::size_t attacks = 0;
  std::size_t bona_fide = 0;
};

// bona fide <=> score >= threshold. `bona_fide[i]` is the ground truth.
PadMetrics compute_apcer_bpcer(std::span<const double> scores, const std::vector<bool>& bona_fide, double threshold);

// Fraction of pairs classified correctly by score >= threshold <=> genuine.
double verification_accuracy(std::span<const double> genuine, std::span<const double> impostor, double threshold);

struct ScoreRecord {
  std::string id;  // pair or sample id
  double score = 0.0;
  int label = 0;   // 1 genuine / bona fide, 0 impostor / attack
};

// CSV with header `pair_or_sample_id,score,label`.
std::string scores_csv(const std::vector<ScoreRecord>& records);

}  // namespace unispoof
