#include "unispoof/metrics.hpp"

#include <algorithm>
#include <cstdio>

#include "unispoof/error.hpp"

namespace unispoof {

EerResult compute_eer(std::span<const double> genuine, std::span<const double> impostor) {
  require(!genuine.empty() && !impostor.empty(), ErrorCode::kInvalidArgument,
          "compute_eer: genuine and impostor score lists must both be non-empty");
  std::vector<double> g(genuine.begin(), genuine.end()), im(impostor.begin(), impostor.end());
  std::sort(g.begin(), g.end());
  std::sort(im.begin(), im.end());
  std::vector<double> all(g);
  all.insert(all.end(), im.begin(), im.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());

  std::vector<double> candidates;
  for (std::size_t i = 0; i + 1 < all.size(); ++i) candidates.push_back(all[i] + (all[i + 1] - all[i]) / 2);
  if (candidates.empty()) candidates.push_back(all[0]);

  const auto ng = static_cast<long long>(g.size()), ni = static_cast<long long>(im.size());
  EerResult best;
  long long best_gap = -1;
  // Both pointers only move forward as t increases.
  std::size_t gi = 0, ii = 0;
  for (double t : candidates) {
    while (gi < g.size() && g[gi] < t) ++gi;
    while (ii < im.size() && im[ii] < t) ++ii;
    const long long rejected = static_cast<long long>(gi);                // genuine < t
    const long long accepted = ni - static_cast<long long>(ii);           // impostor >= t
    // |FAR - FRR| compared exactly on a common denominator.
    const long long gap = std::llabs(accepted * ng - rejected * ni);
    if (best_gap < 0 || gap < best_gap) {
      best_gap = gap;
      best.threshold = t;
      best.far = static_cast<double>(accepted) / static_cast<double>(ni);
      best.frr = static_cast<double>(rejected) / static_cast<double>(ng);
      best.eer = (best.far + best.frr) / 2;
    }
  }
  return best;
}

PadMetrics compute_apcer_bpcer(std::span<const double> scores, const std::vector<bool>& bona_fide, double threshold) {
  require(scores.size() == bona_fide.size(), ErrorCode::kInvalidArgument,
          "compute_apcer_bpcer: " + std::to_string(scores.size()) + " scores but " +
              std::to_string(bona_fide.size()) + " labels");
  PadMetrics m;
  std::size_t accepted_attacks = 0, rejected_bona = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool accept = scores[i] >= threshold;
    if (bona_fide[i]) {
      ++m.bona_fide;
      rejected_bona += !accept;
    } else {
      ++m.attacks;
      accepted_attacks += accept;
    }
  }
  require(m.attacks > 0 && m.bona_fide > 0, ErrorCode::kInvalidArgument,
          "compute_apcer_bpcer: need both attack and bona fide samples (got " + std::to_string(m.attacks) +
              " attacks, " + std::to_string(m.bona_fide) + " bona fide)");
  m.apcer = static_cast<double>(accepted_attacks) / static_cast<double>(m.attacks);
  m.bpcer = static_cast<double>(rejected_bona) / static_cast<double>(m.bona_fide);
  m.accuracy = static_cast<double>(scores.size() - accepted_attacks - rejected_bona) / static_cast<double>(scores.size());
  return m;
}

double verification_accuracy(std::span<const double> genuine, std::span<const double> impostor, double threshold) {
  require(!genuine.empty() || !impostor.empty(), ErrorCode::kInvalidArgument, "verification_accuracy: no pairs");
  std::size_t correct = 0;
  for (double s : genuine) correct += s >= threshold;
  for (double s : impostor) correct += s < threshold;
  return static_cast<double>(correct) / static_cast<double>(genuine.size() + impostor.size());
}

std::string scores_csv(const std::vector<ScoreRecord>& records) {
  std::string out = "pair_or_sample_id,score,label\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, ",%.9g,%d\n", r.score, r.label);
    out += r.id;
    out += buf;
  }
  return out;
}

}  // namespace unispoof
