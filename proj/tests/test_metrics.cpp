#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "unispoof/error.hpp"
#include "unispoof/metrics.hpp"
#include "unispoof/rng.hpp"

using namespace unispoof;

TEST_SUITE("metrics") {

TEST_CASE("EER fixed examples") {
  const std::vector<double> g{0.9, 0.8, 0.3}, im{0.7, 0.2, 0.1};
  const auto r = compute_eer(g, im);
  CHECK(r.eer == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(r.threshold == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.far == doctest::Approx(1.0 / 3));
  CHECK(r.frr == doctest::Approx(1.0 / 3));

  const std::vector<double> sep_g{0.9, 0.95, 0.8}, sep_i{0.1, 0.3, 0.2, 0.25};
  const auto s = compute_eer(sep_g, sep_i);
  CHECK(s.eer == 0.0);
  CHECK(s.threshold == doctest::Approx(0.55));

  const std::vector<double> same{0.5, 0.5};
  CHECK(compute_eer(same, same).eer == doctest::Approx(0.5));

  const std::vector<double> empty;
  CHECK_THROWS_AS(compute_eer(empty, g), Error);
  CHECK_THROWS_AS(compute_eer(g, empty), Error);
}

TEST_CASE("EER matches an exhaustive sweep on random instances") {
  Rng rng(2024);
  for (int inst = 0; inst < 100; ++inst) {
    std::vector<double> g(1 + rng.below(50)), im(1 + rng.below(50));
    // coarse grid so ties and shared scores are common
    const bool coarse = inst % 2 == 0;
    for (auto& v : g) v = coarse ? double(rng.below(10)) / 10 : rng.uniform(0.2, 1.0);
    for (auto& v : im) v = coarse ? double(rng.below(10)) / 10 : rng.uniform(0.0, 0.8);
    const auto r = compute_eer(g, im);
    const auto b = oracle::brute_force_eer(g, im);
    CHECK(r.eer == doctest::Approx(b.eer).epsilon(1e-12));
    CHECK(r.threshold == b.threshold);
  }
}

TEST_CASE("EER of identically distributed scores is near one half") {
  Rng rng(7);
  std::vector<double> g(1000), im(1000);
  for (auto& v : g) v = rng.normal();
  for (auto& v : im) v = rng.normal();
  const auto r = compute_eer(g, im);
  MESSAGE("same-distribution EER " << r.eer);
  CHECK(std::abs(r.eer - 0.5) <= 0.05);
}

TEST_CASE("APCER / BPCER") {
  const std::vector<double> perfect{0.9, 0.8, 0.1, 0.2};
  const std::vector<bool> labels{true, true, false, false};
  auto m = compute_apcer_bpcer(perfect, labels, 0.5);
  CHECK(m.apcer == 0);
  CHECK(m.bpcer == 0);
  CHECK(m.accuracy == 1);

  const std::vector<double> constant(4, 0.99);
  m = compute_apcer_bpcer(constant, labels, 0.5);
  CHECK(m.apcer == 1);
  CHECK(m.bpcer == 0);

  const std::vector<double> mixed{0.6, 0.4, 0.2, 0.7, 0.3};
  const std::vector<bool> mixed_labels{false, false, false, true, true};
  m = compute_apcer_bpcer(mixed, mixed_labels, 0.5);
  CHECK(m.apcer == doctest::Approx(1.0 / 3));
  CHECK(m.bpcer == doctest::Approx(0.5));
  CHECK(m.accuracy == doctest::Approx(0.6));
  CHECK(m.attacks == 3);
  CHECK(m.bona_fide == 2);

  // Threshold is inclusive for bona fide.
  CHECK(compute_apcer_bpcer(std::vector<double>{0.5, 0.49}, {true, false}, 0.5).accuracy == 1);

  const std::vector<bool> one_class{true, true, true, true};
  CHECK_THROWS_AS(compute_apcer_bpcer(perfect, one_class, 0.5), Error);
  CHECK_THROWS_AS(compute_apcer_bpcer(perfect, {true}, 0.5), Error);
}

TEST_CASE("verification accuracy and score files") {
  const std::vector<double> g{0.9, 0.4}, im{0.3, 0.6};
  CHECK(verification_accuracy(g, im, 0.5) == doctest::Approx(0.5));
  CHECK(verification_accuracy(g, im, 0.35) == doctest::Approx(0.75));
  CHECK(verification_accuracy(g, im, 0.65) == doctest::Approx(0.75));
  CHECK(scores_csv({{"p0", 0.25, 1}, {"p1", -0.5, 0}}) == "pair_or_sample_id,score,label\np0,0.25,1\np1,-0.5,0\n");
}

}  // TEST_SUITE
