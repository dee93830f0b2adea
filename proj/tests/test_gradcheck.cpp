#include <doctest.h>

#include <set>

#include "unispoof/gradcheck.hpp"

using namespace unispoof;

TEST_CASE("every gradient check passes in double precision") {
  const auto suite = gradcheck_suite(0);
  std::set<std::string> names;
  for (const auto& e : suite) {
    CAPTURE(e.name);
    CHECK(e.checked > 0);
    CHECK(e.max_rel_error <= kGradTolerance);
    CHECK(names.insert(e.name).second);
  }
  for (const char* n : {"block.swin_shifted", "block.hilo", "head.arcface", "model.end_to_end"}) CHECK(names.count(n) == 1);
  std::size_t ops = 0;
  for (const auto& n : names) ops += n.rfind("op.", 0) == 0;
  CHECK(ops >= 30);
}

TEST_CASE("the suite is reproducible") {
  const auto a = gradcheck_suite(3), b = gradcheck_suite(3);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].max_rel_error == b[i].max_rel_error);
}
