#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "opf/metrics.hpp"

using namespace opf;

TEST_CASE("trmae basic and threshold behavior") {
  const std::vector<double> target = {2.0};
  const std::vector<double> pred = {2.2};
  auto r = trmae(pred, target);
  REQUIRE(r.has_value());
  CHECK(*r == doctest::Approx(0.10));

  // Entries with tiny targets are excluded from the mean.
  const std::vector<double> target2 = {2.0, 0.0005};
  const std::vector<double> pred2 = {2.2, 99.0};
  auto r2 = trmae(pred2, target2);
  REQUIRE(r2.has_value());
  CHECK(*r2 == doctest::Approx(0.10));

  // Exact predictions score zero.
  auto r3 = trmae(target, target);
  REQUIRE(r3.has_value());
  CHECK(*r3 == 0.0);

  // All targets below threshold: not applicable.
  const std::vector<double> tiny = {1e-5, -1e-4};
  CHECK_FALSE(trmae(tiny, tiny).has_value());
}

TEST_CASE("mse has no thresholding") {
  const std::vector<double> pred = {1.0, 1.0};
  const std::vector<double> target = {0.0, 2.0};
  CHECK(mse(pred, target) == doctest::Approx(1.0));
  CHECK(mse(target, target) == 0.0);

  // Small-target entries count fully, unlike TRMAE.
  const std::vector<double> t2 = {0.0005};
  const std::vector<double> p2 = {1.0005};
  CHECK(mse(p2, t2) == doctest::Approx(1.0));
  CHECK_FALSE(trmae(p2, t2).has_value());
}

TEST_CASE("optimality ratio") {
  CHECK(optimality_ratio(100.0, 100.0) == doctest::Approx(100.0));
  CHECK(optimality_ratio(101.0, 100.0) == doctest::Approx(101.0));
  CHECK_THROWS_AS(optimality_ratio(1.0, 0.0), OpfError);
  CHECK_THROWS_AS(optimality_ratio(1.0, -5.0), OpfError);
}

TEST_CASE("length mismatches are rejected") {
  const std::vector<double> a = {1.0, 2.0};
  const std::vector<double> b = {1.0};
  CHECK_THROWS_AS(trmae(a, b), OpfError);
  CHECK_THROWS_AS(mse(a, b), OpfError);
}
