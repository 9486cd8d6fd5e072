#include <doctest.h>

#include <cmath>

#include "turl/errors.hpp"
#include "turl/metrics.hpp"

using namespace turl::metrics;

TEST_CASE("multi-label micro scores") {
  // tp 1, fp 1, fn 1
  const auto r = micro_prf({{{1, 2}, {1}}, {{}, {3}}});
  CHECK(r.precision == doctest::Approx(0.5));
  CHECK(r.recall == doctest::Approx(0.5));
  CHECK(r.f1 == doctest::Approx(0.5));
  CHECK_FALSE(r.precision_undefined);
  const auto none = micro_prf({{{}, {1}}});
  CHECK(none.precision_undefined);
  CHECK(none.precision == 0.0);
  CHECK(none.f1 == 0.0);
  CHECK(micro_prf({}).recall == 0.0);
}

TEST_CASE("entity linking scores") {
  const auto r = micro_prf_el({{1, 1}, {2, 3}, {std::nullopt, 4}});
  CHECK(r.precision == doctest::Approx(0.5));
  CHECK(r.recall == doctest::Approx(1.0 / 3));
  CHECK(r.f1 == doctest::Approx(0.4));
  CHECK(micro_prf_el({{std::nullopt, 1}}).precision_undefined);
}

TEST_CASE("ranking metrics") {
  RankedPrediction a{"a", {5, 6, 7}, {6, 9}};
  RankedPrediction b{"b", {1}, {1}};
  CHECK(average_precision(a) == doctest::Approx(0.25));  // 1/2 hit, 9 never retrieved
  CHECK(average_precision(b) == 1.0);
  CHECK(average_precision({"c", {}, {}}) == 0.0);
  CHECK(mean_average_precision({a, b}) == doctest::Approx(0.625));
  CHECK(precision_at_k({a, b}, 1) == doctest::Approx(0.5));
  CHECK(precision_at_k({a, b}, 2) == doctest::Approx(0.5));  // short lists still divide by k
  CHECK_THROWS(precision_at_k({a}, 0));
  CHECK(hits_at_k({a, b}, 1) == doctest::Approx(0.5));
  CHECK(hits_at_k({a, b}, 2) == 1.0);
  CHECK(candidate_recall({a, b}) == doctest::Approx(2.0 / 3));
  CHECK(mean_average_precision({}) == 0.0);
}

TEST_CASE("accuracy and coverage filter") {
  CHECK(accuracy({1, 2, 3, 4}, {1, 0, 3, 0}) == 0.5);
  CHECK_THROWS_AS(accuracy({1}, {}), turl::ShapeMismatch);
  const auto kept = restrict_to_covered({{"a", {1, 2}, {2}}, {"b", {1, 2}, {3}}, {"c", {}, {3}}});
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].instance_id == "a");
}

TEST_CASE("random ranking MAP") {
  // one gold among n: E[1/rank] = H_n / n
  RankedPrediction p{"x", {1, 2, 3, 4}, {3}};
  const double expected = (1 + 0.5 + 1.0 / 3 + 0.25) / 4;
  CHECK(random_ranking_map({p}, 4000, 1) == doctest::Approx(expected).epsilon(0.03));
  CHECK(random_ranking_map({p}, 50, 7) == random_ranking_map({p}, 50, 7));
  CHECK(random_ranking_map({{"y", {1}, {1}}}) == 1.0);
}
