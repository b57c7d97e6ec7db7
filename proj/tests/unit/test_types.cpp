#include <algorithm>

#include "doctest.h"
#include "eiph/types.hpp"

using namespace eiph;

namespace {

AnnotationSet small_set() {
  AnnotationSet set;
  set.slide = {"s1", 2000, 1500, Staining::kPrussian, 0.25};
  set.cells.push_back({1, {100, 100, 70, 70}, 2});
  return set;
}

}  // namespace

TEST_CASE("valid annotation set has no violations") {
  CHECK(validate_annotation_set(small_set()).empty());
}

TEST_CASE("box past the slide edge is reported with the cell id") {
  auto set = small_set();
  set.cells.push_back({7, {1980, 10, 70, 70}, 1});
  const auto violations = validate_annotation_set(set);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0] == "cell 7: box out of bounds");
}

TEST_CASE("duplicate ids are reported") {
  auto set = small_set();
  set.cells.push_back({3, {300, 300, 70, 70}, 0});
  set.cells.push_back({3, {500, 500, 70, 70}, 0});
  const auto violations = validate_annotation_set(set);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0] == "duplicate id 3");
}

TEST_CASE("bad grade and degenerate box are both flagged") {
  auto set = small_set();
  set.cells.push_back({9, {10, 10, 0, 50}, 2});
  set.cells.push_back({10, {10, 200, 50, 50}, 7});
  const auto violations = validate_annotation_set(set);
  CHECK(violations.size() == 2);
}

TEST_CASE("validation is idempotent and order independent") {
  auto set = small_set();
  set.cells.push_back({7, {1980, 10, 70, 70}, 1});
  set.cells.push_back({9, {10, 10, 50, 50}, 6});
  auto first = validate_annotation_set(set);
  auto second = validate_annotation_set(set);
  CHECK(first == second);

  std::reverse(set.cells.begin(), set.cells.end());
  auto reversed = validate_annotation_set(set);
  std::sort(first.begin(), first.end());
  std::sort(reversed.begin(), reversed.end());
  CHECK(first == reversed);
}

TEST_CASE("intersection area") {
  const BoundingBox a{0, 0, 10, 10};
  const BoundingBox b{5, 5, 10, 10};
  CHECK(intersection_area(a, b) == doctest::Approx(25.0));
  CHECK(!intersects(a, {10, 10, 5, 5}));  // touching edges do not overlap
}

TEST_CASE("staining round trip") {
  CHECK(staining_from_string(to_string(Staining::kTurnbull)) == Staining::kTurnbull);
  CHECK(!staining_from_string("giemsa").has_value());
}
