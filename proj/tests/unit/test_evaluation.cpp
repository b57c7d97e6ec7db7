#include <cmath>
#include <numeric>

#include "doctest.h"
#include "eiph/evaluation.hpp"
#include "eiph/pipeline.hpp"
#include "oracles.hpp"

using namespace eiph;

namespace {

AnnotationSet gt_set(std::vector<CellAnnotation> cells, std::int64_t w = 10000,
                     std::int64_t h = 10000) {
  AnnotationSet set;
  set.slide = {"gt", w, h, Staining::kPrussian, 0.25};
  set.cells = std::move(cells);
  return set;
}

Detection det_for(const CellAnnotation& cell, double confidence = 1.0) {
  Detection d;
  d.box = cell.box;
  d.grade = cell.grade;
  d.class_probs[static_cast<std::size_t>(cell.grade)] = 1.0;
  d.confidence = confidence;
  d.score = cell.grade;
  return d;
}

}  // namespace

TEST_CASE("perfect predictions match all ground truth") {
  auto gt = gt_set({{1, {100, 100, 70, 70}, 0}, {2, {300, 300, 70, 70}, 2},
                    {3, {700, 700, 70, 70}, 4}});
  std::vector<Detection> pred;
  for (const auto& c : gt.cells) pred.push_back(det_for(c));
  const auto report = match_detections(gt, pred, 0.5);
  CHECK(report.unmatched_gt.empty());
  for (int g : {0, 2, 4}) {
    REQUIRE(report.per_class[static_cast<std::size_t>(g)].size() == 1);
    CHECK(report.per_class[static_cast<std::size_t>(g)][0].is_tp);
  }
  CHECK(mean_average_precision(report) == 1.0);
}

TEST_CASE("only one prediction per ground truth is a true positive") {
  auto gt = gt_set({{1, {100, 100, 70, 70}, 1}});
  std::vector<Detection> pred = {det_for(gt.cells[0], 0.9), det_for(gt.cells[0], 0.8)};
  const auto report = match_detections(gt, pred, 0.5);
  REQUIRE(report.per_class[1].size() == 2);
  CHECK(report.per_class[1][0].is_tp);
  CHECK(!report.per_class[1][1].is_tp);
}

TEST_CASE("matching equals the brute-force oracle on random small instances") {
  Rng rng(404);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n_gt = 1 + rng.below(5);
    const auto n_pred = rng.below(11);
    std::vector<CellAnnotation> cells;
    for (std::size_t i = 0; i < n_gt; ++i)
      cells.push_back({static_cast<std::int64_t>(i),
                       {rng.uniform(0, 300), rng.uniform(0, 300), rng.uniform(20, 120),
                        rng.uniform(20, 120)},
                       static_cast<int>(rng.below(3))});
    auto gt = gt_set(std::move(cells), 1000, 1000);
    std::vector<Detection> pred;
    for (std::size_t i = 0; i < n_pred; ++i) {
      Detection d;
      d.box = {rng.uniform(0, 300), rng.uniform(0, 300), rng.uniform(20, 120),
               rng.uniform(20, 120)};
      d.grade = static_cast<int>(rng.below(3));
      d.class_probs[static_cast<std::size_t>(d.grade)] = 1.0;
      d.confidence = rng.uniform();
      pred.push_back(d);
    }

    const auto report = match_detections(gt, pred, 0.5);
    const auto oracle = testsupport::match_reference(gt.cells, pred, 0.5);

    std::size_t oracle_tp = 0;
    for (int m : oracle.matched_gt)
      if (m >= 0) ++oracle_tp;
    std::size_t got_tp = 0;
    for (const auto& cls : report.per_class)
      for (const auto& e : cls)
        if (e.is_tp) ++got_tp;
    REQUIRE(got_tp == oracle_tp);
    REQUIRE(report.unmatched_gt.size() == gt.cells.size() - oracle_tp);
  }
}

TEST_CASE("hand-ranked AP: TP, FP, TP with two ground truths") {
  auto gt = gt_set({{1, {0, 0, 50, 50}, 0}, {2, {500, 500, 50, 50}, 0}});
  std::vector<Detection> pred;
  pred.push_back(det_for(gt.cells[0], 0.9));
  Detection fp;
  fp.box = {2000, 2000, 50, 50};
  fp.grade = 0;
  fp.confidence = 0.8;
  pred.push_back(fp);
  pred.push_back(det_for(gt.cells[1], 0.7));

  const auto report = match_detections(gt, pred, 0.5);
  const double ap = average_precision(report, 0);
  CHECK(ap == doctest::Approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0)).epsilon(1e-9));
}

TEST_CASE("AP edge values") {
  auto gt = gt_set({{1, {0, 0, 50, 50}, 0}});
  SUBCASE("no predictions at all") {
    const auto report = match_detections(gt, {}, 0.5);
    CHECK(average_precision(report, 0) == 0.0);
  }
  SUBCASE("only false positives") {
    Detection fp;
    fp.box = {900, 900, 50, 50};
    fp.grade = 0;
    fp.confidence = 1.0;
    const std::vector<Detection> pred{fp};
    const auto report = match_detections(gt, pred, 0.5);
    CHECK(average_precision(report, 0) == 0.0);
  }
  SUBCASE("class without ground truth throws") {
    const auto report = match_detections(gt, {}, 0.5);
    CHECK_THROWS(average_precision(report, 3));
  }
}

TEST_CASE("AP equals the reference PR-curve oracle on random instances") {
  Rng rng(777);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n_gt = 1 + rng.below(10);
    std::vector<CellAnnotation> cells;
    for (std::size_t i = 0; i < n_gt; ++i)
      cells.push_back({static_cast<std::int64_t>(i),
                       {1000.0 * static_cast<double>(i), 0, 50, 50},
                       0});
    auto gt = gt_set(std::move(cells), 20000, 20000);

    std::vector<Detection> pred;
    const auto n_pred = rng.below(11);
    for (std::size_t i = 0; i < n_pred; ++i) {
      const bool on_target = rng.bernoulli(0.6);
      Detection d;
      if (on_target) {
        const auto pick = rng.below(n_gt);
        d.box = gt.cells[pick].box;
      } else {
        d.box = {rng.uniform(0, 15000), 5000, 50, 50};
      }
      d.grade = 0;
      d.class_probs[0] = 1.0;
      d.confidence = rng.uniform();
      pred.push_back(d);
    }

    const auto report = match_detections(gt, pred, 0.5);
    std::vector<bool> ranked;
    for (const auto& e : report.per_class[0]) ranked.push_back(e.is_tp);
    const double expected = testsupport::ap_reference(ranked, static_cast<std::int64_t>(n_gt));
    REQUIRE(average_precision(report, 0) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("score error in slide and patch modes") {
  auto gt = gt_set({{1, {100, 100, 70, 70}, 0}, {2, {300, 300, 70, 70}, 1},
                    {3, {2000, 2000, 70, 70}, 2}}, 4096, 4096);
  std::vector<Detection> pred;
  for (const auto& c : gt.cells) pred.push_back(det_for(c));
  const auto plan = plan_tiles(gt.slide, 1024, 1024, 128);

  SUBCASE("identical predictions have zero error") {
    CHECK(score_error(gt, pred, plan, ScoreErrorMode::kSlide).mean == 0.0);
    const auto patch = score_error(gt, pred, plan, ScoreErrorMode::kPatch);
    CHECK(patch.mean == 0.0);
    CHECK(patch.sigma == 0.0);
  }
  SUBCASE("uniform +1 grade shift gives slide error 100") {
    for (auto& d : pred) d.grade += 1;
    CHECK(score_error(gt, pred, plan, ScoreErrorMode::kSlide).mean ==
          doctest::Approx(100.0).epsilon(1e-12));
  }
  SUBCASE("single-tile plan makes patch mode equal slide mode") {
    const auto single = plan_tiles(gt.slide, 4096, 4096, 0);
    for (auto& d : pred) d.grade = std::min(4, d.grade + 1);
    const auto patch = score_error(gt, pred, single, ScoreErrorMode::kPatch);
    const auto slide = score_error(gt, pred, single, ScoreErrorMode::kSlide);
    CHECK(patch.mean == doctest::Approx(slide.mean));
    CHECK(patch.sigma == 0.0);
  }
  SUBCASE("empty ground truth throws") {
    auto empty = gt_set({}, 4096, 4096);
    CHECK_THROWS(score_error(empty, pred, plan, ScoreErrorMode::kSlide));
  }
}

namespace {

RatingTable make_table() {
  RatingTable table;
  table.reference = {{1, 0}, {2, 1}, {3, 2}, {4, 3}, {5, 4}};
  // r_perfect agrees everywhere; r_zero assigns grade 0 to everything
  for (const auto& [cell, grade] : table.reference) {
    table.records.push_back({cell, "r_perfect", 0, grade});
    table.records.push_back({cell, "r_zero", 0, 0});
  }
  table.records.push_back({1, "r_perfect", 1, 1});  // one session-1 slip
  return table;
}

}  // namespace

TEST_CASE("confusion matrices") {
  const auto table = make_table();
  const auto perfect = confusion(table, "r_perfect", 0);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c)
      CHECK(perfect[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] == (r == c ? 1 : 0));

  const auto zero = confusion(table, "r_zero", 0);
  for (int r = 0; r < 5; ++r) CHECK(zero[static_cast<std::size_t>(r)][0] == 1);

  CHECK_THROWS(confusion(table, "nobody", 0));

  // accumulation is elementwise addition
  ConfusionCounts acc{};
  for (const auto* rater : {"r_perfect", "r_zero"}) {
    const auto m = confusion(table, rater, 0);
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < 5; ++c) acc[r][c] += m[r][c];
  }
  CHECK(acc[0][0] == 2);
  CHECK(acc[4][0] == 1);
  CHECK(acc[4][4] == 1);
}

TEST_CASE("cohen kappa hand values") {
  const int a[] = {0, 0, 1, 1};
  const int b[] = {0, 1, 1, 1};
  CHECK(cohen_kappa(a, b) == doctest::Approx(0.5).epsilon(1e-12));

  const int same[] = {0, 3, 2, 4, 1};
  CHECK(cohen_kappa(same, same) == 1.0);

  CHECK_THROWS(cohen_kappa(std::span<const int>(a, 4), std::span<const int>(b, 3)));
}

TEST_CASE("cohen kappa is symmetric and near zero for independent raters") {
  Rng rng(2024);
  std::vector<int> a(100000), b(100000);
  for (auto& v : a) v = static_cast<int>(rng.below(5));
  for (auto& v : b) v = static_cast<int>(rng.below(5));
  const double k_ab = cohen_kappa(a, b);
  const double k_ba = cohen_kappa(b, a);
  CHECK(k_ab == doctest::Approx(k_ba).epsilon(1e-12));
  CHECK(std::abs(k_ab) < 0.02);
}

TEST_CASE("fleiss kappa perfect agreement") {
  std::vector<std::array<int, 5>> counts = {{3, 0, 0, 0, 0}, {0, 3, 0, 0, 0}};
  CHECK(fleiss_kappa(counts, 3) == 1.0);

  std::vector<std::array<int, 5>> all_same(10, {4, 0, 0, 0, 0});
  CHECK(fleiss_kappa(all_same, 4) == 1.0);  // p_e = 1, p_bar = 1
}

TEST_CASE("fleiss kappa equals the definition oracle on a mixed table") {
  std::vector<std::array<int, 5>> counts = {
      {2, 1, 0, 0, 0}, {0, 3, 0, 0, 0}, {1, 1, 1, 0, 0},
      {0, 0, 2, 1, 0}, {0, 0, 0, 1, 2}, {1, 0, 0, 0, 2},
  };
  CHECK(fleiss_kappa(counts, 3) ==
        doctest::Approx(testsupport::fleiss_reference(counts, 3)).epsilon(1e-12));

  std::vector<std::array<int, 5>> uneven = {{2, 1, 0, 0, 0}, {0, 2, 0, 0, 0}};
  CHECK_THROWS(fleiss_kappa(uneven, 3));
}

TEST_CASE("fleiss kappa is invariant under reordering and relabeling") {
  std::vector<std::array<int, 5>> counts = {
      {2, 1, 0, 0, 0}, {0, 3, 0, 0, 0}, {1, 1, 1, 0, 0}, {0, 0, 2, 1, 0}};
  const double base = fleiss_kappa(counts, 3);

  auto shuffled = counts;
  std::swap(shuffled[0], shuffled[3]);
  std::swap(shuffled[1], shuffled[2]);
  CHECK(fleiss_kappa(shuffled, 3) == doctest::Approx(base).epsilon(1e-12));

  // reverse the category order in every row
  auto relabeled = counts;
  for (auto& row : relabeled) std::reverse(row.begin(), row.end());
  CHECK(fleiss_kappa(relabeled, 3) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("concordance and per-grade f1") {
  const auto table = make_table();
  const auto perfect = concordance_and_f1(table, "r_perfect", 0);
  CHECK(perfect.concordance == 1.0);
  for (int g = 0; g < 5; ++g) {
    REQUIRE(perfect.f1[static_cast<std::size_t>(g)].has_value());
    CHECK(*perfect.f1[static_cast<std::size_t>(g)] == 1.0);
  }

  const auto zero = concordance_and_f1(table, "r_zero", 0);
  CHECK(zero.concordance == doctest::Approx(0.2));
  CHECK(*zero.f1[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  for (int g = 1; g < 5; ++g) CHECK(*zero.f1[static_cast<std::size_t>(g)] == 0.0);
}

TEST_CASE("f1 for a grade absent from the reference is omitted") {
  RatingTable table;
  table.reference = {{1, 0}, {2, 1}};  // grades 2..4 never occur
  table.records.push_back({1, "r", 0, 0});
  table.records.push_back({2, "r", 0, 1});
  const auto report = concordance_and_f1(table, "r", 0);
  CHECK(report.f1[0].has_value());
  CHECK(report.f1[1].has_value());
  CHECK(!report.f1[2].has_value());
  CHECK(!report.f1[4].has_value());
}

namespace {

AnnotationSet balanced_gt(int per_grade) {
  std::vector<CellAnnotation> cells;
  std::int64_t id = 0;
  for (int g = 0; g < 5; ++g)
    for (int i = 0; i < per_grade; ++i) {
      const double x = 100.0 + 90.0 * static_cast<double>(id % 90);
      const double y = 100.0 + 90.0 * static_cast<double>(id / 90);
      cells.push_back({id, {x, y, 70, 70}, g});
      ++id;
    }
  return gt_set(std::move(cells), 12000, 12000);
}

ConfusionRows adjacent_spill(double diagonal) {
  ConfusionRows rows{};
  for (int g = 0; g < 5; ++g) {
    const double off = 1.0 - diagonal;
    auto& row = rows[static_cast<std::size_t>(g)];
    row[static_cast<std::size_t>(g)] = diagonal;
    if (g == 0) {
      row[1] = off;
    } else if (g == 4) {
      row[3] = off;
    } else {
      row[static_cast<std::size_t>(g - 1)] = off / 2;
      row[static_cast<std::size_t>(g + 1)] = off / 2;
    }
  }
  return rows;
}

}  // namespace

TEST_CASE("simulated mAP: identity confusion is exactly one") {
  const auto gt = balanced_gt(20);
  ConfusionRows identity{};
  for (int g = 0; g < 5; ++g) identity[static_cast<std::size_t>(g)][static_cast<std::size_t>(g)] = 1.0;
  Rng rng(1);
  CHECK(simulated_map_from_confusion(gt, identity, 5, rng) == 1.0);
}

TEST_CASE("simulated mAP: uniform confusion is poor") {
  const auto gt = balanced_gt(40);
  ConfusionRows uniform{};
  for (auto& row : uniform) row.fill(0.2);
  Rng rng(2);
  CHECK(simulated_map_from_confusion(gt, uniform, 20, rng) < 0.3);
}

TEST_CASE("simulated mAP: diagonal 0.73 with adjacent spill lands in the reported band") {
  const auto gt = balanced_gt(40);
  Rng rng(3);
  const double map = simulated_map_from_confusion(gt, adjacent_spill(0.73), 30, rng);
  CHECK(map > 0.5);
  CHECK(map < 0.8);
}

TEST_CASE("simulated mAP grows with diagonal mass") {
  const auto gt = balanced_gt(40);
  double prev = -1;
  for (double diag : {0.2, 0.4, 0.6, 0.8, 1.0}) {
    Rng rng(4);
    const double map = simulated_map_from_confusion(gt, adjacent_spill(diag), 30, rng);
    CAPTURE(diag);
    CHECK(map >= prev);
    prev = map;
  }
  ConfusionRows bad{};
  bad[0][0] = 0.7;  // rows must sum to one
  const auto gt2 = balanced_gt(2);
  Rng rng(5);
  CHECK_THROWS(simulated_map_from_confusion(gt2, bad, 1, rng));
}
