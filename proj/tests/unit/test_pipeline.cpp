#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "eiph/evaluation.hpp"
#include "eiph/pipeline.hpp"
#include "eiph/synth.hpp"
#include "tempdir.hpp"

using namespace eiph;
using eiph::testsupport::TempDir;

namespace {

// Oracle wrapped so every tile's pixels are actually read; makes the pixel
// accounting meaningful for detectors that never look at the raster.
class PixelTouchingOracle : public Detector {
 public:
  PixelTouchingOracle(AnnotationSet set, NoiseModel noise)
      : oracle_(std::move(set), noise) {}
  std::vector<Detection> detect(const SlideSource& slide, const BoundingBox& tile,
                                Rng& rng) override {
    const Patch patch = read_region(slide, tile);
    if (patch.pixels.empty()) throw std::runtime_error("empty patch");
    return oracle_.detect(slide, tile, rng);
  }

 private:
  OracleDetector oracle_;
};

class FailingDetector : public Detector {
 public:
  std::vector<Detection> detect(const SlideSource&, const BoundingBox& tile, Rng&) override {
    if (tile.x > 0) throw std::runtime_error("synthetic failure");
    return {};
  }
};

}  // namespace

TEST_CASE("plan_tiles basic layouts") {
  const SlideMeta square{"s", 2048, 2048, Staining::kPrussian, 0.25};
  const auto four = plan_tiles(square, 1024, 1024, 0);
  CHECK(four.tiles.size() == 4);
  CHECK(four.cols == 2);
  CHECK(four.rows == 2);

  const SlideMeta wide{"s", 1500, 1024, Staining::kPrussian, 0.25};
  const auto two = plan_tiles(wide, 1024, 1024, 128);
  REQUIRE(two.tiles.size() == 2);
  CHECK(two.tiles[0].x == 0);
  CHECK(two.tiles[1].x == 476);

  const SlideMeta small{"s", 600, 500, Staining::kPrussian, 0.25};
  const auto one = plan_tiles(small, 1024, 1024, 128);
  REQUIRE(one.tiles.size() == 1);
  CHECK(one.tiles[0].w == 600);
  CHECK(one.tiles[0].h == 500);

  CHECK_THROWS(plan_tiles(square, 1024, 1024, 1024));
  CHECK_THROWS(plan_tiles(square, 1024, 1024, -1));
}

TEST_CASE("plan tiles cover the slide with the exact overlap") {
  const SlideMeta meta{"s", 5000, 3700, Staining::kPrussian, 0.25};
  const auto plan = plan_tiles(meta, 1024, 1024, 128);
  // contiguous coverage, exact overlap away from the clamped edge
  for (std::int64_t c = 0; c + 1 < plan.cols; ++c) {
    const double gap = plan.tiles[static_cast<std::size_t>(c + 1)].x -
                       plan.tiles[static_cast<std::size_t>(c)].x;
    if (c + 2 < plan.cols) CHECK(gap == 1024 - 128);
    CHECK(gap <= 1024 - 128);
  }
  double max_x = 0, max_y = 0;
  for (const auto& t : plan.tiles) {
    max_x = std::max(max_x, t.x2());
    max_y = std::max(max_y, t.y2());
    CHECK(t.x >= 0);
    CHECK(t.y >= 0);
    CHECK(t.x2() <= 5000);
    CHECK(t.y2() <= 3700);
  }
  CHECK(max_x == 5000);
  CHECK(max_y == 3700);
}

TEST_CASE("zero-noise oracle returns gt restricted to the tile, tile-local") {
  AnnotationSet set;
  set.slide = {"s", 4096, 4096, Staining::kPrussian, 0.25};
  set.cells = {{1, {100, 100, 70, 70}, 0},
               {2, {1500, 200, 70, 70}, 2},
               {3, {3000, 3000, 70, 70}, 4}};
  OracleDetector oracle(set, {});
  Rng rng(1);
  const BoundingBox tile{0, 0, 1024, 1024};
  const auto dets = oracle.detect_on(set.slide, tile, rng);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].box.x == 100);
  CHECK(dets[0].box.y == 100);
  CHECK(dets[0].grade == 0);
  CHECK(dets[0].class_probs[0] == 1.0);

  const BoundingBox tile2{1024, 0, 1024, 1024};
  const auto dets2 = oracle.detect_on(set.slide, tile2, rng);
  REQUIRE(dets2.size() == 1);
  CHECK(dets2[0].box.x == 1500 - 1024);  // tile-local frame
}

TEST_CASE("oracle with full miss rate detects nothing") {
  AnnotationSet set;
  set.slide = {"s", 2048, 2048, Staining::kPrussian, 0.25};
  set.cells = {{1, {100, 100, 70, 70}, 0}};
  NoiseModel noise;
  noise.miss_rate = 1.0;
  OracleDetector oracle(set, noise);
  Rng rng(2);
  CHECK(oracle.detect_on(set.slide, {0, 0, 2048, 2048}, rng).empty());
}

TEST_CASE("oracle survival rate matches the miss rate") {
  AnnotationSet set;
  set.slide = {"s", 2048, 2048, Staining::kPrussian, 0.25};
  set.cells = {{1, {1000, 1000, 70, 70}, 2}};
  NoiseModel noise;
  noise.miss_rate = 0.5;
  OracleDetector oracle(set, noise);
  Rng rng(3);
  int survived = 0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i)
    survived += oracle.detect_on(set.slide, {0, 0, 2048, 2048}, rng).empty() ? 0 : 1;
  CHECK(std::abs(survived / double(trials) - 0.5) < 0.01);
}

TEST_CASE("oracle false positives follow the area-scaled poisson rate") {
  AnnotationSet set;
  set.slide = {"s", 2048, 2048, Staining::kPrussian, 0.25};
  NoiseModel noise;
  noise.fp_per_mm2 = 10.0;
  OracleDetector oracle(set, noise);
  Rng rng(4);
  // 1024^2 px at 0.25 um/px = 0.0655 mm^2 -> lambda = 0.655
  std::int64_t total = 0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i)
    total += static_cast<std::int64_t>(
        oracle.detect_on(set.slide, {0, 0, 1024, 1024}, rng).size());
  CHECK(std::abs(total / double(trials) - 0.655) < 0.03);
}

TEST_CASE("oracle confusion resampling keeps probs consistent with the grade") {
  AnnotationSet set;
  set.slide = {"s", 2048, 2048, Staining::kPrussian, 0.25};
  set.cells = {{1, {1000, 1000, 70, 70}, 2}};
  NoiseModel noise;
  for (auto& row : noise.confusion) row = {0.2, 0.2, 0.2, 0.2, 0.2};
  OracleDetector oracle(set, noise);
  Rng rng(5);
  GradeCounts seen{};
  for (int i = 0; i < 5000; ++i) {
    const auto dets = oracle.detect_on(set.slide, {0, 0, 2048, 2048}, rng);
    REQUIRE(dets.size() == 1);
    REQUIRE(dets[0].class_probs[static_cast<std::size_t>(dets[0].grade)] == 1.0);
    ++seen[static_cast<std::size_t>(dets[0].grade)];
  }
  for (auto c : seen) CHECK(std::abs(c / 5000.0 - 0.2) < 0.03);

  NoiseModel bad;
  bad.confusion[2] = {0.5, 0.5, 0.5, 0, 0};
  CHECK_THROWS(OracleDetector(set, bad));
}

TEST_CASE("merge keeps interior detections and dedups straddlers") {
  const SlideMeta meta{"s", 1920, 1024, Staining::kPrussian, 0.25};
  const auto plan = plan_tiles(meta, 1024, 1024, 128);
  REQUIRE(plan.tiles.size() == 2);  // x = 0 and x = 896

  SUBCASE("strictly interior cell appears once") {
    std::vector<std::vector<Detection>> per_tile(2);
    Detection d;
    d.box = {100, 100, 70, 70};
    d.grade = 1;
    d.confidence = 0.9;
    per_tile[0].push_back(d);
    const auto merged = merge_tiles(plan, per_tile, 0.5);
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].box.x == 100);
  }

  SUBCASE("cell centered in the overlap strip survives exactly once") {
    // global box (930, 200, 70, 70): center 965 in [896, 1024) = both tiles
    std::vector<std::vector<Detection>> per_tile(2);
    Detection in_left;
    in_left.box = {930, 200, 70, 70};
    in_left.grade = 2;
    in_left.confidence = 0.8;
    Detection in_right = in_left;
    in_right.box.x = 930 - 896;
    per_tile[0].push_back(in_left);
    per_tile[1].push_back(in_right);
    const auto merged = merge_tiles(plan, per_tile, 0.5);
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].box.x == 930);
  }

  SUBCASE("empty tiles merge to empty") {
    std::vector<std::vector<Detection>> per_tile(2);
    CHECK(merge_tiles(plan, per_tile, 0.5).empty());
  }
}

TEST_CASE("zero-noise pipeline conserves the annotation set") {
  TempDir dir("pipe");
  SynthConfig cfg;
  cfg.width = cfg.height = 4096;
  cfg.cell_count = 250;
  cfg.grade_mix = {3, 4, 3, 2, 1};
  cfg.seed = 21;
  const auto gen = generate(cfg, dir.path());

  OracleDetector oracle(gen.annotations, {});
  PipelineConfig pcfg;
  pcfg.workers = 3;
  const auto result = run_pipeline(gen.slide, oracle, pcfg);

  CHECK(result.detections.size() == gen.annotations.cells.size());
  const auto gt_ths = ths(grade_counts(std::span<const CellAnnotation>(gen.annotations.cells)));
  REQUIRE(result.ths.has_value());
  CHECK(result.ths->score == doctest::Approx(gt_ths.score).epsilon(1e-12));

  const auto report = match_detections(gen.annotations, result.detections, 0.5);
  CHECK(mean_average_precision(report) == 1.0);
  CHECK(report.unmatched_gt.empty());
}

TEST_CASE("full-miss pipeline reports no cells and an empty heatmap") {
  TempDir dir("pipe");
  SynthConfig cfg;
  cfg.width = cfg.height = 2048;
  cfg.cell_count = 40;
  cfg.seed = 8;
  const auto gen = generate(cfg, dir.path());
  NoiseModel noise;
  noise.miss_rate = 1.0;
  OracleDetector oracle(gen.annotations, noise);
  PipelineConfig pcfg;
  const auto result = run_pipeline(gen.slide, oracle, pcfg);
  CHECK(result.detections.empty());
  CHECK(!result.ths.has_value());
  for (const auto& v : result.heatmap) CHECK(!v.has_value());
  const auto json_text = result_json(result, gen.slide.meta.id);
  CHECK(json_text.find("no cells to score") != std::string::npos);
}

TEST_CASE("gradient slide heatmap rises along x") {
  TempDir dir("pipe");
  SynthConfig cfg;
  cfg.width = cfg.height = 8192;
  cfg.cell_count = 1500;
  cfg.spatial_mode = SpatialMode::kGradientX;
  cfg.seed = 33;
  const auto gen = generate(cfg, dir.path());
  OracleDetector oracle(gen.annotations, {});
  PipelineConfig pcfg;
  pcfg.workers = 2;
  const auto result = run_pipeline(gen.slide, oracle, pcfg);

  // column means, then Spearman rank correlation against column index
  std::vector<double> col_means;
  for (std::int64_t c = 0; c < result.heat_cols; ++c) {
    double sum = 0;
    int n = 0;
    for (std::int64_t r = 0; r < result.heat_rows; ++r) {
      const auto& v = result.heatmap[static_cast<std::size_t>(r * result.heat_cols + c)];
      if (v) {
        sum += *v;
        ++n;
      }
    }
    if (n > 0) col_means.push_back(sum / n);
  }
  REQUIRE(col_means.size() >= 4);
  std::vector<double> ranks(col_means.size());
  for (std::size_t i = 0; i < col_means.size(); ++i) {
    double rank = 0;
    for (std::size_t j = 0; j < col_means.size(); ++j)
      if (col_means[j] < col_means[i] || (col_means[j] == col_means[i] && j < i)) ++rank;
    ranks[i] = rank;
  }
  const double n = static_cast<double>(ranks.size());
  double d2 = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i)
    d2 += (ranks[i] - static_cast<double>(i)) * (ranks[i] - static_cast<double>(i));
  const double spearman = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
  CHECK(spearman >= 0.9);
}

TEST_CASE("pipeline results are identical across worker counts") {
  TempDir dir("pipe");
  SynthConfig cfg;
  cfg.width = cfg.height = 4096;
  cfg.cell_count = 120;
  cfg.seed = 55;
  const auto gen = generate(cfg, dir.path());
  NoiseModel noise;
  noise.miss_rate = 0.2;
  noise.jitter_sigma = 1.5;
  noise.fp_per_mm2 = 4.0;
  noise.seed = 99;

  std::string reference;
  for (int workers : {1, 2, 5}) {
    OracleDetector oracle(gen.annotations, noise);
    PipelineConfig pcfg;
    pcfg.workers = workers;
    pcfg.seed = 1234;
    const auto result = run_pipeline(gen.slide, oracle, pcfg);
    const auto text = result_json(result, gen.slide.meta.id);
    if (reference.empty())
      reference = text;
    else
      CHECK(text == reference);
  }
}

TEST_CASE("detector failures abort with progress information") {
  TempDir dir("pipe");
  SynthConfig cfg;
  cfg.width = cfg.height = 4096;
  cfg.cell_count = 10;
  cfg.seed = 3;
  const auto gen = generate(cfg, dir.path());
  FailingDetector detector;
  PipelineConfig pcfg;
  pcfg.workers = 2;
  CHECK_THROWS_WITH_AS(run_pipeline(gen.slide, detector, pcfg),
                       doctest::Contains("tiles completed"), std::runtime_error);
}

TEST_CASE("pixel accounting stays within workers x tile bytes plus slack") {
  TempDir dir("pipe");
  SynthConfig cfg;
  cfg.width = cfg.height = 4096;
  cfg.cell_count = 100;
  cfg.seed = 13;
  const auto gen = generate(cfg, dir.path());

  PixelTouchingOracle detector(gen.annotations, {});
  PipelineConfig pcfg;
  pcfg.workers = 4;
  PixelBudget::reset_peak();
  const auto result = run_pipeline(gen.slide, detector, pcfg);
  CHECK(result.detections.size() == 100);
  const std::size_t tile_bytes = 1024 * 1024 * 3;
  const std::size_t budget = 4 * tile_bytes + (8u << 20);
  CHECK(PixelBudget::peak_bytes() <= budget);
}

TEST_CASE("render_heatmap writes csv and ppm artifacts") {
  TempDir dir("heat");
  SlideResult result;
  result.heat_cols = 2;
  result.heat_rows = 1;
  result.heatmap = {std::nullopt, std::optional<double>(400.0)};
  render_heatmap(result, dir.path());

  std::ifstream csv(dir.path() / "heatmap.csv");
  std::stringstream ss;
  ss << csv.rdbuf();
  CHECK(ss.str() == "row,col,score\n0,0,\n0,1,400\n");

  const Patch img = read_ppm(dir.path() / "heatmap.ppm");
  CHECK(img.width == 16);
  CHECK(img.height == 8);
  const auto* empty_px = img.at(0, 0);
  CHECK(empty_px[0] == 255);
  CHECK(empty_px[1] == 255);
  CHECK(empty_px[2] == 255);
  const auto* hot_px = img.at(8, 0);
  CHECK(hot_px[0] == 255);  // full red at 400
  CHECK(hot_px[1] == 0);
  CHECK(hot_px[2] == 0);
}

TEST_CASE("heatmap csv round trips through parsing") {
  TempDir dir("heat");
  SlideResult result;
  result.heat_cols = 3;
  result.heat_rows = 2;
  result.heatmap = {std::optional<double>(0.0), std::nullopt, std::optional<double>(123.5),
                    std::nullopt, std::optional<double>(400.0), std::optional<double>(77.25)};
  render_heatmap(result, dir.path());

  std::ifstream csv(dir.path() / "heatmap.csv");
  std::string line;
  std::getline(csv, line);
  REQUIRE(line == "row,col,score");
  std::vector<std::optional<double>> parsed(6);
  while (std::getline(csv, line)) {
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    const int row = std::stoi(line.substr(0, c1));
    const int col = std::stoi(line.substr(c1 + 1, c2 - c1 - 1));
    const std::string value = line.substr(c2 + 1);
    if (!value.empty()) parsed[static_cast<std::size_t>(row * 3 + col)] = std::stod(value);
  }
  for (std::size_t i = 0; i < 6; ++i) {
    REQUIRE(parsed[i].has_value() == result.heatmap[i].has_value());
    if (parsed[i]) CHECK(*parsed[i] == doctest::Approx(*result.heatmap[i]).epsilon(1e-12));
  }
}

TEST_CASE("detections round trip through jsonl") {
  TempDir dir("dets");
  std::vector<Detection> dets;
  Detection d;
  d.box = {10, 20, 70, 71};
  d.grade = 3;
  d.class_probs = {0.0, 0.1, 0.1, 0.7, 0.1};
  d.score = 2.9;
  d.confidence = 0.93;
  dets.push_back(d);
  const auto path = dir.path() / "detections.jsonl";
  save_detections(dets, path);
  const auto loaded = load_detections(path);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].box.x == 10);
  CHECK(loaded[0].grade == 3);
  CHECK(loaded[0].score == doctest::Approx(2.9));
  CHECK(loaded[0].confidence == doctest::Approx(0.93));
}

TEST_CASE("external detector loopback via the reference stub") {
  TempDir dir("ext");
  SynthConfig cfg;
  cfg.width = cfg.height = 2048;
  cfg.cell_count = 30;
  cfg.seed = 77;
  const auto gen = generate(cfg, dir.path() / "slide");

  const std::string command = std::string("python3 ") + EIPH_TEST_TOOLS_DIR +
                              "/gt_detector.py " + gen.annotations_path.string();
  ExternalDetector detector(command, dir.path() / "scratch", 30.0);
  PipelineConfig pcfg;
  pcfg.workers = 2;  // adapter serializes internally
  const auto result = run_pipeline(gen.slide, detector, pcfg);
  CHECK(result.detections.size() == gen.annotations.cells.size());

  const auto report = match_detections(gen.annotations, result.detections, 0.5);
  CHECK(mean_average_precision(report) == 1.0);
}

TEST_CASE("external detector times out on a silent child") {
  TempDir dir("ext");
  SynthConfig cfg;
  cfg.width = cfg.height = 1024;
  cfg.cell_count = 2;
  cfg.seed = 1;
  const auto gen = generate(cfg, dir.path() / "slide");
  ExternalDetector detector("sleep 600", dir.path() / "scratch", 0.3);
  PipelineConfig pcfg;
  pcfg.workers = 1;
  CHECK_THROWS_WITH_AS(run_pipeline(gen.slide, detector, pcfg),
                       doctest::Contains("timeout"), std::runtime_error);
}
