#include "eiph/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "eiph/rng.hpp"

namespace eiph {

namespace {

constexpr int kMaxPlacementAttempts = 1000;

double binomial_coeff4(int g) {
  static constexpr double c[5] = {1, 4, 6, 4, 1};
  return c[g];
}

int draw_weighted(Rng& rng, const std::array<double, kNumGrades>& weights) {
  double total = 0;
  for (double w : weights) total += w;
  if (total <= 0) throw std::invalid_argument("grade weights must not be all zero");
  const double u = rng.uniform() * total;
  double acc = 0;
  for (int g = 0; g < kNumGrades; ++g) {
    acc += weights[static_cast<std::size_t>(g)];
    if (u < acc) return g;
  }
  return kNumGrades - 1;
}

}  // namespace

const std::array<std::array<std::uint8_t, 3>, kNumGrades>& grade_colors() {
  // pale tan (no pigment) through dark blue (cytoplasm filled)
  static const std::array<std::array<std::uint8_t, 3>, kNumGrades> colors = {{
      {205, 188, 172},
      {152, 160, 192},
      {102, 122, 188},
      {60, 82, 172},
      {26, 38, 142},
  }};
  return colors;
}

GradeCounts apportion_grades(std::int64_t n, const std::array<double, kNumGrades>& mix) {
  double total = 0;
  for (double m : mix) {
    if (m < 0) throw std::invalid_argument("grade_mix weights must be non-negative");
    total += m;
  }
  if (total <= 0) throw std::invalid_argument("grade_mix must not be all zero");

  GradeCounts counts{};
  std::array<double, kNumGrades> remainder{};
  std::int64_t assigned = 0;
  for (int g = 0; g < kNumGrades; ++g) {
    const double quota = static_cast<double>(n) * mix[static_cast<std::size_t>(g)] / total;
    counts[static_cast<std::size_t>(g)] = static_cast<std::int64_t>(std::floor(quota));
    remainder[static_cast<std::size_t>(g)] = quota - std::floor(quota);
    assigned += counts[static_cast<std::size_t>(g)];
  }
  std::array<int, kNumGrades> order = {0, 1, 2, 3, 4};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (std::int64_t i = 0; assigned < n; ++assigned, ++i)
    ++counts[static_cast<std::size_t>(order[static_cast<std::size_t>(i % kNumGrades)])];
  return counts;
}

namespace {

struct Placement {
  std::vector<CellAnnotation> cells;
};

bool overlaps_any(const BoundingBox& box, const std::vector<CellAnnotation>& cells) {
  return std::any_of(cells.begin(), cells.end(),
                     [&](const CellAnnotation& c) { return intersects(box, c.box); });
}

Placement place_cells(const SynthConfig& cfg, Rng& rng) {
  const std::int64_t r = cfg.cell_radius_px;
  const std::int64_t side = 2 * r + 1;
  if (side > cfg.width || side > cfg.height)
    throw std::invalid_argument("cells do not fit in slide bounds");

  const std::int64_t lo_x = r, hi_x = cfg.width - 1 - r;
  const std::int64_t lo_y = r, hi_y = cfg.height - 1 - r;

  // pre-assigned grades for the modes without positional grade dependence
  std::vector<int> grades;
  if (cfg.spatial_mode != SpatialMode::kGradientX) {
    const GradeCounts counts = apportion_grades(cfg.cell_count, cfg.grade_mix);
    for (int g = 0; g < kNumGrades; ++g)
      grades.insert(grades.end(), static_cast<std::size_t>(counts[static_cast<std::size_t>(g)]),
                    g);
    for (std::size_t i = grades.size(); i > 1; --i)
      std::swap(grades[i - 1], grades[rng.below(i)]);
  }

  // cluster layout for kClustered; centers kept well inside the slide
  std::vector<std::pair<std::int64_t, std::int64_t>> centers;
  double cluster_sigma = 0;
  if (cfg.spatial_mode == SpatialMode::kClustered) {
    const auto n_centers =
        std::max<std::int64_t>(1, std::min<std::int64_t>(5, cfg.cell_count / 300));
    const auto margin_x = std::max<std::int64_t>(lo_x, cfg.width * 3 / 20);
    const auto margin_y = std::max<std::int64_t>(lo_y, cfg.height * 3 / 20);
    for (std::int64_t i = 0; i < n_centers; ++i)
      centers.emplace_back(rng.range(margin_x, cfg.width - 1 - margin_x),
                           rng.range(margin_y, cfg.height - 1 - margin_y));
    // keep the gaussian core below ~25% disc occupancy so rejection stays cheap
    const double per_center =
        static_cast<double>(cfg.cell_count) / static_cast<double>(n_centers);
    cluster_sigma = std::max(4.0 * static_cast<double>(side),
                             0.7 * static_cast<double>(side) * std::sqrt(per_center));
  }

  Placement placement;
  placement.cells.reserve(static_cast<std::size_t>(cfg.cell_count));
  for (std::int64_t i = 0; i < cfg.cell_count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
      std::int64_t cx, cy;
      switch (cfg.spatial_mode) {
        case SpatialMode::kClustered: {
          const auto& [kx, ky] = centers[rng.below(centers.size())];
          cx = std::clamp(static_cast<std::int64_t>(std::llround(rng.normal(
                              static_cast<double>(kx), cluster_sigma))),
                          lo_x, hi_x);
          cy = std::clamp(static_cast<std::int64_t>(std::llround(rng.normal(
                              static_cast<double>(ky), cluster_sigma))),
                          lo_y, hi_y);
          break;
        }
        default:
          cx = rng.range(lo_x, hi_x);
          cy = rng.range(lo_y, hi_y);
          break;
      }
      const BoundingBox box{static_cast<double>(cx - r), static_cast<double>(cy - r),
                            static_cast<double>(side), static_cast<double>(side)};
      if (overlaps_any(box, placement.cells)) continue;

      CellAnnotation cell;
      cell.id = i;
      cell.box = box;
      if (cfg.spatial_mode == SpatialMode::kGradientX) {
        // binomial tilt in x: expected grade rises left to right
        const double t =
            std::clamp(static_cast<double>(cx) / static_cast<double>(cfg.width), 0.02, 0.98);
        std::array<double, kNumGrades> weights{};
        for (int g = 0; g < kNumGrades; ++g)
          weights[static_cast<std::size_t>(g)] = cfg.grade_mix[static_cast<std::size_t>(g)] *
                                                 binomial_coeff4(g) * std::pow(t, g) *
                                                 std::pow(1.0 - t, 4 - g);
        cell.grade = draw_weighted(rng, weights);
      } else {
        cell.grade = grades[static_cast<std::size_t>(i)];
      }
      placement.cells.push_back(cell);
      placed = true;
    }
    if (!placed)
      throw std::runtime_error("cell placement failed after " +
                               std::to_string(kMaxPlacementAttempts) +
                               " attempts; configuration too dense");
  }
  return placement;
}

void render_tiles(const SynthConfig& cfg, const SlideSource& slide,
                  const std::vector<CellAnnotation>& cells) {
  const std::int64_t ts = cfg.tile_size;
  const std::int64_t cols = slide.tile_cols();
  const std::int64_t rows = slide.tile_rows();

  // bucket cells by the tiles their disc touches
  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<const CellAnnotation*>> buckets;
  for (const auto& cell : cells) {
    const auto c0 = static_cast<std::int64_t>(cell.box.x) / ts;
    const auto r0 = static_cast<std::int64_t>(cell.box.y) / ts;
    const auto c1 = static_cast<std::int64_t>(cell.box.x2() - 1) / ts;
    const auto r1 = static_cast<std::int64_t>(cell.box.y2() - 1) / ts;
    for (std::int64_t row = r0; row <= r1; ++row)
      for (std::int64_t col = c0; col <= c1; ++col) buckets[{col, row}].push_back(&cell);
  }

  std::filesystem::create_directories(slide.root / "tiles");
  const auto& colors = grade_colors();
  for (const auto& [key, tile_cells] : buckets) {
    const auto [col, row] = key;
    if (col < 0 || row < 0 || col >= cols || row >= rows) continue;
    const std::int64_t tx = col * ts;
    const std::int64_t ty = row * ts;
    const std::int64_t tw = std::min(ts, slide.meta.width - tx);
    const std::int64_t th = std::min(ts, slide.meta.height - ty);
    Patch tile = make_patch(tx, ty, tw, th);

    for (const CellAnnotation* cell : tile_cells) {
      const auto& color = colors[static_cast<std::size_t>(cell->grade)];
      const auto radius = static_cast<std::int64_t>((cell->box.w - 1) / 2);
      const auto ccx = static_cast<std::int64_t>(cell->box.x) + radius;
      const auto ccy = static_cast<std::int64_t>(cell->box.y) + radius;
      const auto y0 = std::max<std::int64_t>(ty, static_cast<std::int64_t>(cell->box.y));
      const auto y1 = std::min<std::int64_t>(ty + th, static_cast<std::int64_t>(cell->box.y2()));
      const auto x0 = std::max<std::int64_t>(tx, static_cast<std::int64_t>(cell->box.x));
      const auto x1 = std::min<std::int64_t>(tx + tw, static_cast<std::int64_t>(cell->box.x2()));
      for (std::int64_t py = y0; py < y1; ++py) {
        for (std::int64_t px = x0; px < x1; ++px) {
          const std::int64_t dx = px - ccx;
          const std::int64_t dy = py - ccy;
          if (dx * dx + dy * dy > radius * radius) continue;
          auto* p = tile.at(px - tx, py - ty);
          p[0] = color[0];
          p[1] = color[1];
          p[2] = color[2];
        }
      }
    }
    write_ppm(slide.tile_path(col, row), tile);
  }
}

}  // namespace

GeneratedSlide generate(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.width <= 0 || cfg.height <= 0) throw std::invalid_argument("bad slide dimensions");
  if (cfg.cell_count < 0) throw std::invalid_argument("negative cell count");
  if (cfg.tile_size <= 0) throw std::invalid_argument("bad tile size");
  if (cfg.cell_radius_px <= 0) throw std::invalid_argument("bad cell radius");

  std::filesystem::create_directories(out_dir);

  GeneratedSlide out;
  out.slide.manifest_path = out_dir / "manifest.json";
  out.slide.root = out_dir;
  out.slide.meta.id = cfg.slide_id;
  out.slide.meta.width = cfg.width;
  out.slide.meta.height = cfg.height;
  out.slide.meta.staining = cfg.staining;
  out.slide.meta.mpp = kReferenceMpp;
  out.slide.tile_size = cfg.tile_size;
  out.slide.tile_format = "ppm";
  out.slide.tile_pattern = "tiles/{col}_{row}.ppm";

  Rng rng(cfg.seed);
  Placement placement;
  if (cfg.cell_count > 0) placement = place_cells(cfg, rng);

  out.annotations.slide = out.slide.meta;
  out.annotations.cells = std::move(placement.cells);

  write_manifest(out.slide);
  render_tiles(cfg, out.slide, out.annotations.cells);
  out.annotations_path = out_dir / "annotations.jsonl";
  save_annotations(out.annotations, out.annotations_path);
  return out;
}

GeneratedSlide golden_fixture(const std::string& name, const std::filesystem::path& out_dir) {
  SynthConfig cfg;
  if (name == "mini") {
    cfg.width = 4096;
    cfg.height = 4096;
    cfg.cell_count = 200;
    cfg.grade_mix = {4, 6, 5, 3, 2};
    cfg.spatial_mode = SpatialMode::kUniform;
    cfg.seed = 0x00e1b001;
    cfg.tile_size = 1024;
    cfg.slide_id = "mini";
  } else if (name == "gradient") {
    cfg.width = 8192;
    cfg.height = 8192;
    cfg.cell_count = 2000;
    cfg.grade_mix = {1, 1, 1, 1, 1};
    cfg.spatial_mode = SpatialMode::kGradientX;
    cfg.seed = 0x00e1b002;
    cfg.tile_size = 1024;
    cfg.slide_id = "gradient";
    cfg.staining = Staining::kTurnbull;
  } else if (name == "sparse-rare") {
    // the rare-cell scenario: one grade-4 cell on a 35,999 x 34,118 slide
    cfg.width = 35999;
    cfg.height = 34118;
    cfg.cell_count = 1001;
    cfg.grade_mix = {1000, 0, 0, 0, 1};
    cfg.spatial_mode = SpatialMode::kClustered;
    cfg.seed = 0x00e1b003;
    cfg.tile_size = 512;
    cfg.slide_id = "sparse-rare";
  } else {
    throw std::invalid_argument("unknown fixture: " + name);
  }
  return generate(cfg, out_dir);
}

}  // namespace eiph
