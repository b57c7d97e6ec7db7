#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "eiph/annot_io.hpp"
#include "eiph/types.hpp"

namespace eiph {

enum class SpatialMode { kUniform, kGradientX, kClustered };

struct SynthConfig {
  std::int64_t width = 4096;
  std::int64_t height = 4096;
  std::int64_t cell_count = 200;
  std::array<double, kNumGrades> grade_mix = {1, 1, 1, 1, 1};
  SpatialMode spatial_mode = SpatialMode::kUniform;
  std::int64_t cell_radius_px = 35;  // ~17.5 um at 0.25 um/px
  std::uint64_t seed = 0;
  std::int64_t tile_size = 1024;
  Staining staining = Staining::kPrussian;
  std::string slide_id = "synthetic";
};

struct GeneratedSlide {
  SlideSource slide;
  AnnotationSet annotations;
  std::filesystem::path annotations_path;
};

// Grade -> disc fill color; blueness grows strictly with the grade.
const std::array<std::array<std::uint8_t, 3>, kNumGrades>& grade_colors();

// Exact largest-remainder split of n over the mix weights.
GradeCounts apportion_grades(std::int64_t n, const std::array<double, kNumGrades>& mix);

// Writes manifest.json, sparse PPM tiles (only those a cell touches) and
// annotations.jsonl under out_dir. Cells are non-overlapping discs placed by
// rejection sampling; deterministic in (cfg, seed).
GeneratedSlide generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

// "mini", "gradient", "sparse-rare"
GeneratedSlide golden_fixture(const std::string& name, const std::filesystem::path& out_dir);

}  // namespace eiph
