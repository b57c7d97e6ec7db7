#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace eiph::testsupport {

// Per-slide grade counts and the published integer score of the fully
// annotated 17-slide data set.
struct SlideRow {
  std::string file;
  std::string staining;
  std::int64_t total;
  long long score;
  std::array<std::int64_t, 5> counts;
};

inline const std::vector<SlideRow>& table1() {
  static const std::vector<SlideRow> rows = {
      {"01_EIPH", "prussian", 4446, 126, {1013, 1782, 1218, 348, 85}},
      {"02_EIPH", "prussian", 12812, 72, {5084, 6203, 1450, 64, 11}},
      {"03_EIPH", "prussian", 6325, 37, {4295, 1697, 330, 3, 0}},
      {"04_EIPH", "prussian", 5448, 63, {2551, 2379, 508, 10, 0}},
      {"05_EIPH", "prussian", 2489, 34, {1754, 634, 99, 2, 0}},
      {"06_EIPH", "turnbull", 2992, 41, {1908, 933, 148, 3, 0}},
      {"07_EIPH", "turnbull", 1073, 235, {48, 127, 352, 495, 51}},
      {"08_EIPH", "turnbull", 924, 67, {471, 290, 160, 3, 0}},
      {"09_EIPH", "turnbull", 4752, 216, {568, 1053, 932, 1446, 753}},
      {"10_EIPH", "prussian", 10385, 208, {592, 2131, 4037, 3098, 527}},
      {"12_EIPH", "prussian", 5751, 59, {2839, 2452, 435, 25, 0}},
      {"13_EIPH", "turnbull", 1112, 35, {767, 302, 43, 0, 0}},
      {"14_EIPH", "turnbull", 968, 43, {637, 252, 70, 8, 1}},
      {"15_EIPH", "prussian", 3143, 39, {1995, 1062, 81, 5, 0}},
      {"11_EIPH", "prussian", 1841, 148, {283, 553, 859, 131, 15}},
      {"16_EIPH", "prussian", 6491, 87, {2611, 2509, 984, 363, 24}},
      {"17_EIPH", "turnbull", 7095, 133, {1639, 2566, 1818, 1066, 6}},
  };
  return rows;
}

}  // namespace eiph::testsupport
