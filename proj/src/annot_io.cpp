#include "eiph/annot_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "json.hpp"

namespace eiph {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FileHandle = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

std::atomic<std::size_t> PixelBudget::live_{0};
std::atomic<std::size_t> PixelBudget::peak_{0};

std::size_t PixelBudget::live_bytes() { return live_.load(); }
std::size_t PixelBudget::peak_bytes() { return peak_.load(); }
void PixelBudget::reset_peak() { peak_.store(live_.load()); }

void PixelBudget::add(std::size_t n) {
  const std::size_t now = live_.fetch_add(n) + n;
  std::size_t prev = peak_.load();
  while (prev < now && !peak_.compare_exchange_weak(prev, now)) {
  }
}

void PixelBudget::sub(std::size_t n) { live_.fetch_sub(n); }

Patch make_patch(std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h,
                 std::uint8_t fill) {
  if (w <= 0 || h <= 0) fail("patch dimensions must be positive");
  Patch p;
  p.x = x;
  p.y = y;
  p.width = w;
  p.height = h;
  p.pixels.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill);
  return p;
}

void write_ppm(const std::filesystem::path& path, const Patch& patch) {
  FileHandle f(std::fopen(path.string().c_str(), "wb"));
  if (!f) fail("cannot open for writing: " + path.string());
  std::string header =
      "P6\n" + std::to_string(patch.width) + " " + std::to_string(patch.height) + "\n255\n";
  if (std::fwrite(header.data(), 1, header.size(), f.get()) != header.size())
    fail("short write: " + path.string());
  if (std::fwrite(patch.pixels.data(), 1, patch.pixels.size(), f.get()) != patch.pixels.size())
    fail("short write: " + path.string());
}

namespace {

// Parses "P6 <w> <h> 255" allowing whitespace and # comments, leaving the
// stream at the first raster byte. Returns header length via ftell.
void read_ppm_header(std::FILE* f, const std::filesystem::path& path, std::int64_t& w,
                     std::int64_t& h) {
  auto next_token = [&](std::string& tok) {
    tok.clear();
    int c = std::fgetc(f);
    while (c != EOF) {
      if (c == '#') {
        while (c != EOF && c != '\n') c = std::fgetc(f);
      } else if (std::isspace(c)) {
        c = std::fgetc(f);
      } else {
        break;
      }
    }
    while (c != EOF && !std::isspace(c)) {
      tok.push_back(static_cast<char>(c));
      c = std::fgetc(f);
    }
    if (tok.empty()) fail("truncated PPM header: " + path.string());
  };
  std::string tok;
  next_token(tok);
  if (tok != "P6") fail("not a P6 PPM: " + path.string());
  next_token(tok);
  w = std::stoll(tok);
  next_token(tok);
  h = std::stoll(tok);
  next_token(tok);
  if (tok != "255") fail("unsupported PPM maxval in " + path.string());
  if (w <= 0 || h <= 0) fail("bad PPM dimensions in " + path.string());
}

}  // namespace

Patch read_ppm(const std::filesystem::path& path) {
  FileHandle f(std::fopen(path.string().c_str(), "rb"));
  if (!f) fail("cannot open: " + path.string());
  std::int64_t w = 0, h = 0;
  read_ppm_header(f.get(), path, w, h);
  Patch p = make_patch(0, 0, w, h);
  if (std::fread(p.pixels.data(), 1, p.pixels.size(), f.get()) != p.pixels.size())
    fail("truncated PPM raster: " + path.string());
  return p;
}

std::int64_t SlideSource::tile_cols() const {
  return (meta.width + tile_size - 1) / tile_size;
}

std::int64_t SlideSource::tile_rows() const {
  return (meta.height + tile_size - 1) / tile_size;
}

std::filesystem::path SlideSource::tile_path(std::int64_t col, std::int64_t row) const {
  std::string rel = replace_all(tile_pattern, "{col}", std::to_string(col));
  rel = replace_all(rel, "{row}", std::to_string(row));
  return root / rel;
}

SlideSource open_slide(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) fail("cannot open manifest: " + manifest_path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail("bad manifest JSON in " + manifest_path.string() + ": " + e.what());
  }
  if (j.value("magic", "") != "eiph-tiles/1")
    fail("unrecognized manifest magic in " + manifest_path.string());

  SlideSource s;
  s.manifest_path = manifest_path;
  s.root = manifest_path.parent_path();
  s.meta.id = j.value("id", manifest_path.parent_path().filename().string());
  s.meta.width = j.at("width").get<std::int64_t>();
  s.meta.height = j.at("height").get<std::int64_t>();
  s.meta.mpp = j.at("mpp").get<double>();
  const auto staining = staining_from_string(j.at("staining").get<std::string>());
  if (!staining) fail("unknown staining in " + manifest_path.string());
  s.meta.staining = *staining;
  s.tile_size = j.at("tile_size").get<std::int64_t>();
  s.tile_format = j.at("format").get<std::string>();
  s.tile_pattern = j.at("tile_pattern").get<std::string>();
  if (s.tile_size <= 0) fail("tile_size must be positive in " + manifest_path.string());
  if (s.meta.width <= 0 || s.meta.height <= 0)
    fail("slide dimensions must be positive in " + manifest_path.string());
  if (s.tile_format != "ppm") fail("unsupported tile format: " + s.tile_format);
  return s;
}

void write_manifest(const SlideSource& slide) {
  json j;
  j["magic"] = "eiph-tiles/1";
  j["id"] = slide.meta.id;
  j["width"] = slide.meta.width;
  j["height"] = slide.meta.height;
  j["tile_size"] = slide.tile_size;
  j["mpp"] = slide.meta.mpp;
  j["staining"] = to_string(slide.meta.staining);
  j["format"] = slide.tile_format;
  j["tile_pattern"] = slide.tile_pattern;
  std::ofstream out(slide.manifest_path);
  if (!out) fail("cannot write manifest: " + slide.manifest_path.string());
  out << j.dump(2) << "\n";
}

Patch read_region(const SlideSource& slide, const BoundingBox& rect) {
  const auto rx = static_cast<std::int64_t>(std::floor(rect.x));
  const auto ry = static_cast<std::int64_t>(std::floor(rect.y));
  const auto rw = static_cast<std::int64_t>(std::llround(rect.w));
  const auto rh = static_cast<std::int64_t>(std::llround(rect.h));
  if (rw <= 0 || rh <= 0) fail("read_region: empty rect");
  if (rx + rw <= 0 || ry + rh <= 0 || rx >= slide.meta.width || ry >= slide.meta.height)
    fail("read_region: rect outside slide bounds");

  Patch out = make_patch(rx, ry, rw, rh);  // white background

  const std::int64_t ts = slide.tile_size;
  const std::int64_t col0 = std::max<std::int64_t>(0, rx / ts);
  const std::int64_t row0 = std::max<std::int64_t>(0, ry / ts);
  const std::int64_t col1 = std::min(slide.tile_cols() - 1, (rx + rw - 1) / ts);
  const std::int64_t row1 = std::min(slide.tile_rows() - 1, (ry + rh - 1) / ts);

  for (std::int64_t row = row0; row <= row1; ++row) {
    for (std::int64_t col = col0; col <= col1; ++col) {
      const auto path = slide.tile_path(col, row);
      FileHandle f(std::fopen(path.string().c_str(), "rb"));
      if (!f) continue;  // absent tile: white by definition
      std::int64_t tw = 0, th = 0;
      read_ppm_header(f.get(), path, tw, th);
      const std::int64_t data_start = std::ftell(f.get());

      const std::int64_t tx = col * ts;  // tile origin, slide coordinates
      const std::int64_t ty = row * ts;
      const std::int64_t x0 = std::max(rx, tx);
      const std::int64_t y0 = std::max(ry, ty);
      const std::int64_t x1 = std::min(rx + rw, tx + tw);
      const std::int64_t y1 = std::min(ry + rh, ty + th);
      if (x0 >= x1 || y0 >= y1) continue;

      // copy the overlapping rows directly, no intermediate tile buffer
      const std::int64_t span = x1 - x0;
      for (std::int64_t yy = y0; yy < y1; ++yy) {
        const std::int64_t offset = data_start + 3 * ((yy - ty) * tw + (x0 - tx));
        if (std::fseek(f.get(), static_cast<long>(offset), SEEK_SET) != 0)
          fail("seek failed in tile " + path.string());
        if (std::fread(out.at(x0 - rx, yy - ry), 1, static_cast<std::size_t>(3 * span),
                       f.get()) != static_cast<std::size_t>(3 * span))
          fail("truncated tile raster: " + path.string());
      }
    }
  }
  return out;
}

namespace {

int require_int_field(const json& j, const char* key, int line_no) {
  if (!j.contains(key) || !j[key].is_number_integer())
    fail(std::string("missing or non-integer field '") + key + "', line " +
         std::to_string(line_no));
  return j[key].get<int>();
}

std::int64_t require_int64_field(const json& j, const char* key, int line_no) {
  if (!j.contains(key) || !j[key].is_number_integer())
    fail(std::string("missing or non-integer field '") + key + "', line " +
         std::to_string(line_no));
  return j[key].get<std::int64_t>();
}

}  // namespace

AnnotationSet load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open annotations: " + path.string());

  AnnotationSet set;
  bool have_header = false;
  std::string line;
  int line_no = 0;
  std::set<std::int64_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail("parse error, line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!have_header) {
      if (!j.contains("slide")) fail("missing slide header, line " + std::to_string(line_no));
      const json& s = j["slide"];
      set.slide.id = s.at("id").get<std::string>();
      set.slide.width = require_int64_field(s, "width", line_no);
      set.slide.height = require_int64_field(s, "height", line_no);
      set.slide.mpp = s.at("mpp").get<double>();
      const auto staining = staining_from_string(s.at("staining").get<std::string>());
      if (!staining) fail("unknown staining, line " + std::to_string(line_no));
      set.slide.staining = *staining;
      if (set.slide.width <= 0 || set.slide.height <= 0)
        fail("non-positive slide dimensions, line " + std::to_string(line_no));
      have_header = true;
      continue;
    }
    CellAnnotation cell;
    cell.id = require_int64_field(j, "id", line_no);
    cell.box.x = require_int64_field(j, "x", line_no);
    cell.box.y = require_int64_field(j, "y", line_no);
    cell.box.w = require_int64_field(j, "w", line_no);
    cell.box.h = require_int64_field(j, "h", line_no);
    cell.grade = require_int_field(j, "grade", line_no);
    if (!is_valid_grade(cell.grade)) fail("grade out of range, line " + std::to_string(line_no));
    if (cell.box.w <= 0 || cell.box.h <= 0)
      fail("non-positive box, line " + std::to_string(line_no));
    if (cell.box.x < 0 || cell.box.y < 0 ||
        cell.box.x2() > static_cast<double>(set.slide.width) ||
        cell.box.y2() > static_cast<double>(set.slide.height))
      fail("box out of bounds for cell " + std::to_string(cell.id) + ", line " +
           std::to_string(line_no));
    if (!seen.insert(cell.id).second)
      fail("duplicate id " + std::to_string(cell.id) + ", line " + std::to_string(line_no));
    set.cells.push_back(cell);
  }
  if (!have_header) {
    if (line_no == 0) return set;  // empty file: zero cells, default slide
    fail("missing slide header in " + path.string());
  }
  return set;
}

void save_annotations(const AnnotationSet& set, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail("cannot write annotations: " + path.string());
  json header;
  header["slide"] = {{"id", set.slide.id},
                     {"width", set.slide.width},
                     {"height", set.slide.height},
                     {"staining", to_string(set.slide.staining)},
                     {"mpp", set.slide.mpp}};
  out << header.dump() << "\n";
  for (const auto& cell : set.cells) {
    json j;
    j["id"] = cell.id;
    j["x"] = static_cast<std::int64_t>(std::llround(cell.box.x));
    j["y"] = static_cast<std::int64_t>(std::llround(cell.box.y));
    j["w"] = static_cast<std::int64_t>(std::llround(cell.box.w));
    j["h"] = static_cast<std::int64_t>(std::llround(cell.box.h));
    j["grade"] = cell.grade;
    out << j.dump() << "\n";
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

RatingTable load_ratings(const std::filesystem::path& ratings_csv,
                         const std::filesystem::path& reference_csv) {
  RatingTable table;

  std::ifstream ref(reference_csv);
  if (!ref) fail("cannot open reference CSV: " + reference_csv.string());
  std::string line;
  if (!std::getline(ref, line) || split_csv_line(line) != std::vector<std::string>{"cell_id", "grade"})
    fail("reference CSV must start with header cell_id,grade");
  int line_no = 1;
  while (std::getline(ref, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 2) fail("bad reference row, line " + std::to_string(line_no));
    const std::int64_t id = std::stoll(fields[0]);
    const int grade = std::stoi(fields[1]);
    if (!is_valid_grade(grade)) fail("grade out of range, line " + std::to_string(line_no));
    if (!table.reference.emplace(id, grade).second)
      fail("duplicate reference cell " + std::to_string(id));
  }

  std::ifstream in(ratings_csv);
  if (!in) fail("cannot open ratings CSV: " + ratings_csv.string());
  if (!std::getline(in, line) ||
      split_csv_line(line) != std::vector<std::string>{"cell_id", "rater_id", "session", "grade"})
    fail("ratings CSV must start with header cell_id,rater_id,session,grade");
  std::set<std::tuple<std::int64_t, std::string, int>> seen;
  line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 4) fail("bad ratings row, line " + std::to_string(line_no));
    RatingRecord rec;
    rec.cell_id = std::stoll(fields[0]);
    rec.rater_id = fields[1];
    rec.session = std::stoi(fields[2]);
    rec.grade = std::stoi(fields[3]);
    if (rec.session != 0 && rec.session != 1)
      fail("session must be 0 or 1, line " + std::to_string(line_no));
    if (!is_valid_grade(rec.grade)) fail("grade out of range, line " + std::to_string(line_no));
    if (!table.reference.count(rec.cell_id))
      fail("cell " + std::to_string(rec.cell_id) + " not in reference, line " +
           std::to_string(line_no));
    if (!seen.emplace(rec.cell_id, rec.rater_id, rec.session).second)
      fail("duplicate rating (" + std::to_string(rec.cell_id) + "," + rec.rater_id + "," +
           std::to_string(rec.session) + ")");
    table.records.push_back(std::move(rec));
  }
  return table;
}

void save_ratings(const RatingTable& table, const std::filesystem::path& ratings_csv,
                  const std::filesystem::path& reference_csv) {
  std::ofstream ref(reference_csv);
  if (!ref) fail("cannot write reference CSV: " + reference_csv.string());
  ref << "cell_id,grade\n";
  for (const auto& [id, grade] : table.reference) ref << id << "," << grade << "\n";

  std::ofstream out(ratings_csv);
  if (!out) fail("cannot write ratings CSV: " + ratings_csv.string());
  out << "cell_id,rater_id,session,grade\n";
  for (const auto& rec : table.records)
    out << rec.cell_id << "," << rec.rater_id << "," << rec.session << "," << rec.grade << "\n";
}

}  // namespace eiph
