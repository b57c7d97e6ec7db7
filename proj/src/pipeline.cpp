#include "eiph/pipeline.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "eiph/detection_math.hpp"
#include "json.hpp"

namespace eiph {

namespace {

using nlohmann::json;

}  // namespace

TilePlan plan_tiles(const SlideMeta& meta, std::int64_t tile_w, std::int64_t tile_h,
                    std::int64_t overlap) {
  if (tile_w <= 0 || tile_h <= 0) throw std::invalid_argument("tile dims must be positive");
  if (overlap < 0 || overlap >= std::min(tile_w, tile_h))
    throw std::invalid_argument("require 0 <= overlap < min(tile_w, tile_h)");

  auto axis_positions = [](std::int64_t extent, std::int64_t tile, std::int64_t ov) {
    std::vector<std::int64_t> positions;
    const std::int64_t stride = tile - ov;
    std::int64_t x = 0;
    while (true) {
      if (x + tile >= extent) {
        positions.push_back(std::max<std::int64_t>(0, extent - tile));
        break;
      }
      positions.push_back(x);
      x += stride;
    }
    return positions;
  };

  const auto xs = axis_positions(meta.width, tile_w, overlap);
  const auto ys = axis_positions(meta.height, tile_h, overlap);

  TilePlan plan;
  plan.tile_w = tile_w;
  plan.tile_h = tile_h;
  plan.overlap = overlap;
  plan.cols = static_cast<std::int64_t>(xs.size());
  plan.rows = static_cast<std::int64_t>(ys.size());
  plan.tiles.reserve(xs.size() * ys.size());
  for (std::int64_t y : ys)
    for (std::int64_t x : xs)
      plan.tiles.push_back({static_cast<double>(x), static_cast<double>(y),
                            static_cast<double>(std::min(tile_w, meta.width - x)),
                            static_cast<double>(std::min(tile_h, meta.height - y))});
  return plan;
}

std::array<std::array<double, kNumGrades>, kNumGrades> NoiseModel::identity() {
  std::array<std::array<double, kNumGrades>, kNumGrades> m{};
  for (std::size_t i = 0; i < kNumGrades; ++i) m[i][i] = 1.0;
  return m;
}

void NoiseModel::validate() const {
  if (miss_rate < 0 || miss_rate > 1) throw std::invalid_argument("miss_rate must be in [0,1]");
  if (jitter_sigma < 0) throw std::invalid_argument("jitter_sigma must be >= 0");
  if (fp_per_mm2 < 0) throw std::invalid_argument("fp_per_mm2 must be >= 0");
  for (const auto& row : confusion) {
    double sum = 0;
    for (double v : row) {
      if (v < 0) throw std::invalid_argument("confusion entries must be >= 0");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("confusion rows must sum to 1");
  }
}

OracleDetector::OracleDetector(AnnotationSet set, NoiseModel noise)
    : set_(std::move(set)), noise_(noise) {
  noise_.validate();
  if (!set_.cells.empty()) {
    std::vector<double> ws, hs;
    ws.reserve(set_.cells.size());
    hs.reserve(set_.cells.size());
    for (const auto& c : set_.cells) {
      ws.push_back(c.box.w);
      hs.push_back(c.box.h);
    }
    const auto mid = ws.size() / 2;
    std::nth_element(ws.begin(), ws.begin() + static_cast<std::ptrdiff_t>(mid), ws.end());
    std::nth_element(hs.begin(), hs.begin() + static_cast<std::ptrdiff_t>(mid), hs.end());
    median_cell_w_ = ws[mid];
    median_cell_h_ = hs[mid];
  } else {
    median_cell_w_ = median_cell_h_ = 64;
  }
}

std::vector<Detection> OracleDetector::detect(const SlideSource& slide, const BoundingBox& tile,
                                              Rng& rng) {
  return detect_on(slide.meta, tile, rng);
}

std::vector<Detection> OracleDetector::detect_on(const SlideMeta& meta, const BoundingBox& tile,
                                                 Rng& rng) const {
  std::vector<Detection> out;
  for (const auto& cell : set_.cells) {
    if (!intersects(cell.box, tile)) continue;
    if (noise_.miss_rate > 0 && rng.bernoulli(noise_.miss_rate)) continue;

    int grade = cell.grade;
    const auto& row = noise_.confusion[static_cast<std::size_t>(cell.grade)];
    const double u = rng.uniform();
    double acc = 0;
    for (int g = 0; g < kNumGrades; ++g) {
      acc += row[static_cast<std::size_t>(g)];
      if (u < acc) {
        grade = g;
        break;
      }
    }

    Detection det;
    det.box = cell.box;
    det.box.x -= tile.x;  // tile-local frame
    det.box.y -= tile.y;
    if (noise_.jitter_sigma > 0) {
      det.box.x += rng.normal(0, noise_.jitter_sigma);
      det.box.y += rng.normal(0, noise_.jitter_sigma);
    }
    det.grade = grade;
    det.class_probs[static_cast<std::size_t>(grade)] = 1.0;
    det.score = grade;
    det.confidence = rng.uniform(0.5, 1.0);
    out.push_back(det);
  }

  if (noise_.fp_per_mm2 > 0) {
    const double mm_per_px = meta.mpp * 1e-3;
    const double tile_mm2 = tile.w * tile.h * mm_per_px * mm_per_px;
    const int n_fp = rng.poisson(noise_.fp_per_mm2 * tile_mm2);
    for (int i = 0; i < n_fp; ++i) {
      Detection det;
      det.box.w = median_cell_w_;
      det.box.h = median_cell_h_;
      det.box.x = rng.uniform(0, std::max(1.0, tile.w - det.box.w));
      det.box.y = rng.uniform(0, std::max(1.0, tile.h - det.box.h));
      det.grade = static_cast<int>(rng.below(kNumGrades));
      det.class_probs[static_cast<std::size_t>(det.grade)] = 1.0;
      det.score = det.grade;
      det.confidence = rng.uniform(0.5, 1.0);
      out.push_back(det);
    }
  }
  return out;
}

ExternalDetector::ExternalDetector(std::string command, std::filesystem::path scratch_dir,
                                   double timeout_seconds)
    : command_(std::move(command)),
      scratch_dir_(std::move(scratch_dir)),
      timeout_seconds_(timeout_seconds) {
  std::filesystem::create_directories(scratch_dir_);
  start();
}

ExternalDetector::~ExternalDetector() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  if (child_pid_ > 0) {
    // the child runs in its own process group; signal the whole group so
    // shell-spawned grandchildren die too
    ::kill(-child_pid_, SIGTERM);
    int status = 0;
    ::waitpid(child_pid_, &status, 0);
  }
}

void ExternalDetector::start() {
  // a dead child must surface as EPIPE on write, not kill the process
  ::signal(SIGPIPE, SIG_IGN);

  int in_pipe[2];   // parent -> child
  int out_pipe[2];  // child -> parent
  if (::pipe(in_pipe) != 0 || ::pipe(out_pipe) != 0)
    throw std::runtime_error("external detector: pipe() failed");

  const pid_t pid = ::fork();
  if (pid < 0) throw std::runtime_error("external detector: fork() failed");
  if (pid == 0) {
    ::setpgid(0, 0);
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  child_pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
}

std::string ExternalDetector::roundtrip(const std::string& request_line) {
  std::size_t written = 0;
  while (written < request_line.size()) {
    const ssize_t n =
        ::write(to_child_, request_line.data() + written, request_line.size() - written);
    if (n < 0) throw std::runtime_error("external detector: write failed (child gone?)");
    written += static_cast<std::size_t>(n);
  }

  const auto deadline_ms = static_cast<int>(timeout_seconds_ * 1000.0);
  while (true) {
    const auto newline = read_buffer_.find('\n');
    if (newline != std::string::npos) {
      std::string line = read_buffer_.substr(0, newline);
      read_buffer_.erase(0, newline + 1);
      return line;
    }
    struct pollfd pfd{from_child_, POLLIN, 0};
    const int rv = ::poll(&pfd, 1, deadline_ms);
    if (rv == 0) throw std::runtime_error("external detector: response timeout");
    if (rv < 0) throw std::runtime_error("external detector: poll failed");
    char buf[4096];
    const ssize_t n = ::read(from_child_, buf, sizeof(buf));
    if (n <= 0) throw std::runtime_error("external detector: child closed stdout");
    read_buffer_.append(buf, static_cast<std::size_t>(n));
  }
}

std::vector<Detection> ExternalDetector::detect(const SlideSource& slide,
                                                const BoundingBox& tile, Rng&) {
  std::lock_guard<std::mutex> lock(mutex_);

  const auto tx = static_cast<std::int64_t>(tile.x);
  const auto ty = static_cast<std::int64_t>(tile.y);
  const std::uint64_t id = next_id_++;
  const auto patch_path =
      scratch_dir_ / ("patch_" + std::to_string(tx) + "_" + std::to_string(ty) + ".ppm");
  {
    const Patch patch = read_region(slide, tile);
    write_ppm(patch_path, patch);
  }

  json req;
  req["id"] = id;
  req["slide"] = slide.meta.id;
  req["x"] = tx;
  req["y"] = ty;
  req["w"] = static_cast<std::int64_t>(tile.w);
  req["h"] = static_cast<std::int64_t>(tile.h);
  req["patch_ppm_path"] = patch_path.string();

  const std::string response_line = roundtrip(req.dump() + "\n");
  std::error_code ec;
  std::filesystem::remove(patch_path, ec);

  json resp;
  try {
    resp = json::parse(response_line);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("external detector: bad response JSON: ") + e.what());
  }
  if (resp.value("id", std::uint64_t{0}) != id)
    throw std::runtime_error("external detector: response id mismatch");

  std::vector<Detection> out;
  for (const auto& d : resp.at("detections")) {
    Detection det;
    det.box.x = d.at("x").get<double>();
    det.box.y = d.at("y").get<double>();
    det.box.w = d.at("w").get<double>();
    det.box.h = d.at("h").get<double>();
    const auto& probs = d.at("probs");
    if (probs.size() != kNumGrades)
      throw std::runtime_error("external detector: probs must have 5 entries");
    double best = -1;
    for (std::size_t g = 0; g < kNumGrades; ++g) {
      det.class_probs[g] = probs[g].get<double>();
      if (det.class_probs[g] > best) {
        best = det.class_probs[g];
        det.grade = static_cast<int>(g);
      }
    }
    det.score = d.at("score").get<double>();
    det.confidence = d.at("confidence").get<double>();
    out.push_back(det);
  }
  return out;
}

std::vector<Detection> merge_tiles(const TilePlan& plan,
                                   std::vector<std::vector<Detection>> per_tile,
                                   double nms_thr) {
  if (per_tile.size() != plan.tiles.size())
    throw std::invalid_argument("merge_tiles: one detection list per tile required");

  std::vector<Detection> global;
  for (std::size_t ti = 0; ti < per_tile.size(); ++ti) {
    const BoundingBox& tile = plan.tiles[ti];
    const std::int64_t col = static_cast<std::int64_t>(ti) % plan.cols;
    const std::int64_t row = static_cast<std::int64_t>(ti) / plan.cols;

    // a later neighbor covering the margin takes ownership
    const bool has_right = col + 1 < plan.cols;
    const bool has_down = row + 1 < plan.rows;
    const BoundingBox* right = has_right ? &plan.tiles[ti + 1] : nullptr;
    const BoundingBox* down = has_down ? &plan.tiles[ti + static_cast<std::size_t>(plan.cols)]
                                       : nullptr;

    for (Detection det : per_tile[ti]) {
      det.box.x += tile.x;
      det.box.y += tile.y;
      const double cx = det.box.cx();
      const double cy = det.box.cy();
      if (right && cx >= tile.x2() - static_cast<double>(plan.overlap) &&
          right->contains(cx, cy))
        continue;
      if (down && cy >= tile.y2() - static_cast<double>(plan.overlap) && down->contains(cx, cy))
        continue;
      global.push_back(det);
    }
  }
  return nms(std::move(global), nms_thr);
}

SlideResult run_pipeline(const SlideSource& slide, Detector& detector,
                         const PipelineConfig& cfg) {
  if (cfg.workers < 1) throw std::invalid_argument("workers must be >= 1");
  const TilePlan plan = plan_tiles(slide.meta, cfg.tile_w, cfg.tile_h, cfg.overlap);

  std::vector<std::vector<Detection>> per_tile(plan.tiles.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> completed{0};
  std::mutex error_mutex;
  std::string first_error;

  auto worker = [&]() {
    while (true) {
      const std::size_t ti = next.fetch_add(1);
      if (ti >= plan.tiles.size()) return;
      {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error.empty()) return;
      }
      try {
        Rng rng = Rng::derive(cfg.seed, ti);
        per_tile[ti] = detector.detect(slide, plan.tiles[ti], rng);
        completed.fetch_add(1);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (first_error.empty())
          first_error = "tile " + std::to_string(ti) + ": " + e.what();
      }
    }
  };

  const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers),
                                               std::max<std::size_t>(1, plan.tiles.size()));
  std::vector<std::thread> threads;
  threads.reserve(n_workers);
  for (std::size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  if (!first_error.empty())
    throw std::runtime_error("detector failed at " + first_error + " (" +
                             std::to_string(completed.load()) + "/" +
                             std::to_string(plan.tiles.size()) + " tiles completed)");

  SlideResult result;
  result.detections = merge_tiles(plan, std::move(per_tile), cfg.nms_thr);
  result.counts = grade_counts(std::span<const Detection>(result.detections));
  std::int64_t total = 0;
  for (auto c : result.counts) total += c;
  if (total > 0) result.ths = ths(result.counts);

  result.heat_cols = plan.cols;
  result.heat_rows = plan.rows;
  result.heatmap.assign(plan.tiles.size(), std::nullopt);
  for (std::size_t ti = 0; ti < plan.tiles.size(); ++ti) {
    std::int64_t n = 0, sum = 0;
    for (const auto& det : result.detections) {
      if (!plan.tiles[ti].contains(det.box.cx(), det.box.cy())) continue;
      ++n;
      sum += det.grade;
    }
    if (n > 0) result.heatmap[ti] = 100.0 * static_cast<double>(sum) / static_cast<double>(n);
  }
  return result;
}

std::string result_json(const SlideResult& result, const std::string& slide_id) {
  json j;
  j["version"] = "1";
  j["slide"] = slide_id;
  j["counts"] = result.counts;
  j["n_detections"] = result.detections.size();
  if (result.ths) {
    j["ths"] = {{"score", result.ths->score},
                {"rounded", result.ths->rounded},
                {"n_cells", result.ths->n_cells},
                {"diagnosis_confirmed", result.ths->diagnosis_confirmed}};
  } else {
    j["ths"] = nullptr;
    j["error"] = "no cells to score";
  }
  j["heatmap"] = {{"rows", result.heat_rows}, {"cols", result.heat_cols}};
  json cells = json::array();
  for (const auto& v : result.heatmap) {
    if (v)
      cells.push_back(*v);
    else
      cells.push_back(nullptr);
  }
  j["heatmap"]["scores"] = std::move(cells);
  return j.dump(2) + "\n";
}

void save_detections(std::span<const Detection> detections,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write detections: " + path.string());
  std::int64_t id = 0;
  for (const auto& det : detections) {
    json j;
    j["id"] = id++;
    j["x"] = static_cast<std::int64_t>(std::llround(det.box.x));
    j["y"] = static_cast<std::int64_t>(std::llround(det.box.y));
    j["w"] = static_cast<std::int64_t>(std::llround(det.box.w));
    j["h"] = static_cast<std::int64_t>(std::llround(det.box.h));
    j["grade"] = det.grade;
    j["probs"] = det.class_probs;
    j["score"] = det.score;
    j["confidence"] = det.confidence;
    out << j.dump() << "\n";
  }
}

std::vector<Detection> load_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open detections: " + path.string());
  std::vector<Detection> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("parse error, line " + std::to_string(line_no) + ": " + e.what());
    }
    if (j.contains("slide")) continue;  // tolerate an annotation-style header
    Detection det;
    det.box.x = j.at("x").get<double>();
    det.box.y = j.at("y").get<double>();
    det.box.w = j.at("w").get<double>();
    det.box.h = j.at("h").get<double>();
    det.grade = j.at("grade").get<int>();
    if (!is_valid_grade(det.grade))
      throw std::runtime_error("grade out of range, line " + std::to_string(line_no));
    if (j.contains("probs")) {
      const auto& probs = j["probs"];
      for (std::size_t g = 0; g < kNumGrades && g < probs.size(); ++g)
        det.class_probs[g] = probs[g].get<double>();
    } else {
      det.class_probs[static_cast<std::size_t>(det.grade)] = 1.0;
    }
    det.score = j.value("score", static_cast<double>(det.grade));
    det.confidence = j.value("confidence", 1.0);
    out.push_back(det);
  }
  return out;
}

namespace {

std::array<std::uint8_t, 3> heat_color(double score) {
  const double t = std::clamp(score / 400.0, 0.0, 1.0);
  return {static_cast<std::uint8_t>(std::llround(255.0 * t)), 0,
          static_cast<std::uint8_t>(std::llround(255.0 * (1.0 - t)))};
}

constexpr std::int64_t kHeatBlock = 8;  // pixels per tile in heatmap.ppm

}  // namespace

void render_heatmap(const SlideResult& result, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);

  std::ofstream csv(out_dir / "heatmap.csv");
  if (!csv) throw std::runtime_error("cannot write heatmap.csv");
  csv << "row,col,score\n";
  for (std::int64_t row = 0; row < result.heat_rows; ++row) {
    for (std::int64_t col = 0; col < result.heat_cols; ++col) {
      const auto& v = result.heatmap[static_cast<std::size_t>(row * result.heat_cols + col)];
      csv << row << "," << col << ",";
      if (v) csv << *v;
      csv << "\n";
    }
  }
  csv.close();

  Patch img = make_patch(0, 0, std::max<std::int64_t>(1, result.heat_cols * kHeatBlock),
                         std::max<std::int64_t>(1, result.heat_rows * kHeatBlock));
  for (std::int64_t row = 0; row < result.heat_rows; ++row) {
    for (std::int64_t col = 0; col < result.heat_cols; ++col) {
      const auto& v = result.heatmap[static_cast<std::size_t>(row * result.heat_cols + col)];
      if (!v) continue;  // white
      const auto color = heat_color(*v);
      for (std::int64_t py = row * kHeatBlock; py < (row + 1) * kHeatBlock; ++py) {
        for (std::int64_t px = col * kHeatBlock; px < (col + 1) * kHeatBlock; ++px) {
          auto* p = img.at(px, py);
          p[0] = color[0];
          p[1] = color[1];
          p[2] = color[2];
        }
      }
    }
  }
  write_ppm(out_dir / "heatmap.ppm", img);
}

}  // namespace eiph
