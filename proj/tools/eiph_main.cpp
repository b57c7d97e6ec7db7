// eiph: command-line front end for the hemosiderophage quantification toolkit.
//
// Subcommands: synth, validate, score, sample, run, eval, agree, baseline,
// losscheck. Every report is JSON with a top-level "version"; all randomness
// hangs off --seed. Exit codes: 0 ok, 1 domain error, 2 usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <span>

#include "CLI11.hpp"
#include "json.hpp"

#include "eiph/annot_io.hpp"
#include "eiph/baseline.hpp"
#include "eiph/detection_math.hpp"
#include "eiph/evaluation.hpp"
#include "eiph/pipeline.hpp"
#include "eiph/sampling.hpp"
#include "eiph/scoring.hpp"
#include "eiph/synth.hpp"
#include "eiph/types.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kReportVersion = "1";

struct RunOptions {
  std::string config_path;
  std::string slide_manifest;
  std::string annotations;
  std::string detector = "oracle";
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  int workers = 4;
  std::int64_t tile_w = 1024;
  std::int64_t tile_h = 1024;
  std::int64_t overlap = 128;
  double nms_thr = 0.5;
  double timeout_s = 60.0;
  eiph::NoiseModel noise;
};

void apply_config_file(RunOptions& opt, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  json cfg;
  in >> cfg;
  static const std::set<std::string> known = {
      "slide",   "annotations", "detector", "out",     "seed",  "workers",
      "tile_w",  "tile_h",      "overlap",  "nms_thr", "noise", "timeout_s"};
  for (const auto& [key, value] : cfg.items()) {
    (void)value;
    if (!known.count(key)) throw std::runtime_error("unknown config key: " + key);
  }
  if (cfg.contains("slide")) opt.slide_manifest = cfg["slide"].get<std::string>();
  if (cfg.contains("annotations")) opt.annotations = cfg["annotations"].get<std::string>();
  if (cfg.contains("detector")) opt.detector = cfg["detector"].get<std::string>();
  if (cfg.contains("out")) opt.out_dir = cfg["out"].get<std::string>();
  if (cfg.contains("seed")) opt.seed = cfg["seed"].get<std::uint64_t>();
  if (cfg.contains("workers")) opt.workers = cfg["workers"].get<int>();
  if (cfg.contains("tile_w")) opt.tile_w = cfg["tile_w"].get<std::int64_t>();
  if (cfg.contains("tile_h")) opt.tile_h = cfg["tile_h"].get<std::int64_t>();
  if (cfg.contains("overlap")) opt.overlap = cfg["overlap"].get<std::int64_t>();
  if (cfg.contains("nms_thr")) opt.nms_thr = cfg["nms_thr"].get<double>();
  if (cfg.contains("timeout_s")) opt.timeout_s = cfg["timeout_s"].get<double>();
  if (cfg.contains("noise")) {
    const json& n = cfg["noise"];
    static const std::set<std::string> noise_keys = {"miss_rate", "confusion", "jitter_sigma",
                                                     "fp_per_mm2", "seed"};
    for (const auto& [key, value] : n.items()) {
      (void)value;
      if (!noise_keys.count(key)) throw std::runtime_error("unknown noise key: " + key);
    }
    if (n.contains("miss_rate")) opt.noise.miss_rate = n["miss_rate"].get<double>();
    if (n.contains("jitter_sigma")) opt.noise.jitter_sigma = n["jitter_sigma"].get<double>();
    if (n.contains("fp_per_mm2")) opt.noise.fp_per_mm2 = n["fp_per_mm2"].get<double>();
    if (n.contains("seed")) opt.noise.seed = n["seed"].get<std::uint64_t>();
    if (n.contains("confusion")) {
      const auto rows = n["confusion"].get<std::vector<std::vector<double>>>();
      if (rows.size() != 5) throw std::runtime_error("noise.confusion must be 5x5");
      for (std::size_t r = 0; r < 5; ++r) {
        if (rows[r].size() != 5) throw std::runtime_error("noise.confusion must be 5x5");
        for (std::size_t c = 0; c < 5; ++c) opt.noise.confusion[r][c] = rows[r][c];
      }
    }
    opt.noise.validate();
  }
}

int cmd_synth(const std::string& fixture, const std::string& out_dir, std::int64_t width,
              std::int64_t height, std::int64_t cells, const std::vector<double>& mix,
              const std::string& mode, std::uint64_t seed, std::int64_t tile_size) {
  eiph::GeneratedSlide out;
  if (!fixture.empty()) {
    out = eiph::golden_fixture(fixture, out_dir);
  } else {
    eiph::SynthConfig cfg;
    cfg.width = width;
    cfg.height = height;
    cfg.cell_count = cells;
    if (!mix.empty()) {
      if (mix.size() != 5) throw std::runtime_error("--mix needs exactly 5 weights");
      for (std::size_t g = 0; g < 5; ++g) cfg.grade_mix[g] = mix[g];
    }
    if (mode == "uniform")
      cfg.spatial_mode = eiph::SpatialMode::kUniform;
    else if (mode == "gradient_x")
      cfg.spatial_mode = eiph::SpatialMode::kGradientX;
    else if (mode == "clustered")
      cfg.spatial_mode = eiph::SpatialMode::kClustered;
    else
      throw std::runtime_error("unknown spatial mode: " + mode);
    cfg.seed = seed;
    cfg.tile_size = tile_size;
    out = eiph::generate(cfg, out_dir);
  }
  json report;
  report["version"] = kReportVersion;
  report["manifest"] = out.slide.manifest_path.string();
  report["annotations"] = out.annotations_path.string();
  report["cells"] = out.annotations.cells.size();
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_validate(const std::string& annotations) {
  const auto set = eiph::load_annotations(annotations);
  const auto violations = eiph::validate_annotation_set(set);
  json report;
  report["version"] = kReportVersion;
  report["cells"] = set.cells.size();
  report["violations"] = violations;
  std::cout << report.dump(2) << "\n";
  return violations.empty() ? 0 : 1;
}

int cmd_score(const std::string& annotations) {
  const auto set = eiph::load_annotations(annotations);
  const auto counts = eiph::grade_counts(std::span<const eiph::CellAnnotation>(set.cells));
  const auto result = eiph::ths(counts);
  json report;
  report["version"] = kReportVersion;
  report["counts"] = counts;
  report["ths"] = result.rounded;
  report["score"] = result.score;
  report["n_cells"] = result.n_cells;
  report["diagnosis"] = result.diagnosis_confirmed;
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_sample(const std::string& annotations, const std::string& strategy, int count,
               std::uint64_t seed, std::int64_t patch_w, std::int64_t patch_h,
               const std::string& crops_manifest, const std::string& crops_dir) {
  const auto set = eiph::load_annotations(annotations);
  eiph::SamplerConfig cfg;
  cfg.patch_w = patch_w;
  cfg.patch_h = patch_h;
  cfg.seed = seed;
  eiph::Rng rng(seed);

  std::vector<eiph::SamplePoint> points;
  if (strategy == "uniform") {
    for (int i = 0; i < count; ++i) points.push_back(eiph::sample_uniform(set.slide, cfg, rng));
  } else if (strategy == "two-stage") {
    const auto clusters = eiph::build_clusters(set);
    for (int i = 0; i < count; ++i)
      points.push_back(eiph::sample_two_stage(set, clusters, cfg, rng));
  } else if (strategy == "quadtree") {
    const auto tree = eiph::build_quadtree(set, cfg);
    for (int i = 0; i < count; ++i)
      points.push_back(eiph::sample_quadtree(tree, set.slide, cfg, rng));
  } else {
    throw std::runtime_error("unknown strategy: " + strategy);
  }

  std::cout << "x,y,anchor_id\n";
  for (const auto& p : points) {
    std::cout << p.x << "," << p.y << ",";
    if (p.anchor_id) std::cout << *p.anchor_id;
    std::cout << "\n";
  }

  if (!crops_manifest.empty()) {
    const auto slide = eiph::open_slide(crops_manifest);
    fs::create_directories(crops_dir);
    int index = 0;
    for (const auto& p : points) {
      const auto patch = eiph::read_region(
          slide, {static_cast<double>(p.x), static_cast<double>(p.y),
                  static_cast<double>(cfg.patch_w), static_cast<double>(cfg.patch_h)});
      eiph::write_ppm(fs::path(crops_dir) / ("crop_" + std::to_string(index++) + ".ppm"), patch);
    }
  }
  return 0;
}

int cmd_run(const RunOptions& opt) {
  if (opt.slide_manifest.empty()) throw std::runtime_error("run requires --slide");
  const auto slide = eiph::open_slide(opt.slide_manifest);

  std::unique_ptr<eiph::Detector> detector;
  std::optional<eiph::AnnotationSet> gt;
  if (opt.detector == "oracle") {
    if (opt.annotations.empty())
      throw std::runtime_error("oracle detector requires --annotations");
    gt = eiph::load_annotations(opt.annotations);
    eiph::NoiseModel noise = opt.noise;
    noise.seed = opt.noise.seed ? opt.noise.seed : opt.seed;
    detector = std::make_unique<eiph::OracleDetector>(*gt, noise);
  } else if (opt.detector.rfind("external:", 0) == 0) {
    detector = std::make_unique<eiph::ExternalDetector>(
        opt.detector.substr(9), fs::path(opt.out_dir) / "scratch", opt.timeout_s);
    if (!opt.annotations.empty()) gt = eiph::load_annotations(opt.annotations);
  } else {
    throw std::runtime_error("detector must be 'oracle' or 'external:<command>'");
  }

  eiph::PipelineConfig pcfg;
  pcfg.tile_w = opt.tile_w;
  pcfg.tile_h = opt.tile_h;
  pcfg.overlap = opt.overlap;
  pcfg.nms_thr = opt.nms_thr;
  pcfg.workers = opt.workers;
  pcfg.seed = opt.seed;

  const auto result = eiph::run_pipeline(slide, *detector, pcfg);

  fs::create_directories(opt.out_dir);
  eiph::render_heatmap(result, opt.out_dir);
  eiph::save_detections(result.detections, fs::path(opt.out_dir) / "detections.jsonl");

  json report = json::parse(eiph::result_json(result, slide.meta.id));
  if (gt && !gt->cells.empty()) {
    const auto match = eiph::match_detections(*gt, result.detections, 0.5);
    const auto plan = eiph::plan_tiles(slide.meta, pcfg.tile_w, pcfg.tile_h, pcfg.overlap);
    json eval;
    eval["map_50"] = eiph::mean_average_precision(match);
    const auto slide_err =
        eiph::score_error(*gt, result.detections, plan, eiph::ScoreErrorMode::kSlide);
    const auto patch_err =
        eiph::score_error(*gt, result.detections, plan, eiph::ScoreErrorMode::kPatch);
    eval["score_error_slide"] = slide_err.mean;
    eval["score_error_patch"] = {{"mean", patch_err.mean}, {"sigma", patch_err.sigma}};
    report["eval"] = eval;
  }

  std::ofstream out(fs::path(opt.out_dir) / "result.json");
  out << report.dump(2) << "\n";
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_eval(const std::string& gt_path, const std::string& pred_path, double iou_thr,
             std::int64_t tile_w, std::int64_t tile_h, std::int64_t overlap) {
  const auto gt = eiph::load_annotations(gt_path);
  std::vector<eiph::Detection> pred;
  // predictions may be a detections.jsonl or another annotation file
  try {
    pred = eiph::load_detections(pred_path);
  } catch (const std::exception&) {
    const auto set = eiph::load_annotations(pred_path);
    for (const auto& c : set.cells) {
      eiph::Detection d;
      d.box = c.box;
      d.grade = c.grade;
      d.class_probs[static_cast<std::size_t>(c.grade)] = 1.0;
      d.confidence = 1.0;
      d.score = c.grade;
      pred.push_back(d);
    }
  }

  const auto report = eiph::match_detections(gt, pred, iou_thr);
  const auto plan = eiph::plan_tiles(gt.slide, tile_w, tile_h, overlap);

  json out;
  out["version"] = kReportVersion;
  out["map"] = eiph::mean_average_precision(report);
  json per_class = json::object();
  for (int g = 0; g < eiph::kNumGrades; ++g) {
    if (report.gt_count[static_cast<std::size_t>(g)] == 0) continue;
    per_class[std::to_string(g)] = eiph::average_precision(report, g);
  }
  out["ap"] = per_class;
  const auto slide_err = eiph::score_error(gt, pred, plan, eiph::ScoreErrorMode::kSlide);
  const auto patch_err = eiph::score_error(gt, pred, plan, eiph::ScoreErrorMode::kPatch);
  out["score_error_slide"] = slide_err.mean;
  out["score_error_patch"] = {{"mean", patch_err.mean}, {"sigma", patch_err.sigma}};
  out["unmatched_gt"] = report.unmatched_gt.size();
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_agree(const std::string& ratings_path, const std::string& reference_path,
              const std::string& confusion_csv_dir) {
  const auto table = eiph::load_ratings(ratings_path, reference_path);

  std::set<std::pair<std::string, int>> rater_sessions;
  for (const auto& rec : table.records) rater_sessions.insert({rec.rater_id, rec.session});

  json out;
  out["version"] = kReportVersion;
  json raters = json::object();
  for (const auto& [rater, session] : rater_sessions) {
    const auto rep = eiph::concordance_and_f1(table, rater, session);
    json entry;
    entry["concordance"] = rep.concordance;
    json f1 = json::array();
    for (const auto& v : rep.f1) {
      if (v)
        f1.push_back(*v);
      else
        f1.push_back(nullptr);
    }
    entry["f1_per_grade"] = f1;
    raters[rater + "/s" + std::to_string(session)] = entry;

    if (!confusion_csv_dir.empty()) {
      fs::create_directories(confusion_csv_dir);
      const auto m = eiph::confusion(table, rater, session);
      std::ofstream csv(fs::path(confusion_csv_dir) /
                        ("confusion_" + rater + "_s" + std::to_string(session) + ".csv"));
      csv << "reference\\assigned,0,1,2,3,4\n";
      for (int r = 0; r < 5; ++r) {
        csv << r;
        for (int c = 0; c < 5; ++c)
          csv << "," << m[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
        csv << "\n";
      }
    }
  }
  out["raters"] = raters;

  // pairwise Cohen's kappa per session over the common cell set
  json kappas = json::object();
  for (int session : {0, 1}) {
    std::vector<std::string> names;
    for (const auto& [rater, s] : rater_sessions)
      if (s == session) names.push_back(rater);
    for (std::size_t i = 0; i < names.size(); ++i) {
      for (std::size_t j = i + 1; j < names.size(); ++j) {
        std::map<std::int64_t, int> a, b;
        for (const auto& rec : table.records) {
          if (rec.session != session) continue;
          if (rec.rater_id == names[i]) a[rec.cell_id] = rec.grade;
          if (rec.rater_id == names[j]) b[rec.cell_id] = rec.grade;
        }
        std::vector<int> va, vb;
        for (const auto& [cell, grade] : a) {
          const auto it = b.find(cell);
          if (it == b.end()) continue;
          va.push_back(grade);
          vb.push_back(it->second);
        }
        if (va.empty()) continue;
        kappas[names[i] + "/" + names[j] + "/s" + std::to_string(session)] =
            eiph::cohen_kappa(va, vb);
      }
    }
  }
  out["cohen_kappa"] = kappas;

  // Fleiss' kappa per session when every cell has the full rater complement
  json fleiss = json::object();
  for (int session : {0, 1}) {
    std::map<std::int64_t, std::array<int, 5>> counts;
    std::map<std::int64_t, int> raters_per_cell;
    for (const auto& rec : table.records) {
      if (rec.session != session) continue;
      auto& row = counts.try_emplace(rec.cell_id, std::array<int, 5>{}).first->second;
      ++row[static_cast<std::size_t>(rec.grade)];
      ++raters_per_cell[rec.cell_id];
    }
    if (counts.empty()) continue;
    const int n = raters_per_cell.begin()->second;
    if (n < 2) continue;
    bool uniform = true;
    for (const auto& [cell, c] : raters_per_cell) uniform = uniform && c == n;
    if (!uniform) continue;
    std::vector<std::array<int, 5>> rows;
    rows.reserve(counts.size());
    for (const auto& [cell, row] : counts) rows.push_back(row);
    fleiss["s" + std::to_string(session)] = eiph::fleiss_kappa(rows, n);
  }
  out["fleiss_kappa"] = fleiss;
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_baseline(const std::string& manifest, const std::string& annotations, int n_patches,
                 std::int64_t patch_size, std::uint64_t seed, int bins, int k_folds) {
  const auto slide = eiph::open_slide(manifest);
  const auto set = eiph::load_annotations(annotations);

  eiph::SamplerConfig cfg;
  cfg.patch_w = cfg.patch_h = patch_size;
  cfg.seed = seed;
  eiph::Rng rng(seed);

  // uniform patches; target is the patch-level score (100 x mean grade of
  // cells whose center falls inside)
  std::vector<eiph::HistogramFeature> features;
  std::vector<double> targets;
  for (int i = 0; i < n_patches; ++i) {
    const auto p = eiph::sample_uniform(set.slide, cfg, rng);
    const eiph::BoundingBox rect{static_cast<double>(p.x), static_cast<double>(p.y),
                                 static_cast<double>(patch_size), static_cast<double>(patch_size)};
    const auto patch = eiph::read_region(slide, rect);
    features.push_back(eiph::histogram_features(patch, bins));
    std::int64_t n = 0, sum = 0;
    for (const auto& cell : set.cells) {
      if (!rect.contains(cell.box.cx(), cell.box.cy())) continue;
      ++n;
      sum += cell.grade;
    }
    targets.push_back(n > 0 ? 100.0 * static_cast<double>(sum) / static_cast<double>(n) : 0.0);
  }

  const std::vector<double> sigma_grid = {0.05, 0.1, 0.2, 0.5};
  const std::vector<double> lambda_grid = {0.01, 0.1, 1.0};
  const auto [sigma, lambda] = eiph::grid_search(features, targets, sigma_grid, lambda_grid,
                                                 k_folds);

  // half/half split for the held-out error
  const std::size_t half = features.size() / 2;
  const std::vector<eiph::HistogramFeature> train_x(features.begin(),
                                                    features.begin() + half);
  const std::vector<double> train_y(targets.begin(), targets.begin() + half);
  const auto model = eiph::fit(train_x, train_y, sigma, lambda);
  double abs_err = 0;
  for (std::size_t i = half; i < features.size(); ++i)
    abs_err += std::abs(model.predict(features[i]) - targets[i]);
  const double mae = abs_err / static_cast<double>(features.size() - half);

  json out;
  out["version"] = kReportVersion;
  out["sigma"] = sigma;
  out["lambda"] = lambda;
  out["patches"] = n_patches;
  out["holdout_mae"] = mae;
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_losscheck() {
  struct Row {
    std::string name;
    double error;
    double tolerance;
  };
  std::vector<Row> rows;

  const eiph::FocalParams params{0.25, 2.0};
  {
    double worst = 0;
    for (double p : {0.05, 0.2, 0.5, 0.7, 0.9, 0.99}) {
      const double point[] = {p};
      const double grad[] = {eiph::focal_loss_grad(p, params)};
      worst = std::max(worst, eiph::grad_check(
                                  [&](std::span<const double> q) {
                                    return eiph::focal_loss(q[0], params);
                                  },
                                  point, grad));
    }
    rows.push_back({"focal_loss", worst, 1e-4});
  }
  {
    const double y[] = {0.0, 0.0, 0.0, 0.0};
    const double x[] = {0.3, -0.6, 2.5, -3.0};
    const auto grad = eiph::smooth_l1_grad(x, y);
    rows.push_back({"smooth_l1", eiph::grad_check(
                                     [&](std::span<const double> q) {
                                       return eiph::smooth_l1(q, y);
                                     },
                                     x, grad),
                    1e-4});
    const double kink[] = {1.0, -1.0, 0.5, 2.0};
    const auto kink_grad = eiph::smooth_l1_grad(kink, y);
    rows.push_back({"smooth_l1_kink", eiph::grad_check(
                                          [&](std::span<const double> q) {
                                            return eiph::smooth_l1(q, y);
                                          },
                                          kink, kink_grad),
                    1e-2});
  }
  {
    const double target[] = {0.0, 1.0, 3.5};
    const double pred[] = {0.4, 1.2, 2.8};
    const auto grad = eiph::mse_grad(target, pred);
    rows.push_back({"mse", eiph::grad_check(
                               [&](std::span<const double> q) {
                                 return eiph::mse(target, q);
                               },
                               pred, grad),
                    1e-4});
  }
  {
    double worst = 0;
    for (double z : {-4.0, -1.0, 0.0, 2.0, 5.0}) {
      const double point[] = {z};
      const double grad[] = {eiph::scaled_sigmoid_deriv(z)};
      worst = std::max(worst, eiph::grad_check(
                                  [](std::span<const double> q) {
                                    return eiph::scaled_sigmoid(q[0]);
                                  },
                                  point, grad));
    }
    rows.push_back({"scaled_sigmoid", worst, 1e-4});
  }
  {
    // cross-entropy identity at gamma = 0, alpha = 1
    double worst = 0;
    for (double p = 0.01; p <= 1.0; p += 0.01)
      worst = std::max(worst,
                       std::abs(eiph::focal_loss(p, {1.0, 0.0}) - (-std::log(p))));
    rows.push_back({"focal_ce_identity", worst, 1e-12});
  }

  bool ok = true;
  json checks = json::array();
  for (const auto& row : rows) {
    const bool pass = row.error < row.tolerance;
    ok = ok && pass;
    std::cout << (pass ? "PASS" : "FAIL") << "  " << row.name << "  err=" << row.error
              << " tol=" << row.tolerance << "\n";
    checks.push_back({{"name", row.name}, {"error", row.error}, {"pass", pass}});
  }
  json out;
  out["version"] = kReportVersion;
  out["checks"] = checks;
  std::cout << out.dump(2) << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Whole-slide hemosiderophage quantification toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic slide + annotations");
  std::string fixture, out_dir = "synth_out", mode = "uniform";
  std::int64_t width = 4096, height = 4096, cells = 200, tile_size = 1024;
  std::vector<double> mix;
  std::uint64_t seed = 0;
  synth->add_option("--fixture", fixture, "Named fixture: mini, gradient, sparse-rare");
  synth->add_option("--out", out_dir, "Output directory");
  synth->add_option("--width", width);
  synth->add_option("--height", height);
  synth->add_option("--cells", cells);
  synth->add_option("--mix", mix, "Five grade weights")->expected(0, 5);
  synth->add_option("--mode", mode, "uniform | gradient_x | clustered");
  synth->add_option("--seed", seed);
  synth->add_option("--tile-size", tile_size);

  // validate
  auto* validate = app.add_subcommand("validate", "Lint an annotation file");
  std::string annotations;
  validate->add_option("--annotations", annotations)->required();

  // score
  auto* score = app.add_subcommand("score", "Total hemosiderin score from annotations");
  std::string score_annotations;
  score->add_option("--annotations", score_annotations)->required();

  // sample
  auto* sample = app.add_subcommand("sample", "Emit patch origins for a sampling strategy");
  std::string sample_annotations, strategy = "quadtree", crops_manifest, crops_dir = "crops";
  int sample_count = 100;
  std::uint64_t sample_seed = 0;
  std::int64_t patch_w = 1024, patch_h = 1024;
  sample->add_option("--annotations", sample_annotations)->required();
  sample->add_option("--strategy", strategy, "uniform | two-stage | quadtree");
  sample->add_option("--count", sample_count);
  sample->add_option("--seed", sample_seed);
  sample->add_option("--patch-w", patch_w);
  sample->add_option("--patch-h", patch_h);
  sample->add_option("--crops-from", crops_manifest, "Slide manifest to cut crops from");
  sample->add_option("--crops-dir", crops_dir);

  // run
  auto* run = app.add_subcommand("run", "Full whole-slide pipeline");
  RunOptions opt;
  run->add_option("--config", opt.config_path, "JSON run configuration");
  run->add_option("--slide", opt.slide_manifest, "Slide manifest.json");
  run->add_option("--annotations", opt.annotations, "Ground-truth annotations (oracle)");
  run->add_option("--detector", opt.detector, "oracle | external:<command>");
  run->add_option("--out", opt.out_dir);
  run->add_option("--seed", opt.seed);
  run->add_option("--workers", opt.workers);
  run->add_option("--tile-w", opt.tile_w);
  run->add_option("--tile-h", opt.tile_h);
  run->add_option("--overlap", opt.overlap);
  run->add_option("--nms-thr", opt.nms_thr);
  run->add_option("--timeout", opt.timeout_s, "External detector timeout (s)");
  run->add_option("--miss-rate", opt.noise.miss_rate);
  run->add_option("--jitter-sigma", opt.noise.jitter_sigma);
  run->add_option("--fp-per-mm2", opt.noise.fp_per_mm2);

  // eval
  auto* eval = app.add_subcommand("eval", "mAP and score error between two files");
  std::string gt_path, pred_path;
  double iou_thr = 0.5;
  std::int64_t eval_tile_w = 1024, eval_tile_h = 1024, eval_overlap = 0;
  eval->add_option("--gt", gt_path)->required();
  eval->add_option("--pred", pred_path)->required();
  eval->add_option("--iou", iou_thr);
  eval->add_option("--tile-w", eval_tile_w);
  eval->add_option("--tile-h", eval_tile_h);
  eval->add_option("--overlap", eval_overlap);

  // agree
  auto* agree = app.add_subcommand("agree", "Observer agreement statistics");
  std::string ratings_path, reference_path, confusion_dir;
  agree->add_option("--ratings", ratings_path)->required();
  agree->add_option("--reference", reference_path)->required();
  agree->add_option("--confusion-dir", confusion_dir, "Write per-rater confusion CSVs");

  // baseline
  auto* baseline = app.add_subcommand("baseline", "Histogram + kernel ridge baseline");
  std::string baseline_manifest, baseline_annotations;
  int n_patches = 100, bins = 16, k_folds = 5;
  std::int64_t baseline_patch = 1024;
  std::uint64_t baseline_seed = 0;
  baseline->add_option("--slide", baseline_manifest)->required();
  baseline->add_option("--annotations", baseline_annotations)->required();
  baseline->add_option("--patches", n_patches);
  baseline->add_option("--patch-size", baseline_patch);
  baseline->add_option("--seed", baseline_seed);
  baseline->add_option("--bins", bins);
  baseline->add_option("--folds", k_folds);

  // losscheck
  app.add_subcommand("losscheck", "Gradient checks for the loss terms");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed())
      return cmd_synth(fixture, out_dir, width, height, cells, mix, mode, seed, tile_size);
    if (validate->parsed()) return cmd_validate(annotations);
    if (score->parsed()) return cmd_score(score_annotations);
    if (sample->parsed())
      return cmd_sample(sample_annotations, strategy, sample_count, sample_seed, patch_w,
                        patch_h, crops_manifest, crops_dir);
    if (run->parsed()) {
      RunOptions merged = opt;
      if (!opt.config_path.empty()) {
        // config provides the base; explicit flags win
        RunOptions from_file;
        apply_config_file(from_file, opt.config_path);
        merged = from_file;
        for (const auto* o : run->get_options()) {
          if (o->count() == 0) continue;
          const auto name = o->get_name();
          if (name == "--slide") merged.slide_manifest = opt.slide_manifest;
          if (name == "--annotations") merged.annotations = opt.annotations;
          if (name == "--detector") merged.detector = opt.detector;
          if (name == "--out") merged.out_dir = opt.out_dir;
          if (name == "--seed") merged.seed = opt.seed;
          if (name == "--workers") merged.workers = opt.workers;
          if (name == "--tile-w") merged.tile_w = opt.tile_w;
          if (name == "--tile-h") merged.tile_h = opt.tile_h;
          if (name == "--overlap") merged.overlap = opt.overlap;
          if (name == "--nms-thr") merged.nms_thr = opt.nms_thr;
          if (name == "--timeout") merged.timeout_s = opt.timeout_s;
          if (name == "--miss-rate") merged.noise.miss_rate = opt.noise.miss_rate;
          if (name == "--jitter-sigma") merged.noise.jitter_sigma = opt.noise.jitter_sigma;
          if (name == "--fp-per-mm2") merged.noise.fp_per_mm2 = opt.noise.fp_per_mm2;
        }
      }
      return cmd_run(merged);
    }
    if (eval->parsed())
      return cmd_eval(gt_path, pred_path, iou_thr, eval_tile_w, eval_tile_h, eval_overlap);
    if (agree->parsed()) return cmd_agree(ratings_path, reference_path, confusion_dir);
    if (baseline->parsed())
      return cmd_baseline(baseline_manifest, baseline_annotations, n_patches, baseline_patch,
                          baseline_seed, bins, k_folds);
    return cmd_losscheck();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
