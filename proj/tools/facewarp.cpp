// Command line front end: synth / match / train / eval. Every run writes a
// manifest.json recording the configuration, seed, paths, tool version, and
// per-stage wall time. Manifests are the only output that is not
// byte-reproducible across runs (wall times); everything else is exactly
// determined by the inputs and the seed. Failures print one machine-readable
// JSON record to stderr and exit nonzero.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "facewarp/dataset.hpp"
#include "facewarp/error.hpp"
#include "facewarp/evaluation.hpp"
#include "facewarp/nets.hpp"
#include "facewarp/synthetic.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

struct StageClock {
  std::vector<std::pair<std::string, double>> stages;
  std::chrono::steady_clock::time_point last = std::chrono::steady_clock::now();

  void mark(const std::string& name) {
    const auto now = std::chrono::steady_clock::now();
    stages.emplace_back(name, std::chrono::duration<double>(now - last).count());
    last = now;
  }
};

void write_manifest(const fs::path& path, const std::string& command, uint64_t seed,
                    const nlohmann::ordered_json& config, const nlohmann::ordered_json& inputs,
                    const nlohmann::ordered_json& outputs, const StageClock& clock) {
  nlohmann::ordered_json doc;
  doc["tool_version"] = kVersion;
  doc["command"] = command;
  doc["seed"] = seed;
  doc["config"] = config;
  doc["inputs"] = inputs;
  doc["outputs"] = outputs;
  doc["stages"] = nlohmann::ordered_json::array();
  for (const auto& [name, seconds] : clock.stages)
    doc["stages"].push_back({{"name", name}, {"seconds", seconds}});
  std::ofstream out(path, std::ios::binary);
  if (!out) fw::fail(fw::ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out << doc.dump(2) << "\n";
}

nlohmann::ordered_json config_json(const fw::TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["lr_warp"] = cfg.lr_warp;
  j["lr_kp"] = cfg.lr_kp;
  j["epochs"] = cfg.epochs;
  j["k"] = cfg.k;
  j["grid"] = cfg.grid;
  j["sample_grid"] = cfg.sample_grid;
  j["seed"] = cfg.seed;
  j["w_warp"] = cfg.w_warp;
  j["w_kp"] = cfg.w_kp;
  j["feat_d"] = cfg.feat_d;
  j["hidden_warp"] = cfg.hidden_warp;
  j["hidden_kp"] = cfg.hidden_kp;
  j["milestones"] = cfg.milestones;
  return j;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fw::fail(fw::ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

struct LoadedData {
  std::vector<fw::Sample> humans, animals;
  std::vector<std::string> human_ids, animal_ids;
  std::vector<std::string> warnings;
};

// Full load: images read and cropped to S x S. Relative image paths resolve
// against the annotation file's directory.
LoadedData load_samples(const std::string& ann_path, int size) {
  LoadedData data;
  const fs::path base = fs::path(ann_path).parent_path();
  for (const fw::FaceAnnotation& ann : fw::load_annotations(ann_path)) {
    fs::path img_path(ann.image_path);
    if (img_path.is_relative()) img_path = base / img_path;
    const fw::Raster img = fw::read_image(img_path.string());
    const fw::Sample s = fw::crop_and_resize(ann, img, size, &data.warnings);
    if (ann.species == fw::Species::Human) {
      data.humans.push_back(s);
      data.human_ids.push_back(ann.id);
    } else {
      data.animals.push_back(s);
      data.animal_ids.push_back(ann.id);
    }
  }
  return data;
}

// Matching needs keypoints in the crop frame but no pixels; skip image IO.
LoadedData load_keypoints_only(const std::string& ann_path, int size) {
  LoadedData data;
  for (const fw::FaceAnnotation& ann : fw::load_annotations(ann_path)) {
    fw::Sample s;
    s.pixels = fw::Raster(size, size);
    s.keypoints.visible = ann.keypoints.visible;
    s.bbox_size = std::sqrt(ann.bbox[2] * ann.bbox[3]);
    s.provenance = ann.id;
    for (int k = 0; k < fw::kNumKeypoints; ++k) {
      const double x = (ann.keypoints.pts[k].x - ann.bbox[0]) * size / ann.bbox[2];
      const double y = (ann.keypoints.pts[k].y - ann.bbox[1]) * size / ann.bbox[3];
      s.keypoints.pts[k] = {x, y};
      if (x < 0.0 || x > size || y < 0.0 || y > size) s.keypoints.visible[k] = false;
    }
    if (ann.species == fw::Species::Human) {
      data.humans.push_back(s);
      data.human_ids.push_back(ann.id);
    } else {
      data.animals.push_back(s);
      data.animal_ids.push_back(ann.id);
    }
  }
  return data;
}

void print_notes(const std::vector<std::string>& notes) {
  for (const std::string& n : notes) std::cerr << "note: " << n << "\n";
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  fw::SyntheticConfig cfg;
};

int cmd_synth(const SynthArgs& a) {
  StageClock clock;
  const fw::SyntheticWorld world = fw::make_synthetic_world(a.cfg);
  clock.mark("generate");
  ensure_dir(a.out);
  fw::write_synthetic_dataset(a.out, world);
  clock.mark("write");

  nlohmann::ordered_json cfg;
  cfg["humans"] = a.cfg.humans;
  cfg["animals"] = a.cfg.animals;
  cfg["size"] = a.cfg.size;
  cfg["distortion"] = a.cfg.distortion;
  cfg["pose_amplitude"] = a.cfg.pose_amplitude;
  cfg["jitter"] = a.cfg.jitter;
  write_manifest(fs::path(a.out) / "manifest.json", "synth", a.cfg.seed, cfg, {},
                 {{"annotations", (fs::path(a.out) / "annotations.json").string()}}, clock);
  std::cout << "wrote " << world.humans.size() << " humans and " << world.animals.size()
            << " animals to " << a.out << "\n";
  return 0;
}

struct MatchArgs {
  std::string humans, animals, out;
  int k = 5;
  int size = 64;
  double tol = 0.02;
  bool no_mirror = false;
  uint64_t seed = 1;
};

int cmd_match(const MatchArgs& a) {
  StageClock clock;
  const LoadedData humans = load_keypoints_only(a.humans, a.size);
  const LoadedData animals = load_keypoints_only(a.animals, a.size);
  print_notes(humans.warnings);
  print_notes(animals.warnings);
  clock.mark("load");

  const fw::MatchOutcome mo =
      fw::match_samples(animals.animals, humans.humans, a.k, !a.no_mirror, a.tol);
  print_notes(mo.diagnostics);
  clock.mark("match");

  ensure_dir(a.out);
  const fs::path out_path = fs::path(a.out) / "matches.json";
  fw::write_matches_json(out_path.string(), mo.matches, animals.animal_ids, humans.human_ids);
  clock.mark("write");

  int matched = 0;
  for (const fw::MatchSet& m : mo.matches) matched += m.human_indices.empty() ? 0 : 1;
  std::cout << "pool: " << mo.pool_size << " humans ("
            << mo.pool_by_variant[0] << " frontal, " << mo.pool_by_variant[1]
            << " left profile, " << mo.pool_by_variant[2] << " right profile)\n"
            << "matched " << matched << " of " << mo.matches.size() << " animals at k=" << a.k
            << "\n";

  nlohmann::ordered_json cfg;
  cfg["k"] = a.k;
  cfg["size"] = a.size;
  cfg["tol"] = a.tol;
  cfg["mirror_profiles"] = !a.no_mirror;
  write_manifest(fs::path(a.out) / "manifest.json", "match", a.seed, cfg,
                 {{"humans", a.humans}, {"animals", a.animals}},
                 {{"matches", out_path.string()}}, clock);
  return 0;
}

struct TrainArgs {
  std::string data, matches, out;
  std::string mode = "ours";
  int size = 64;
  fw::TrainConfig cfg;
};

int cmd_train(const TrainArgs& a) {
  StageClock clock;
  const fw::TrainMode mode = fw::parse_mode(a.mode);
  LoadedData data = load_samples(a.data, a.size);
  print_notes(data.warnings);
  clock.mark("load");

  std::vector<fw::MatchSet> matches;
  const bool have_matches = !a.matches.empty();
  if (have_matches)
    matches = fw::read_matches_json(a.matches, data.animal_ids, data.human_ids);
  clock.mark("match");

  fw::ExperimentSplit split;
  split.humans = std::move(data.humans);
  split.train_animals = std::move(data.animals);
  const fw::ModeRun run =
      fw::run_mode(split, mode, a.cfg, have_matches ? &matches : nullptr);
  print_notes(run.diagnostics);
  clock.mark("train");

  ensure_dir(a.out);
  const fs::path ckpt = fs::path(a.out) / "checkpoint.fwck";
  const fs::path curves = fs::path(a.out) / "curves.csv";
  fw::save_checkpoint(ckpt.string(), run.params);
  fw::write_loss_curve(curves.string(), run.curve);
  clock.mark("write");

  std::cout << "mode " << a.mode << ": trained on " << split.train_animals.size()
            << " animals (" << run.supervised << " with flow supervision), "
            << split.humans.size() << " humans\n";
  if (!run.curve.empty())
    std::cout << "final losses: warp " << run.curve.back()[1] << ", keypoint "
              << run.curve.back()[2] << "\n";

  nlohmann::ordered_json cfg = config_json(a.cfg);
  cfg["mode"] = a.mode;
  cfg["size"] = a.size;
  nlohmann::ordered_json inputs;
  inputs["data"] = a.data;
  inputs["matches"] = have_matches ? nlohmann::ordered_json(a.matches) : nullptr;
  write_manifest(fs::path(a.out) / "manifest.json", "train", a.cfg.seed, cfg, inputs,
                 {{"checkpoint", ckpt.string()}, {"curves", curves.string()}}, clock);
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, out;
  std::string mode = "ours";
  int size = 64;
  int sample_grid = 20;
  double thresh = 0.10;
  std::vector<double> thresholds = {0.05, 0.10, 0.15, 0.20, 0.30, 0.40, 0.50};
  uint64_t seed = 1;
};

int cmd_eval(const EvalArgs& a) {
  StageClock clock;
  const fw::TrainMode mode = fw::parse_mode(a.mode);
  const fw::ModelParams params = fw::load_checkpoint(a.checkpoint);
  LoadedData data = load_samples(a.data, a.size);
  print_notes(data.warnings);
  if (data.animals.empty())
    fw::fail(fw::ErrorCode::ValidationError, "no animal records in " + a.data);
  clock.mark("load");

  std::vector<const fw::TpsTransform*> warps(data.animals.size(), nullptr);
  std::vector<fw::TpsTransform> predicted;
  if (mode != fw::TrainMode::kBlFt) {
    const fw::FlowBasis basis = fw::make_flow_basis(
        fw::grid_lattice(params.grid), fw::grid_centers(a.sample_grid), 0.0);
    predicted = fw::predict_warps(params, data.animals, basis);
    for (size_t i = 0; i < predicted.size(); ++i) warps[i] = &predicted[i];
  }
  const std::vector<fw::KeypointSet> preds =
      fw::collect_predictions(params, data.animals, warps);
  clock.mark("predict");

  std::vector<fw::KeypointSet> gts;
  std::vector<double> bboxes;
  for (const fw::Sample& s : data.animals) {
    gts.push_back(s.keypoints);
    bboxes.push_back(s.bbox_size);
  }
  const fw::EvalResult result = fw::failure_rate(preds, gts, bboxes, a.thresh);
  const auto curve = fw::threshold_sweep(preds, gts, bboxes, a.thresholds);
  clock.mark("evaluate");

  ensure_dir(a.out);
  const fs::path eval_path = fs::path(a.out) / "eval.json";
  const fs::path curve_path = fs::path(a.out) / "curve.csv";
  fw::write_eval_json(eval_path.string(), result);
  fw::write_threshold_curve(curve_path.string(), curve);
  clock.mark("write");

  std::cout << "failure at " << a.thresh << ": " << result.average_failure << " ("
            << result.failed_total() << "/" << result.evaluated_total() << ")\n";
  for (int k = 0; k < fw::kNumKeypoints; ++k)
    std::cout << "  " << fw::kKeypointNames[k] << ": " << result.per_keypoint_failure[k]
              << "\n";

  nlohmann::ordered_json cfg;
  cfg["mode"] = a.mode;
  cfg["size"] = a.size;
  cfg["sample_grid"] = a.sample_grid;
  cfg["thresh"] = a.thresh;
  cfg["thresholds"] = a.thresholds;
  write_manifest(fs::path(a.out) / "manifest.json", "eval", a.seed, cfg,
                 {{"checkpoint", a.checkpoint}, {"data", a.data}},
                 {{"eval", eval_path.string()}, {"curve", curve_path.string()}}, clock);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"facewarp: pose-matched warping for interspecies keypoint transfer"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.footer("Every flag can also be set through the environment with the FACEWARP_ prefix,\n"
             "e.g. FACEWARP_SEED=7 facewarp train ...");

  SynthArgs synth;
  CLI::App* s = app.add_subcommand("synth", "generate a synthetic face dataset");
  s->add_option("--out", synth.out, "output directory")->required()->envname("FACEWARP_OUT");
  s->add_option("--humans", synth.cfg.humans)->envname("FACEWARP_HUMANS");
  s->add_option("--animals", synth.cfg.animals)->envname("FACEWARP_ANIMALS");
  s->add_option("--size", synth.cfg.size)->envname("FACEWARP_SIZE");
  s->add_option("--distortion", synth.cfg.distortion)->envname("FACEWARP_DISTORTION");
  s->add_option("--pose-amplitude", synth.cfg.pose_amplitude)->envname("FACEWARP_POSE_AMPLITUDE");
  s->add_option("--jitter", synth.cfg.jitter)->envname("FACEWARP_JITTER");
  s->add_option("--seed", synth.cfg.seed)->envname("FACEWARP_SEED");

  MatchArgs match;
  CLI::App* m = app.add_subcommand("match", "pose-match animals to a human pool");
  m->add_option("--humans", match.humans, "human annotations json")->required();
  m->add_option("--animals", match.animals, "animal annotations json")->required();
  m->add_option("--out", match.out, "output directory")->required()->envname("FACEWARP_OUT");
  m->add_option("--k", match.k, "neighbors per animal")->envname("FACEWARP_K");
  m->add_option("--size", match.size, "crop resolution")->envname("FACEWARP_SIZE");
  m->add_option("--tol", match.tol, "colinearity tolerance")->envname("FACEWARP_TOL");
  m->add_flag("--no-mirror", match.no_mirror, "disable mirrored profile candidates");
  m->add_option("--seed", match.seed)->envname("FACEWARP_SEED");

  TrainArgs train;
  CLI::App* t = app.add_subcommand("train", "train warp and keypoint nets");
  t->add_option("--data", train.data, "annotations json (humans and animals)")->required();
  t->add_option("--matches", train.matches, "matches.json (computed internally when absent)");
  t->add_option("--out", train.out, "output directory")->required()->envname("FACEWARP_OUT");
  t->add_option("--mode", train.mode, "ours | bl-tps | bl-ft | scratch")
      ->envname("FACEWARP_MODE");
  t->add_option("--size", train.size, "crop resolution")->envname("FACEWARP_SIZE");
  t->add_option("--epochs", train.cfg.epochs)->envname("FACEWARP_EPOCHS");
  t->add_option("--seed", train.cfg.seed)->envname("FACEWARP_SEED");
  t->add_option("--k", train.cfg.k)->envname("FACEWARP_K");
  t->add_option("--grid", train.cfg.grid, "warp control lattice side")->envname("FACEWARP_GRID");
  t->add_option("--sample-grid", train.cfg.sample_grid, "flow sample lattice side")
      ->envname("FACEWARP_SAMPLE_GRID");
  t->add_option("--feat-d", train.cfg.feat_d, "feature block grid side")
      ->envname("FACEWARP_FEAT_D");
  t->add_option("--lr-warp", train.cfg.lr_warp)->envname("FACEWARP_LR_WARP");
  t->add_option("--lr-kp", train.cfg.lr_kp)->envname("FACEWARP_LR_KP");
  t->add_option("--w-warp", train.cfg.w_warp)->envname("FACEWARP_W_WARP");
  t->add_option("--w-kp", train.cfg.w_kp)->envname("FACEWARP_W_KP");

  EvalArgs eval;
  CLI::App* e = app.add_subcommand("eval", "evaluate a checkpoint on annotated animals");
  e->add_option("--checkpoint", eval.checkpoint, "checkpoint.fwck")->required();
  e->add_option("--data", eval.data, "test annotations json")->required();
  e->add_option("--out", eval.out, "output directory")->required()->envname("FACEWARP_OUT");
  e->add_option("--mode", eval.mode, "ours | bl-tps | bl-ft | scratch")
      ->envname("FACEWARP_MODE");
  e->add_option("--size", eval.size, "crop resolution")->envname("FACEWARP_SIZE");
  e->add_option("--sample-grid", eval.sample_grid)->envname("FACEWARP_SAMPLE_GRID");
  e->add_option("--thresh", eval.thresh, "failure threshold for eval.json")
      ->envname("FACEWARP_THRESH");
  e->add_option("--thresholds", eval.thresholds, "sweep thresholds for curve.csv")
      ->delimiter(',')
      ->envname("FACEWARP_THRESHOLDS");
  e->add_option("--seed", eval.seed)->envname("FACEWARP_SEED");

  try {
    app.parse(argc, argv);
    if (s->parsed()) return cmd_synth(synth);
    if (m->parsed()) return cmd_match(match);
    if (t->parsed()) return cmd_train(train);
    if (e->parsed()) return cmd_eval(eval);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  } catch (const fw::Error& err) {
    nlohmann::ordered_json rec;
    rec["error"] = fw::error_code_name(err.code());
    rec["message"] = err.what();
    std::cerr << rec.dump() << "\n";
    return 1;
  } catch (const std::exception& err) {
    nlohmann::ordered_json rec;
    rec["error"] = "Internal";
    rec["message"] = err.what();
    std::cerr << rec.dump() << "\n";
    return 2;
  }
  return 0;
}
