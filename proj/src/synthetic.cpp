#include "facewarp/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "facewarp/error.hpp"

namespace fw {

std::array<Vec2, kNumKeypoints> synthetic_template() {
  return {{{0.35, 0.40}, {0.65, 0.40}, {0.50, 0.62}, {0.38, 0.78}, {0.62, 0.78}}};
}

Raster render_face(const std::array<Vec2, kNumKeypoints>& kps_norm, int size) {
  if (size < 2) fail(ErrorCode::InvalidConfig, "render_face: size must be at least 2");
  static const std::array<double, kNumKeypoints> amp = {0.9, 0.9, 1.0, 0.7, 0.7};
  const double sigma2 = 2.0 * 0.06 * 0.06;
  const double face2 = 2.0 * 0.18 * 0.18;
  Raster img;
  img.width = size;
  img.height = size;
  img.data.assign(size_t(size) * size_t(size), 0.0);
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      const Vec2 p = {(j + 0.5) / double(size), (i + 0.5) / double(size)};
      const double fx = p.x - 0.5, fy = p.y - 0.55;
      double v = 0.25 * std::exp(-(fx * fx + fy * fy) / face2);
      for (int k = 0; k < kNumKeypoints; ++k) {
        const double dx = p.x - kps_norm[size_t(k)].x;
        const double dy = p.y - kps_norm[size_t(k)].y;
        v += amp[size_t(k)] * std::exp(-(dx * dx + dy * dy) / sigma2);
      }
      img.at(i, j) = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

namespace {

// Species offset pattern at distortion 1: eyes pushed apart and up, nose
// lengthened, mouth corners pulled inward. A warp along -pattern restores
// human proportions.
const std::array<Vec2, kNumKeypoints> kSpeciesPattern = {
    {{-0.06, -0.02}, {0.06, -0.02}, {0.0, 0.07}, {0.03, 0.04}, {-0.03, 0.04}}};

Sample make_face(const Raster& template_img, const std::array<Vec2, kNumKeypoints>& kps,
                 const std::string& id, TpsTransform* t_out) {
  const int s = template_img.width;
  PointList src, dst;
  const auto tmpl = synthetic_template();
  for (int k = 0; k < kNumKeypoints; ++k) {
    src.push_back(tmpl[size_t(k)]);
    dst.push_back(kps[size_t(k)]);
  }
  const TpsTransform t = fit_tps(src, dst, 0.0);
  Sample out;
  out.pixels = warp_image_forward(template_img, t, s, s);
  for (int k = 0; k < kNumKeypoints; ++k)
    out.keypoints.pts[size_t(k)] = {kps[size_t(k)].x * s, kps[size_t(k)].y * s};
  out.bbox_size = double(s);
  out.provenance = id;
  if (t_out != nullptr) *t_out = t;
  return out;
}

}  // namespace

SyntheticWorld make_synthetic_world(const SyntheticConfig& cfg) {
  if (cfg.humans < 0 || cfg.animals < 0)
    fail(ErrorCode::InvalidConfig, "make_synthetic_world: negative counts");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  const auto tmpl = synthetic_template();
  const Raster template_img = render_face(tmpl, cfg.size);

  SyntheticWorld world;
  auto draw_keypoints = [&](bool animal) {
    std::array<Vec2, kNumKeypoints> kps = tmpl;
    if (animal) {
      const double strength = cfg.distortion * (0.75 + 0.25 * (uni(rng) + 1.0));
      for (int k = 0; k < kNumKeypoints; ++k) {
        kps[size_t(k)].x += strength * kSpeciesPattern[size_t(k)].x;
        kps[size_t(k)].y += strength * kSpeciesPattern[size_t(k)].y;
      }
    }
    kps[kNose].x += cfg.pose_amplitude * uni(rng);
    for (int k = 0; k < kNumKeypoints; ++k) {
      kps[size_t(k)].x += cfg.jitter * nd(rng);
      kps[size_t(k)].y += cfg.jitter * nd(rng);
    }
    return kps;
  };

  for (int i = 0; i < cfg.humans; ++i)
    world.humans.push_back(
        make_face(template_img, draw_keypoints(false), "human-" + std::to_string(i), nullptr));
  world.animal_warps.resize(size_t(cfg.animals));
  for (int i = 0; i < cfg.animals; ++i)
    world.animals.push_back(make_face(template_img, draw_keypoints(true),
                                      "animal-" + std::to_string(i),
                                      &world.animal_warps[size_t(i)]));
  return world;
}

ExperimentSplit split_world(const SyntheticWorld& world, int n_train) {
  if (n_train < 0 || size_t(n_train) > world.animals.size())
    fail(ErrorCode::InvalidConfig,
         "split_world: n_train " + std::to_string(n_train) + " out of range for " +
             std::to_string(world.animals.size()) + " animals");
  ExperimentSplit split;
  split.humans = world.humans;
  split.train_animals.assign(world.animals.begin(), world.animals.begin() + n_train);
  split.test_animals.assign(world.animals.begin() + n_train, world.animals.end());
  return split;
}

void write_synthetic_dataset(const std::string& dir, const SyntheticWorld& world) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + dir + "/images: " + ec.message());

  std::vector<FaceAnnotation> anns;
  auto add = [&](const Sample& s, Species species) {
    const std::string rel = "images/" + s.provenance + ".pgm";
    write_image_pgm((fs::path(dir) / rel).string(), s.pixels);
    FaceAnnotation a;
    a.id = s.provenance;
    a.image_path = rel;
    a.species = species;
    a.bbox[0] = 0.0;
    a.bbox[1] = 0.0;
    a.bbox[2] = double(s.pixels.width);
    a.bbox[3] = double(s.pixels.height);
    a.keypoints = s.keypoints;
    anns.push_back(std::move(a));
  };
  for (const Sample& s : world.humans) add(s, Species::Human);
  for (const Sample& s : world.animals) add(s, Species::Animal);
  write_annotations((fs::path(dir) / "annotations.json").string(), anns);
}

}  // namespace fw
