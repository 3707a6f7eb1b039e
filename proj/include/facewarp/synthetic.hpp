#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "facewarp/dataset.hpp"
#include "facewarp/evaluation.hpp"
#include "facewarp/tps.hpp"

namespace fw {

// Synthetic faces for end-to-end experiments: a blob-rendered template face
// is distorted by known thin plate spline transforms. Humans get pose and
// jitter variation only; animals additionally get a systematic species
// offset pattern, so their shape differs from every human's in a way a
// single warp family can undo. Keypoints are the exact transform images of
// the template keypoints, so ground truth is known by construction.
struct SyntheticConfig {
  int humans = 100;
  int animals = 100;
  int size = 16;
  double distortion = 1.0;       // scales the species offset pattern
  double pose_amplitude = 0.10;  // max |nose x shift|, normalized units
  double jitter = 0.01;          // keypoint noise sigma, normalized units
  uint64_t seed = 1;
};

struct SyntheticWorld {
  std::vector<Sample> humans;
  std::vector<Sample> animals;
  std::vector<TpsTransform> animal_warps;  // template -> animal, aligned with animals
};

// Template keypoints, normalized [0,1]^2.
std::array<Vec2, kNumKeypoints> synthetic_template();

// Gaussian blob per keypoint over a soft face vignette, values in [0,1].
Raster render_face(const std::array<Vec2, kNumKeypoints>& kps_norm, int size);

SyntheticWorld make_synthetic_world(const SyntheticConfig& cfg);

// First n_train animals train, the rest test. All humans are pool/pretraining.
ExperimentSplit split_world(const SyntheticWorld& world, int n_train);

// dir/images/<id>.pgm plus dir/annotations.json (humans first), bbox = full
// frame, image paths relative to dir.
void write_synthetic_dataset(const std::string& dir, const SyntheticWorld& world);

}  // namespace fw
