#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "facewarp/geometry.hpp"

namespace fw {

// Canonical keypoint order used everywhere: annotations, net outputs, metrics.
enum Keypoint : int {
  kLeftEye = 0,
  kRightEye = 1,
  kNose = 2,
  kLeftMouth = 3,
  kRightMouth = 4,
};
constexpr int kNumKeypoints = 5;
extern const std::array<const char*, kNumKeypoints> kKeypointNames;

struct KeypointSet {
  std::array<Vec2, kNumKeypoints> pts{};
  std::array<bool, kNumKeypoints> visible{true, true, true, true, true};

  int visible_count() const {
    int n = 0;
    for (bool v : visible) n += v ? 1 : 0;
    return n;
  }
};

enum class PoseVariant : int { Frontal = 0, LeftProfile = 1, RightProfile = 2 };
const char* pose_variant_name(PoseVariant v);

struct PoseAngle {
  PoseVariant variant = PoseVariant::Frontal;
  double degrees = 0.0;  // in (-180, 180]
};

// Pose from the visible keypoints. Frontal (both eyes + nose visible): angle
// between the ray from the eye midpoint to the nose and the image-down
// vertical, positive when the nose tilts toward +x. Profile (eye, nose,
// mouth of one side visible): unsigned interior angle at the nose. Frontal
// wins when both apply. Throws InsufficientKeypoints when no triple is
// fully visible.
PoseAngle compute_angle(const KeypointSet& kp);

// Thinness test: twice-triangle-area / longest-side^2 < tol. Scale and
// rotation invariant; duplicate points count as colinear.
bool is_colinear(const std::array<Vec2, 3>& pts, double tol = 0.02);

struct MatchSet {
  int animal_index = -1;
  PoseVariant variant = PoseVariant::Frontal;
  std::vector<int> human_indices;
  std::vector<double> angle_diffs;  // nondecreasing, |animal - human| degrees
  std::vector<uint8_t> mirrored;    // candidate entered the pool flipped
};

// K nearest same-variant humans by |angle difference|, ties broken by lower
// index. Returns fewer than k when the pool is small; throws
// NoCompatibleCandidates when it is empty.
MatchSet find_matches(const PoseAngle& animal, const std::vector<PoseAngle>& humans, int k);

// Batch matching for a dataset. When mirror_profiles is set, each profile
// human is additionally admitted, horizontally flipped, as a candidate for
// the opposite profile (interior angles are mirror invariant). Frontal
// candidates are never duplicated. Animals whose pool is empty get an empty
// MatchSet (callers decide whether that is fatal).
std::vector<MatchSet> match_all(const std::vector<PoseAngle>& animals,
                                const std::vector<PoseAngle>& humans, int k,
                                bool mirror_profiles = true);
std::vector<MatchSet> match_all_serial(const std::vector<PoseAngle>& animals,
                                       const std::vector<PoseAngle>& humans, int k,
                                       bool mirror_profiles = true);

// matches.json: array of {animal_id, variant, human_ids, angle_diffs, mirrored}.
void write_matches_json(const std::string& path, const std::vector<MatchSet>& matches,
                        const std::vector<std::string>& animal_ids,
                        const std::vector<std::string>& human_ids);
std::vector<MatchSet> read_matches_json(const std::string& path,
                                        const std::vector<std::string>& animal_ids,
                                        const std::vector<std::string>& human_ids);

}  // namespace fw
