#pragma once

#include <string>
#include <vector>

#include "facewarp/dataset.hpp"
#include "facewarp/pose.hpp"
#include "facewarp/tps.hpp"

namespace fw {

// Supervision for one animal: its K matched humans give K plausible warps,
// each expanded to a dense flow target on a shared sample grid. Everything
// here lives in normalized [0,1]^2 coordinates.
struct WarpTarget {
  std::string animal_id;
  std::vector<FlowField> flows;             // one per surviving neighbor
  std::vector<TpsTransform> gt_transforms;  // matching transforms (not cached)
};

// True when the visible keypoints all sit near one line (max-triangle
// thinness below tol) or fewer than 3 are visible. Used to screen humans
// whose keypoints cannot anchor a stable warp.
bool keypoints_near_colinear(const KeypointSet& kp, double tol = 0.02);

// TPS fitted from the mutually visible keypoint correspondences,
// animal -> human, lambda = 0. Throws InsufficientCorrespondences (< 3
// mutually visible) or DegenerateControlPoints (either side near-colinear).
TpsTransform gt_warp(const KeypointSet& animal_kp, const KeypointSet& human_kp);

// offsets[m] = t(grid[m]) - grid[m].
FlowField make_flow_target(const TpsTransform& t, const PointList& grid);

// Mean over targets of the summed squared offset error:
//   loss = (1/K) sum_k sum_m |pred_m - gt_{k,m}|^2
// d_loss/d_pred_m = (2/K) sum_k (pred_m - gt_{k,m}). Throws GridMismatch
// when any field disagrees on the sample points.
double warp_loss(const FlowField& pred, const std::vector<FlowField>& targets,
                 FlowField* d_pred);

// Builds WarpTargets for matched animals. Sample keypoints are normalized by
// the canonical resolution; mirrored matches flip the human keypoints
// (x -> 1-x, left/right labels swapped) before fitting. Neighbors that fail
// gt_warp are dropped; animals with no surviving neighbor are skipped and
// reported in diagnostics.
struct WarpTargetBuild {
  std::vector<WarpTarget> targets;
  std::vector<int> animal_indices;  // into the animals vector, aligned with targets
  std::vector<std::string> diagnostics;
};
WarpTargetBuild build_warp_targets(const std::vector<Sample>& animals,
                                   const std::vector<Sample>& humans,
                                   const std::vector<MatchSet>& matches,
                                   const PointList& sample_grid);

// Flat binary cache of the flow targets (transforms are cheap to rebuild and
// are not stored). Layout, little-endian:
//   magic "FWWT0001"; u32 count; u32 k_configured; u32 sample_grid_n;
//   per animal: u32 id_len; id bytes; u32 k_i; k_i * M * 2 float64 offsets
//   (x then y per sample point), M = sample_grid_n^2 cell centers.
// The text manifest lists the header and one line per animal.
void write_warp_targets(const std::string& bin_path, const std::string& manifest_path,
                        const std::vector<WarpTarget>& targets, int k_configured,
                        int sample_grid_n);
std::vector<WarpTarget> read_warp_targets(const std::string& bin_path);

}  // namespace fw
