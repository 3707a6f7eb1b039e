#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <utility>
#include <vector>

#include "facewarp/dataset.hpp"
#include "facewarp/nets.hpp"
#include "facewarp/pose.hpp"
#include "facewarp/tps.hpp"
#include "facewarp/warp_supervision.hpp"

namespace fw {

// A predicted keypoint fails when its distance to the annotated position
// exceeds thresh * bbox_size. Counts are kept per keypoint; the average is
// failed_total / evaluated_total over annotated keypoints only.
struct EvalResult {
  std::array<double, kNumKeypoints> per_keypoint_failure{};
  double average_failure = 0.0;
  std::array<int, kNumKeypoints> evaluated{};
  std::array<int, kNumKeypoints> failed{};

  int evaluated_total() const {
    int n = 0;
    for (int v : evaluated) n += v;
    return n;
  }
  int failed_total() const {
    int n = 0;
    for (int v : failed) n += v;
    return n;
  }
};

// Maps predictions made in the warped frame back to the original frame by
// applying the probe-fitted inverse of t (the forward original->warped
// transform used for the sample). Coordinates stay normalized.
KeypointSet transfer_back(const Eigen::VectorXd& pred10, const TpsTransform& t);

// Keypoints without ground-truth annotation (gt visible flag off) are
// excluded from numerator and denominator alike.
EvalResult failure_rate(const std::vector<KeypointSet>& preds,
                        const std::vector<KeypointSet>& gts,
                        const std::vector<double>& bbox_sizes, double thresh = 0.10);

// thresholds must be sorted ascending; the resulting failure values are
// nonincreasing.
std::vector<std::pair<double, double>> threshold_sweep(const std::vector<KeypointSet>& preds,
                                                       const std::vector<KeypointSet>& gts,
                                                       const std::vector<double>& bbox_sizes,
                                                       const std::vector<double>& thresholds);

void write_eval_json(const std::string& path, const EvalResult& r);
void write_threshold_curve(const std::string& path,
                           const std::vector<std::pair<double, double>>& curve);
void write_k_sweep_csv(const std::string& path,
                       const std::vector<std::pair<int, EvalResult>>& rows);

// ---------------------------------------------------------------------------
// Pipeline glue shared by the experiment harnesses and the CLI.
// ---------------------------------------------------------------------------

// Pose-matches animal samples against the human pool. Humans with colinear
// or under-annotated keypoints are screened out first; every animal gets a
// MatchSet (empty when it could not be matched), with indices into the
// original vectors. Diagnostics name every screened human and unmatched
// animal by its sample provenance.
struct MatchOutcome {
  std::vector<MatchSet> matches;
  std::vector<std::string> diagnostics;
  int pool_size = 0;
  std::array<int, 3> pool_by_variant{};  // indexed by PoseVariant
};
MatchOutcome match_samples(const std::vector<Sample>& animals, const std::vector<Sample>& humans,
                           int k, bool mirror_profiles = true, double colinear_tol = 0.02);

// Forward transforms predicted by the warp net, one per sample.
std::vector<TpsTransform> predict_warps(const ModelParams& p, const std::vector<Sample>& samples,
                                        const FlowBasis& basis);

// Runs the keypoint net on the sample (warped by *warp when given) and
// returns predictions in the sample's pixel frame, transferred back through
// the warp. warp == nullptr means the identity-flow path.
KeypointSet predict_sample(const ModelParams& p, const Sample& s, const TpsTransform* warp);

std::vector<KeypointSet> collect_predictions(const ModelParams& p,
                                             const std::vector<Sample>& test,
                                             const std::vector<const TpsTransform*>& warps);

EvalResult evaluate_dataset(const ModelParams& p, const std::vector<Sample>& test,
                            const std::vector<const TpsTransform*>& warps, double thresh = 0.10);

// Pixels warped forward by t, keypoints pushed through t, visibility kept.
Sample warp_sample(const Sample& s, const TpsTransform& t);

// ---------------------------------------------------------------------------
// Experiment harnesses.
// ---------------------------------------------------------------------------

// The four training conditions. ours: kp net pretrained on humans, warp net
// pretrained on flow targets, then joint training with both losses. bl-tps:
// same kp pretraining, joint phase without flow supervision (w_warp = 0).
// bl-ft: kp pretraining then finetuning on unwarped animal images (identity
// flow). scratch: joint training from random initialization, no pretraining.
enum class TrainMode { kOurs, kBlTps, kBlFt, kScratch };
const char* mode_name(TrainMode m);
TrainMode parse_mode(const std::string& name);

struct ExperimentSplit {
  std::vector<Sample> humans;
  std::vector<Sample> train_animals;
  std::vector<Sample> test_animals;
};

struct ModeRun {
  ModelParams params;
  EvalResult eval;
  std::vector<std::array<double, 3>> curve;  // joint phase losses
  std::vector<std::string> diagnostics;
  int supervised = 0;  // train animals that got at least one flow target
};
// matches, when given, replaces internal pose matching (indices must refer to
// data.train_animals / data.humans). Ignored by bl-ft, which uses no warps.
ModeRun run_mode(const ExperimentSplit& data, TrainMode mode, const TrainConfig& cfg,
                 const std::vector<MatchSet>* matches = nullptr);

// Upper-bound protocol: the ours arm uses predicted warps end to end; the
// gt_warp arm trains and evaluates the keypoint net on images warped by
// transforms fitted to ground-truth keypoint correspondences. The oracle arm
// consumes ground-truth keypoints at test time, so it bounds, rather than
// competes with, the deployable pipeline.
struct GtWarpProtocol {
  EvalResult ours;
  EvalResult gt_warp;
};
GtWarpProtocol run_gt_warp_protocol(const ExperimentSplit& data, const TrainConfig& cfg);

// One full ours-mode train/eval per k, shared seed and data.
std::vector<std::pair<int, EvalResult>> run_k_sweep(const ExperimentSplit& data,
                                                    const std::vector<int>& k_values,
                                                    const TrainConfig& cfg);

}  // namespace fw
