#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "facewarp/dataset.hpp"
#include "facewarp/tps.hpp"
#include "facewarp/warp_supervision.hpp"

namespace fw {

// One-hidden-layer tanh perceptron: y = W2 tanh(W1 x + b1) + b2.
struct MlpParams {
  Eigen::MatrixXd W1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd W2;
  Eigen::VectorXd b2;
};

// warp_net maps original-image features to 2*G^2 interleaved control
// displacements; kp_net maps warped-image features to 10 normalized keypoint
// coordinates (x,y per keypoint, canonical order).
struct ModelParams {
  MlpParams warp_net;
  MlpParams kp_net;
  int feat_d = 16;  // featurize block grid, D = feat_d^2
  int grid = 5;     // control lattice side G
};

struct ModelGrads {
  MlpParams warp_net;
  MlpParams kp_net;
};

struct TrainConfig {
  double lr_warp = 0.1;
  double lr_kp = 0.1;
  int epochs = 150;
  int k = 5;
  int grid = 5;          // control lattice G x G
  int sample_grid = 20;  // flow supervision grid Gs x Gs
  uint64_t seed = 1;
  double w_warp = 1.0;
  double w_kp = 1.0;
  int feat_d = 16;
  int hidden_warp = 32;
  int hidden_kp = 32;
  std::vector<int> milestones = {50, 100};  // learning rate x0.1 at these epochs
  bool identity_flow = false;  // disable warp prediction, feed originals to kp_net
};

// Deterministic initialization (fixed draw order) from the config's shapes.
ModelParams init_params(const TrainConfig& cfg);

// Block means of a d x d downsample, flattened row major, image mean
// subtracted. Image sides must be divisible by d.
Eigen::VectorXd featurize(const Raster& img, int d);

Eigen::VectorXd mlp_forward(const MlpParams& p, const Eigen::VectorXd& x);
Eigen::VectorXd warp_net_forward(const ModelParams& p, const Eigen::VectorXd& features);
Eigen::VectorXd kp_net_forward(const ModelParams& p, const Eigen::VectorXd& warped_features);

// value = 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise; derivative = x or sign(x)
// (1 at the knee).
std::pair<double, double> smooth_l1(double x);

// Sum of smooth_l1 over both coordinates of the visible keypoints;
// pred holds 10 normalized coordinates, gt is in the same frame. Invisible
// keypoints contribute exactly zero to value and gradient.
double keypoint_loss(const Eigen::VectorXd& pred, const KeypointSet& gt,
                     Eigen::VectorXd* d_pred);

// One full-batch training step. Per element: the warp net predicts control
// displacements; flow at the supervision grid is an exact linear map of them
// (warp loss); the image is warped by the predicted transform (per-pixel
// Newton inversion); the kp net predicts keypoints of the warped image whose
// targets are the ground-truth keypoints pushed through the same predicted
// transform. Keypoint-loss gradients reach the warp net through both the
// resampling coordinates (implicit-function rule on the inversion) and the
// pushed-forward targets. Gradients accumulate over the batch in element
// order; one descent update per subnetwork.
//
// targets[i] supplies flow supervision for samples[i] (may be null when
// w_warp is 0 or identity_flow). warm_cache, when given, holds one entry per
// element with per-pixel inversion warm starts (updated in place; pass
// nullptr for a pure function of the inputs).
struct StepMetrics {
  double warp_loss = 0.0;      // batch mean over supervised elements
  double kp_loss = 0.0;        // batch mean over elements
  double total_loss = 0.0;     // weighted batch sum (the optimized objective)
  int nonconverged_pixels = 0; // Newton inversions that missed tolerance
  double grad_inf_norm = 0.0;
};
StepMetrics joint_step(ModelParams& p, const std::vector<Sample>& samples,
                       const std::vector<const WarpTarget*>& targets, const FlowBasis& basis,
                       const TrainConfig& cfg,
                       std::vector<PointList>* warm_cache = nullptr);
StepMetrics joint_step_serial(ModelParams& p, const std::vector<Sample>& samples,
                              const std::vector<const WarpTarget*>& targets,
                              const FlowBasis& basis, const TrainConfig& cfg,
                              std::vector<PointList>* warm_cache = nullptr);

// Gradients of the weighted batch-sum objective without applying an update.
StepMetrics joint_gradients(const ModelParams& p, const std::vector<Sample>& samples,
                            const std::vector<const WarpTarget*>& targets,
                            const FlowBasis& basis, const TrainConfig& cfg,
                            ModelGrads* grads);

// The same objective as a plain scalar (finite-difference harnesses).
double joint_loss(const ModelParams& p, const std::vector<Sample>& samples,
                  const std::vector<const WarpTarget*>& targets, const FlowBasis& basis,
                  const TrainConfig& cfg);

// Full-batch gradient descent for cfg.epochs with x0.1 decay at the
// milestones. Deterministic given cfg.seed and inputs. Curve rows are
// (epoch, warp_loss, kp_loss) batch means measured before each update.
struct TrainResult {
  ModelParams params;
  std::vector<std::array<double, 3>> curve;
  int nonconverged_pixels = 0;  // total across training
};
TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& samples,
                  const std::vector<const WarpTarget*>& targets, const FlowBasis& basis,
                  const ModelParams* init = nullptr);

void write_loss_curve(const std::string& path, const std::vector<std::array<double, 3>>& curve);

// Checkpoint: "FWCK0001", u32 feat_d, u32 grid, then 8 tensors
// (u32 rows, u32 cols, row-major float64) in the order
// warp W1,b1,W2,b2 then kp W1,b1,W2,b2. Little-endian.
void save_checkpoint(const std::string& path, const ModelParams& p);
ModelParams load_checkpoint(const std::string& path);

}  // namespace fw
