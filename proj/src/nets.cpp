#include "facewarp/nets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "facewarp/geometry.hpp"

namespace fw {

namespace {

void fill_normal(Eigen::MatrixXd& m, double scale, std::mt19937_64& rng,
                 std::normal_distribution<double>& nd) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = nd(rng) * scale;
}

struct MlpCache {
  Eigen::VectorXd x;
  Eigen::VectorXd h;  // tanh activations
};

Eigen::VectorXd mlp_run(const MlpParams& p, const Eigen::VectorXd& x, MlpCache* cache) {
  if (p.W1.cols() != x.size())
    fail(ErrorCode::LengthMismatch, "mlp: input length " + std::to_string(x.size()) +
                                        " vs W1 cols " + std::to_string(p.W1.cols()));
  Eigen::VectorXd h = (p.W1 * x + p.b1).array().tanh().matrix();
  Eigen::VectorXd y = p.W2 * h + p.b2;
  if (cache) {
    cache->x = x;
    cache->h = std::move(h);
  }
  return y;
}

// dy is dL/d output. Parameter gradients accumulate into g; dx receives
// dL/d input when non-null.
void mlp_backward(const MlpParams& p, const MlpCache& c, const Eigen::VectorXd& dy,
                  MlpParams& g, Eigen::VectorXd* dx) {
  g.W2.noalias() += dy * c.h.transpose();
  g.b2 += dy;
  Eigen::VectorXd dpre =
      ((p.W2.transpose() * dy).array() * (1.0 - c.h.array().square())).matrix();
  g.W1.noalias() += dpre * c.x.transpose();
  g.b1 += dpre;
  if (dx) dx->noalias() = p.W1.transpose() * dpre;
}

MlpParams zeros_like(const MlpParams& p) {
  MlpParams g;
  g.W1 = Eigen::MatrixXd::Zero(p.W1.rows(), p.W1.cols());
  g.b1 = Eigen::VectorXd::Zero(p.b1.size());
  g.W2 = Eigen::MatrixXd::Zero(p.W2.rows(), p.W2.cols());
  g.b2 = Eigen::VectorXd::Zero(p.b2.size());
  return g;
}

void accumulate(MlpParams& dst, const MlpParams& src) {
  dst.W1 += src.W1;
  dst.b1 += src.b1;
  dst.W2 += src.W2;
  dst.b2 += src.b2;
}

bool all_finite(const MlpParams& g) {
  return g.W1.allFinite() && g.b1.allFinite() && g.W2.allFinite() && g.b2.allFinite();
}

double inf_norm(const MlpParams& g) {
  double v = 0.0;
  if (g.W1.size()) v = std::max(v, g.W1.cwiseAbs().maxCoeff());
  if (g.b1.size()) v = std::max(v, g.b1.cwiseAbs().maxCoeff());
  if (g.W2.size()) v = std::max(v, g.W2.cwiseAbs().maxCoeff());
  if (g.b2.size()) v = std::max(v, g.b2.cwiseAbs().maxCoeff());
  return v;
}

// Adjoint of featurize: spread dL/d features back to per-pixel dL/d image.
Raster featurize_grad_image(const Eigen::VectorXd& df, int width, int height, int d) {
  const int bw = width / d;
  const int bh = height / d;
  const double mean = df.mean();
  const double inv_area = 1.0 / (double(bw) * double(bh));
  Raster g(width, height);
  for (int gy = 0; gy < d; ++gy) {
    for (int gx = 0; gx < d; ++gx) {
      const double v = (df[size_t(gy) * d + gx] - mean) * inv_area;
      for (int i = gy * bh; i < (gy + 1) * bh; ++i)
        for (int j = gx * bw; j < (gx + 1) * bw; ++j) g.at(i, j) = v;
    }
  }
  return g;
}

struct ElementOut {
  ModelGrads grads;
  double lw = 0.0;
  double lkp = 0.0;
  bool has_warp = false;
  bool has_kp = false;
  int nonconv = 0;
};

// Forward (and optionally backward) pass for one batch element. warm, when
// given, holds per-pixel inversion starts from a previous pass over the same
// element and is refreshed with this pass's solutions.
void element_pass(const ModelParams& p, const Sample& s, const WarpTarget* tgt,
                  const FlowBasis& basis, const TrainConfig& cfg, PointList* warm,
                  bool want_grads, ElementOut& out) {
  out.lw = 0.0;
  out.lkp = 0.0;
  out.has_warp = false;
  out.has_kp = false;
  out.nonconv = 0;
  if (want_grads) {
    out.grads.warp_net = zeros_like(p.warp_net);
    out.grads.kp_net = zeros_like(p.kp_net);
  }

  const Raster& img = s.pixels;
  const int W = img.width;
  const int H = img.height;
  Eigen::VectorXd x = featurize(img, p.feat_d);

  KeypointSet kp_norm = s.keypoints;
  for (int k = 0; k < kNumKeypoints; ++k)
    kp_norm.pts[k] = {kp_norm.pts[k].x / W, kp_norm.pts[k].y / H};

  if (cfg.identity_flow) {
    // No warp path: the kp net reads the original image and its targets are
    // the sample's own keypoints.
    if (cfg.w_kp > 0.0) {
      MlpCache c2;
      Eigen::VectorXd out10 = mlp_run(p.kp_net, x, want_grads ? &c2 : nullptr);
      Eigen::VectorXd dout;
      out.lkp = keypoint_loss(out10, kp_norm, want_grads ? &dout : nullptr);
      out.has_kp = true;
      if (want_grads) mlp_backward(p.kp_net, c2, (cfg.w_kp * dout).eval(), out.grads.kp_net, nullptr);
    }
    return;
  }

  const int n = basis.n();
  MlpCache c1;
  Eigen::VectorXd delta = mlp_run(p.warp_net, x, want_grads ? &c1 : nullptr);
  Eigen::VectorXd ddelta = Eigen::VectorXd::Zero(2 * n);

  if (cfg.w_warp > 0.0 && tgt && !tgt->flows.empty()) {
    FlowField pred;
    pred.sample_points = basis.sample_points;
    pred.offsets.resize(basis.m());
    for (int m = 0; m < basis.m(); ++m) {
      double px = 0.0, py = 0.0;
      for (int g = 0; g < n; ++g) {
        px += basis.sample_rows(m, g) * delta[2 * g];
        py += basis.sample_rows(m, g) * delta[2 * g + 1];
      }
      pred.offsets[m] = {px, py};
    }
    FlowField dpred;
    out.lw = warp_loss(pred, tgt->flows, want_grads ? &dpred : nullptr);
    out.has_warp = true;
    if (want_grads) {
      for (int m = 0; m < basis.m(); ++m) {
        for (int g = 0; g < n; ++g) {
          ddelta[2 * g] += cfg.w_warp * basis.sample_rows(m, g) * dpred.offsets[m].x;
          ddelta[2 * g + 1] += cfg.w_warp * basis.sample_rows(m, g) * dpred.offsets[m].y;
        }
      }
    }
  }

  if (cfg.w_kp > 0.0) {
    GridWarp gw = compile_grid_warp(basis, delta);
    Raster warped(W, H);
    PointList sols(size_t(W) * size_t(H));
    const bool have_warm = warm && warm->size() == sols.size();
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const size_t idx = size_t(i) * W + j;
        const Vec2 q{(j + 0.5) / W, (i + 0.5) / H};
        const Vec2 guess = have_warm ? (*warm)[idx] : (j > 0 ? sols[idx - 1] : q);
        const InvertResult inv = gw.invert(q, guess);
        if (!inv.ok) ++out.nonconv;
        sols[idx] = inv.point;
        warped.at(i, j) = bilinear_sample(img, norm_to_pixel(inv.point, W, H));
      }
    }
    if (warm) *warm = sols;

    Eigen::VectorXd x2 = featurize(warped, p.feat_d);
    MlpCache c2;
    Eigen::VectorXd out10 = mlp_run(p.kp_net, x2, want_grads ? &c2 : nullptr);

    KeypointSet gt = kp_norm;
    for (int k = 0; k < kNumKeypoints; ++k)
      if (gt.visible[k]) gt.pts[k] = gw.apply(kp_norm.pts[k]);
    Eigen::VectorXd dout;
    out.lkp = keypoint_loss(out10, gt, want_grads ? &dout : nullptr);
    out.has_kp = true;

    if (want_grads) {
      Eigen::VectorXd g10 = cfg.w_kp * dout;
      Eigen::VectorXd dx2;
      mlp_backward(p.kp_net, c2, g10, out.grads.kp_net, &dx2);
      Raster gimg = featurize_grad_image(dx2, W, H, p.feat_d);

      // The warped value at output pixel q is I(s) with s the solution of
      // T(s) = q, so ds/d delta = -J(s)^-1 dT/d delta(s); every pixel's
      // contribution to dL/d delta is a multiple of the kernel vector e(s),
      // so accumulate weighted kernel vectors and hit them with C^T once.
      Eigen::VectorXd wx = Eigen::VectorXd::Zero(n + 3);
      Eigen::VectorXd wy = Eigen::VectorXd::Zero(n + 3);
      double* wxp = wx.data();
      double* wyp = wy.data();
      const Vec2* ctr = basis.controls.data();
      for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
          const size_t idx = size_t(i) * W + j;
          const double gpix = gimg.at(i, j);
          if (gpix == 0.0) continue;
          const Vec2 sp = sols[idx];
          const SampleValueGrad svg = bilinear_sample_with_grad(img, norm_to_pixel(sp, W, H));
          const Vec2 gs{gpix * svg.grad.x * W, gpix * svg.grad.y * H};
          const Mat2 J = gw.jacobian(sp);
          const double det = J.det();
          if (std::abs(det) < 1e-14) continue;  // folded pixel, contribution dropped
          const Vec2 u{(J.d * gs.x - J.c * gs.y) / det, (-J.b * gs.x + J.a * gs.y) / det};
          for (int g = 0; g < n; ++g) {
            const double dxc = sp.x - ctr[g].x;
            const double dyc = sp.y - ctr[g].y;
            const double k = tps_kernel_r2(dxc * dxc + dyc * dyc);
            wxp[g] += u.x * k;
            wyp[g] += u.y * k;
          }
          wxp[n] += u.x;
          wxp[n + 1] += u.x * sp.x;
          wxp[n + 2] += u.x * sp.y;
          wyp[n] += u.y;
          wyp[n + 1] += u.y * sp.x;
          wyp[n + 2] += u.y * sp.y;
        }
      }
      // The keypoint targets are pushed through the same warp, so they move
      // with delta as well: dL/d gt = -g10 and d gt/d delta is again a kernel
      // vector, folded into the same accumulators with the opposite sign.
      for (int k = 0; k < kNumKeypoints; ++k) {
        if (!gt.visible[k]) continue;
        Eigen::VectorXd e = basis.kernel_vector(kp_norm.pts[k]);
        wx += g10[2 * k] * e;
        wy += g10[2 * k + 1] * e;
      }
      Eigen::VectorXd ddx = basis.coef_from_targets.transpose() * wx;
      Eigen::VectorXd ddy = basis.coef_from_targets.transpose() * wy;
      for (int g = 0; g < n; ++g) {
        ddelta[2 * g] -= ddx[g];
        ddelta[2 * g + 1] -= ddy[g];
      }
    }
  }

  if (want_grads) mlp_backward(p.warp_net, c1, ddelta, out.grads.warp_net, nullptr);
}

// Shared batch driver. Elements are processed in blocks; per-element results
// land in private slots and are reduced in element order, so the result is
// identical for any thread count (and to the serial path).
StepMetrics batch_pass(const ModelParams& p, const std::vector<Sample>& samples,
                       const std::vector<const WarpTarget*>& targets, const FlowBasis& basis,
                       const TrainConfig& cfg, ModelGrads* grads,
                       std::vector<PointList>* cache, bool parallel) {
  const int N = int(samples.size());
  if (targets.size() != samples.size())
    fail(ErrorCode::LengthMismatch, "joint_step: " + std::to_string(samples.size()) +
                                        " samples vs " + std::to_string(targets.size()) +
                                        " targets");
  if (!cfg.identity_flow && p.warp_net.W2.rows() != 2 * basis.n())
    fail(ErrorCode::InvalidConfig,
         "joint_step: warp net emits " + std::to_string(p.warp_net.W2.rows()) +
             " values, basis expects " + std::to_string(2 * basis.n()));
  if (cache && cache->size() != samples.size()) cache->resize(samples.size());

  StepMetrics m;
  if (grads) {
    grads->warp_net = zeros_like(p.warp_net);
    grads->kp_net = zeros_like(p.kp_net);
  }
  int warp_cnt = 0, kp_cnt = 0;
  const bool want_grads = grads != nullptr;
  constexpr int kBlock = 32;
  std::vector<ElementOut> slots(size_t(std::min(kBlock, std::max(N, 1))));
  std::exception_ptr eptr = nullptr;
  for (int base = 0; base < N; base += kBlock) {
    const int cnt = std::min(kBlock, N - base);
#pragma omp parallel for schedule(static) if (parallel)
    for (int t = 0; t < cnt; ++t) {
      try {
        element_pass(p, samples[size_t(base + t)], targets[size_t(base + t)], basis, cfg,
                     cache ? &(*cache)[size_t(base + t)] : nullptr, want_grads, slots[size_t(t)]);
      } catch (...) {
#pragma omp critical(fw_batch_pass_err)
        if (!eptr) eptr = std::current_exception();
      }
    }
    if (eptr) std::rethrow_exception(eptr);
    for (int t = 0; t < cnt; ++t) {
      ElementOut& eo = slots[size_t(t)];
      if (eo.has_warp) {
        m.warp_loss += eo.lw;
        ++warp_cnt;
      }
      if (eo.has_kp) {
        m.kp_loss += eo.lkp;
        ++kp_cnt;
      }
      m.total_loss += cfg.w_warp * eo.lw + cfg.w_kp * eo.lkp;
      m.nonconverged_pixels += eo.nonconv;
      if (grads) {
        accumulate(grads->warp_net, eo.grads.warp_net);
        accumulate(grads->kp_net, eo.grads.kp_net);
      }
    }
  }
  if (warp_cnt) m.warp_loss /= warp_cnt;
  if (kp_cnt) m.kp_loss /= kp_cnt;
  if (!std::isfinite(m.total_loss))
    fail(ErrorCode::NonFiniteGradient, "joint_step: non-finite batch loss");
  if (grads) {
    if (!(all_finite(grads->warp_net) && all_finite(grads->kp_net)))
      fail(ErrorCode::NonFiniteGradient, "joint_step: non-finite gradient");
    m.grad_inf_norm = std::max(inf_norm(grads->warp_net), inf_norm(grads->kp_net));
  }
  return m;
}

void descend(MlpParams& p, const MlpParams& g, double lr) {
  p.W1 -= lr * g.W1;
  p.b1 -= lr * g.b1;
  p.W2 -= lr * g.W2;
  p.b2 -= lr * g.b2;
}

StepMetrics step_impl(ModelParams& p, const std::vector<Sample>& samples,
                      const std::vector<const WarpTarget*>& targets, const FlowBasis& basis,
                      const TrainConfig& cfg, std::vector<PointList>* cache, bool parallel) {
  ModelGrads g;
  StepMetrics m = batch_pass(p, samples, targets, basis, cfg, &g, cache, parallel);
  descend(p.warp_net, g.warp_net, cfg.lr_warp);
  descend(p.kp_net, g.kp_net, cfg.lr_kp);
  return m;
}

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t take_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    fail(ErrorCode::ParseError, "checkpoint: truncated reading " + what);
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

void put_mat(std::ostream& os, const Eigen::MatrixXd& m) {
  put_u32(os, uint32_t(m.rows()));
  put_u32(os, uint32_t(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      os.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
}

Eigen::MatrixXd take_mat(std::istream& is, const std::string& what) {
  const uint32_t rows = take_u32(is, what + " rows");
  const uint32_t cols = take_u32(is, what + " cols");
  if (rows > (1u << 20) || cols > (1u << 20) || rows == 0 || cols == 0)
    fail(ErrorCode::ParseError, "checkpoint: implausible shape for " + what);
  Eigen::MatrixXd m(rows, cols);
  for (uint32_t r = 0; r < rows; ++r) {
    for (uint32_t c = 0; c < cols; ++c) {
      double v;
      if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
        fail(ErrorCode::ParseError, "checkpoint: truncated reading " + what);
      m(r, c) = v;
    }
  }
  return m;
}

Eigen::VectorXd take_vec(std::istream& is, const std::string& what) {
  Eigen::MatrixXd m = take_mat(is, what);
  if (m.cols() != 1) fail(ErrorCode::ValidationError, "checkpoint: " + what + " is not a column");
  return m.col(0);
}

constexpr char kCheckpointMagic[8] = {'F', 'W', 'C', 'K', '0', '0', '0', '1'};

}  // namespace

ModelParams init_params(const TrainConfig& cfg) {
  if (cfg.feat_d < 1 || cfg.grid < 2 || cfg.hidden_warp < 1 || cfg.hidden_kp < 1)
    fail(ErrorCode::InvalidConfig, "init_params: non-positive shape");
  const int D = cfg.feat_d * cfg.feat_d;
  const int n = cfg.grid * cfg.grid;
  ModelParams p;
  p.feat_d = cfg.feat_d;
  p.grid = cfg.grid;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> nd(0.0, 1.0);

  p.warp_net.W1.resize(cfg.hidden_warp, D);
  fill_normal(p.warp_net.W1, 1.0 / std::sqrt(double(D)), rng, nd);
  p.warp_net.b1 = Eigen::VectorXd::Zero(cfg.hidden_warp);
  // Small output scale keeps the initial warps mild enough to invert cleanly.
  p.warp_net.W2.resize(2 * n, cfg.hidden_warp);
  fill_normal(p.warp_net.W2, 0.01 / std::sqrt(double(cfg.hidden_warp)), rng, nd);
  p.warp_net.b2 = Eigen::VectorXd::Zero(2 * n);

  p.kp_net.W1.resize(cfg.hidden_kp, D);
  fill_normal(p.kp_net.W1, 1.0 / std::sqrt(double(D)), rng, nd);
  p.kp_net.b1 = Eigen::VectorXd::Zero(cfg.hidden_kp);
  p.kp_net.W2.resize(2 * kNumKeypoints, cfg.hidden_kp);
  fill_normal(p.kp_net.W2, 0.1 / std::sqrt(double(cfg.hidden_kp)), rng, nd);
  // Keypoint coordinates live in [0,1]; start predictions at the center.
  p.kp_net.b2 = Eigen::VectorXd::Constant(2 * kNumKeypoints, 0.5);
  return p;
}

Eigen::VectorXd featurize(const Raster& img, int d) {
  if (img.empty()) fail(ErrorCode::EmptyImage, "featurize: empty image");
  if (d < 1 || img.width % d != 0 || img.height % d != 0)
    fail(ErrorCode::InvalidConfig, "featurize: " + std::to_string(img.width) + "x" +
                                       std::to_string(img.height) +
                                       " not divisible into " + std::to_string(d) + " blocks");
  const int bw = img.width / d;
  const int bh = img.height / d;
  const double inv_area = 1.0 / (double(bw) * double(bh));
  Eigen::VectorXd f(size_t(d) * size_t(d));
  for (int gy = 0; gy < d; ++gy) {
    for (int gx = 0; gx < d; ++gx) {
      double acc = 0.0;
      for (int i = gy * bh; i < (gy + 1) * bh; ++i)
        for (int j = gx * bw; j < (gx + 1) * bw; ++j) acc += img.at(i, j);
      f[size_t(gy) * d + gx] = acc * inv_area;
    }
  }
  f.array() -= f.mean();
  return f;
}

Eigen::VectorXd mlp_forward(const MlpParams& p, const Eigen::VectorXd& x) {
  return mlp_run(p, x, nullptr);
}

Eigen::VectorXd warp_net_forward(const ModelParams& p, const Eigen::VectorXd& features) {
  return mlp_run(p.warp_net, features, nullptr);
}

Eigen::VectorXd kp_net_forward(const ModelParams& p, const Eigen::VectorXd& warped_features) {
  return mlp_run(p.kp_net, warped_features, nullptr);
}

std::pair<double, double> smooth_l1(double x) {
  const double a = std::abs(x);
  if (a < 1.0) return {0.5 * x * x, x};
  return {a - 0.5, x > 0.0 ? 1.0 : -1.0};
}

double keypoint_loss(const Eigen::VectorXd& pred, const KeypointSet& gt,
                     Eigen::VectorXd* d_pred) {
  if (pred.size() != 2 * kNumKeypoints)
    fail(ErrorCode::LengthMismatch,
         "keypoint_loss: expected " + std::to_string(2 * kNumKeypoints) + " values, got " +
             std::to_string(pred.size()));
  if (d_pred) *d_pred = Eigen::VectorXd::Zero(2 * kNumKeypoints);
  double loss = 0.0;
  for (int k = 0; k < kNumKeypoints; ++k) {
    if (!gt.visible[k]) continue;  // occluded keypoints contribute exactly zero
    const double gx = gt.pts[k].x;
    const double gy = gt.pts[k].y;
    const auto [vx, dx] = smooth_l1(pred[2 * k] - gx);
    const auto [vy, dy] = smooth_l1(pred[2 * k + 1] - gy);
    loss += vx + vy;
    if (d_pred) {
      (*d_pred)[2 * k] = dx;
      (*d_pred)[2 * k + 1] = dy;
    }
  }
  return loss;
}

StepMetrics joint_step(ModelParams& p, const std::vector<Sample>& samples,
                       const std::vector<const WarpTarget*>& targets, const FlowBasis& basis,
                       const TrainConfig& cfg, std::vector<PointList>* warm_cache) {
  return step_impl(p, samples, targets, basis, cfg, warm_cache, true);
}

StepMetrics joint_step_serial(ModelParams& p, const std::vector<Sample>& samples,
                              const std::vector<const WarpTarget*>& targets,
                              const FlowBasis& basis, const TrainConfig& cfg,
                              std::vector<PointList>* warm_cache) {
  return step_impl(p, samples, targets, basis, cfg, warm_cache, false);
}

StepMetrics joint_gradients(const ModelParams& p, const std::vector<Sample>& samples,
                            const std::vector<const WarpTarget*>& targets,
                            const FlowBasis& basis, const TrainConfig& cfg, ModelGrads* grads) {
  return batch_pass(p, samples, targets, basis, cfg, grads, nullptr, true);
}

double joint_loss(const ModelParams& p, const std::vector<Sample>& samples,
                  const std::vector<const WarpTarget*>& targets, const FlowBasis& basis,
                  const TrainConfig& cfg) {
  return batch_pass(p, samples, targets, basis, cfg, nullptr, nullptr, true).total_loss;
}

TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& samples,
                  const std::vector<const WarpTarget*>& targets, const FlowBasis& basis,
                  const ModelParams* init) {
  if (cfg.epochs < 0) fail(ErrorCode::InvalidConfig, "train: negative epochs");
  TrainResult r;
  r.params = init ? *init : init_params(cfg);
  std::vector<PointList> cache(samples.size());
  TrainConfig step = cfg;
  double mult = 1.0;
  for (int e = 0; e < cfg.epochs; ++e) {
    for (int ms : cfg.milestones)
      if (e == ms) mult *= 0.1;
    step.lr_warp = cfg.lr_warp * mult;
    step.lr_kp = cfg.lr_kp * mult;
    const StepMetrics m = joint_step(r.params, samples, targets, basis, step, &cache);
    r.curve.push_back({double(e), m.warp_loss, m.kp_loss});
    r.nonconverged_pixels += m.nonconverged_pixels;
  }
  return r;
}

void write_loss_curve(const std::string& path, const std::vector<std::array<double, 3>>& curve) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::IoError, "cannot write " + path);
  os << "epoch,warp_loss,kp_loss\n";
  os << std::setprecision(17);
  for (const auto& row : curve)
    os << (long long)(row[0]) << "," << row[1] << "," << row[2] << "\n";
  if (!os.good()) fail(ErrorCode::IoError, "write failed for " + path);
}

void save_checkpoint(const std::string& path, const ModelParams& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot write " + path);
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(os, uint32_t(p.feat_d));
  put_u32(os, uint32_t(p.grid));
  put_mat(os, p.warp_net.W1);
  put_mat(os, p.warp_net.b1);
  put_mat(os, p.warp_net.W2);
  put_mat(os, p.warp_net.b2);
  put_mat(os, p.kp_net.W1);
  put_mat(os, p.kp_net.b1);
  put_mat(os, p.kp_net.W2);
  put_mat(os, p.kp_net.b2);
  if (!os.good()) fail(ErrorCode::IoError, "write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::IoError, "cannot read " + path);
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    fail(ErrorCode::ParseError, "checkpoint: bad magic in " + path);
  ModelParams p;
  p.feat_d = int(take_u32(is, "feat_d"));
  p.grid = int(take_u32(is, "grid"));
  p.warp_net.W1 = take_mat(is, "warp W1");
  p.warp_net.b1 = take_vec(is, "warp b1");
  p.warp_net.W2 = take_mat(is, "warp W2");
  p.warp_net.b2 = take_vec(is, "warp b2");
  p.kp_net.W1 = take_mat(is, "kp W1");
  p.kp_net.b1 = take_vec(is, "kp b1");
  p.kp_net.W2 = take_mat(is, "kp W2");
  p.kp_net.b2 = take_vec(is, "kp b2");

  const auto check = [&](bool ok, const std::string& what) {
    if (!ok) fail(ErrorCode::ValidationError, "checkpoint: inconsistent shapes (" + what + ")");
  };
  check(p.feat_d >= 1 && p.grid >= 2, "header");
  check(p.warp_net.W1.cols() == p.feat_d * p.feat_d, "warp input");
  check(p.warp_net.b1.size() == p.warp_net.W1.rows(), "warp hidden");
  check(p.warp_net.W2.cols() == p.warp_net.W1.rows(), "warp hidden");
  check(p.warp_net.W2.rows() == 2 * p.grid * p.grid, "warp output");
  check(p.warp_net.b2.size() == p.warp_net.W2.rows(), "warp output bias");
  check(p.kp_net.W1.cols() == p.feat_d * p.feat_d, "kp input");
  check(p.kp_net.b1.size() == p.kp_net.W1.rows(), "kp hidden");
  check(p.kp_net.W2.cols() == p.kp_net.W1.rows(), "kp hidden");
  check(p.kp_net.W2.rows() == 2 * kNumKeypoints, "kp output");
  check(p.kp_net.b2.size() == p.kp_net.W2.rows(), "kp output bias");
  return p;
}

}  // namespace fw
