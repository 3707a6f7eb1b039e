#pragma once

#include <Eigen/Dense>
#include <array>
#include <vector>

#include "facewarp/geometry.hpp"

namespace fw {

// Thin plate spline kernel U(r) = r^2 log(r^2), expressed in terms of r^2.
inline double tps_kernel_r2(double r2) { return r2 > 0.0 ? r2 * std::log(r2) : 0.0; }

// d U / d p for p - c = v, r2 = |v|^2. Zero at the center (the limit).
inline Vec2 tps_kernel_grad(const Vec2& v, double r2) {
  if (r2 <= 0.0) return {0.0, 0.0};
  const double s = 2.0 * (std::log(r2) + 1.0);
  return {s * v.x, s * v.y};
}

// Fitted thin plate spline map f(p) = A (p,1) + sum_i w_i U(|p - c_i|).
// Coordinates are normalized to [0,1]^2; pixel conversion happens only at the
// resampling and evaluation boundaries.
struct TpsTransform {
  PointList src_points;
  std::array<std::array<double, 3>, 2> affine = {{{1, 0, 0}, {0, 1, 0}}};  // rows: x', y'
  std::vector<Vec2> weights;   // one per src point
  double lambda = 0.0;

  static TpsTransform identity();
};

// Dense flow between corresponding sample points.
struct FlowField {
  PointList sample_points;
  std::vector<Vec2> offsets;
};

// Solves the bordered system [[K + lambda I, P], [P^T, 0]] for both output
// coordinates. src points must not be (near) colinear; the caller screens
// with is_colinear. Throws DegenerateControlPoints / LengthMismatch.
TpsTransform fit_tps(const PointList& src, const PointList& dst, double lambda);

Vec2 apply_tps(const TpsTransform& t, const Vec2& p);
PointList apply_tps(const TpsTransform& t, const PointList& pts);

// Analytic 2x2 Jacobian of the map at p.
Mat2 tps_jacobian(const TpsTransform& t, const Vec2& p);

// Newton solve of t(s) = q. Returns best iterate; ok is false when the
// residual tolerance was not reached (fold, bad conditioning).
struct InvertResult {
  Vec2 point;
  bool ok = false;
  int iterations = 0;
};
InvertResult invert_point(const TpsTransform& t, const Vec2& q, const Vec2& guess,
                          double tol = 1e-12, int max_iters = 40);

// Swap-and-refit inverse: fits a reverse TPS from {t(p) -> p, p in probe_grid}.
TpsTransform invert_tps(const TpsTransform& t, const PointList& probe_grid);

// ---------------------------------------------------------------------------
// Grid-parameterized warps. For a fixed control lattice, TPS interpolation is
// linear in the target values, so dense flow is an exact linear function of
// control displacements. FlowBasis precomputes that linear map.
// ---------------------------------------------------------------------------
struct FlowBasis {
  PointList controls;    // n control points (typically a G x G lattice)
  double lambda = 0.0;
  PointList sample_points;            // M fixed sample points
  Eigen::MatrixXd coef_from_targets;  // (n+3) x n: TPS coefficients from scalar targets
  Eigen::MatrixXd sample_rows;        // M x n: interpolant values at sample_points

  int n() const { return int(controls.size()); }
  int m() const { return int(sample_points.size()); }

  // e(p) = [U(|p-c_1|), ..., U(|p-c_n|), 1, p.x, p.y], length n+3.
  Eigen::VectorXd kernel_vector(const Vec2& p) const;
  void kernel_vector_grad(const Vec2& p, Eigen::VectorXd& dx, Eigen::VectorXd& dy) const;
};

FlowBasis make_flow_basis(const PointList& src_grid, const PointList& sample_points,
                          double lambda);

// Contract form of the basis: B (2M x 2n, interleaved x/y layout) such that
// flow offsets at the sample points equal B * (d - src_grid) for any target
// control position vector d.
Eigen::MatrixXd tps_flow_basis(const PointList& src_grid, const PointList& sample_points,
                               double lambda);

// A basis with its control displacements folded into per-component TPS
// coefficients. apply/jacobian cost one kernel-vector evaluation.
struct GridWarp {
  const FlowBasis* basis = nullptr;
  Eigen::VectorXd cx, cy;  // length n+3

  Vec2 apply(const Vec2& p) const;
  Mat2 jacobian(const Vec2& p) const;
  InvertResult invert(const Vec2& q, const Vec2& guess, double tol = 1e-12,
                      int max_iters = 40) const;
};

// delta holds interleaved control displacements (dx0, dy0, dx1, ...), length 2n.
GridWarp compile_grid_warp(const FlowBasis& basis, const Eigen::VectorXd& delta);

// Equivalent TpsTransform (controls -> controls + delta). Used where a fitted
// transform object is needed, e.g. warp-back of predictions.
TpsTransform grid_warp_to_tps(const FlowBasis& basis, const Eigen::VectorXd& delta);

// ---------------------------------------------------------------------------
// Image warping. Backward mapping with bilinear sampling and zero fill.
// t_inverse maps normalized output coordinates to normalized input coordinates.
// ---------------------------------------------------------------------------
Raster warp_image(const Raster& img, const TpsTransform& t_inverse, int out_w, int out_h);
Raster warp_image_serial(const Raster& img, const TpsTransform& t_inverse, int out_w,
                         int out_h);

// Warps by a forward transform: each output pixel Newton-inverts t_forward.
// Exact where the warp is diffeomorphic; non-converged pixels sample the best
// iterate.
Raster warp_image_forward(const Raster& img, const TpsTransform& t_forward, int out_w,
                          int out_h);

}  // namespace fw
