#include "facewarp/tps.hpp"

#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fw {

namespace {

// Bordered TPS system [[K + lambda I, P], [P^T, 0]] for n control points.
Eigen::MatrixXd tps_system_matrix(const PointList& src, double lambda) {
  const int n = int(src.size());
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n + 3, n + 3);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double r2 = (src[i] - src[j]).norm2();
      L(i, j) = tps_kernel_r2(r2);
    }
    L(i, i) += lambda;
    L(i, n) = 1.0;
    L(i, n + 1) = src[i].x;
    L(i, n + 2) = src[i].y;
    L(n, i) = 1.0;
    L(n + 1, i) = src[i].x;
    L(n + 2, i) = src[i].y;
  }
  return L;
}

struct TpsSolve {
  Eigen::MatrixXd L;
  Eigen::FullPivLU<Eigen::MatrixXd> lu;
  int n = 0;
};

TpsSolve factor_tps_system(const PointList& src, double lambda, const char* who) {
  TpsSolve out;
  out.n = int(src.size());
  out.L = tps_system_matrix(src, lambda);
  out.lu.compute(out.L);
  if (!out.lu.isInvertible())
    fail(ErrorCode::DegenerateControlPoints,
         std::string(who) + ": TPS system is singular (colinear or duplicate controls?)");
  return out;
}

template <class WarpT>
InvertResult newton_invert(const WarpT& w, const Vec2& q, const Vec2& guess, double tol,
                           int max_iters) {
  InvertResult out;
  const double tol2 = tol * tol;
  Vec2 s = guess;
  Vec2 r = w.apply(s) - q;
  double err = r.norm2();
  Vec2 best_s = s;
  double best_err = err;
  int it = 0;
  while (it < max_iters && best_err > tol2) {
    const Mat2 J = w.jacobian(s);
    if (std::abs(J.det()) < 1e-14) break;
    const Vec2 full_step = J.solve(r);
    double damp = 1.0;
    bool accepted = false;
    for (int k = 0; k < 12; ++k, damp *= 0.5) {
      const Vec2 cand = s - full_step * damp;
      const Vec2 rc = w.apply(cand) - q;
      const double ec = rc.norm2();
      if (ec < err) {
        s = cand;
        r = rc;
        err = ec;
        accepted = true;
        break;
      }
    }
    ++it;
    if (!accepted) break;
    if (err < best_err) {
      best_err = err;
      best_s = s;
    }
  }
  out.point = best_s;
  out.ok = best_err <= tol2;
  out.iterations = it;
  return out;
}

struct TpsAsWarp {
  const TpsTransform& t;
  Vec2 apply(const Vec2& p) const { return apply_tps(t, p); }
  Mat2 jacobian(const Vec2& p) const { return tps_jacobian(t, p); }
};

inline Vec2 warp_output_pixel(const Raster& img, const TpsTransform& t_inverse, int out_w,
                              int out_h, int row, int col) {
  const Vec2 q = pixel_to_norm({double(col), double(row)}, out_w, out_h);
  const Vec2 s = apply_tps(t_inverse, q);
  return norm_to_pixel(s, img.width, img.height);
}

}  // namespace

TpsTransform TpsTransform::identity() {
  TpsTransform t;
  t.src_points = {{0, 0}, {1, 0}, {0, 1}};
  t.weights = {{0, 0}, {0, 0}, {0, 0}};
  return t;
}

TpsTransform fit_tps(const PointList& src, const PointList& dst, double lambda) {
  if (src.size() != dst.size())
    fail(ErrorCode::LengthMismatch, "fit_tps: src and dst sizes differ");
  if (src.size() < 3) fail(ErrorCode::LengthMismatch, "fit_tps: need at least 3 points");
  if (lambda < 0.0) fail(ErrorCode::InvalidConfig, "fit_tps: lambda must be nonnegative");

  const int n = int(src.size());
  const TpsSolve solve = factor_tps_system(src, lambda, "fit_tps");

  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 3, 2);
  for (int i = 0; i < n; ++i) {
    rhs(i, 0) = dst[i].x;
    rhs(i, 1) = dst[i].y;
  }
  const Eigen::MatrixXd sol = solve.lu.solve(rhs);

  // A solvable-looking system can still be numerically useless; reject if the
  // solution does not actually satisfy it.
  const Eigen::MatrixXd resid = solve.L * sol - rhs;
  const double scale = std::max(1.0, rhs.cwiseAbs().maxCoeff());
  if (!(resid.cwiseAbs().maxCoeff() < 1e-6 * scale))
    fail(ErrorCode::DegenerateControlPoints, "fit_tps: solve residual too large");

  TpsTransform t;
  t.src_points = src;
  t.lambda = lambda;
  t.weights.resize(n);
  for (int i = 0; i < n; ++i) t.weights[i] = {sol(i, 0), sol(i, 1)};
  t.affine[0] = {sol(n + 1, 0), sol(n + 2, 0), sol(n, 0)};
  t.affine[1] = {sol(n + 1, 1), sol(n + 2, 1), sol(n, 1)};
  return t;
}

Vec2 apply_tps(const TpsTransform& t, const Vec2& p) {
  double fx = t.affine[0][0] * p.x + t.affine[0][1] * p.y + t.affine[0][2];
  double fy = t.affine[1][0] * p.x + t.affine[1][1] * p.y + t.affine[1][2];
  const size_t n = t.src_points.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2 v = p - t.src_points[i];
    const double u = tps_kernel_r2(v.norm2());
    fx += t.weights[i].x * u;
    fy += t.weights[i].y * u;
  }
  return {fx, fy};
}

PointList apply_tps(const TpsTransform& t, const PointList& pts) {
  PointList out;
  out.reserve(pts.size());
  for (const Vec2& p : pts) out.push_back(apply_tps(t, p));
  return out;
}

Mat2 tps_jacobian(const TpsTransform& t, const Vec2& p) {
  Mat2 J;
  J.a = t.affine[0][0];
  J.b = t.affine[0][1];
  J.c = t.affine[1][0];
  J.d = t.affine[1][1];
  const size_t n = t.src_points.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2 v = p - t.src_points[i];
    const Vec2 g = tps_kernel_grad(v, v.norm2());
    J.a += t.weights[i].x * g.x;
    J.b += t.weights[i].x * g.y;
    J.c += t.weights[i].y * g.x;
    J.d += t.weights[i].y * g.y;
  }
  return J;
}

InvertResult invert_point(const TpsTransform& t, const Vec2& q, const Vec2& guess, double tol,
                          int max_iters) {
  return newton_invert(TpsAsWarp{t}, q, guess, tol, max_iters);
}

TpsTransform invert_tps(const TpsTransform& t, const PointList& probe_grid) {
  if (probe_grid.size() < 3)
    fail(ErrorCode::LengthMismatch, "invert_tps: probe grid needs at least 3 points");
  const PointList mapped = apply_tps(t, probe_grid);
  return fit_tps(mapped, probe_grid, 0.0);
}

Eigen::VectorXd FlowBasis::kernel_vector(const Vec2& p) const {
  const int nn = n();
  Eigen::VectorXd e(nn + 3);
  for (int i = 0; i < nn; ++i) e(i) = tps_kernel_r2((p - controls[i]).norm2());
  e(nn) = 1.0;
  e(nn + 1) = p.x;
  e(nn + 2) = p.y;
  return e;
}

void FlowBasis::kernel_vector_grad(const Vec2& p, Eigen::VectorXd& dx,
                                   Eigen::VectorXd& dy) const {
  const int nn = n();
  dx.resize(nn + 3);
  dy.resize(nn + 3);
  for (int i = 0; i < nn; ++i) {
    const Vec2 v = p - controls[i];
    const Vec2 g = tps_kernel_grad(v, v.norm2());
    dx(i) = g.x;
    dy(i) = g.y;
  }
  dx(nn) = 0.0;
  dx(nn + 1) = 1.0;
  dx(nn + 2) = 0.0;
  dy(nn) = 0.0;
  dy(nn + 1) = 0.0;
  dy(nn + 2) = 1.0;
}

FlowBasis make_flow_basis(const PointList& src_grid, const PointList& sample_points,
                          double lambda) {
  if (src_grid.size() < 3)
    fail(ErrorCode::DegenerateControlPoints, "make_flow_basis: need at least 3 controls");
  FlowBasis basis;
  basis.controls = src_grid;
  basis.lambda = lambda;
  basis.sample_points = sample_points;

  const int n = int(src_grid.size());
  const TpsSolve solve = factor_tps_system(src_grid, lambda, "make_flow_basis");
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 3, n);
  rhs.topLeftCorner(n, n).setIdentity();
  basis.coef_from_targets = solve.lu.solve(rhs);

  const int m = int(sample_points.size());
  basis.sample_rows.resize(m, n);
  for (int k = 0; k < m; ++k)
    basis.sample_rows.row(k) =
        basis.kernel_vector(sample_points[k]).transpose() * basis.coef_from_targets;
  return basis;
}

Eigen::MatrixXd tps_flow_basis(const PointList& src_grid, const PointList& sample_points,
                               double lambda) {
  const FlowBasis basis = make_flow_basis(src_grid, sample_points, lambda);
  const int m = basis.m();
  const int n = basis.n();
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(2 * m, 2 * n);
  for (int k = 0; k < m; ++k)
    for (int i = 0; i < n; ++i) {
      B(2 * k, 2 * i) = basis.sample_rows(k, i);
      B(2 * k + 1, 2 * i + 1) = basis.sample_rows(k, i);
    }
  return B;
}

Vec2 GridWarp::apply(const Vec2& p) const {
  const int n = basis->n();
  const auto& C = basis->controls;
  double sx = cx(n) + cx(n + 1) * p.x + cx(n + 2) * p.y;
  double sy = cy(n) + cy(n + 1) * p.x + cy(n + 2) * p.y;
  for (int i = 0; i < n; ++i) {
    const double u = tps_kernel_r2((p - C[i]).norm2());
    sx += cx(i) * u;
    sy += cy(i) * u;
  }
  return {p.x + sx, p.y + sy};
}

Mat2 GridWarp::jacobian(const Vec2& p) const {
  const int n = basis->n();
  const auto& C = basis->controls;
  double dxx = cx(n + 1), dxy = cx(n + 2);
  double dyx = cy(n + 1), dyy = cy(n + 2);
  for (int i = 0; i < n; ++i) {
    const Vec2 v = p - C[i];
    const Vec2 g = tps_kernel_grad(v, v.norm2());
    dxx += cx(i) * g.x;
    dxy += cx(i) * g.y;
    dyx += cy(i) * g.x;
    dyy += cy(i) * g.y;
  }
  Mat2 J;
  J.a = 1.0 + dxx;
  J.b = dxy;
  J.c = dyx;
  J.d = 1.0 + dyy;
  return J;
}

InvertResult GridWarp::invert(const Vec2& q, const Vec2& guess, double tol,
                              int max_iters) const {
  return newton_invert(*this, q, guess, tol, max_iters);
}

GridWarp compile_grid_warp(const FlowBasis& basis, const Eigen::VectorXd& delta) {
  const int n = basis.n();
  if (delta.size() != 2 * n)
    fail(ErrorCode::LengthMismatch, "compile_grid_warp: delta size must be 2n");
  Eigen::VectorXd dx(n), dy(n);
  for (int i = 0; i < n; ++i) {
    dx(i) = delta(2 * i);
    dy(i) = delta(2 * i + 1);
  }
  GridWarp w;
  w.basis = &basis;
  w.cx = basis.coef_from_targets * dx;
  w.cy = basis.coef_from_targets * dy;
  return w;
}

TpsTransform grid_warp_to_tps(const FlowBasis& basis, const Eigen::VectorXd& delta) {
  const GridWarp w = compile_grid_warp(basis, delta);
  const int n = basis.n();
  TpsTransform t;
  t.src_points = basis.controls;
  t.lambda = basis.lambda;
  t.weights.resize(n);
  for (int i = 0; i < n; ++i) t.weights[i] = {w.cx(i), w.cy(i)};
  t.affine[0] = {1.0 + w.cx(n + 1), w.cx(n + 2), w.cx(n)};
  t.affine[1] = {w.cy(n + 1), 1.0 + w.cy(n + 2), w.cy(n)};
  return t;
}

Raster warp_image_serial(const Raster& img, const TpsTransform& t_inverse, int out_w,
                         int out_h) {
  if (img.empty()) fail(ErrorCode::EmptyImage, "warp_image: empty input");
  if (out_w <= 0 || out_h <= 0) fail(ErrorCode::EmptyImage, "warp_image: empty output size");
  Raster out(out_w, out_h);
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j)
      out.at(i, j) = bilinear_sample(img, warp_output_pixel(img, t_inverse, out_w, out_h, i, j));
  return out;
}

Raster warp_image(const Raster& img, const TpsTransform& t_inverse, int out_w, int out_h) {
  if (img.empty()) fail(ErrorCode::EmptyImage, "warp_image: empty input");
  if (out_w <= 0 || out_h <= 0) fail(ErrorCode::EmptyImage, "warp_image: empty output size");
  Raster out(out_w, out_h);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j)
      out.at(i, j) = bilinear_sample(img, warp_output_pixel(img, t_inverse, out_w, out_h, i, j));
  return out;
}

Raster warp_image_forward(const Raster& img, const TpsTransform& t_forward, int out_w,
                          int out_h) {
  if (img.empty()) fail(ErrorCode::EmptyImage, "warp_image_forward: empty input");
  if (out_w <= 0 || out_h <= 0)
    fail(ErrorCode::EmptyImage, "warp_image_forward: empty output size");
  Raster out(out_w, out_h);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < out_h; ++i) {
    // Warm start each row from the previous pixel's solution; rows are
    // independent so the result does not depend on the thread count.
    Vec2 guess{0.5 / out_w, (i + 0.5) / out_h};
    for (int j = 0; j < out_w; ++j) {
      const Vec2 q = pixel_to_norm({double(j), double(i)}, out_w, out_h);
      const InvertResult inv = invert_point(t_forward, q, guess);
      guess = inv.point;
      out.at(i, j) = bilinear_sample(img, norm_to_pixel(inv.point, img.width, img.height));
    }
  }
  return out;
}

}  // namespace fw
