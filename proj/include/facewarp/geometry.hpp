#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "facewarp/error.hpp"

namespace fw {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {}

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator/(double s) const { return {x / s, y / s}; }
  Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  Vec2& operator-=(const Vec2& o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }

  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm2() const { return x * x + y * y; }
  double norm() const { return std::sqrt(norm2()); }
};

inline Vec2 operator*(double s, const Vec2& v) { return v * s; }

using PointList = std::vector<Vec2>;

// 2x2 matrix, row major.
struct Mat2 {
  double a = 1.0, b = 0.0, c = 0.0, d = 1.0;

  Vec2 apply(const Vec2& v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }
  double det() const { return a * d - b * c; }

  // Solves M * s = r. Caller checks det() first.
  Vec2 solve(const Vec2& r) const {
    const double inv = 1.0 / det();
    return {(d * r.x - b * r.y) * inv, (-c * r.x + a * r.y) * inv};
  }
  Vec2 apply_transposed(const Vec2& v) const { return {a * v.x + c * v.y, b * v.x + d * v.y}; }
};

// Single channel raster, row major, values nominally in [0,1].
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Raster() = default;
  Raster(int w, int h, double fill = 0.0) : width(w), height(h), data(size_t(w) * size_t(h), fill) {}

  double& at(int row, int col) { return data[size_t(row) * width + col]; }
  double at(int row, int col) const { return data[size_t(row) * width + col]; }
  bool empty() const { return width <= 0 || height <= 0; }
  size_t size() const { return data.size(); }
};

struct SampleValueGrad {
  double value = 0.0;
  Vec2 grad;  // d value / d p, in pixel units
};

// Bilinear interpolation with zero padding outside the pixel lattice.
// p is in continuous pixel coordinates: pixel (row i, col j) sits at (x=j, y=i).
inline double bilinear_sample(const Raster& img, const Vec2& p) {
  const int x0 = int(std::floor(p.x));
  const int y0 = int(std::floor(p.y));
  const double fx = p.x - x0;
  const double fy = p.y - y0;
  auto tap = [&](int r, int c) -> double {
    if (r < 0 || c < 0 || r >= img.height || c >= img.width) return 0.0;
    return img.at(r, c);
  };
  const double v00 = tap(y0, x0), v01 = tap(y0, x0 + 1);
  const double v10 = tap(y0 + 1, x0), v11 = tap(y0 + 1, x0 + 1);
  return (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy;
}

// Value plus the analytic gradient of the interpolant with respect to p.
// The gradient is exact inside each unit cell; it jumps across cell edges.
inline SampleValueGrad bilinear_sample_with_grad(const Raster& img, const Vec2& p) {
  const int x0 = int(std::floor(p.x));
  const int y0 = int(std::floor(p.y));
  const double fx = p.x - x0;
  const double fy = p.y - y0;
  auto tap = [&](int r, int c) -> double {
    if (r < 0 || c < 0 || r >= img.height || c >= img.width) return 0.0;
    return img.at(r, c);
  };
  const double v00 = tap(y0, x0), v01 = tap(y0, x0 + 1);
  const double v10 = tap(y0 + 1, x0), v11 = tap(y0 + 1, x0 + 1);
  SampleValueGrad out;
  out.value = (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy;
  out.grad.x = (v01 - v00) * (1 - fy) + (v11 - v10) * fy;
  out.grad.y = (v10 - v00) * (1 - fx) + (v11 - v01) * fx;
  return out;
}

// n x n lattice over [0,1]^2 with points at i/(n-1), row major. Control grids use this.
PointList grid_lattice(int n);

// n x n cell centers over [0,1]^2 at (i+0.5)/n. Flow sample grids use this.
PointList grid_centers(int n);

// Normalized coords in [0,1]^2 <-> continuous pixel coords for a w x h raster.
inline Vec2 norm_to_pixel(const Vec2& p, int w, int h) { return {p.x * w - 0.5, p.y * h - 0.5}; }
inline Vec2 pixel_to_norm(const Vec2& p, int w, int h) {
  return {(p.x + 0.5) / w, (p.y + 0.5) / h};
}

}  // namespace fw
