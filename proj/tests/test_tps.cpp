#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <optional>
#include <random>

#include "doctest.h"
#include "facewarp/tps.hpp"
#include "oracles.hpp"

using fw::PointList;
using fw::Raster;
using fw::TpsTransform;
using fw::Vec2;

namespace {

template <class F>
std::optional<fw::ErrorCode> thrown_code(F&& f) {
  try {
    f();
  } catch (const fw::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

oracle::NaiveTps as_naive(const TpsTransform& t) {
  oracle::NaiveTps n;
  n.src = t.src_points;
  n.w = t.weights;
  n.ax[0] = t.affine[0][2];
  n.ax[1] = t.affine[0][0];
  n.ax[2] = t.affine[0][1];
  n.ay[0] = t.affine[1][2];
  n.ay[1] = t.affine[1][0];
  n.ay[2] = t.affine[1][1];
  return n;
}

TpsTransform mild_tps(std::mt19937_64& rng, double scale, int grid = 5) {
  const PointList src = fw::grid_lattice(grid);
  std::uniform_real_distribution<double> u(-scale, scale);
  PointList dst = src;
  for (auto& p : dst) {
    p.x += u(rng);
    p.y += u(rng);
  }
  return fw::fit_tps(src, dst, 0.0);
}

double max_weight_norm(const TpsTransform& t) {
  double m = 0.0;
  for (const auto& w : t.weights) m = std::max({m, std::abs(w.x), std::abs(w.y)});
  return m;
}

Raster checkerboard(int n) {
  Raster img(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) img.at(i, j) = ((i + j) % 2 == 0) ? 1.0 : 0.0;
  return img;
}

}  // namespace

TEST_CASE("oracle solver sanity") {
  // A = [[2,1,0],[1,3,1],[0,1,2]], x = (1,-1,2) -> b = (1,0,3)
  const std::vector<double> a = {2, 1, 0, 1, 3, 1, 0, 1, 2};
  const std::vector<double> b = {1, 0, 3};
  const auto x = oracle::gauss_solve(a, b);
  CHECK(std::abs(x[0] - 1.0) < 1e-12);
  CHECK(std::abs(x[1] + 1.0) < 1e-12);
  CHECK(std::abs(x[2] - 2.0) < 1e-12);
}

TEST_CASE("kernel value and gradient basics") {
  CHECK(fw::tps_kernel_r2(0.0) == 0.0);
  CHECK(fw::tps_kernel_r2(1.0) == 0.0);
  const double e = std::exp(1.0);
  CHECK(std::abs(fw::tps_kernel_r2(e) - e) < 1e-12);

  const Vec2 g0 = fw::tps_kernel_grad({0, 0}, 0.0);
  CHECK(g0.x == 0.0);
  CHECK(g0.y == 0.0);

  // Central differences on U as a function of position.
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int k = 0; k < 50; ++k) {
    const Vec2 v{u(rng), u(rng)};
    if (v.norm() < 0.05) continue;
    const double h = 1e-6;
    auto f = [&](double x, double y) { return fw::tps_kernel_r2(x * x + y * y); };
    const double fdx = (f(v.x + h, v.y) - f(v.x - h, v.y)) / (2 * h);
    const double fdy = (f(v.x, v.y + h) - f(v.x, v.y - h)) / (2 * h);
    const Vec2 g = fw::tps_kernel_grad(v, v.norm2());
    CHECK(std::abs(g.x - fdx) < 1e-5 * std::max(1.0, std::abs(fdx)));
    CHECK(std::abs(g.y - fdy) < 1e-5 * std::max(1.0, std::abs(fdy)));
  }
}

TEST_CASE("fit reproduces identity and translation with zero bending") {
  const PointList square = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};

  const TpsTransform ident = fw::fit_tps(square, square, 0.0);
  CHECK(max_weight_norm(ident) < 1e-10);
  CHECK(std::abs(ident.affine[0][0] - 1.0) < 1e-10);
  CHECK(std::abs(ident.affine[0][1]) < 1e-10);
  CHECK(std::abs(ident.affine[0][2]) < 1e-10);
  CHECK(std::abs(ident.affine[1][0]) < 1e-10);
  CHECK(std::abs(ident.affine[1][1] - 1.0) < 1e-10);
  CHECK(std::abs(ident.affine[1][2]) < 1e-10);

  PointList shifted = square;
  for (auto& p : shifted) p.x += 0.2;
  const TpsTransform trans = fw::fit_tps(square, shifted, 0.0);
  CHECK(max_weight_norm(trans) < 1e-10);
  CHECK(std::abs(trans.affine[0][0] - 1.0) < 1e-10);
  CHECK(std::abs(trans.affine[0][2] - 0.2) < 1e-10);
  CHECK(std::abs(trans.affine[1][2]) < 1e-10);
}

TEST_CASE("exact affine targets give zero kernel weights") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int trial = 0; trial < 10; ++trial) {
    const PointList src = oracle::random_points(rng, 6, 0.0, 1.0);
    const double a = 1.0 + u(rng) * 0.4, b = u(rng) * 0.4, c = u(rng) * 0.4,
                 d = 1.0 + u(rng) * 0.4, tx = u(rng), ty = u(rng);
    PointList dst(src.size());
    for (size_t i = 0; i < src.size(); ++i)
      dst[i] = {a * src[i].x + b * src[i].y + tx, c * src[i].x + d * src[i].y + ty};
    const TpsTransform t = fw::fit_tps(src, dst, 0.0);
    CHECK(max_weight_norm(t) < 1e-8);
  }
}

TEST_CASE("interpolation matches an independent dense solve") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const PointList src = oracle::random_points(rng, 8, 0.0, 1.0);
    const PointList dst = oracle::random_points(rng, 8, 0.0, 1.0);
    const TpsTransform t = fw::fit_tps(src, dst, 0.0);

    // Interpolation exactness at the controls.
    for (size_t i = 0; i < src.size(); ++i)
      CHECK((fw::apply_tps(t, src[i]) - dst[i]).norm() < 1e-6);

    // Full agreement with the naive solver away from the controls.
    const oracle::NaiveTps ref = oracle::naive_tps_fit(src, dst, 0.0);
    const PointList probes = oracle::random_points(rng, 20, -0.2, 1.2);
    for (const Vec2& p : probes) {
      const Vec2 got = fw::apply_tps(t, p);
      const Vec2 want = oracle::naive_tps_apply(ref, p);
      CHECK((got - want).norm() < 1e-8);
    }
  }
}

TEST_CASE("side conditions hold on random fits") {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    const PointList src = oracle::random_points(rng, 10, 0.0, 1.0);
    const PointList dst = oracle::random_points(rng, 10, 0.0, 1.0);
    const double lambda = trial % 2 == 0 ? 0.0 : 1e-3;
    const TpsTransform t = fw::fit_tps(src, dst, lambda);
    Vec2 sum{0, 0}, sx{0, 0}, sy{0, 0};
    for (size_t i = 0; i < src.size(); ++i) {
      sum += t.weights[i];
      sx += t.weights[i] * src[i].x;
      sy += t.weights[i] * src[i].y;
    }
    for (double v : {sum.x, sum.y, sx.x, sx.y, sy.x, sy.y}) CHECK(std::abs(v) < 1e-8);
  }
}

TEST_CASE("regularization trades residual monotonically") {
  std::mt19937_64 rng(31);
  const PointList src = oracle::random_points(rng, 8, 0.0, 1.0);
  const PointList dst = oracle::random_points(rng, 8, 0.0, 1.0);
  double prev = -1.0;
  for (double lambda : {0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
    const TpsTransform t = fw::fit_tps(src, dst, lambda);
    double resid = 0.0;
    for (size_t i = 0; i < src.size(); ++i)
      resid = std::max(resid, (fw::apply_tps(t, src[i]) - dst[i]).norm());
    CHECK(resid >= prev - 1e-12);
    prev = resid;
  }
  CHECK(prev > 1e-3);  // large lambda really does stop interpolating
}

TEST_CASE("degenerate and mismatched inputs are rejected") {
  const PointList line = {{0, 0}, {0.3, 0.3}, {0.6, 0.6}, {1, 1}};
  CHECK(thrown_code([&] { fw::fit_tps(line, line, 0.0); }) ==
        fw::ErrorCode::DegenerateControlPoints);

  const PointList dup = {{0.2, 0.2}, {0.2, 0.2}, {0.7, 0.1}, {0.4, 0.9}};
  CHECK(thrown_code([&] { fw::fit_tps(dup, dup, 0.0); }) ==
        fw::ErrorCode::DegenerateControlPoints);

  const PointList two = {{0, 0}, {1, 1}};
  CHECK(thrown_code([&] { fw::fit_tps(two, two, 0.0); }) == fw::ErrorCode::LengthMismatch);

  const PointList three = {{0, 0}, {1, 0}, {0, 1}};
  const PointList four = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  CHECK(thrown_code([&] { fw::fit_tps(three, four, 0.0); }) == fw::ErrorCode::LengthMismatch);
  CHECK(thrown_code([&] { fw::fit_tps(four, four, -1.0); }) == fw::ErrorCode::InvalidConfig);
}

TEST_CASE("apply matches naive kernel sum on a handcrafted transform") {
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  TpsTransform t;
  t.src_points = oracle::random_points(rng, 7, 0.0, 1.0);
  t.weights.resize(7);
  for (auto& w : t.weights) w = {u(rng), u(rng)};
  t.affine[0] = {1.0 + u(rng), u(rng), u(rng)};
  t.affine[1] = {u(rng), 1.0 + u(rng), u(rng)};

  const oracle::NaiveTps ref = as_naive(t);
  for (const Vec2& p : oracle::random_points(rng, 50, -0.5, 1.5)) {
    const Vec2 got = fw::apply_tps(t, p);
    const Vec2 want = oracle::naive_tps_apply(ref, p);
    CHECK((got - want).norm() < 1e-10);
  }

  const Vec2 q = fw::apply_tps(TpsTransform::identity(), Vec2{0.3, 0.7});
  CHECK(q.x == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(q.y == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("jacobian matches central differences") {
  std::mt19937_64 rng(41);
  const TpsTransform t = mild_tps(rng, 0.05);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  const double h = 1e-6;
  for (int k = 0; k < 30; ++k) {
    const Vec2 p{u(rng), u(rng)};
    const fw::Mat2 J = fw::tps_jacobian(t, p);
    const Vec2 dx = (fw::apply_tps(t, {p.x + h, p.y}) - fw::apply_tps(t, {p.x - h, p.y})) / (2 * h);
    const Vec2 dy = (fw::apply_tps(t, {p.x, p.y + h}) - fw::apply_tps(t, {p.x, p.y - h})) / (2 * h);
    CHECK(std::abs(J.a - dx.x) < 1e-5);
    CHECK(std::abs(J.c - dx.y) < 1e-5);
    CHECK(std::abs(J.b - dy.x) < 1e-5);
    CHECK(std::abs(J.d - dy.y) < 1e-5);
  }
}

TEST_CASE("newton inversion recovers preimages") {
  std::mt19937_64 rng(43);
  const TpsTransform t = mild_tps(rng, 0.04);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  for (int k = 0; k < 50; ++k) {
    const Vec2 p{u(rng), u(rng)};
    const Vec2 q = fw::apply_tps(t, p);
    const fw::InvertResult res = fw::invert_point(t, q, {0.5, 0.5});
    CHECK(res.ok);
    CHECK((res.point - p).norm() < 1e-9);
  }
}

TEST_CASE("probe grid inversion round trips within half a pixel") {
  const PointList probe = fw::grid_lattice(5);
  const PointList held_out = fw::grid_lattice(9);

  TpsTransform ident = TpsTransform::identity();
  const TpsTransform ident_inv = fw::invert_tps(ident, probe);
  for (const Vec2& p : held_out) CHECK((fw::apply_tps(ident_inv, p) - p).norm() < 1e-8);

  TpsTransform shift = TpsTransform::identity();
  shift.affine[0][2] = 0.07;
  shift.affine[1][2] = -0.03;
  const TpsTransform shift_inv = fw::invert_tps(shift, probe);
  for (const Vec2& p : held_out) {
    const Vec2 want{p.x - 0.07, p.y + 0.03};
    CHECK((fw::apply_tps(shift_inv, p) - want).norm() < 1e-8);
  }

  // "Mild" here means control displacements up to 1% of the frame; a 5x5
  // probe refit cannot represent the inverse of wilder warps this tightly.
  std::mt19937_64 rng(47);
  const double px_tol = 0.5 / 224.0;
  for (int trial = 0; trial < 10; ++trial) {
    const TpsTransform t = mild_tps(rng, 0.01);
    const TpsTransform inv = fw::invert_tps(t, probe);
    double worst = 0.0;
    for (const Vec2& p : held_out)
      worst = std::max(worst, (fw::apply_tps(inv, fw::apply_tps(t, p)) - p).norm());
    CHECK(worst < px_tol);
  }
}

TEST_CASE("flow basis matches fit then apply") {
  const PointList src = fw::grid_lattice(4);
  const PointList samples = fw::grid_centers(6);
  const int n = int(src.size());
  const int m = int(samples.size());
  const Eigen::MatrixXd B = fw::tps_flow_basis(src, samples, 0.0);
  REQUIRE(B.rows() == 2 * m);
  REQUIRE(B.cols() == 2 * n);

  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> u(-0.05, 0.05);

  // d == src -> zero flow; d == src + c -> flow c everywhere.
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(2 * n);
  CHECK((B * zero).cwiseAbs().maxCoeff() == 0.0);
  Eigen::VectorXd shift(2 * n);
  for (int i = 0; i < n; ++i) {
    shift(2 * i) = 0.03;
    shift(2 * i + 1) = -0.02;
  }
  const Eigen::VectorXd flow_c = B * shift;
  for (int k = 0; k < m; ++k) {
    CHECK(std::abs(flow_c(2 * k) - 0.03) < 1e-9);
    CHECK(std::abs(flow_c(2 * k + 1) + 0.02) < 1e-9);
  }

  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd delta(2 * n);
    for (int i = 0; i < 2 * n; ++i) delta(i) = u(rng);
    PointList dst = src;
    for (int i = 0; i < n; ++i) {
      dst[i].x += delta(2 * i);
      dst[i].y += delta(2 * i + 1);
    }
    const TpsTransform t = fw::fit_tps(src, dst, 0.0);
    const Eigen::VectorXd flow = B * delta;
    for (int k = 0; k < m; ++k) {
      const Vec2 offset = fw::apply_tps(t, samples[k]) - samples[k];
      CHECK(std::abs(flow(2 * k) - offset.x) < 1e-8);
      CHECK(std::abs(flow(2 * k + 1) - offset.y) < 1e-8);
    }
  }
}

TEST_CASE("grid warp agrees with its equivalent fitted transform") {
  const PointList src = fw::grid_lattice(4);
  const PointList samples = fw::grid_centers(5);
  const fw::FlowBasis basis = fw::make_flow_basis(src, samples, 0.0);

  std::mt19937_64 rng(59);
  std::uniform_real_distribution<double> u(-0.04, 0.04);
  Eigen::VectorXd delta(2 * basis.n());
  for (int i = 0; i < delta.size(); ++i) delta(i) = u(rng);

  const fw::GridWarp w = fw::compile_grid_warp(basis, delta);
  const TpsTransform t = fw::grid_warp_to_tps(basis, delta);

  // Same map three ways: compiled warp, equivalent transform, refit from scratch.
  PointList dst = src;
  for (int i = 0; i < basis.n(); ++i) {
    dst[i].x += delta(2 * i);
    dst[i].y += delta(2 * i + 1);
  }
  const TpsTransform refit = fw::fit_tps(src, dst, 0.0);

  for (const Vec2& p : oracle::random_points(rng, 30, 0.0, 1.0)) {
    const Vec2 a = w.apply(p);
    const Vec2 b = fw::apply_tps(t, p);
    const Vec2 c = fw::apply_tps(refit, p);
    CHECK((a - b).norm() < 1e-12);
    CHECK((a - c).norm() < 1e-9);
  }

  // Jacobian against central differences, then Newton round trip.
  std::uniform_real_distribution<double> ui(0.1, 0.9);
  const double h = 1e-6;
  for (int k = 0; k < 20; ++k) {
    const Vec2 p{ui(rng), ui(rng)};
    const fw::Mat2 J = w.jacobian(p);
    const Vec2 dx = (w.apply({p.x + h, p.y}) - w.apply({p.x - h, p.y})) / (2 * h);
    const Vec2 dy = (w.apply({p.x, p.y + h}) - w.apply({p.x, p.y - h})) / (2 * h);
    CHECK(std::abs(J.a - dx.x) < 1e-5);
    CHECK(std::abs(J.c - dx.y) < 1e-5);
    CHECK(std::abs(J.b - dy.x) < 1e-5);
    CHECK(std::abs(J.d - dy.y) < 1e-5);

    const Vec2 q = w.apply(p);
    const fw::InvertResult res = w.invert(q, {0.5, 0.5});
    CHECK(res.ok);
    CHECK((res.point - p).norm() < 1e-9);
  }
}

TEST_CASE("bilinear sampler interpolates and differentiates") {
  Raster flat(5, 5, 0.42);
  const auto center = fw::bilinear_sample_with_grad(flat, {2.0, 2.0});
  CHECK(center.value == doctest::Approx(0.42).epsilon(1e-12));
  CHECK(center.grad.x == 0.0);
  CHECK(center.grad.y == 0.0);

  Raster ramp(8, 6);
  for (int i = 0; i < ramp.height; ++i)
    for (int j = 0; j < ramp.width; ++j) ramp.at(i, j) = double(j);
  const auto mid = fw::bilinear_sample_with_grad(ramp, {3.3, 2.6});
  CHECK(mid.value == doctest::Approx(3.3).epsilon(1e-12));
  CHECK(mid.grad.x == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(mid.grad.y) < 1e-12);

  CHECK(fw::bilinear_sample(ramp, {-2.0, 1.0}) == 0.0);
  CHECK(fw::bilinear_sample(ramp, {3.0, 50.0}) == 0.0);

  // Finite-difference gate over random interior points, away from cell edges.
  std::mt19937_64 rng(61);
  Raster img(12, 10);
  std::uniform_real_distribution<double> uv(0.0, 1.0);
  for (double& v : img.data) v = uv(rng);
  std::uniform_real_distribution<double> ux(1.0, img.width - 2.0);
  std::uniform_real_distribution<double> uy(1.0, img.height - 2.0);
  const double eps = 1e-4, margin = 1e-3;
  int tested = 0;
  while (tested < 1000) {
    const Vec2 p{ux(rng), uy(rng)};
    if (oracle::near_cell_boundary(p, margin)) continue;
    ++tested;
    const auto got = fw::bilinear_sample_with_grad(img, p);
    CHECK(got.value == doctest::Approx(oracle::naive_bilinear(img, p)).epsilon(1e-12));
    const double fdx =
        (fw::bilinear_sample(img, {p.x + eps, p.y}) - fw::bilinear_sample(img, {p.x - eps, p.y})) /
        (2 * eps);
    const double fdy =
        (fw::bilinear_sample(img, {p.x, p.y + eps}) - fw::bilinear_sample(img, {p.x, p.y - eps})) /
        (2 * eps);
    CHECK(std::abs(got.grad.x - fdx) < 1e-4 * std::max(1.0, std::abs(fdx)));
    CHECK(std::abs(got.grad.y - fdy) < 1e-4 * std::max(1.0, std::abs(fdy)));
  }
}

TEST_CASE("image warps match the brute force path") {
  const Raster img = checkerboard(16);

  // Identity, exactly.
  const Raster same = fw::warp_image(img, TpsTransform::identity(), 16, 16);
  for (size_t i = 0; i < img.size(); ++i) CHECK(same.data[i] == img.data[i]);

  // Inverse map shifts sampling one pixel left -> content moves one column right.
  TpsTransform shift = TpsTransform::identity();
  shift.affine[0][2] = -1.0 / 16.0;
  const Raster moved = fw::warp_image(img, shift, 16, 16);
  for (int i = 0; i < 16; ++i) {
    CHECK(moved.at(i, 0) == 0.0);
    for (int j = 1; j < 16; ++j) CHECK(moved.at(i, j) == img.at(i, j - 1));
  }

  // Random mild warp against a per-pixel oracle built from naive pieces.
  std::mt19937_64 rng(67);
  const TpsTransform t = mild_tps(rng, 0.03);
  const oracle::NaiveTps ref = as_naive(t);
  const Raster out = fw::warp_image(img, t, 16, 16);
  const Raster out_serial = fw::warp_image_serial(img, t, 16, 16);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      const Vec2 q{(j + 0.5) / 16.0, (i + 0.5) / 16.0};
      const Vec2 s = oracle::naive_tps_apply(ref, q);
      const double want =
          oracle::naive_bilinear(img, {s.x * img.width - 0.5, s.y * img.height - 0.5});
      CHECK(out.at(i, j) == doctest::Approx(want).epsilon(1e-10));
      CHECK(out.at(i, j) == out_serial.at(i, j));  // bitwise
    }

  CHECK(thrown_code([&] { fw::warp_image(Raster{}, t, 8, 8); }) == fw::ErrorCode::EmptyImage);
}

TEST_CASE("forward warping solves the inverse map per pixel") {
  const Raster img = checkerboard(16);

  // Forward translation by +1/16 moves content right; compare with the
  // backward path fed the exact inverse.
  TpsTransform fwd = TpsTransform::identity();
  fwd.affine[0][2] = 1.0 / 16.0;
  TpsTransform bwd = TpsTransform::identity();
  bwd.affine[0][2] = -1.0 / 16.0;
  const Raster a = fw::warp_image_forward(img, fwd, 16, 16);
  const Raster b = fw::warp_image(img, bwd, 16, 16);
  for (size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data[i] - b.data[i]) < 1e-9);

  // Warm-started solutions must match fresh per-pixel Newton solves.
  std::mt19937_64 rng(71);
  const TpsTransform t = mild_tps(rng, 0.03);
  const Raster out = fw::warp_image_forward(img, t, 16, 16);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      const Vec2 q{(j + 0.5) / 16.0, (i + 0.5) / 16.0};
      const fw::InvertResult inv = fw::invert_point(t, q, {0.5, 0.5});
      REQUIRE(inv.ok);
      const double want =
          fw::bilinear_sample(img, fw::norm_to_pixel(inv.point, img.width, img.height));
      CHECK(out.at(i, j) == doctest::Approx(want).epsilon(1e-9));
    }
}
