#include "facewarp/geometry.hpp"

namespace fw {

PointList grid_lattice(int n) {
  if (n < 2) fail(ErrorCode::InvalidConfig, "grid_lattice needs n >= 2");
  PointList pts;
  pts.reserve(size_t(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      pts.push_back({double(j) / (n - 1), double(i) / (n - 1)});
  return pts;
}

PointList grid_centers(int n) {
  if (n < 1) fail(ErrorCode::InvalidConfig, "grid_centers needs n >= 1");
  PointList pts;
  pts.reserve(size_t(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      pts.push_back({(j + 0.5) / n, (i + 0.5) / n});
  return pts;
}

}  // namespace fw
