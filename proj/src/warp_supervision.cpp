#include "facewarp/warp_supervision.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

namespace fw {

namespace {

bool points_near_colinear(const PointList& pts, double tol) {
  const int n = int(pts.size());
  if (n < 3) return true;
  double longest2 = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) longest2 = std::max(longest2, (pts[i] - pts[j]).norm2());
  if (longest2 <= 0.0) return true;
  double max_twice_area = 0.0;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      for (int c = b + 1; c < n; ++c)
        max_twice_area =
            std::max(max_twice_area, std::abs((pts[b] - pts[a]).cross(pts[c] - pts[a])));
  return max_twice_area / longest2 < tol;
}

KeypointSet mirror_keypoints_normalized(const KeypointSet& kp) {
  KeypointSet out = kp;
  for (int k = 0; k < kNumKeypoints; ++k) out.pts[k] = {1.0 - kp.pts[k].x, kp.pts[k].y};
  std::swap(out.pts[kLeftEye], out.pts[kRightEye]);
  std::swap(out.visible[kLeftEye], out.visible[kRightEye]);
  std::swap(out.pts[kLeftMouth], out.pts[kRightMouth]);
  std::swap(out.visible[kLeftMouth], out.visible[kRightMouth]);
  return out;
}

KeypointSet normalized_keypoints(const Sample& s) {
  KeypointSet out = s.keypoints;
  const double inv_w = 1.0 / s.pixels.width;
  const double inv_h = 1.0 / s.pixels.height;
  for (auto& p : out.pts) p = {p.x * inv_w, p.y * inv_h};
  return out;
}

template <class T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(std::ifstream& in, const std::string& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail(ErrorCode::ParseError, path + ": truncated");
  return v;
}

}  // namespace

bool keypoints_near_colinear(const KeypointSet& kp, double tol) {
  PointList pts;
  for (int k = 0; k < kNumKeypoints; ++k)
    if (kp.visible[k]) pts.push_back(kp.pts[k]);
  return points_near_colinear(pts, tol);
}

TpsTransform gt_warp(const KeypointSet& animal_kp, const KeypointSet& human_kp) {
  PointList src, dst;
  for (int k = 0; k < kNumKeypoints; ++k)
    if (animal_kp.visible[k] && human_kp.visible[k]) {
      src.push_back(animal_kp.pts[k]);
      dst.push_back(human_kp.pts[k]);
    }
  if (src.size() < 3)
    fail(ErrorCode::InsufficientCorrespondences,
         "gt_warp: " + std::to_string(src.size()) + " mutually visible keypoints");
  if (points_near_colinear(src, 0.02) || points_near_colinear(dst, 0.02))
    fail(ErrorCode::DegenerateControlPoints, "gt_warp: correspondences near colinear");
  return fit_tps(src, dst, 0.0);
}

FlowField make_flow_target(const TpsTransform& t, const PointList& grid) {
  FlowField f;
  f.sample_points = grid;
  f.offsets.reserve(grid.size());
  for (const Vec2& p : grid) f.offsets.push_back(apply_tps(t, p) - p);
  return f;
}

double warp_loss(const FlowField& pred, const std::vector<FlowField>& targets,
                 FlowField* d_pred) {
  if (targets.empty()) fail(ErrorCode::LengthMismatch, "warp_loss: no targets");
  const size_t m = pred.sample_points.size();
  if (pred.offsets.size() != m) fail(ErrorCode::GridMismatch, "warp_loss: ragged prediction");
  for (const FlowField& t : targets) {
    if (t.sample_points.size() != m || t.offsets.size() != m)
      fail(ErrorCode::GridMismatch, "warp_loss: target grid size mismatch");
    for (size_t i = 0; i < m; ++i)
      if (t.sample_points[i].x != pred.sample_points[i].x ||
          t.sample_points[i].y != pred.sample_points[i].y)
        fail(ErrorCode::GridMismatch, "warp_loss: targets on a different grid");
  }

  const double inv_k = 1.0 / double(targets.size());
  double loss = 0.0;
  if (d_pred) {
    d_pred->sample_points = pred.sample_points;
    d_pred->offsets.assign(m, {0.0, 0.0});
  }
  for (const FlowField& t : targets)
    for (size_t i = 0; i < m; ++i) {
      const Vec2 diff = pred.offsets[i] - t.offsets[i];
      loss += diff.norm2() * inv_k;
      if (d_pred) d_pred->offsets[i] += diff * (2.0 * inv_k);
    }
  return loss;
}

WarpTargetBuild build_warp_targets(const std::vector<Sample>& animals,
                                   const std::vector<Sample>& humans,
                                   const std::vector<MatchSet>& matches,
                                   const PointList& sample_grid) {
  WarpTargetBuild out;
  for (const MatchSet& m : matches) {
    if (m.animal_index < 0 || m.animal_index >= int(animals.size()))
      fail(ErrorCode::ValidationError, "build_warp_targets: match with bad animal index");
    const Sample& animal = animals[m.animal_index];
    const KeypointSet akp = normalized_keypoints(animal);

    WarpTarget wt;
    wt.animal_id = animal.provenance;
    for (size_t j = 0; j < m.human_indices.size(); ++j) {
      const Sample& human = humans.at(m.human_indices[j]);
      KeypointSet hkp = normalized_keypoints(human);
      if (m.mirrored[j]) hkp = mirror_keypoints_normalized(hkp);
      try {
        TpsTransform t = gt_warp(akp, hkp);
        wt.flows.push_back(make_flow_target(t, sample_grid));
        wt.gt_transforms.push_back(std::move(t));
      } catch (const Error& e) {
        out.diagnostics.push_back(wt.animal_id + " x " + human.provenance + ": " + e.what());
      }
    }
    if (wt.flows.empty()) {
      out.diagnostics.push_back(wt.animal_id + ": no usable neighbor, skipped");
      continue;
    }
    out.targets.push_back(std::move(wt));
    out.animal_indices.push_back(m.animal_index);
  }
  return out;
}

void write_warp_targets(const std::string& bin_path, const std::string& manifest_path,
                        const std::vector<WarpTarget>& targets, int k_configured,
                        int sample_grid_n) {
  std::ofstream out(bin_path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + bin_path);
  out.write("FWWT0001", 8);
  put<uint32_t>(out, uint32_t(targets.size()));
  put<uint32_t>(out, uint32_t(k_configured));
  put<uint32_t>(out, uint32_t(sample_grid_n));
  const size_t m_expected = size_t(sample_grid_n) * size_t(sample_grid_n);
  for (const WarpTarget& wt : targets) {
    put<uint32_t>(out, uint32_t(wt.animal_id.size()));
    out.write(wt.animal_id.data(), std::streamsize(wt.animal_id.size()));
    put<uint32_t>(out, uint32_t(wt.flows.size()));
    for (const FlowField& f : wt.flows) {
      if (f.offsets.size() != m_expected)
        fail(ErrorCode::GridMismatch, "write_warp_targets: flow not on the declared grid");
      for (const Vec2& v : f.offsets) {
        put<double>(out, v.x);
        put<double>(out, v.y);
      }
    }
  }

  std::ofstream man(manifest_path);
  if (!man) fail(ErrorCode::IoError, "cannot write " + manifest_path);
  man << "warp_targets" << "\n";
  man << "count " << targets.size() << "\n";
  man << "k " << k_configured << "\n";
  man << "sample_grid " << sample_grid_n << "x" << sample_grid_n << "\n";
  for (const WarpTarget& wt : targets)
    man << wt.animal_id << " neighbors=" << wt.flows.size() << "\n";
}

std::vector<WarpTarget> read_warp_targets(const std::string& bin_path) {
  std::ifstream in(bin_path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + bin_path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != "FWWT0001")
    fail(ErrorCode::ParseError, bin_path + ": bad magic");
  const uint32_t count = take<uint32_t>(in, bin_path);
  (void)take<uint32_t>(in, bin_path);  // configured k, informational
  const uint32_t gs = take<uint32_t>(in, bin_path);
  if (gs < 1 || gs > 1024) fail(ErrorCode::ParseError, bin_path + ": bad grid size");
  const PointList grid = grid_centers(int(gs));

  std::vector<WarpTarget> out;
  out.reserve(count);
  for (uint32_t a = 0; a < count; ++a) {
    WarpTarget wt;
    const uint32_t id_len = take<uint32_t>(in, bin_path);
    if (id_len > 4096) fail(ErrorCode::ParseError, bin_path + ": id too long");
    wt.animal_id.resize(id_len);
    in.read(wt.animal_id.data(), id_len);
    if (!in) fail(ErrorCode::ParseError, bin_path + ": truncated");
    const uint32_t k = take<uint32_t>(in, bin_path);
    if (k > 4096) fail(ErrorCode::ParseError, bin_path + ": implausible neighbor count");
    for (uint32_t j = 0; j < k; ++j) {
      FlowField f;
      f.sample_points = grid;
      f.offsets.resize(grid.size());
      for (Vec2& v : f.offsets) {
        v.x = take<double>(in, bin_path);
        v.y = take<double>(in, bin_path);
      }
      wt.flows.push_back(std::move(f));
    }
    out.push_back(std::move(wt));
  }
  return out;
}

}  // namespace fw
