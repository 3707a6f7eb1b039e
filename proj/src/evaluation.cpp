#include "facewarp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "facewarp/error.hpp"
#include "json.hpp"

namespace fw {

KeypointSet transfer_back(const Eigen::VectorXd& pred10, const TpsTransform& t) {
  if (pred10.size() != 2 * kNumKeypoints)
    fail(ErrorCode::LengthMismatch,
         "transfer_back: expected " + std::to_string(2 * kNumKeypoints) +
             " coordinates, got " + std::to_string(pred10.size()));
  const TpsTransform inv = invert_tps(t, grid_lattice(5));
  KeypointSet out;
  for (int k = 0; k < kNumKeypoints; ++k)
    out.pts[size_t(k)] = apply_tps(inv, {pred10[2 * k], pred10[2 * k + 1]});
  return out;
}

namespace {

void check_metric_inputs(const std::vector<KeypointSet>& preds,
                         const std::vector<KeypointSet>& gts,
                         const std::vector<double>& bbox_sizes) {
  if (preds.size() != gts.size() || preds.size() != bbox_sizes.size())
    fail(ErrorCode::LengthMismatch,
         "failure metric: " + std::to_string(preds.size()) + " predictions, " +
             std::to_string(gts.size()) + " ground truths, " +
             std::to_string(bbox_sizes.size()) + " bbox sizes");
  for (size_t i = 0; i < bbox_sizes.size(); ++i)
    if (!(bbox_sizes[i] > 0.0))
      fail(ErrorCode::ValidationError,
           "failure metric: bbox size " + std::to_string(bbox_sizes[i]) +
               " at instance " + std::to_string(i) + " is not positive");
}

// The comparison everything below agrees on: a keypoint fails when its error
// strictly exceeds thresh * bbox. Exact hits pass.
inline bool fails_at(double dist, double bbox, double thresh) {
  return dist > thresh * bbox;
}

}  // namespace

EvalResult failure_rate(const std::vector<KeypointSet>& preds,
                        const std::vector<KeypointSet>& gts,
                        const std::vector<double>& bbox_sizes, double thresh) {
  check_metric_inputs(preds, gts, bbox_sizes);
  if (!(thresh >= 0.0))
    fail(ErrorCode::InvalidConfig, "failure metric: negative threshold");
  EvalResult r;
  for (size_t i = 0; i < preds.size(); ++i) {
    for (int k = 0; k < kNumKeypoints; ++k) {
      if (!gts[i].visible[size_t(k)]) continue;  // unannotated, not scored
      ++r.evaluated[size_t(k)];
      const double dx = preds[i].pts[size_t(k)].x - gts[i].pts[size_t(k)].x;
      const double dy = preds[i].pts[size_t(k)].y - gts[i].pts[size_t(k)].y;
      if (fails_at(std::sqrt(dx * dx + dy * dy), bbox_sizes[i], thresh))
        ++r.failed[size_t(k)];
    }
  }
  for (int k = 0; k < kNumKeypoints; ++k)
    r.per_keypoint_failure[size_t(k)] =
        r.evaluated[size_t(k)] > 0
            ? double(r.failed[size_t(k)]) / double(r.evaluated[size_t(k)])
            : 0.0;
  r.average_failure =
      r.evaluated_total() > 0 ? double(r.failed_total()) / double(r.evaluated_total()) : 0.0;
  return r;
}

std::vector<std::pair<double, double>> threshold_sweep(const std::vector<KeypointSet>& preds,
                                                       const std::vector<KeypointSet>& gts,
                                                       const std::vector<double>& bbox_sizes,
                                                       const std::vector<double>& thresholds) {
  check_metric_inputs(preds, gts, bbox_sizes);
  if (thresholds.empty())
    fail(ErrorCode::InvalidConfig, "threshold sweep: empty threshold list");
  for (size_t i = 0; i + 1 < thresholds.size(); ++i)
    if (thresholds[i] > thresholds[i + 1])
      fail(ErrorCode::InvalidConfig, "threshold sweep: thresholds not sorted ascending");
  if (!(thresholds.front() >= 0.0))
    fail(ErrorCode::InvalidConfig, "threshold sweep: negative threshold");

  std::vector<std::pair<double, double>> errs;  // (dist, bbox) per scored keypoint
  for (size_t i = 0; i < preds.size(); ++i) {
    for (int k = 0; k < kNumKeypoints; ++k) {
      if (!gts[i].visible[size_t(k)]) continue;
      const double dx = preds[i].pts[size_t(k)].x - gts[i].pts[size_t(k)].x;
      const double dy = preds[i].pts[size_t(k)].y - gts[i].pts[size_t(k)].y;
      errs.emplace_back(std::sqrt(dx * dx + dy * dy), bbox_sizes[i]);
    }
  }
  std::vector<std::pair<double, double>> curve;
  curve.reserve(thresholds.size());
  for (double t : thresholds) {
    int failed = 0;
    for (const auto& [dist, bbox] : errs)
      if (fails_at(dist, bbox, t)) ++failed;
    curve.emplace_back(t, errs.empty() ? 0.0 : double(failed) / double(errs.size()));
  }
  return curve;
}

void write_eval_json(const std::string& path, const EvalResult& r) {
  nlohmann::ordered_json doc;
  doc["average_failure"] = r.average_failure;
  doc["evaluated_total"] = r.evaluated_total();
  doc["failed_total"] = r.failed_total();
  doc["per_keypoint"] = nlohmann::ordered_json::array();
  for (int k = 0; k < kNumKeypoints; ++k) {
    nlohmann::ordered_json row;
    row["name"] = kKeypointNames[size_t(k)];
    row["failure"] = r.per_keypoint_failure[size_t(k)];
    row["evaluated"] = r.evaluated[size_t(k)];
    row["failed"] = r.failed[size_t(k)];
    doc["per_keypoint"].push_back(row);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  out << doc.dump(2) << "\n";
  if (!out) fail(ErrorCode::IoError, "write failed: " + path);
}

void write_threshold_curve(const std::string& path,
                           const std::vector<std::pair<double, double>>& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  out << "threshold,failure\n" << std::setprecision(17);
  for (const auto& [t, f] : curve) out << t << "," << f << "\n";
  if (!out) fail(ErrorCode::IoError, "write failed: " + path);
}

void write_k_sweep_csv(const std::string& path,
                       const std::vector<std::pair<int, EvalResult>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  out << "k,avg_failure\n" << std::setprecision(17);
  for (const auto& [k, r] : rows) out << k << "," << r.average_failure << "\n";
  if (!out) fail(ErrorCode::IoError, "write failed: " + path);
}

// ---------------------------------------------------------------------------
// Pipeline glue.
// ---------------------------------------------------------------------------

MatchOutcome match_samples(const std::vector<Sample>& animals, const std::vector<Sample>& humans,
                           int k, bool mirror_profiles, double colinear_tol) {
  MatchOutcome out;
  std::vector<PoseAngle> pool;
  std::vector<int> pool_map;  // pool slot -> humans index
  pool.reserve(humans.size());
  for (size_t h = 0; h < humans.size(); ++h) {
    if (keypoints_near_colinear(humans[h].keypoints, colinear_tol)) {
      out.diagnostics.push_back("human " + humans[h].provenance +
                                ": keypoints colinear or under-annotated, left out of the pool");
      continue;
    }
    try {
      const PoseAngle a = compute_angle(humans[h].keypoints);
      pool.push_back(a);
      pool_map.push_back(int(h));
      ++out.pool_by_variant[size_t(a.variant)];
    } catch (const Error& e) {
      out.diagnostics.push_back("human " + humans[h].provenance + ": " + e.what() +
                                ", left out of the pool");
    }
  }
  out.pool_size = int(pool.size());

  std::vector<PoseAngle> live;
  std::vector<int> live_map;  // live slot -> animals index
  out.matches.resize(animals.size());
  for (size_t a = 0; a < animals.size(); ++a) {
    out.matches[a].animal_index = int(a);
    try {
      live.push_back(compute_angle(animals[a].keypoints));
      live_map.push_back(int(a));
    } catch (const Error& e) {
      out.diagnostics.push_back("animal " + animals[a].provenance + ": " + e.what() +
                                ", unmatched");
    }
  }

  if (!pool.empty() && !live.empty()) {
    std::vector<MatchSet> ms = match_all(live, pool, k, mirror_profiles);
    for (size_t j = 0; j < ms.size(); ++j) {
      MatchSet m = std::move(ms[j]);
      m.animal_index = live_map[j];
      for (int& h : m.human_indices) h = pool_map[size_t(h)];
      out.matches[size_t(live_map[j])] = std::move(m);
    }
  }
  for (size_t j = 0; j < live_map.size(); ++j) {
    const MatchSet& m = out.matches[size_t(live_map[j])];
    if (m.human_indices.empty())
      out.diagnostics.push_back("animal " + animals[size_t(live_map[j])].provenance +
                                ": no compatible pose candidates");
  }
  return out;
}

std::vector<TpsTransform> predict_warps(const ModelParams& p, const std::vector<Sample>& samples,
                                        const FlowBasis& basis) {
  std::vector<TpsTransform> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) {
    const Eigen::VectorXd delta = warp_net_forward(p, featurize(s.pixels, p.feat_d));
    if (delta.size() != 2 * basis.n())
      fail(ErrorCode::InvalidConfig,
           "predict_warps: warp net emits " + std::to_string(delta.size()) +
               " values for a basis with " + std::to_string(basis.n()) + " controls");
    out.push_back(grid_warp_to_tps(basis, delta));
  }
  return out;
}

KeypointSet predict_sample(const ModelParams& p, const Sample& s, const TpsTransform* warp) {
  const int w = s.pixels.width, h = s.pixels.height;
  Eigen::VectorXd pred;
  KeypointSet out;
  if (warp != nullptr) {
    const Raster warped = warp_image_forward(s.pixels, *warp, w, h);
    pred = kp_net_forward(p, featurize(warped, p.feat_d));
    out = transfer_back(pred, *warp);
  } else {
    pred = kp_net_forward(p, featurize(s.pixels, p.feat_d));
    for (int k = 0; k < kNumKeypoints; ++k)
      out.pts[size_t(k)] = {pred[2 * k], pred[2 * k + 1]};
  }
  for (int k = 0; k < kNumKeypoints; ++k) {
    out.pts[size_t(k)].x *= double(w);
    out.pts[size_t(k)].y *= double(h);
  }
  return out;
}

std::vector<KeypointSet> collect_predictions(const ModelParams& p,
                                             const std::vector<Sample>& test,
                                             const std::vector<const TpsTransform*>& warps) {
  if (test.size() != warps.size())
    fail(ErrorCode::LengthMismatch,
         "collect_predictions: " + std::to_string(test.size()) + " samples, " +
             std::to_string(warps.size()) + " warps");
  std::vector<KeypointSet> preds;
  preds.reserve(test.size());
  for (size_t i = 0; i < test.size(); ++i)
    preds.push_back(predict_sample(p, test[i], warps[i]));
  return preds;
}

EvalResult evaluate_dataset(const ModelParams& p, const std::vector<Sample>& test,
                            const std::vector<const TpsTransform*>& warps, double thresh) {
  std::vector<KeypointSet> gts;
  std::vector<double> bboxes;
  gts.reserve(test.size());
  bboxes.reserve(test.size());
  for (const Sample& s : test) {
    gts.push_back(s.keypoints);
    bboxes.push_back(s.bbox_size);
  }
  return failure_rate(collect_predictions(p, test, warps), gts, bboxes, thresh);
}

Sample warp_sample(const Sample& s, const TpsTransform& t) {
  Sample out = s;
  const int w = s.pixels.width, h = s.pixels.height;
  out.pixels = warp_image_forward(s.pixels, t, w, h);
  for (int k = 0; k < kNumKeypoints; ++k) {
    const Vec2 moved = apply_tps(
        t, {s.keypoints.pts[size_t(k)].x / double(w), s.keypoints.pts[size_t(k)].y / double(h)});
    out.keypoints.pts[size_t(k)] = {moved.x * double(w), moved.y * double(h)};
  }
  out.provenance = s.provenance + "|warped";
  return out;
}

// ---------------------------------------------------------------------------
// Experiment harnesses.
// ---------------------------------------------------------------------------

const char* mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kOurs: return "ours";
    case TrainMode::kBlTps: return "bl-tps";
    case TrainMode::kBlFt: return "bl-ft";
    case TrainMode::kScratch: return "scratch";
  }
  return "?";
}

TrainMode parse_mode(const std::string& name) {
  if (name == "ours") return TrainMode::kOurs;
  if (name == "bl-tps") return TrainMode::kBlTps;
  if (name == "bl-ft") return TrainMode::kBlFt;
  if (name == "scratch") return TrainMode::kScratch;
  fail(ErrorCode::InvalidConfig,
       "unknown mode '" + name + "' (expected ours, bl-tps, bl-ft, or scratch)");
}

namespace {

// Flow targets for the train split, one slot per animal (null = unsupervised).
struct TargetTable {
  WarpTargetBuild build;
  std::vector<const WarpTarget*> slots;
  std::vector<std::string> diagnostics;
  int supervised = 0;
};

TargetTable build_targets(const std::vector<Sample>& animals, const std::vector<Sample>& humans,
                          int k, int sample_grid,
                          const std::vector<MatchSet>* given = nullptr) {
  TargetTable t;
  MatchOutcome mo;
  if (given != nullptr)
    mo.matches = *given;
  else
    mo = match_samples(animals, humans, k);
  t.build = build_warp_targets(animals, humans, mo.matches, grid_centers(sample_grid));
  t.slots.assign(animals.size(), nullptr);
  for (size_t i = 0; i < t.build.targets.size(); ++i)
    t.slots[size_t(t.build.animal_indices[i])] = &t.build.targets[i];
  t.diagnostics = std::move(mo.diagnostics);
  t.diagnostics.insert(t.diagnostics.end(), t.build.diagnostics.begin(),
                       t.build.diagnostics.end());
  for (const WarpTarget* p : t.slots) t.supervised += p != nullptr ? 1 : 0;
  return t;
}

ModelParams pretrain_kp_on_humans(const TrainConfig& cfg, const std::vector<Sample>& humans,
                                  const FlowBasis& basis, const ModelParams& init) {
  TrainConfig pre = cfg;
  pre.identity_flow = true;
  pre.w_warp = 0.0;
  const std::vector<const WarpTarget*> none(humans.size(), nullptr);
  return train(pre, humans, none, basis, &init).params;
}

}  // namespace

ModeRun run_mode(const ExperimentSplit& data, TrainMode mode, const TrainConfig& cfg,
                 const std::vector<MatchSet>* matches) {
  ModeRun out;
  const FlowBasis basis =
      make_flow_basis(grid_lattice(cfg.grid), grid_centers(cfg.sample_grid), 0.0);

  std::vector<const WarpTarget*> targets(data.train_animals.size(), nullptr);
  TargetTable table;
  if (mode != TrainMode::kBlFt) {
    table = build_targets(data.train_animals, data.humans, cfg.k, cfg.sample_grid, matches);
    targets = table.slots;
    out.diagnostics = std::move(table.diagnostics);
    out.supervised = table.supervised;
  }

  ModelParams params = init_params(cfg);
  if (mode != TrainMode::kScratch)
    params = pretrain_kp_on_humans(cfg, data.humans, basis, params);
  if (mode == TrainMode::kOurs) {
    TrainConfig wp = cfg;
    wp.w_kp = 0.0;  // flow supervision only; skips image warping entirely
    params = train(wp, data.train_animals, targets, basis, &params).params;
  }

  TrainConfig joint = cfg;
  if (mode == TrainMode::kBlTps) joint.w_warp = 0.0;
  if (mode == TrainMode::kBlFt) joint.identity_flow = true;
  TrainResult r = train(joint, data.train_animals, targets, basis, &params);
  out.params = std::move(r.params);
  out.curve = std::move(r.curve);

  std::vector<const TpsTransform*> warps(data.test_animals.size(), nullptr);
  std::vector<TpsTransform> predicted;
  if (mode != TrainMode::kBlFt) {
    predicted = predict_warps(out.params, data.test_animals, basis);
    for (size_t i = 0; i < predicted.size(); ++i) warps[i] = &predicted[i];
  }
  out.eval = evaluate_dataset(out.params, data.test_animals, warps);
  return out;
}

GtWarpProtocol run_gt_warp_protocol(const ExperimentSplit& data, const TrainConfig& cfg) {
  GtWarpProtocol out;
  out.ours = run_mode(data, TrainMode::kOurs, cfg).eval;

  const FlowBasis basis =
      make_flow_basis(grid_lattice(cfg.grid), grid_centers(cfg.sample_grid), 0.0);

  // Oracle arm: single nearest match, transform fitted on ground-truth
  // keypoints. Animals it cannot cover stay unwarped.
  auto gt_transform_of = [&](const std::vector<Sample>& animals) {
    TargetTable table = build_targets(animals, data.humans, 1, cfg.sample_grid);
    std::vector<TpsTransform> owned(animals.size());
    for (size_t a = 0; a < animals.size(); ++a)
      if (table.slots[a] != nullptr && !table.slots[a]->gt_transforms.empty())
        owned[a] = table.slots[a]->gt_transforms.front();
      else
        owned[a] = TpsTransform::identity();
    return std::make_pair(std::move(owned), std::move(table));
  };

  auto [train_ts, train_table] = gt_transform_of(data.train_animals);
  std::vector<Sample> warped_train;
  warped_train.reserve(data.train_animals.size());
  for (size_t a = 0; a < data.train_animals.size(); ++a)
    warped_train.push_back(train_table.slots[a] != nullptr
                               ? warp_sample(data.train_animals[a], train_ts[a])
                               : data.train_animals[a]);

  ModelParams params = pretrain_kp_on_humans(cfg, data.humans, basis, init_params(cfg));
  TrainConfig ft = cfg;
  ft.identity_flow = true;
  ft.w_warp = 0.0;
  const std::vector<const WarpTarget*> none(warped_train.size(), nullptr);
  params = train(ft, warped_train, none, basis, &params).params;

  auto [test_ts, test_table] = gt_transform_of(data.test_animals);
  std::vector<const TpsTransform*> warps(data.test_animals.size(), nullptr);
  for (size_t a = 0; a < data.test_animals.size(); ++a)
    if (test_table.slots[a] != nullptr) warps[a] = &test_ts[a];
  out.gt_warp = evaluate_dataset(params, data.test_animals, warps);
  return out;
}

std::vector<std::pair<int, EvalResult>> run_k_sweep(const ExperimentSplit& data,
                                                    const std::vector<int>& k_values,
                                                    const TrainConfig& cfg) {
  if (k_values.empty()) fail(ErrorCode::InvalidConfig, "k sweep: empty k list");
  for (int k : k_values)
    if (k < 1) fail(ErrorCode::InvalidConfig, "k sweep: k must be at least 1");
  std::vector<std::pair<int, EvalResult>> rows;
  rows.reserve(k_values.size());
  for (int k : k_values) {
    TrainConfig c = cfg;
    c.k = k;
    rows.emplace_back(k, run_mode(data, TrainMode::kOurs, c).eval);
  }
  return rows;
}

}  // namespace fw
