#include "facewarp/pose.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "json.hpp"

namespace fw {

const std::array<const char*, kNumKeypoints> kKeypointNames = {
    "left_eye", "right_eye", "nose", "left_mouth", "right_mouth"};

const char* pose_variant_name(PoseVariant v) {
  switch (v) {
    case PoseVariant::Frontal: return "frontal";
    case PoseVariant::LeftProfile: return "left_profile";
    case PoseVariant::RightProfile: return "right_profile";
  }
  return "?";
}

namespace {

constexpr double kRadToDeg = 180.0 / M_PI;

double interior_angle_at(const Vec2& apex, const Vec2& a, const Vec2& b) {
  const Vec2 u = a - apex;
  const Vec2 v = b - apex;
  return std::atan2(std::abs(u.cross(v)), u.dot(v)) * kRadToDeg;
}

PoseVariant parse_variant(const std::string& s) {
  if (s == "frontal") return PoseVariant::Frontal;
  if (s == "left_profile") return PoseVariant::LeftProfile;
  if (s == "right_profile") return PoseVariant::RightProfile;
  fail(ErrorCode::ParseError, "unknown pose variant '" + s + "'");
}

}  // namespace

PoseAngle compute_angle(const KeypointSet& kp) {
  const auto& v = kp.visible;
  if (v[kLeftEye] && v[kRightEye] && v[kNose]) {
    const Vec2 eye_center = (kp.pts[kLeftEye] + kp.pts[kRightEye]) * 0.5;
    const Vec2 d = kp.pts[kNose] - eye_center;
    // Angle of the nose ray against image-down (+y), positive toward +x.
    return {PoseVariant::Frontal, std::atan2(d.x, d.y) * kRadToDeg};
  }
  if (v[kLeftEye] && v[kNose] && v[kLeftMouth])
    return {PoseVariant::LeftProfile,
            interior_angle_at(kp.pts[kNose], kp.pts[kLeftEye], kp.pts[kLeftMouth])};
  if (v[kRightEye] && v[kNose] && v[kRightMouth])
    return {PoseVariant::RightProfile,
            interior_angle_at(kp.pts[kNose], kp.pts[kRightEye], kp.pts[kRightMouth])};
  fail(ErrorCode::InsufficientKeypoints, "no pose triple fully visible");
}

bool is_colinear(const std::array<Vec2, 3>& pts, double tol) {
  const double twice_area = std::abs((pts[1] - pts[0]).cross(pts[2] - pts[0]));
  const double longest2 = std::max({(pts[1] - pts[0]).norm2(), (pts[2] - pts[0]).norm2(),
                                    (pts[2] - pts[1]).norm2()});
  if (longest2 <= 0.0) return true;  // all points coincide
  return twice_area / longest2 < tol;
}

namespace {

struct Candidate {
  int human_index;
  bool mirrored;
  double degrees;
};

MatchSet pick_nearest(const PoseAngle& animal, const std::vector<Candidate>& pool, int k) {
  std::vector<std::pair<double, int>> order;  // (diff, pool slot)
  order.reserve(pool.size());
  for (int i = 0; i < int(pool.size()); ++i)
    order.emplace_back(std::abs(animal.degrees - pool[i].degrees), i);
  // Pool slots are in human-index order, so the pair sort breaks diff ties
  // by lower human index (unmirrored before mirrored at equal index).
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) {
              return a.first != b.first ? a.first < b.first : a.second < b.second;
            });

  MatchSet out;
  out.variant = animal.variant;
  const int take = std::min<int>(k, int(order.size()));
  for (int i = 0; i < take; ++i) {
    const Candidate& c = pool[order[i].second];
    out.human_indices.push_back(c.human_index);
    out.angle_diffs.push_back(order[i].first);
    out.mirrored.push_back(c.mirrored ? 1 : 0);
  }
  return out;
}

std::vector<Candidate> same_variant_pool(const PoseAngle& animal,
                                         const std::vector<PoseAngle>& humans) {
  std::vector<Candidate> pool;
  for (int i = 0; i < int(humans.size()); ++i)
    if (humans[i].variant == animal.variant) pool.push_back({i, false, humans[i].degrees});
  return pool;
}

// Horizontal flip swaps the profile side and keeps the interior angle;
// frontal faces are not duplicated (their mirror is already in the pool
// shape-wise, only the sign of the angle flips, and the human itself is
// already a candidate).
std::vector<Candidate> mirrored_pool(const PoseAngle& animal,
                                     const std::vector<PoseAngle>& humans) {
  std::vector<Candidate> pool = same_variant_pool(animal, humans);
  if (animal.variant != PoseVariant::Frontal) {
    const PoseVariant opposite = animal.variant == PoseVariant::LeftProfile
                                     ? PoseVariant::RightProfile
                                     : PoseVariant::LeftProfile;
    for (int i = 0; i < int(humans.size()); ++i)
      if (humans[i].variant == opposite) pool.push_back({i, true, humans[i].degrees});
    std::sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
      return a.human_index != b.human_index ? a.human_index < b.human_index
                                            : int(a.mirrored) < int(b.mirrored);
    });
  }
  return pool;
}

}  // namespace

MatchSet find_matches(const PoseAngle& animal, const std::vector<PoseAngle>& humans, int k) {
  if (k < 1) fail(ErrorCode::InvalidConfig, "find_matches: k must be >= 1");
  const std::vector<Candidate> pool = same_variant_pool(animal, humans);
  if (pool.empty())
    fail(ErrorCode::NoCompatibleCandidates,
         std::string("no humans with variant ") + pose_variant_name(animal.variant));
  return pick_nearest(animal, pool, k);
}

std::vector<MatchSet> match_all_serial(const std::vector<PoseAngle>& animals,
                                       const std::vector<PoseAngle>& humans, int k,
                                       bool mirror_profiles) {
  std::vector<MatchSet> out(animals.size());
  for (size_t a = 0; a < animals.size(); ++a) {
    const std::vector<Candidate> pool = mirror_profiles
                                            ? mirrored_pool(animals[a], humans)
                                            : same_variant_pool(animals[a], humans);
    out[a] = pick_nearest(animals[a], pool, k);
    out[a].animal_index = int(a);
  }
  return out;
}

std::vector<MatchSet> match_all(const std::vector<PoseAngle>& animals,
                                const std::vector<PoseAngle>& humans, int k,
                                bool mirror_profiles) {
  std::vector<MatchSet> out(animals.size());
#pragma omp parallel for schedule(static)
  for (size_t a = 0; a < animals.size(); ++a) {
    const std::vector<Candidate> pool = mirror_profiles
                                            ? mirrored_pool(animals[a], humans)
                                            : same_variant_pool(animals[a], humans);
    out[a] = pick_nearest(animals[a], pool, k);
    out[a].animal_index = int(a);
  }
  return out;
}

void write_matches_json(const std::string& path, const std::vector<MatchSet>& matches,
                        const std::vector<std::string>& animal_ids,
                        const std::vector<std::string>& human_ids) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::array();
  for (const MatchSet& m : matches) {
    nlohmann::ordered_json rec;
    rec["animal_id"] = animal_ids.at(m.animal_index);
    rec["variant"] = pose_variant_name(m.variant);
    nlohmann::ordered_json ids = nlohmann::ordered_json::array();
    for (int h : m.human_indices) ids.push_back(human_ids.at(h));
    rec["human_ids"] = ids;
    rec["angle_diffs"] = m.angle_diffs;
    nlohmann::ordered_json mir = nlohmann::ordered_json::array();
    for (uint8_t f : m.mirrored) mir.push_back(bool(f));
    rec["mirrored"] = mir;
    doc.push_back(rec);
  }
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << doc.dump(2) << "\n";
}

std::vector<MatchSet> read_matches_json(const std::string& path,
                                        const std::vector<std::string>& animal_ids,
                                        const std::vector<std::string>& human_ids) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, path + ": " + e.what());
  }
  if (!doc.is_array()) fail(ErrorCode::ParseError, path + ": expected a top-level array");

  std::map<std::string, int> animal_by_id, human_by_id;
  for (int i = 0; i < int(animal_ids.size()); ++i) animal_by_id[animal_ids[i]] = i;
  for (int i = 0; i < int(human_ids.size()); ++i) human_by_id[human_ids[i]] = i;

  std::vector<MatchSet> out;
  try {
    for (const auto& rec : doc) {
      MatchSet m;
      const std::string aid = rec.at("animal_id").get<std::string>();
      const auto ait = animal_by_id.find(aid);
      if (ait == animal_by_id.end())
        fail(ErrorCode::ParseError, path + ": unknown animal_id '" + aid + "'");
      m.animal_index = ait->second;
      m.variant = parse_variant(rec.at("variant").get<std::string>());
      for (const auto& hid : rec.at("human_ids")) {
        const auto hit = human_by_id.find(hid.get<std::string>());
        if (hit == human_by_id.end())
          fail(ErrorCode::ParseError, path + ": unknown human_id");
        m.human_indices.push_back(hit->second);
      }
      m.angle_diffs = rec.at("angle_diffs").get<std::vector<double>>();
      for (const auto& f : rec.at("mirrored")) m.mirrored.push_back(f.get<bool>() ? 1 : 0);
      if (m.human_indices.size() != m.angle_diffs.size() ||
          m.human_indices.size() != m.mirrored.size())
        fail(ErrorCode::ValidationError, path + ": ragged match record for " + aid);
      out.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, path + ": " + e.what());
  }
  return out;
}

}  // namespace fw
