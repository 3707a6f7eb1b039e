#include "facewarp/dataset.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fw {

const char* species_name(Species s) { return s == Species::Human ? "human" : "animal"; }

namespace {

Species parse_species(const std::string& s, const std::string& ctx) {
  if (s == "human") return Species::Human;
  if (s == "animal") return Species::Animal;
  fail(ErrorCode::ParseError, ctx + ": unknown species '" + s + "'");
}

}  // namespace

std::vector<FaceAnnotation> load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, path + ": " + e.what());
  }
  if (!doc.is_array()) fail(ErrorCode::ParseError, path + ": expected a top-level array");

  std::vector<FaceAnnotation> out;
  std::vector<std::string> bad;  // ids violating semantic invariants
  for (size_t idx = 0; idx < doc.size(); ++idx) {
    const auto& rec = doc[idx];
    const std::string ctx = path + ": record " + std::to_string(idx);
    FaceAnnotation ann;
    try {
      ann.id = rec.at("id").get<std::string>();
      ann.image_path = rec.at("image_path").get<std::string>();
      ann.species = parse_species(rec.at("species").get<std::string>(), ctx);
      const auto& bb = rec.at("bbox");
      if (!bb.is_array() || bb.size() != 4)
        fail(ErrorCode::ParseError, ctx + ": bbox must be [x,y,w,h]");
      for (int i = 0; i < 4; ++i) ann.bbox[i] = bb[i].get<double>();
      const auto& kps = rec.at("keypoints");
      for (int k = 0; k < kNumKeypoints; ++k) {
        const auto& entry = kps.at(kKeypointNames[k]);
        if (!entry.is_array() || entry.size() != 3)
          fail(ErrorCode::ParseError,
               ctx + ": keypoint '" + kKeypointNames[k] + "' must be [x,y,visible]");
        ann.keypoints.pts[k] = {entry[0].get<double>(), entry[1].get<double>()};
        ann.keypoints.visible[k] = entry[2].get<bool>();
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseError, ctx + ": " + e.what());
    }

    bool ok = ann.bbox[2] > 0.0 && ann.bbox[3] > 0.0;
    for (int k = 0; k < kNumKeypoints; ++k)
      if (ann.keypoints.visible[k] &&
          (!std::isfinite(ann.keypoints.pts[k].x) || !std::isfinite(ann.keypoints.pts[k].y)))
        ok = false;
    if (!ok) {
      bad.push_back(ann.id);
      continue;
    }
    ann.excluded_from_matching = ann.keypoints.visible_count() < 3;
    out.push_back(std::move(ann));
  }
  if (!bad.empty()) {
    std::string msg = path + ": invalid records:";
    for (const auto& id : bad) msg += " " + id;
    fail(ErrorCode::ValidationError, msg);
  }
  return out;
}

void write_annotations(const std::string& path, const std::vector<FaceAnnotation>& anns) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::array();
  for (const FaceAnnotation& a : anns) {
    nlohmann::ordered_json rec;
    rec["id"] = a.id;
    rec["image_path"] = a.image_path;
    rec["species"] = species_name(a.species);
    rec["bbox"] = {a.bbox[0], a.bbox[1], a.bbox[2], a.bbox[3]};
    nlohmann::ordered_json kps;
    for (int k = 0; k < kNumKeypoints; ++k)
      kps[kKeypointNames[k]] = {a.keypoints.pts[k].x, a.keypoints.pts[k].y,
                                a.keypoints.visible[k]};
    rec["keypoints"] = kps;
    doc.push_back(rec);
  }
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << doc.dump(2) << "\n";
}

namespace {

int read_pnm_token(std::istream& in, const std::string& path) {
  int c = in.get();
  while (true) {
    if (c == '#') {
      while (c != '\n' && c != EOF) c = in.get();
      continue;
    }
    if (c == EOF) fail(ErrorCode::ParseError, path + ": truncated header");
    if (!std::isspace(c)) break;
    c = in.get();
  }
  if (!std::isdigit(c)) fail(ErrorCode::ParseError, path + ": malformed header");
  long val = 0;
  while (c != EOF && std::isdigit(c)) {
    val = val * 10 + (c - '0');
    if (val > 1 << 20) fail(ErrorCode::ParseError, path + ": header value out of range");
    c = in.get();
  }
  // The character just consumed is the single whitespace separator.
  return int(val);
}

}  // namespace

Raster read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  const bool gray = m0 == 'P' && m1 == '5';
  const bool color = m0 == 'P' && m1 == '6';
  if (!gray && !color) fail(ErrorCode::ParseError, path + ": not a binary PGM/PPM file");

  const int w = read_pnm_token(in, path);
  const int h = read_pnm_token(in, path);
  const int maxval = read_pnm_token(in, path);
  if (w <= 0 || h <= 0) fail(ErrorCode::ParseError, path + ": bad dimensions");
  if (maxval <= 0 || maxval > 255)
    fail(ErrorCode::ParseError, path + ": only 8-bit images are supported");

  const size_t npx = size_t(w) * size_t(h);
  std::vector<unsigned char> raw(npx * (color ? 3 : 1));
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  if (size_t(in.gcount()) != raw.size())
    fail(ErrorCode::ParseError, path + ": truncated pixel data");

  Raster img(w, h);
  const double inv = 1.0 / maxval;
  if (gray) {
    for (size_t i = 0; i < npx; ++i) img.data[i] = raw[i] * inv;
  } else {
    for (size_t i = 0; i < npx; ++i)
      img.data[i] =
          (0.299 * raw[3 * i] + 0.587 * raw[3 * i + 1] + 0.114 * raw[3 * i + 2]) * inv;
  }
  return img;
}

void write_image_pgm(const std::string& path, const Raster& img) {
  if (img.empty()) fail(ErrorCode::EmptyImage, "write_image_pgm: empty raster");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.size());
  for (size_t i = 0; i < img.size(); ++i) {
    const double v = std::min(1.0, std::max(0.0, img.data[i]));
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
}

Sample crop_and_resize(const FaceAnnotation& ann, const Raster& img, int S,
                       std::vector<std::string>* warnings) {
  if (img.empty()) fail(ErrorCode::EmptyImage, "crop_and_resize: empty image");
  if (S < 2) fail(ErrorCode::InvalidConfig, "crop_and_resize: S must be >= 2");
  const double x = ann.bbox[0], y = ann.bbox[1], w = ann.bbox[2], h = ann.bbox[3];
  if (w <= 0.0 || h <= 0.0)
    fail(ErrorCode::ValidationError, "crop_and_resize: empty bbox for " + ann.id);
  if (x >= img.width || y >= img.height || x + w <= 0.0 || y + h <= 0.0)
    fail(ErrorCode::EmptyIntersection, "bbox misses the image for " + ann.id);

  Sample s;
  s.pixels = Raster(S, S);
  for (int i = 0; i < S; ++i)
    for (int j = 0; j < S; ++j) {
      // Output pixel center in source coordinates (area convention), then
      // shifted to the center-based convention the sampler uses.
      const double sx = x + (j + 0.5) * w / S;
      const double sy = y + (i + 0.5) * h / S;
      s.pixels.at(i, j) = bilinear_sample(img, {sx - 0.5, sy - 0.5});
    }

  s.keypoints = ann.keypoints;
  for (int k = 0; k < kNumKeypoints; ++k) {
    if (!ann.keypoints.visible[k]) continue;
    const Vec2 p = ann.keypoints.pts[k];
    const Vec2 canon{(p.x - x) * S / w, (p.y - y) * S / h};
    s.keypoints.pts[k] = canon;
    if (canon.x < 0.0 || canon.x > S || canon.y < 0.0 || canon.y > S) {
      s.keypoints.visible[k] = false;
      if (warnings)
        warnings->push_back(ann.id + ": " + kKeypointNames[k] + " falls outside the crop");
    }
  }
  s.bbox_size = std::sqrt(w * h);
  s.provenance = ann.id;
  return s;
}

Sample augment(const Sample& s, bool flip, double rot_degrees) {
  const bool legal = rot_degrees == 0.0 || rot_degrees == 5.0 || rot_degrees == -5.0 ||
                     rot_degrees == 10.0 || rot_degrees == -10.0;
  if (!legal) fail(ErrorCode::InvalidRotation, "rotation must be in {-10,-5,0,5,10}");
  const int S = s.pixels.width;

  Sample cur = s;
  if (flip) {
    Sample f = cur;
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j) f.pixels.at(i, j) = cur.pixels.at(i, S - 1 - j);
    for (int k = 0; k < kNumKeypoints; ++k) {
      f.keypoints.pts[k] = {S - cur.keypoints.pts[k].x, cur.keypoints.pts[k].y};
      f.keypoints.visible[k] = cur.keypoints.visible[k];
    }
    std::swap(f.keypoints.pts[kLeftEye], f.keypoints.pts[kRightEye]);
    std::swap(f.keypoints.visible[kLeftEye], f.keypoints.visible[kRightEye]);
    std::swap(f.keypoints.pts[kLeftMouth], f.keypoints.pts[kRightMouth]);
    std::swap(f.keypoints.visible[kLeftMouth], f.keypoints.visible[kRightMouth]);
    f.provenance = cur.provenance + "|flip";
    cur = std::move(f);
  }

  if (rot_degrees != 0.0) {
    const double th = rot_degrees * M_PI / 180.0;
    const double c = std::cos(th), sn = std::sin(th);
    const double half = S / 2.0;
    Sample r = cur;
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j) {
        // Inverse rotation of the output pixel center about the crop center.
        const double qx = (j + 0.5) - half, qy = (i + 0.5) - half;
        const double px = c * qx + sn * qy + half;
        const double py = -sn * qx + c * qy + half;
        r.pixels.at(i, j) = bilinear_sample(cur.pixels, {px - 0.5, py - 0.5});
      }
    for (int k = 0; k < kNumKeypoints; ++k) {
      if (!cur.keypoints.visible[k]) continue;
      const double px = cur.keypoints.pts[k].x - half, py = cur.keypoints.pts[k].y - half;
      const Vec2 rot{c * px - sn * py + half, sn * px + c * py + half};
      r.keypoints.pts[k] = rot;
      if (rot.x < 0.0 || rot.x > S || rot.y < 0.0 || rot.y > S)
        r.keypoints.visible[k] = false;
    }
    std::ostringstream tag;
    tag << cur.provenance << "|rot=" << rot_degrees;
    r.provenance = tag.str();
    cur = std::move(r);
  }
  return cur;
}

}  // namespace fw
