#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <random>

#include "doctest.h"
#include "facewarp/dataset.hpp"

using fw::FaceAnnotation;
using fw::Raster;
using fw::Sample;
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

struct TempFile {
  std::string path;
  explicit TempFile(std::string p) : path(std::move(p)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

FaceAnnotation basic_annotation(const std::string& id, int visible_count = 5) {
  FaceAnnotation a;
  a.id = id;
  a.image_path = id + ".pgm";
  a.species = fw::Species::Animal;
  a.bbox[0] = 1.0;
  a.bbox[1] = 2.0;
  a.bbox[2] = 8.0;
  a.bbox[3] = 6.0;
  a.keypoints.pts = {{{3, 4}, {7, 4}, {5, 5.5}, {3.5, 7}, {6.5, 7}}};
  for (int k = 0; k < fw::kNumKeypoints; ++k) a.keypoints.visible[k] = k < visible_count;
  return a;
}

Raster random_raster(int w, int h, uint64_t seed) {
  Raster img(w, h);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : img.data) v = u(rng);
  return img;
}

Sample interior_sample(int S) {
  Sample s;
  s.pixels = random_raster(S, S, 5);
  s.keypoints.pts = {{{S * 0.25, S * 0.375}, {S * 0.75, S * 0.375}, {S * 0.5, S * 0.5},
                      {S * 0.375, S * 0.75}, {S * 0.625, S * 0.75}}};
  s.bbox_size = 10.0;
  s.provenance = "fixture";
  return s;
}

}  // namespace

TEST_CASE("annotation files round trip and flag sparse faces") {
  TempFile tmp("anns_test.json");
  std::vector<FaceAnnotation> anns = {basic_annotation("a", 5), basic_annotation("b", 2),
                                      basic_annotation("c", 3)};
  fw::write_annotations(tmp.path, anns);
  const auto loaded = fw::load_annotations(tmp.path);
  REQUIRE(loaded.size() == 3);
  CHECK_FALSE(loaded[0].excluded_from_matching);
  CHECK(loaded[1].excluded_from_matching);  // only 2 visible keypoints
  CHECK_FALSE(loaded[2].excluded_from_matching);
  CHECK(loaded[1].id == "b");
  CHECK(loaded[0].species == fw::Species::Animal);
  for (int k = 0; k < fw::kNumKeypoints; ++k) {
    CHECK(loaded[2].keypoints.pts[k].x == anns[2].keypoints.pts[k].x);
    CHECK(loaded[2].keypoints.pts[k].y == anns[2].keypoints.pts[k].y);
    CHECK(loaded[2].keypoints.visible[k] == anns[2].keypoints.visible[k]);
  }
}

TEST_CASE("annotation validation and parse failures") {
  TempFile tmp("anns_bad.json");

  write_text(tmp.path, "[]\n");
  CHECK(fw::load_annotations(tmp.path).empty());

  std::vector<FaceAnnotation> zero_w = {basic_annotation("ok"), basic_annotation("badbox")};
  zero_w[1].bbox[2] = 0.0;
  fw::write_annotations(tmp.path, zero_w);
  try {
    fw::load_annotations(tmp.path);
    FAIL("expected ValidationError");
  } catch (const fw::Error& e) {
    CHECK(e.code() == fw::ErrorCode::ValidationError);
    CHECK(std::string(e.what()).find("badbox") != std::string::npos);
  }

  write_text(tmp.path, "{\"not\": \"an array\"}");
  CHECK(thrown_code([&] { fw::load_annotations(tmp.path); }) == fw::ErrorCode::ParseError);

  write_text(tmp.path, "[{\"id\": \"x\"}]");
  CHECK(thrown_code([&] { fw::load_annotations(tmp.path); }) == fw::ErrorCode::ParseError);

  write_text(tmp.path, "this is not json");
  CHECK(thrown_code([&] { fw::load_annotations(tmp.path); }) == fw::ErrorCode::ParseError);

  CHECK(thrown_code([&] { fw::load_annotations("no_such_file.json"); }) ==
        fw::ErrorCode::IoError);
}

TEST_CASE("pgm and ppm files load as luma rasters") {
  TempFile gray("img_test.pgm");
  const Raster img = random_raster(9, 7, 3);
  fw::write_image_pgm(gray.path, img);
  const Raster back = fw::read_image(gray.path);
  REQUIRE(back.width == 9);
  REQUIRE(back.height == 7);
  for (size_t i = 0; i < img.size(); ++i)
    CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5 / 255.0 + 1e-12);

  // Comments in the header are legal.
  TempFile commented("img_comment.pgm");
  std::string hdr = "P5\n# a comment\n2 2\n255\n";
  hdr += std::string("\x10\x20\x30\x40", 4);
  write_text(commented.path, hdr);
  const Raster small = fw::read_image(commented.path);
  REQUIRE(small.width == 2);
  CHECK(small.at(0, 0) == doctest::Approx(16.0 / 255.0).epsilon(1e-12));
  CHECK(small.at(1, 1) == doctest::Approx(64.0 / 255.0).epsilon(1e-12));

  // Gray (r==g==b) color pixels reduce to the same value.
  TempFile color("img_test.ppm");
  std::string p6 = "P6\n2 1\n255\n";
  const unsigned char px[6] = {100, 100, 100, 200, 200, 200};
  p6 += std::string(reinterpret_cast<const char*>(px), 6);
  write_text(color.path, p6);
  const Raster luma = fw::read_image(color.path);
  CHECK(luma.at(0, 0) == doctest::Approx(100.0 / 255.0).epsilon(1e-9));
  CHECK(luma.at(0, 1) == doctest::Approx(200.0 / 255.0).epsilon(1e-9));

  TempFile trunc("img_trunc.pgm");
  write_text(trunc.path, "P5\n4 4\n255\n\x01\x02");
  CHECK(thrown_code([&] { fw::read_image(trunc.path); }) == fw::ErrorCode::ParseError);
  write_text(trunc.path, "P7\n1 1\n255\n\x01");
  CHECK(thrown_code([&] { fw::read_image(trunc.path); }) == fw::ErrorCode::ParseError);
}

TEST_CASE("full frame crop is the identity") {
  const Raster img = random_raster(10, 10, 7);
  FaceAnnotation ann = basic_annotation("full");
  ann.bbox[0] = 0;
  ann.bbox[1] = 0;
  ann.bbox[2] = 10;
  ann.bbox[3] = 10;
  ann.keypoints.pts = {{{3.25, 4.5}, {7.5, 4.5}, {5.0, 5.0}, {3.5, 7.25}, {6.75, 7.5}}};
  const Sample s = fw::crop_and_resize(ann, img, 10);
  for (size_t i = 0; i < img.size(); ++i) CHECK(s.pixels.data[i] == img.data[i]);
  for (int k = 0; k < fw::kNumKeypoints; ++k) {
    CHECK(s.keypoints.pts[k].x == ann.keypoints.pts[k].x);
    CHECK(s.keypoints.pts[k].y == ann.keypoints.pts[k].y);
  }
  CHECK(s.bbox_size == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("crop maps keypoints by the bbox affine") {
  const Raster img = random_raster(20, 16, 9);
  FaceAnnotation ann = basic_annotation("affine");
  const double x = 2.5, y = 1.25, w = 5.5, h = 4.25;
  ann.bbox[0] = x;
  ann.bbox[1] = y;
  ann.bbox[2] = w;
  ann.bbox[3] = h;
  const int S = 32;
  // Fractional positions within the box, plus the exact center.
  const double fx[5] = {0.3, 0.9, 0.5, 0.12, 0.77};
  const double fy[5] = {0.8, 0.25, 0.5, 0.66, 0.05};
  for (int k = 0; k < 5; ++k) ann.keypoints.pts[k] = {x + fx[k] * w, y + fy[k] * h};

  const Sample s = fw::crop_and_resize(ann, img, S);
  for (int k = 0; k < 5; ++k) {
    CHECK(std::abs(s.keypoints.pts[k].x - fx[k] * S) < 1e-10);
    CHECK(std::abs(s.keypoints.pts[k].y - fy[k] * S) < 1e-10);
  }
  CHECK(s.keypoints.pts[2].x == doctest::Approx(S / 2.0).epsilon(1e-12));
  CHECK(s.bbox_size == doctest::Approx(std::sqrt(w * h)).epsilon(1e-12));

  // Resampled pixels follow the same affine, checked against direct sampling.
  for (int i = 0; i < S; i += 7)
    for (int j = 0; j < S; j += 5) {
      const double sx = x + (j + 0.5) * w / S - 0.5;
      const double sy = y + (i + 0.5) * h / S - 0.5;
      CHECK(s.pixels.at(i, j) == fw::bilinear_sample(img, {sx, sy}));
    }
}

TEST_CASE("crop rejects disjoint boxes and hides escaping keypoints") {
  const Raster img = random_raster(10, 10, 11);
  FaceAnnotation far = basic_annotation("far");
  far.bbox[0] = 100.0;
  CHECK(thrown_code([&] { fw::crop_and_resize(far, img, 8); }) ==
        fw::ErrorCode::EmptyIntersection);

  FaceAnnotation edge = basic_annotation("edge");
  edge.bbox[0] = 4;
  edge.bbox[1] = 4;
  edge.bbox[2] = 4;
  edge.bbox[3] = 4;
  edge.keypoints.pts = {{{5, 5}, {7, 5}, {6, 6}, {5, 7}, {7, 7}}};
  edge.keypoints.pts[0] = {1.0, 1.0};  // far outside the box
  std::vector<std::string> warnings;
  const Sample s = fw::crop_and_resize(edge, img, 8, &warnings);
  CHECK_FALSE(s.keypoints.visible[0]);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("left_eye") != std::string::npos);
}

TEST_CASE("flip is an involution that swaps sides") {
  const int S = 12;
  Sample s = interior_sample(S);
  s.keypoints.visible[fw::kLeftEye] = false;  // make the swap observable

  const Sample flipped = fw::augment(s, true, 0.0);
  CHECK_FALSE(flipped.keypoints.visible[fw::kRightEye]);
  CHECK(flipped.keypoints.visible[fw::kLeftEye]);
  CHECK(flipped.keypoints.pts[fw::kLeftEye].x == S - s.keypoints.pts[fw::kRightEye].x);
  CHECK(flipped.keypoints.pts[fw::kLeftEye].y == s.keypoints.pts[fw::kRightEye].y);
  CHECK(flipped.pixels.at(3, 2) == s.pixels.at(3, S - 3));
  CHECK(flipped.provenance == "fixture|flip");

  const Sample twice = fw::augment(flipped, true, 0.0);
  for (int k = 0; k < fw::kNumKeypoints; ++k) {
    CHECK(twice.keypoints.pts[k].x == s.keypoints.pts[k].x);
    CHECK(twice.keypoints.pts[k].y == s.keypoints.pts[k].y);
    CHECK(twice.keypoints.visible[k] == s.keypoints.visible[k]);
  }
  for (size_t i = 0; i < s.pixels.size(); ++i)
    CHECK(twice.pixels.data[i] == s.pixels.data[i]);
}

TEST_CASE("rotation moves keypoints by the exact rigid map") {
  const int S = 16;
  const Sample s = interior_sample(S);

  const Sample same = fw::augment(s, false, 0.0);
  CHECK(same.provenance == s.provenance);
  for (size_t i = 0; i < s.pixels.size(); ++i) CHECK(same.pixels.data[i] == s.pixels.data[i]);

  for (double deg : {-10.0, -5.0, 5.0, 10.0}) {
    const Sample rot = fw::augment(s, false, deg);
    const double th = deg * M_PI / 180.0;
    const double c = std::cos(th), sn = std::sin(th);
    for (int k = 0; k < fw::kNumKeypoints; ++k) {
      const double px = s.keypoints.pts[k].x - S / 2.0;
      const double py = s.keypoints.pts[k].y - S / 2.0;
      const Vec2 want{c * px - sn * py + S / 2.0, sn * px + c * py + S / 2.0};
      CHECK(std::abs(rot.keypoints.pts[k].x - want.x) < 1e-8);
      CHECK(std::abs(rot.keypoints.pts[k].y - want.y) < 1e-8);
    }
    CHECK(rot.keypoints.visible_count() == s.keypoints.visible_count());
  }

  // Rotating forward and back nearly cancels for keypoints.
  const Sample fwd = fw::augment(s, false, 10.0);
  const Sample back = fw::augment(fwd, false, -10.0);
  for (int k = 0; k < fw::kNumKeypoints; ++k)
    CHECK((back.keypoints.pts[k] - s.keypoints.pts[k]).norm() < 1e-9);

  CHECK(thrown_code([&] { fw::augment(s, false, 7.0); }) == fw::ErrorCode::InvalidRotation);
  CHECK(thrown_code([&] { fw::augment(s, true, 90.0); }) == fw::ErrorCode::InvalidRotation);
}

TEST_CASE("flip then rotate composes in that order") {
  const int S = 16;
  const Sample s = interior_sample(S);
  const Sample both = fw::augment(s, true, 5.0);
  const Sample manual = fw::augment(fw::augment(s, true, 0.0), false, 5.0);
  for (int k = 0; k < fw::kNumKeypoints; ++k)
    CHECK((both.keypoints.pts[k] - manual.keypoints.pts[k]).norm() == 0.0);
  for (size_t i = 0; i < s.pixels.size(); ++i)
    CHECK(both.pixels.data[i] == manual.pixels.data[i]);
  CHECK(both.provenance == "fixture|flip|rot=5");
}
