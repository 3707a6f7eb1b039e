#pragma once

#include <string>
#include <vector>

#include "facewarp/geometry.hpp"
#include "facewarp/pose.hpp"

namespace fw {

enum class Species { Human, Animal };
const char* species_name(Species s);

// One annotated face. Keypoint coordinates are continuous pixel coordinates
// in the source image, where pixel (row i, col j) covers [j,j+1) x [i,i+1).
struct FaceAnnotation {
  std::string id;
  std::string image_path;
  Species species = Species::Human;
  double bbox[4] = {0, 0, 0, 0};  // x, y, w, h in pixels
  KeypointSet keypoints;
  bool excluded_from_matching = false;  // fewer than 3 visible keypoints
};

// A face cropped to the canonical S x S resolution. Keypoints use the same
// continuous pixel convention, now in [0, S]; bbox_size remembers the
// original face scale for the failure metric.
struct Sample {
  Raster pixels;
  KeypointSet keypoints;
  double bbox_size = 0.0;  // sqrt(w * h) of the source bbox, source pixels
  std::string provenance;  // annotation id plus augmentation record
};

// Reads the annotation document: a JSON array of records
//   {id, image_path, species, bbox:[x,y,w,h], keypoints:{name:[x,y,visible]}}
// with all five keypoint names present. Records with fewer than 3 visible
// keypoints are loaded but flagged excluded_from_matching. Throws ParseError
// (malformed document) or ValidationError (listing every offending id).
std::vector<FaceAnnotation> load_annotations(const std::string& path);
void write_annotations(const std::string& path, const std::vector<FaceAnnotation>& anns);

// 8-bit PGM (P5) or PPM (P6); color is converted to Rec.601 luma. Values in [0,1].
Raster read_image(const std::string& path);
void write_image_pgm(const std::string& path, const Raster& img);

// Resamples the bbox region to S x S and maps keypoints by the same affine.
// Keypoints landing outside [0,S]^2 are marked not visible (with a warning
// pushed to `warnings` when given). Throws EmptyIntersection when the bbox
// misses the image entirely.
Sample crop_and_resize(const FaceAnnotation& ann, const Raster& img, int S,
                       std::vector<std::string>* warnings = nullptr);

// Horizontal flip and/or rotation about the crop center, bilinear with zero
// fill, flip applied first. Flip swaps left/right keypoint labels together
// with their visibility. rot_degrees must be one of {-10,-5,0,5,10}; positive
// angles turn content from +x toward +y (clockwise with y pointing down).
// Rotated keypoints that exit [0,S]^2 are marked not visible.
Sample augment(const Sample& s, bool flip, double rot_degrees);

}  // namespace fw
