#pragma once

#include <cstddef>
#include <vector>

#include "hyperagg/aggregator.hpp"
#include "hyperagg/tensor.hpp"

namespace hyperagg {

// Pixel coordinates; pixel centers sit at integers.
struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

struct ImageSize {
  std::size_t w = 0;
  std::size_t h = 0;
  bool operator==(const ImageSize&) const = default;
};

enum class PckBasis { Image, Bbox };

const char* to_string(PckBasis basis);

struct PckConfig {
  double alpha = 0.1;
  PckBasis basis = PckBasis::Image;
  double h = 0.0;  // image or bbox extent in original pixels
  double w = 0.0;

  double radius() const;
  void validate() const;  // InvalidConfig
};

struct MatchResult {
  Point pixel;  // integer target pixel
  double similarity = 0.0;
};

// Both descriptor maps are upsampled to their image sizes; each query's
// descriptor is sampled bilinearly and matched to the target pixel of
// highest cosine similarity (ties → smallest row-major index).
std::vector<MatchResult> match_keypoints(const Tensor& desc_src, const Tensor& desc_tgt,
                                         const std::vector<Point>& queries, ImageSize src_size,
                                         ImageSize tgt_size);
std::vector<MatchResult> match_keypoints(const HyperfeatureMap& desc_src, const HyperfeatureMap& desc_tgt,
                                         const std::vector<Point>& queries, ImageSize src_size,
                                         ImageSize tgt_size);

// Prediction is correct iff its distance to the ground truth is ≤ radius.
std::size_t pck_hits(const std::vector<Point>& preds, const std::vector<Point>& gts, const PckConfig& cfg);
double pck(const std::vector<Point>& preds, const std::vector<Point>& gts, const PckConfig& cfg);

// For every target pixel inside the mask, copies the color of the source
// pixel whose descriptor is nearest; pixels outside the mask are black.
// Descriptors are upsampled to the source image size. mask is 1×H×W or
// empty (all pixels).
Tensor dense_backward_warp(const Tensor& desc_src, const Tensor& desc_tgt, const Tensor& src_image,
                           const Tensor& tgt_mask = {});

// Pushes every frame-0 pixel with nonzero alpha to its nearest frame-T
// pixel. Collisions keep the higher similarity, then the lower source index.
// Unfilled pixels are transparent.
Tensor forward_splat(const Tensor& desc_frame0, const Tensor& desc_frame_t, const Tensor& overlay);

}  // namespace hyperagg
