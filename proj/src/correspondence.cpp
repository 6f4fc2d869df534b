#include "hyperagg/correspondence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "hyperagg/kernels.hpp"

namespace hyperagg {

const char* to_string(PckBasis basis) { return basis == PckBasis::Image ? "img" : "bbox"; }

double PckConfig::radius() const { return alpha * std::max(h, w); }

void PckConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidConfig, "alpha must lie in (0, 1]");
  if (!(h > 0.0 && w > 0.0)) throw Error(ErrorCode::InvalidConfig, "PCK dimensions must be positive");
}

namespace {

Tensor upsample_to(const Tensor& desc, std::size_t h, std::size_t w) {
  if (desc.rank() != 3) throw Error(ErrorCode::InvalidShape, "descriptor map must be D×H×W");
  return bilinear_resize(desc, h, w);
}

std::vector<kernels::Match> nearest(const Tensor& query_rows, const Tensor& target_rows) {
  std::vector<kernels::Match> out(query_rows.dim(0));
  kernels::nearest_by_cosine(query_rows.data(), query_rows.dim(0), target_rows.data(), target_rows.dim(0),
                             target_rows.dim(1), out.data());
  return out;
}

}  // namespace

std::vector<MatchResult> match_keypoints(const Tensor& desc_src, const Tensor& desc_tgt,
                                         const std::vector<Point>& queries, ImageSize src_size,
                                         ImageSize tgt_size) {
  if (src_size.w == 0 || src_size.h == 0 || tgt_size.w == 0 || tgt_size.h == 0) {
    throw Error(ErrorCode::InvalidShape, "image sizes must be positive");
  }
  if (desc_src.rank() != 3 || desc_tgt.rank() != 3 || desc_src.dim(0) != desc_tgt.dim(0)) {
    throw Error(ErrorCode::InvalidShape, "descriptor maps must be D×H×W with equal D");
  }
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const Point& q = queries[i];
    if (!(q.x >= 0.0 && q.x < static_cast<double>(src_size.w) && q.y >= 0.0 &&
          q.y < static_cast<double>(src_size.h))) {
      throw Error(ErrorCode::InvalidKeypoint, "query " + std::to_string(i) + " lies outside the source image",
                  static_cast<long>(i));
    }
  }
  const std::size_t d = desc_src.dim(0);
  const Tensor src_up = upsample_to(desc_src, src_size.h, src_size.w);
  const Tensor tgt_rows = pixels_as_rows(upsample_to(desc_tgt, tgt_size.h, tgt_size.w));
  Tensor query_rows({queries.size(), d});
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto v = bilinear_sample(src_up, queries[i].x, queries[i].y);
    std::copy(v.begin(), v.end(), query_rows.data() + i * d);
  }
  const auto matches = nearest(query_rows, tgt_rows);
  std::vector<MatchResult> out;
  out.reserve(matches.size());
  for (const auto& m : matches) {
    out.push_back({{static_cast<double>(m.index % tgt_size.w), static_cast<double>(m.index / tgt_size.w)},
                   m.similarity});
  }
  return out;
}

std::vector<MatchResult> match_keypoints(const HyperfeatureMap& desc_src, const HyperfeatureMap& desc_tgt,
                                         const std::vector<Point>& queries, ImageSize src_size,
                                         ImageSize tgt_size) {
  return match_keypoints(desc_src.data, desc_tgt.data, queries, src_size, tgt_size);
}

std::size_t pck_hits(const std::vector<Point>& preds, const std::vector<Point>& gts, const PckConfig& cfg) {
  cfg.validate();
  if (preds.size() != gts.size()) throw Error(ErrorCode::InvalidInput, "prediction and ground-truth counts differ");
  const double r = cfg.radius();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (std::hypot(preds[i].x - gts[i].x, preds[i].y - gts[i].y) <= r) ++hits;
  }
  return hits;
}

double pck(const std::vector<Point>& preds, const std::vector<Point>& gts, const PckConfig& cfg) {
  if (preds.empty()) throw Error(ErrorCode::InvalidInput, "PCK needs at least one keypoint");
  return static_cast<double>(pck_hits(preds, gts, cfg)) / static_cast<double>(preds.size());
}

Tensor dense_backward_warp(const Tensor& desc_src, const Tensor& desc_tgt, const Tensor& src_image,
                           const Tensor& tgt_mask) {
  if (src_image.rank() != 3 || src_image.dim(0) != 3) throw Error(ErrorCode::InvalidShape, "source image must be 3×H×W");
  const std::size_t h = src_image.dim(1), w = src_image.dim(2), plane = h * w;
  if (!tgt_mask.empty() && (tgt_mask.rank() != 3 || tgt_mask.dim(0) != 1 || tgt_mask.dim(1) != h ||
                            tgt_mask.dim(2) != w)) {
    throw Error(ErrorCode::InvalidShape, "mask must be 1×H×W matching the image");
  }
  if (desc_src.rank() != 3 || desc_tgt.rank() != 3 || desc_src.dim(0) != desc_tgt.dim(0)) {
    throw Error(ErrorCode::InvalidShape, "descriptor maps must be D×H×W with equal D");
  }
  const Tensor src_rows = pixels_as_rows(upsample_to(desc_src, h, w));
  const Tensor tgt_rows = pixels_as_rows(upsample_to(desc_tgt, h, w));

  std::vector<std::size_t> active;
  for (std::size_t p = 0; p < plane; ++p) {
    if (tgt_mask.empty() || tgt_mask[p] != 0.0) active.push_back(p);
  }
  const std::size_t d = tgt_rows.dim(1);
  Tensor queries({active.size(), d});
  for (std::size_t i = 0; i < active.size(); ++i) {
    std::copy_n(tgt_rows.data() + active[i] * d, d, queries.data() + i * d);
  }
  Tensor out({3, h, w});
  if (active.empty()) return out;
  const auto matches = nearest(queries, src_rows);
  for (std::size_t i = 0; i < active.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) out[c * plane + active[i]] = src_image[c * plane + matches[i].index];
  }
  return out;
}

Tensor forward_splat(const Tensor& desc_frame0, const Tensor& desc_frame_t, const Tensor& overlay) {
  if (overlay.rank() != 3 || overlay.dim(0) != 4) throw Error(ErrorCode::InvalidShape, "overlay must be 4×H×W");
  if (desc_frame0.rank() != 3 || desc_frame_t.rank() != 3 || desc_frame0.dim(0) != desc_frame_t.dim(0)) {
    throw Error(ErrorCode::InvalidShape, "descriptor maps must be D×H×W with equal D");
  }
  const std::size_t h = overlay.dim(1), w = overlay.dim(2), plane = h * w;
  const Tensor rows0 = pixels_as_rows(upsample_to(desc_frame0, h, w));
  const Tensor rows_t = pixels_as_rows(upsample_to(desc_frame_t, h, w));

  std::vector<std::size_t> painted;
  for (std::size_t p = 0; p < plane; ++p) {
    if (overlay[3 * plane + p] != 0.0) painted.push_back(p);
  }
  Tensor out({4, h, w});
  if (painted.empty()) return out;
  const std::size_t d = rows0.dim(1);
  Tensor queries({painted.size(), d});
  for (std::size_t i = 0; i < painted.size(); ++i) std::copy_n(rows0.data() + painted[i] * d, d, queries.data() + i * d);
  const auto matches = nearest(queries, rows_t);

  std::vector<double> best(plane, -std::numeric_limits<double>::infinity());
  std::vector<long> winner(plane, -1);
  for (std::size_t i = 0; i < painted.size(); ++i) {
    const std::size_t q = matches[i].index;
    // painted is ascending, so an equal similarity never displaces an earlier source
    if (matches[i].similarity > best[q]) {
      best[q] = matches[i].similarity;
      winner[q] = static_cast<long>(painted[i]);
    }
  }
  for (std::size_t q = 0; q < plane; ++q) {
    if (winner[q] < 0) continue;
    const auto src = static_cast<std::size_t>(winner[q]);
    for (std::size_t c = 0; c < 4; ++c) out[c * plane + q] = overlay[c * plane + src];
  }
  return out;
}

}  // namespace hyperagg
