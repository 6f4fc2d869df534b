#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hyperagg/correspondence.hpp"
#include "hyperagg/diffusion_chain.hpp"
#include "hyperagg/feature_stack.hpp"

namespace hyperagg {

struct KeypointPair {
  Point src;
  Point tgt;
  bool operator==(const KeypointPair&) const = default;
};

struct BBox {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  bool operator==(const BBox&) const = default;
};

// One annotated pair. On disk, one line of whitespace-separated fields:
//   src=<path> tgt=<path> src_size=WxH tgt_size=WxH bbox=x0,y0,x1,y1 cat=<text>
//   kps=x:y>x':y';x:y>x':y';...
// Values may not contain whitespace. Blank lines and lines starting with '#'
// are skipped.
struct PairRecord {
  std::string src;  // feature archive paths
  std::string tgt;
  ImageSize src_size;
  ImageSize tgt_size;
  BBox tgt_bbox;
  std::string category;
  std::vector<KeypointPair> kps;

  std::vector<Point> src_points() const;
  std::vector<Point> tgt_points() const;
  // Throws InvalidRecord with the given index.
  void validate(long index = -1) const;
  bool operator==(const PairRecord&) const = default;
};

std::string format_record(const PairRecord& record);
// Throws ParseError carrying line_no.
PairRecord parse_record(const std::string& line, long line_no);

std::vector<PairRecord> load_pairs(const std::filesystem::path& path);
void save_pairs(const std::vector<PairRecord>& records, const std::filesystem::path& path);

// Record with its two stacks loaded; relative archive paths resolve against
// the pair file's directory.
struct LoadedPair {
  PairRecord record;
  FeatureStack src;
  FeatureStack tgt;
};

std::vector<LoadedPair> load_dataset(const std::filesystem::path& pair_file);

struct SplitFractions {
  double train = 0.8;
  double val = 0.0;
  double test = 0.2;
};

template <typename T>
struct Split {
  std::vector<T> train, val, test;
};

// Seeded permutation, then contiguous train/val/test blocks of
// round(f·n) records (the test block takes the remainder).
std::vector<std::size_t> split_indices(std::size_t n, std::uint64_t seed, const SplitFractions& fractions,
                                       std::size_t* n_train, std::size_t* n_val);

template <typename T>
Split<T> split(const std::vector<T>& records, std::uint64_t seed, const SplitFractions& fractions) {
  std::size_t n_train = 0, n_val = 0;
  const auto order = split_indices(records.size(), seed, fractions, &n_train, &n_val);
  Split<T> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& bucket = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
    bucket.push_back(records[order[i]]);
  }
  return out;
}

// Affine map about the image center composed with a smooth sinusoidal
// displacement: W(p) = c + A(p − c) + t + d(p).
struct ToyWarp {
  double a00 = 1.0, a01 = 0.0, a10 = 0.0, a11 = 1.0;
  double tx = 0.0, ty = 0.0;
  double cx = 0.0, cy = 0.0;
  // d_x(p) = Σ_k amp·sin(fx·x + fy·y + phase), likewise d_y.
  struct Mode {
    double amp = 0.0, fx = 0.0, fy = 0.0, phase = 0.0;
  };
  std::vector<Mode> dx, dy;

  Point apply(Point p) const;
  // Fixed-point inversion; the displacement is a contraction by construction.
  Point inverse(Point q) const;
  double max_displacement(std::size_t w, std::size_t h) const;
};

struct ToySpec {
  std::uint64_t seed = 0;           // scene and warp
  std::uint64_t model_seed = 7;     // toy denoiser, shared by every pair
  std::size_t image_size = 64;
  std::size_t blobs = 4;
  std::size_t categories = 3;
  std::size_t keypoints = 8;
  bool identity_warp = false;
  double max_displacement_frac = 0.15;
  // Per-image color shift and gradient on the appearance channels, drawn
  // independently for source and target (not carried by the warp).
  double lighting = 0.25;
  int num_steps = 10;
  int stride = 4;
  Direction direction = Direction::Inversion;
  ToyDenoiserOptions denoiser = default_denoiser();

  static ToyDenoiserOptions default_denoiser();
  void validate() const;  // InvalidConfig
};

// Scene channels: RGB appearance first, then the coarse channels
// (object-frame u, v and a 3-d instance code, zero on background).
inline constexpr std::size_t kToyFineChannels = 3;
inline constexpr std::size_t kToyCoarseChannels = 5;

struct ToyPair {
  PairRecord record;  // archive paths left empty
  FeatureStack src_stack;
  FeatureStack tgt_stack;
  Tensor src_image;  // 3×N×N
  Tensor tgt_image;
  Tensor src_mask;   // 1×N×N, 1 on objects
  Tensor tgt_mask;
  Tensor dense_map;  // 2×N×N, target (x, y) of every source pixel
  ToyWarp warp;
};

ToyPair generate_toy_pair(const ToySpec& spec);

// Random distinct per-pixel descriptors and a target built by permuting the
// source pixels: tgt pixel q holds src pixel tgt_to_src[q].
struct PermutationPair {
  Tensor desc_src;  // D×H×W
  Tensor desc_tgt;
  Tensor src_image;  // 3×H×W
  std::vector<std::size_t> tgt_to_src;
};

PermutationPair make_permutation_pair(std::uint64_t seed, std::size_t h, std::size_t w, std::size_t d);

}  // namespace hyperagg
