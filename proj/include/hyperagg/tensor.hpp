#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hyperagg/error.hpp"

namespace hyperagg {

// Dense row-major tensor of doubles. Maps are C×H×W, matrices rows×cols.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  // Same data, new shape; product must match.
  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const Tensor::Shape& shape);

// Throws NonFinite if any value is NaN or Inf.
void require_finite(const Tensor& t, const char* where);

// C×H×W → C×out_h×out_w, align-corners=false, border clamped.
Tensor bilinear_resize(const Tensor& src, std::size_t out_h, std::size_t out_w);

// Samples channel vector of a C×H×W map at real pixel coordinates (x, y),
// pixel centers at integers, border clamped.
std::vector<double> bilinear_sample(const Tensor& map, double x, double y);

inline constexpr double kCosineEps = 1e-12;

// N×D, M×D → N×M cosine similarities.
Tensor cosine_similarity_matrix(const Tensor& a, const Tensor& b);

// Max-subtracted softmax over all elements. When mirror_group > 1 the
// normalizer sums elements i and (group-1-i) of each consecutive group as
// pairs, so reversing every group leaves the result bitwise unchanged.
Tensor softmax(const Tensor& v, std::size_t mirror_group = 0);

Tensor l2_normalize_rows(const Tensor& a);

// D×H×W map → (H·W)×D pixel-major matrix.
Tensor pixels_as_rows(const Tensor& map);

struct PcaResult {
  Tensor components;       // k×C principal directions (unit rows)
  Tensor scores;           // k×(H·W) projections of centered data
  std::vector<double> mean;
  std::vector<double> eigenvalues;  // descending
  double total_variance = 0.0;
  double explained_variance_ratio = 0.0;
};

struct PcaOptions {
  int max_iterations = 100;
  double tolerance = 1e-10;
  unsigned long long seed = 0x5eed;
};

// Power iteration with deflation on the per-pixel channel covariance.
PcaResult pca_decompose(const Tensor& map, std::size_t k, const PcaOptions& options = {});

// k×H×W projection, each channel min-max rescaled to [0,1]; a constant
// channel maps to 0.5.
Tensor pca_project(const Tensor& map, std::size_t k, const PcaOptions& options = {});

}  // namespace hyperagg
