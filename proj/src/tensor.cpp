#include "hyperagg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>

#include "hyperagg/kernels.hpp"
#include "resize_taps.hpp"

namespace hyperagg {

std::size_t shape_product(const Tensor::Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw Error(ErrorCode::InvalidShape, "shape product does not match data length");
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

void require_finite(const Tensor& t, const char* where) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, std::string("non-finite value in ") + where);
  }
}

Tensor bilinear_resize(const Tensor& src, std::size_t out_h, std::size_t out_w) {
  if (src.rank() != 3 || src.dim(0) == 0 || src.dim(1) == 0 || src.dim(2) == 0 || out_h == 0 ||
      out_w == 0) {
    throw Error(ErrorCode::InvalidShape, "bilinear_resize needs a non-empty C×H×W map");
  }
  const std::size_t c = src.dim(0), h = src.dim(1), w = src.dim(2);
  if (h == out_h && w == out_w) return src;
  Tensor out({c, out_h, out_w});
  kernels::bilinear_resize(src.data(), c, h, w, out.data(), out_h, out_w);
  require_finite(out, "bilinear_resize");
  return out;
}

std::vector<double> bilinear_sample(const Tensor& map, double x, double y) {
  if (map.rank() != 3) throw Error(ErrorCode::InvalidShape, "bilinear_sample needs C×H×W");
  const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
  const double cx = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const double cy = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const auto x0 = static_cast<std::size_t>(std::floor(cx));
  const auto y0 = static_cast<std::size_t>(std::floor(cy));
  const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = cx - static_cast<double>(x0), fy = cy - static_cast<double>(y0);
  std::vector<double> out(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    out[ch] = kernels::detail::lerp2(map.at(ch, y0, x0), map.at(ch, y0, x1), map.at(ch, y1, x0),
                                     map.at(ch, y1, x1), fy, fx);
  }
  return out;
}

Tensor cosine_similarity_matrix(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw Error(ErrorCode::InvalidShape, "cosine_similarity_matrix needs N×D and M×D");
  }
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  auto norms = [d](const Tensor& t) {
    std::vector<double> out(t.dim(0));
    for (std::size_t i = 0; i < t.dim(0); ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += t.at(i, k) * t.at(i, k);
      out[i] = std::sqrt(acc);
    }
    return out;
  };
  const auto na = norms(a), nb = norms(b);
  Tensor out({n, m});
  kernels::gemm_abt(a.data(), b.data(), n, m, d, 1.0, out.data());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) /= (na[i] * nb[j] + kCosineEps);
  }
  require_finite(out, "cosine_similarity_matrix");
  return out;
}

Tensor softmax(const Tensor& v, std::size_t mirror_group) {
  if (v.size() == 0) throw Error(ErrorCode::InvalidShape, "softmax of empty vector");
  const std::size_t k = v.size();
  const double peak = *std::max_element(v.values().begin(), v.values().end());
  Tensor out(v.shape());
  for (std::size_t i = 0; i < k; ++i) out[i] = std::exp(v[i] - peak);
  double total = 0.0;
  if (mirror_group > 1) {
    if (k % mirror_group != 0) throw Error(ErrorCode::InvalidShape, "softmax group does not divide size");
    for (std::size_t g = 0; g < k; g += mirror_group) {
      double group_sum = 0.0;
      for (std::size_t s = 0; s < mirror_group / 2; ++s) {
        group_sum += out[g + s] + out[g + mirror_group - 1 - s];
      }
      if (mirror_group % 2 == 1) group_sum += out[g + mirror_group / 2];
      total += group_sum;
    }
  } else {
    for (std::size_t i = 0; i < k; ++i) total += out[i];
  }
  for (std::size_t i = 0; i < k; ++i) out[i] /= total;
  require_finite(out, "softmax");
  return out;
}

Tensor l2_normalize_rows(const Tensor& a) {
  if (a.rank() != 2) throw Error(ErrorCode::InvalidShape, "l2_normalize_rows needs N×D");
  Tensor out = a;
  const std::size_t d = a.dim(1);
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) acc += a.at(i, k) * a.at(i, k);
    if (acc == 0.0) continue;
    const double inv = 1.0 / std::sqrt(acc);
    for (std::size_t k = 0; k < d; ++k) out.at(i, k) = a.at(i, k) * inv;
  }
  require_finite(out, "l2_normalize_rows");
  return out;
}

Tensor pixels_as_rows(const Tensor& map) {
  if (map.rank() != 3) throw Error(ErrorCode::InvalidShape, "pixels_as_rows needs D×H×W");
  const std::size_t d = map.dim(0), m = map.dim(1) * map.dim(2);
  Tensor out({m, d});
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t p = 0; p < m; ++p) out[p * d + c] = map[c * m + p];
  }
  return out;
}

PcaResult pca_decompose(const Tensor& map, std::size_t k, const PcaOptions& options) {
  if (map.rank() != 3) throw Error(ErrorCode::InvalidShape, "pca needs C×H×W");
  const std::size_t c = map.dim(0), n = map.dim(1) * map.dim(2);
  if (k == 0 || k > std::min(c, n)) throw Error(ErrorCode::InvalidShape, "pca k out of range");

  PcaResult result;
  result.mean.assign(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::size_t p = 0; p < n; ++p) acc += map[ch * n + p];
    result.mean[ch] = acc / static_cast<double>(n);
  }
  std::vector<double> centered(c * n);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < n; ++p) centered[ch * n + p] = map[ch * n + p] - result.mean[ch];
  }
  std::vector<double> cov(c * c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = i; j < c; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < n; ++p) acc += centered[i * n + p] * centered[j * n + p];
      cov[i * c + j] = cov[j * c + i] = acc / static_cast<double>(n);
    }
  }
  for (std::size_t i = 0; i < c; ++i) result.total_variance += cov[i * c + i];

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal;
  std::vector<std::vector<double>> comps;
  auto orthonormalize = [&](std::vector<double>& v) {
    for (const auto& u : comps) {
      const double proj = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
      for (std::size_t i = 0; i < c; ++i) v[i] -= proj * u[i];
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm == 0.0) return false;
    for (double& x : v) x /= norm;
    return true;
  };

  for (std::size_t comp = 0; comp < k; ++comp) {
    std::vector<double> v(c);
    for (double& x : v) x = normal(rng);
    orthonormalize(v);
    std::vector<double> next(c);
    for (int it = 0; it < options.max_iterations; ++it) {
      for (std::size_t i = 0; i < c; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += cov[i * c + j] * v[j];
        next[i] = acc;
      }
      if (!orthonormalize(next)) break;  // remaining covariance is zero
      double delta = 0.0;
      for (std::size_t i = 0; i < c; ++i) delta = std::max(delta, std::abs(next[i] - v[i]));
      v.swap(next);
      if (delta < options.tolerance) break;
    }
    double lambda = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < c; ++j) lambda += v[i] * cov[i * c + j] * v[j];
    }
    lambda = std::max(lambda, 0.0);
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < c; ++j) cov[i * c + j] -= lambda * v[i] * v[j];
    }
    result.eigenvalues.push_back(lambda);
    comps.push_back(v);
  }

  result.components = Tensor({k, c});
  result.scores = Tensor({k, n});
  for (std::size_t comp = 0; comp < k; ++comp) {
    for (std::size_t i = 0; i < c; ++i) result.components.at(comp, i) = comps[comp][i];
    for (std::size_t p = 0; p < n; ++p) {
      double acc = 0.0;
      for (std::size_t i = 0; i < c; ++i) acc += comps[comp][i] * centered[i * n + p];
      result.scores.at(comp, p) = acc;
    }
  }
  const double explained = std::accumulate(result.eigenvalues.begin(), result.eigenvalues.end(), 0.0);
  result.explained_variance_ratio =
      result.total_variance > 0.0 ? explained / result.total_variance : 0.0;
  return result;
}

Tensor pca_project(const Tensor& map, std::size_t k, const PcaOptions& options) {
  const PcaResult pca = pca_decompose(map, k, options);
  const std::size_t n = map.dim(1) * map.dim(2);
  Tensor out({k, map.dim(1), map.dim(2)});
  for (std::size_t comp = 0; comp < k; ++comp) {
    double lo = pca.scores.at(comp, 0), hi = lo;
    for (std::size_t p = 0; p < n; ++p) {
      lo = std::min(lo, pca.scores.at(comp, p));
      hi = std::max(hi, pca.scores.at(comp, p));
    }
    // visual threshold: spreads below this are treated as flat
    const double span = hi - lo;
    for (std::size_t p = 0; p < n; ++p) {
      out[comp * n + p] = span > 1e-12 ? (pca.scores.at(comp, p) - lo) / span : 0.5;
    }
  }
  require_finite(out, "pca_project");
  return out;
}

}  // namespace hyperagg
