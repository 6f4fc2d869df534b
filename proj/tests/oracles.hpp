#pragma once

// Independent scalar reference implementations used as test oracles. Each
// is a direct loop nest over the defining formula, sharing no code with the
// library kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "hyperagg/aggregator.hpp"
#include "hyperagg/tensor.hpp"

namespace oracle {

using hyperagg::Tensor;

inline Tensor random_tensor(Tensor::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, scale);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

inline Tensor uniform_tensor(Tensor::Shape shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Bilinear, align-corners=false, clamped source coordinates.
inline double resize_sample(const Tensor& src, std::size_t c, std::size_t oy, std::size_t ox, std::size_t out_h,
                            std::size_t out_w) {
  const double in_h = static_cast<double>(src.dim(1)), in_w = static_cast<double>(src.dim(2));
  double sy = (oy + 0.5) * in_h / out_h - 0.5;
  double sx = (ox + 0.5) * in_w / out_w - 0.5;
  sy = std::min(std::max(sy, 0.0), in_h - 1);
  sx = std::min(std::max(sx, 0.0), in_w - 1);
  const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
  const std::size_t y1 = std::min<std::size_t>(y0 + 1, src.dim(1) - 1);
  const std::size_t x1 = std::min<std::size_t>(x0 + 1, src.dim(2) - 1);
  const double fy = sy - y0, fx = sx - x0;
  const double top = src.at(c, y0, x0) * (1 - fx) + src.at(c, y0, x1) * fx;
  const double bottom = src.at(c, y1, x0) * (1 - fx) + src.at(c, y1, x1) * fx;
  return top * (1 - fy) + bottom * fy;
}

inline Tensor resize(const Tensor& src, std::size_t out_h, std::size_t out_w) {
  Tensor out({src.dim(0), out_h, out_w});
  for (std::size_t c = 0; c < src.dim(0); ++c) {
    for (std::size_t y = 0; y < out_h; ++y) {
      for (std::size_t x = 0; x < out_w; ++x) out.at(c, y, x) = resize_sample(src, c, y, x, out_h, out_w);
    }
  }
  return out;
}

// Zero-padded stride-1 convolution; weight O×C×k×k (or O×C for 1×1), bias O.
inline Tensor conv(const Tensor& in, const Tensor& weight, const Tensor& bias) {
  const std::size_t o_ch = weight.dim(0), c_ch = weight.dim(1), k = weight.rank() == 4 ? weight.dim(2) : 1;
  const std::size_t h = in.dim(1), w = in.dim(2);
  const long pad = static_cast<long>(k / 2);
  Tensor out({o_ch, h, w});
  for (std::size_t o = 0; o < o_ch; ++o) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = bias[o];
        for (std::size_t c = 0; c < c_ch; ++c) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = static_cast<long>(y + ky) - pad, ix = static_cast<long>(x + kx) - pad;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              acc += weight[((o * c_ch + c) * k + ky) * k + kx] * in.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
          }
        }
        out.at(o, y, x) = acc;
      }
    }
  }
  return out;
}

inline Tensor relu(Tensor t) {
  for (double& v : t.values()) v = std::max(v, 0.0);
  return t;
}

inline Tensor bottleneck(const hyperagg::Bottleneck& b, const Tensor& x) {
  Tensor main = relu(conv(x, b.reduce_weight, b.reduce_bias));
  main = relu(conv(main, b.spatial_weight, b.spatial_bias));
  main = conv(main, b.expand_weight, b.expand_bias);
  const Tensor skip = conv(x, b.project_weight, b.project_bias);
  for (std::size_t i = 0; i < main.size(); ++i) main[i] += skip[i];
  return main;
}

// Index of the target pixel with the highest cosine similarity to `query`;
// first index wins ties. map is D×H×W.
inline std::size_t brute_force_nn(const std::vector<double>& query, const Tensor& map, double* best_sim = nullptr) {
  const std::size_t d = map.dim(0), n = map.dim(1) * map.dim(2);
  double qn = 0.0;
  for (double v : query) qn += v * v;
  qn = std::sqrt(qn);
  std::size_t best = 0;
  double best_value = -1e300;
  for (std::size_t p = 0; p < n; ++p) {
    double dot = 0.0, tn = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      dot += query[c] * map[c * n + p];
      tn += map[c * n + p] * map[c * n + p];
    }
    const double sim = dot / (qn * std::sqrt(tn) + 1e-12);
    if (sim > best_value) {
      best_value = sim;
      best = p;
    }
  }
  if (best_sim) *best_sim = best_value;
  return best;
}

// Bilinear sample of a D×H×W map at real (x, y), clamped.
inline std::vector<double> sample(const Tensor& map, double x, double y) {
  const std::size_t h = map.dim(1), w = map.dim(2);
  x = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
  y = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
  const auto x0 = static_cast<std::size_t>(x), y0 = static_cast<std::size_t>(y);
  const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0, fy = y - y0;
  std::vector<double> out(map.dim(0));
  for (std::size_t c = 0; c < map.dim(0); ++c) {
    out[c] = (1 - fy) * ((1 - fx) * map.at(c, y0, x0) + fx * map.at(c, y0, x1)) +
             fy * ((1 - fx) * map.at(c, y1, x0) + fx * map.at(c, y1, x1));
  }
  return out;
}

// Symmetric cross-entropy over all cells with explicit log-sum-exp loops.
inline double correspondence_loss(const Tensor& a, const Tensor& b,
                                  const std::vector<std::pair<std::size_t, std::size_t>>& kps, double tau) {
  const std::size_t d = a.dim(0), m = a.dim(1) * a.dim(2);
  auto unit = [&](const Tensor& t, std::size_t p) {
    std::vector<double> v(d);
    double n = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      v[c] = t[c * m + p];
      n += v[c] * v[c];
    }
    n = std::sqrt(n);
    if (n > 0) {
      for (double& x : v) x /= n;
    }
    return v;
  };
  std::vector<std::vector<double>> ua(m), ub(m);
  for (std::size_t p = 0; p < m; ++p) {
    ua[p] = unit(a, p);
    ub[p] = unit(b, p);
  }
  auto sim = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += ua[i][c] * ub[j][c];
    return tau * s;
  };
  double total = 0.0;
  for (const auto& [ca, cb] : kps) {
    double row_max = -1e300, col_max = -1e300;
    for (std::size_t j = 0; j < m; ++j) row_max = std::max(row_max, sim(ca, j));
    for (std::size_t i = 0; i < m; ++i) col_max = std::max(col_max, sim(i, cb));
    double row_sum = 0.0, col_sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) row_sum += std::exp(sim(ca, j) - row_max);
    for (std::size_t i = 0; i < m; ++i) col_sum += std::exp(sim(i, cb) - col_max);
    const double row_ce = row_max + std::log(row_sum) - sim(ca, cb);
    const double col_ce = col_max + std::log(col_sum) - sim(ca, cb);
    total += 0.5 * (row_ce + col_ce);
  }
  return total / static_cast<double>(kps.size());
}

// Closed-form parameter count of one aggregator.
inline std::size_t parameter_count(const std::vector<std::size_t>& channels, std::size_t slots, std::size_t d) {
  const std::size_t h = d / 2;
  std::size_t total = channels.size() * slots;
  for (std::size_t c : channels) total += (c * h + h) + (h * h * 9 + h) + (h * d + d) + (c * d + d);
  return total;
}

}  // namespace oracle
