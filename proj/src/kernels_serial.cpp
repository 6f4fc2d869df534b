#include <cmath>
#include <limits>

#include "hyperagg/kernels.hpp"
#include "resize_taps.hpp"

namespace hyperagg::kernels::serial {

namespace {

double input_at(const ConvDims& d, const double* input, std::size_t c, long y, long x) {
  if (y < 0 || x < 0 || y >= static_cast<long>(d.height) || x >= static_cast<long>(d.width)) {
    return 0.0;
  }
  return input[(c * d.height + static_cast<std::size_t>(y)) * d.width + static_cast<std::size_t>(x)];
}

}  // namespace

void conv2d_forward(const ConvDims& d, const double* input, const double* weight,
                    const double* bias, double* output) {
  const long pad = static_cast<long>(d.kernel / 2);
  const std::size_t k = d.kernel;
  for (std::size_t o = 0; o < d.out_channels; ++o) {
    for (std::size_t y = 0; y < d.height; ++y) {
      for (std::size_t x = 0; x < d.width; ++x) {
        double acc = bias[o];
        for (std::size_t c = 0; c < d.in_channels; ++c) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long sy = static_cast<long>(y + ky) - pad;
              const long sx = static_cast<long>(x + kx) - pad;
              if (sy < 0 || sx < 0 || sy >= static_cast<long>(d.height) ||
                  sx >= static_cast<long>(d.width)) {
                continue;
              }
              acc += weight[((o * d.in_channels + c) * k + ky) * k + kx] *
                     input_at(d, input, c, sy, sx);
            }
          }
        }
        output[(o * d.height + y) * d.width + x] = acc;
      }
    }
  }
}

void conv2d_backward_input(const ConvDims& d, const double* grad_output,
                           const double* weight, double* grad_input) {
  const long pad = static_cast<long>(d.kernel / 2);
  const std::size_t k = d.kernel;
  for (std::size_t c = 0; c < d.in_channels; ++c) {
    for (std::size_t y = 0; y < d.height; ++y) {
      for (std::size_t x = 0; x < d.width; ++x) {
        double acc = 0.0;
        for (std::size_t o = 0; o < d.out_channels; ++o) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              // output (oy, ox) reads input (oy + ky - pad, ox + kx - pad)
              const long oy = static_cast<long>(y) - static_cast<long>(ky) + pad;
              const long ox = static_cast<long>(x) - static_cast<long>(kx) + pad;
              if (oy < 0 || ox < 0 || oy >= static_cast<long>(d.height) ||
                  ox >= static_cast<long>(d.width)) {
                continue;
              }
              acc += weight[((o * d.in_channels + c) * k + ky) * k + kx] *
                     grad_output[(o * d.height + static_cast<std::size_t>(oy)) * d.width +
                                 static_cast<std::size_t>(ox)];
            }
          }
        }
        grad_input[(c * d.height + y) * d.width + x] = acc;
      }
    }
  }
}

void conv2d_backward_params(const ConvDims& d, const double* input,
                            const double* grad_output, double* grad_weight,
                            double* grad_bias) {
  const long pad = static_cast<long>(d.kernel / 2);
  const std::size_t k = d.kernel;
  const std::size_t plane = d.height * d.width;
  for (std::size_t o = 0; o < d.out_channels; ++o) {
    double bias_acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) bias_acc += grad_output[o * plane + p];
    grad_bias[o] = bias_acc;
    for (std::size_t c = 0; c < d.in_channels; ++c) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          double acc = 0.0;
          for (std::size_t y = 0; y < d.height; ++y) {
            for (std::size_t x = 0; x < d.width; ++x) {
              acc += grad_output[o * plane + y * d.width + x] *
                     input_at(d, input, c, static_cast<long>(y + ky) - pad,
                              static_cast<long>(x + kx) - pad);
            }
          }
          grad_weight[((o * d.in_channels + c) * k + ky) * k + kx] = acc;
        }
      }
    }
  }
}

void bilinear_resize(const double* src, std::size_t channels, std::size_t in_h,
                     std::size_t in_w, double* dst, std::size_t out_h, std::size_t out_w) {
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = src + c * in_h * in_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const detail::Tap ty = detail::resize_tap(y, in_h, out_h);
      for (std::size_t x = 0; x < out_w; ++x) {
        const detail::Tap tx = detail::resize_tap(x, in_w, out_w);
        dst[(c * out_h + y) * out_w + x] =
            detail::lerp2(plane[ty.lo * in_w + tx.lo], plane[ty.lo * in_w + tx.hi],
                          plane[ty.hi * in_w + tx.lo], plane[ty.hi * in_w + tx.hi], ty.frac,
                          tx.frac);
      }
    }
  }
}

void bilinear_resize_adjoint(const double* grad_dst, std::size_t channels,
                             std::size_t in_h, std::size_t in_w, double* grad_src,
                             std::size_t out_h, std::size_t out_w) {
  for (std::size_t c = 0; c < channels; ++c) {
    double* plane = grad_src + c * in_h * in_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const detail::Tap ty = detail::resize_tap(y, in_h, out_h);
      for (std::size_t x = 0; x < out_w; ++x) {
        const detail::Tap tx = detail::resize_tap(x, in_w, out_w);
        const double g = grad_dst[(c * out_h + y) * out_w + x];
        plane[ty.lo * in_w + tx.lo] += g * (1.0 - ty.frac) * (1.0 - tx.frac);
        plane[ty.lo * in_w + tx.hi] += g * (1.0 - ty.frac) * tx.frac;
        plane[ty.hi * in_w + tx.lo] += g * ty.frac * (1.0 - tx.frac);
        plane[ty.hi * in_w + tx.hi] += g * ty.frac * tx.frac;
      }
    }
  }
}

void gemm_abt(const double* a, const double* b, std::size_t n, std::size_t m,
              std::size_t d, double scale, double* out) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < d; ++t) acc += a[i * d + t] * b[j * d + t];
      out[i * m + j] = scale * acc;
    }
  }
}

void nearest_by_cosine(const double* queries, std::size_t n_queries,
                       const double* targets, std::size_t n_targets, std::size_t d,
                       Match* out) {
  for (std::size_t q = 0; q < n_queries; ++q) {
    const double* qv = queries + q * d;
    double qn = 0.0;
    for (std::size_t t = 0; t < d; ++t) qn += qv[t] * qv[t];
    qn = std::sqrt(qn);
    Match best{0, -std::numeric_limits<double>::infinity()};
    for (std::size_t j = 0; j < n_targets; ++j) {
      const double* tv = targets + j * d;
      double dot = 0.0;
      double tn = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        dot += qv[t] * tv[t];
        tn += tv[t] * tv[t];
      }
      const double sim = dot / (qn * std::sqrt(tn) + 1e-12);
      if (sim > best.similarity) best = {j, sim};
    }
    out[q] = best;
  }
}

}  // namespace hyperagg::kernels::serial
