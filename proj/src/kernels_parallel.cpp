#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "hyperagg/kernels.hpp"
#include "resize_taps.hpp"

namespace hyperagg::kernels {

namespace {
int g_thread_limit = 0;
}

void set_thread_limit(int threads) {
  g_thread_limit = std::max(threads, 0);
#ifdef _OPENMP
  if (g_thread_limit > 0) omp_set_num_threads(g_thread_limit);
#endif
}

int thread_limit() { return g_thread_limit; }

void apply_thread_limit_from_env() {
  if (const char* env = std::getenv("HYPERAGG_THREADS")) {
    try {
      set_thread_limit(std::stoi(env));
    } catch (const std::exception&) {
      // malformed values leave the OpenMP default in place
    }
  }
}

namespace parallel {

namespace {

// Valid output range [lo, hi) along an axis for kernel offset `off` - pad.
struct Span {
  std::size_t lo, hi;
};

Span valid_range(std::size_t size, std::size_t off, std::size_t pad) {
  // output index i reads input i + off - pad
  const long shift = static_cast<long>(off) - static_cast<long>(pad);
  const long lo = std::max<long>(0, -shift);
  const long hi = std::min<long>(static_cast<long>(size), static_cast<long>(size) - shift);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

void conv2d_forward(const ConvDims& d, const double* input, const double* weight,
                    const double* bias, double* output) {
  const std::size_t k = d.kernel;
  const std::size_t pad = k / 2;
  const std::size_t plane = d.height * d.width;
  const long out_ch = static_cast<long>(d.out_channels);
#pragma omp parallel for schedule(static)
  for (long oi = 0; oi < out_ch; ++oi) {
    const auto o = static_cast<std::size_t>(oi);
    double* out = output + o * plane;
    std::fill(out, out + plane, bias[o]);
    for (std::size_t c = 0; c < d.in_channels; ++c) {
      const double* in = input + c * plane;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const Span ys = valid_range(d.height, ky, pad);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const Span xs = valid_range(d.width, kx, pad);
          const double w = weight[((o * d.in_channels + c) * k + ky) * k + kx];
          for (std::size_t y = ys.lo; y < ys.hi; ++y) {
            double* row = out + y * d.width;
            const double* src = in + (y + ky - pad) * d.width;
            for (std::size_t x = xs.lo; x < xs.hi; ++x) row[x] += w * src[x + kx - pad];
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvDims& d, const double* grad_output,
                           const double* weight, double* grad_input) {
  const std::size_t k = d.kernel;
  const std::size_t pad = k / 2;
  const std::size_t plane = d.height * d.width;
  const long in_ch = static_cast<long>(d.in_channels);
#pragma omp parallel for schedule(static)
  for (long ci = 0; ci < in_ch; ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    double* gin = grad_input + c * plane;
    std::fill(gin, gin + plane, 0.0);
    for (std::size_t o = 0; o < d.out_channels; ++o) {
      const double* gout = grad_output + o * plane;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const Span ys = valid_range(d.height, ky, pad);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const Span xs = valid_range(d.width, kx, pad);
          const double w = weight[((o * d.in_channels + c) * k + ky) * k + kx];
          for (std::size_t y = ys.lo; y < ys.hi; ++y) {
            double* dst = gin + (y + ky - pad) * d.width;
            const double* g = gout + y * d.width;
            for (std::size_t x = xs.lo; x < xs.hi; ++x) dst[x + kx - pad] += w * g[x];
          }
        }
      }
    }
  }
}

void conv2d_backward_params(const ConvDims& d, const double* input,
                            const double* grad_output, double* grad_weight,
                            double* grad_bias) {
  const std::size_t k = d.kernel;
  const std::size_t pad = k / 2;
  const std::size_t plane = d.height * d.width;
  const long out_ch = static_cast<long>(d.out_channels);
#pragma omp parallel for schedule(static)
  for (long oi = 0; oi < out_ch; ++oi) {
    const auto o = static_cast<std::size_t>(oi);
    const double* gout = grad_output + o * plane;
    double bias_acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) bias_acc += gout[p];
    grad_bias[o] = bias_acc;
    for (std::size_t c = 0; c < d.in_channels; ++c) {
      const double* in = input + c * plane;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const Span ys = valid_range(d.height, ky, pad);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const Span xs = valid_range(d.width, kx, pad);
          double acc = 0.0;
          for (std::size_t y = ys.lo; y < ys.hi; ++y) {
            const double* g = gout + y * d.width;
            const double* src = in + (y + ky - pad) * d.width;
            for (std::size_t x = xs.lo; x < xs.hi; ++x) acc += g[x] * src[x + kx - pad];
          }
          grad_weight[((o * d.in_channels + c) * k + ky) * k + kx] = acc;
        }
      }
    }
  }
}

void bilinear_resize(const double* src, std::size_t channels, std::size_t in_h,
                     std::size_t in_w, double* dst, std::size_t out_h, std::size_t out_w) {
  std::vector<detail::Tap> ty(out_h), tx(out_w);
  for (std::size_t y = 0; y < out_h; ++y) ty[y] = detail::resize_tap(y, in_h, out_h);
  for (std::size_t x = 0; x < out_w; ++x) tx[x] = detail::resize_tap(x, in_w, out_w);
  const long ch = static_cast<long>(channels);
#pragma omp parallel for schedule(static)
  for (long ci = 0; ci < ch; ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    const double* plane = src + c * in_h * in_w;
    double* out = dst + c * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const double* r0 = plane + ty[y].lo * in_w;
      const double* r1 = plane + ty[y].hi * in_w;
      for (std::size_t x = 0; x < out_w; ++x) {
        out[y * out_w + x] = detail::lerp2(r0[tx[x].lo], r0[tx[x].hi], r1[tx[x].lo],
                                           r1[tx[x].hi], ty[y].frac, tx[x].frac);
      }
    }
  }
}

void bilinear_resize_adjoint(const double* grad_dst, std::size_t channels,
                             std::size_t in_h, std::size_t in_w, double* grad_src,
                             std::size_t out_h, std::size_t out_w) {
  std::vector<detail::Tap> ty(out_h), tx(out_w);
  for (std::size_t y = 0; y < out_h; ++y) ty[y] = detail::resize_tap(y, in_h, out_h);
  for (std::size_t x = 0; x < out_w; ++x) tx[x] = detail::resize_tap(x, in_w, out_w);
  const long ch = static_cast<long>(channels);
#pragma omp parallel for schedule(static)
  for (long ci = 0; ci < ch; ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    double* plane = grad_src + c * in_h * in_w;
    const double* g = grad_dst + c * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const double fy = ty[y].frac;
      double* r0 = plane + ty[y].lo * in_w;
      double* r1 = plane + ty[y].hi * in_w;
      for (std::size_t x = 0; x < out_w; ++x) {
        const double v = g[y * out_w + x];
        const double fx = tx[x].frac;
        r0[tx[x].lo] += v * (1.0 - fy) * (1.0 - fx);
        r0[tx[x].hi] += v * (1.0 - fy) * fx;
        r1[tx[x].lo] += v * fy * (1.0 - fx);
        r1[tx[x].hi] += v * fy * fx;
      }
    }
  }
}

void gemm_abt(const double* a, const double* b, std::size_t n, std::size_t m,
              std::size_t d, double scale, double* out) {
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static)
  for (long ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* ar = a + i * d;
    for (std::size_t j = 0; j < m; ++j) {
      const double* br = b + j * d;
      double acc = 0.0;
      for (std::size_t t = 0; t < d; ++t) acc += ar[t] * br[t];
      out[i * m + j] = scale * acc;
    }
  }
}

void nearest_by_cosine(const double* queries, std::size_t n_queries,
                       const double* targets, std::size_t n_targets, std::size_t d,
                       Match* out) {
  std::vector<double> target_norms(n_targets);
  const long nt = static_cast<long>(n_targets);
#pragma omp parallel for schedule(static)
  for (long ji = 0; ji < nt; ++ji) {
    const double* tv = targets + static_cast<std::size_t>(ji) * d;
    double acc = 0.0;
    for (std::size_t t = 0; t < d; ++t) acc += tv[t] * tv[t];
    target_norms[static_cast<std::size_t>(ji)] = std::sqrt(acc);
  }
  const long nq = static_cast<long>(n_queries);
#pragma omp parallel for schedule(static)
  for (long qi = 0; qi < nq; ++qi) {
    const double* qv = queries + static_cast<std::size_t>(qi) * d;
    double qn = 0.0;
    for (std::size_t t = 0; t < d; ++t) qn += qv[t] * qv[t];
    qn = std::sqrt(qn);
    Match best{0, -std::numeric_limits<double>::infinity()};
    for (std::size_t j = 0; j < n_targets; ++j) {
      const double* tv = targets + j * d;
      double dot = 0.0;
      for (std::size_t t = 0; t < d; ++t) dot += qv[t] * tv[t];
      const double sim = dot / (qn * target_norms[j] + 1e-12);
      if (sim > best.similarity) best = {j, sim};
    }
    out[static_cast<std::size_t>(qi)] = best;
  }
}

}  // namespace parallel
}  // namespace hyperagg::kernels
