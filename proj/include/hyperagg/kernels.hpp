#pragma once

#include <cstddef>

// Hot loops used by the numerics, aggregation, training and matching code.
//
// Two implementations share one signature set: `serial` is the plain
// per-output-element loop nest kept as the reference, `parallel` reorders
// loops for contiguous inner access and spreads independent outputs over
// OpenMP threads. Every output element is reduced in a fixed order, so the
// parallel results do not depend on the thread count.
//
// Layouts: feature maps are C×H×W, conv weights O×C×k×k, matrices row-major.
namespace hyperagg::kernels {

struct ConvDims {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel = 1;  // 1 or 3; zero padding kernel/2, stride 1
};

struct Match {
  std::size_t index = 0;
  double similarity = 0.0;
};

namespace serial {

void conv2d_forward(const ConvDims& dims, const double* input, const double* weight,
                    const double* bias, double* output);
// Overwrites grad_input.
void conv2d_backward_input(const ConvDims& dims, const double* grad_output,
                           const double* weight, double* grad_input);
// Overwrites grad_weight and grad_bias.
void conv2d_backward_params(const ConvDims& dims, const double* input,
                            const double* grad_output, double* grad_weight,
                            double* grad_bias);
void bilinear_resize(const double* src, std::size_t channels, std::size_t in_h,
                     std::size_t in_w, double* dst, std::size_t out_h, std::size_t out_w);
// Adjoint of bilinear_resize; accumulates into grad_src.
void bilinear_resize_adjoint(const double* grad_dst, std::size_t channels,
                             std::size_t in_h, std::size_t in_w, double* grad_src,
                             std::size_t out_h, std::size_t out_w);
// out (n×m) = scale · A(n×d) · B(m×d)ᵀ
void gemm_abt(const double* a, const double* b, std::size_t n, std::size_t m,
              std::size_t d, double scale, double* out);
// Per query row, argmax cosine similarity over target rows; ties → lowest index.
void nearest_by_cosine(const double* queries, std::size_t n_queries,
                       const double* targets, std::size_t n_targets, std::size_t d,
                       Match* out);

}  // namespace serial

namespace parallel {

void conv2d_forward(const ConvDims& dims, const double* input, const double* weight,
                    const double* bias, double* output);
void conv2d_backward_input(const ConvDims& dims, const double* grad_output,
                           const double* weight, double* grad_input);
void conv2d_backward_params(const ConvDims& dims, const double* input,
                            const double* grad_output, double* grad_weight,
                            double* grad_bias);
void bilinear_resize(const double* src, std::size_t channels, std::size_t in_h,
                     std::size_t in_w, double* dst, std::size_t out_h, std::size_t out_w);
void bilinear_resize_adjoint(const double* grad_dst, std::size_t channels,
                             std::size_t in_h, std::size_t in_w, double* grad_src,
                             std::size_t out_h, std::size_t out_w);
void gemm_abt(const double* a, const double* b, std::size_t n, std::size_t m,
              std::size_t d, double scale, double* out);
void nearest_by_cosine(const double* queries, std::size_t n_queries,
                       const double* targets, std::size_t n_targets, std::size_t d,
                       Match* out);

}  // namespace parallel

using parallel::bilinear_resize;
using parallel::bilinear_resize_adjoint;
using parallel::conv2d_backward_input;
using parallel::conv2d_backward_params;
using parallel::conv2d_forward;
using parallel::gemm_abt;
using parallel::nearest_by_cosine;

// Thread cap for the parallel set; 0 means the OpenMP default.
void set_thread_limit(int threads);
int thread_limit();
// Reads HYPERAGG_THREADS and applies it as the cap when set.
void apply_thread_limit_from_env();

}  // namespace hyperagg::kernels
