#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace hyperagg::kernels::detail {

// Two-tap linear interpolation stencil along one axis.
struct Tap {
  std::size_t lo = 0;
  std::size_t hi = 0;
  double frac = 0.0;
};

// align-corners=false source coordinate, clamped to the valid range.
inline Tap resize_tap(std::size_t out_index, std::size_t in_size, std::size_t out_size) {
  double src = (static_cast<double>(out_index) + 0.5) * static_cast<double>(in_size) /
                   static_cast<double>(out_size) -
               0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
  Tap tap;
  tap.lo = static_cast<std::size_t>(std::floor(src));
  tap.hi = std::min(tap.lo + 1, in_size - 1);
  tap.frac = src - static_cast<double>(tap.lo);
  return tap;
}

inline double lerp2(double v00, double v01, double v10, double v11, double fy, double fx) {
  return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
}

}  // namespace hyperagg::kernels::detail
