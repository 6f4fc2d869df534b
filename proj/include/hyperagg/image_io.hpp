#pragma once

#include <filesystem>

#include "hyperagg/tensor.hpp"

// Netpbm binary images. Pixel values are mapped to [0, 1] doubles on read
// and rounded back to 8 bits (maxval 255) on write.
namespace hyperagg::image_io {

// P6 → 3×H×W
Tensor read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor& rgb);

// P5 → 1×H×W
Tensor read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Tensor& gray);

// P7 RGB_ALPHA → 4×H×W
Tensor read_pam(const std::filesystem::path& path);
void write_pam(const std::filesystem::path& path, const Tensor& rgba);

}  // namespace hyperagg::image_io
