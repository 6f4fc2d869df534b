#include "hyperagg/aggregator.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

#include <zlib.h>

#include "hyperagg/image_io.hpp"
#include "hyperagg/kernels.hpp"

namespace hyperagg {

void AggregatorConfig::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidConfig, why); };
  if (layer_channels.empty()) fail("aggregator needs at least one layer");
  for (std::size_t c : layer_channels) {
    if (c == 0) fail("layer channel count must be positive");
  }
  if (slots == 0) fail("aggregator needs at least one slot");
  if (descriptor_dim < 2 || descriptor_dim % 2 != 0) fail("descriptor_dim must be even and ≥ 2");
  if (out_h == 0 || out_w == 0) fail("standard resolution must be ≥ 1");
}

AggregatorConfig config_for_stack(const FeatureStack& stack, std::size_t descriptor_dim,
                                  std::size_t out_h, std::size_t out_w) {
  stack.validate();
  AggregatorConfig cfg;
  for (std::size_t l = 0; l < stack.layers; ++l) cfg.layer_channels.push_back(stack.channels(l));
  cfg.slots = stack.slots;
  cfg.descriptor_dim = descriptor_dim;
  cfg.out_h = out_h;
  cfg.out_w = out_w;
  return cfg;
}

std::vector<Tensor*> AggregatorParams::tensors() {
  std::vector<Tensor*> out;
  for (Bottleneck& b : bottlenecks) {
    for (Tensor* t : {&b.reduce_weight, &b.reduce_bias, &b.spatial_weight, &b.spatial_bias,
                      &b.expand_weight, &b.expand_bias, &b.project_weight, &b.project_bias}) {
      out.push_back(t);
    }
  }
  out.push_back(&mixing_logits);
  return out;
}

std::vector<const Tensor*> AggregatorParams::tensors() const {
  auto mutable_list = const_cast<AggregatorParams*>(this)->tensors();
  return {mutable_list.begin(), mutable_list.end()};
}

std::vector<bool> AggregatorParams::decay_mask() const {
  std::vector<bool> mask;
  for (std::size_t l = 0; l < bottlenecks.size(); ++l) {
    for (bool is_weight : {true, false, true, false, true, false, true, false}) mask.push_back(is_weight);
  }
  mask.push_back(false);
  return mask;
}

std::size_t AggregatorParams::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

Tensor AggregatorParams::mixing_weights() const {
  return softmax(mixing_logits, config.slots);
}

AggregatorParams init_params(const AggregatorConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.descriptor_dim, half = d / 2;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  auto he = [&](Tensor::Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : t.values()) v = normal(rng) * stddev;
    return t;
  };
  AggregatorParams params;
  params.config = config;
  for (std::size_t c : config.layer_channels) {
    Bottleneck b;
    b.reduce_weight = he({half, c}, c);
    b.reduce_bias = Tensor({half});
    b.spatial_weight = he({half, half, 3, 3}, half * 9);
    b.spatial_bias = Tensor({half});
    b.expand_weight = he({d, half}, half);
    b.expand_bias = Tensor({d});
    b.project_weight = he({d, c}, c);
    b.project_bias = Tensor({d});
    params.bottlenecks.push_back(std::move(b));
  }
  params.mixing_logits = Tensor({config.layers(), config.slots});
  return params;
}

namespace {

Tensor conv(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  kernels::ConvDims dims;
  dims.in_channels = x.dim(0);
  dims.out_channels = weight.dim(0);
  dims.height = x.dim(1);
  dims.width = x.dim(2);
  dims.kernel = weight.rank() == 4 ? weight.dim(2) : 1;
  Tensor out({dims.out_channels, dims.height, dims.width});
  kernels::conv2d_forward(dims, x.data(), weight.data(), bias.data(), out.data());
  return out;
}

void relu_inplace(Tensor& t) {
  for (double& v : t.values()) v = v > 0.0 ? v : 0.0;
}

void check_stack(const AggregatorParams& params, const FeatureStack& stack) {
  stack.validate();
  if (stack.layers != params.config.layers() || stack.slots != params.config.slots) {
    throw Error(ErrorCode::InvalidShape, "stack grid " + std::to_string(stack.layers) + "×" +
                                             std::to_string(stack.slots) + " does not match aggregator " +
                                             std::to_string(params.config.layers()) + "×" +
                                             std::to_string(params.config.slots));
  }
  for (std::size_t l = 0; l < stack.layers; ++l) {
    if (stack.channels(l) != params.config.layer_channels[l]) {
      throw Error(ErrorCode::InvalidShape, "layer " + std::to_string(l) + " channel count mismatch");
    }
  }
}

Tensor branch(const AggregatorParams& params, const FeatureStack& stack, std::size_t l, std::size_t s) {
  const Tensor resized = bilinear_resize(stack.map(l, s), params.config.out_h, params.config.out_w);
  return bottleneck_forward(params.bottlenecks[l], resized);
}

}  // namespace

Tensor bottleneck_forward(const Bottleneck& block, const Tensor& map) {
  if (map.rank() != 3 || map.dim(0) != block.in_channels()) {
    throw Error(ErrorCode::InvalidShape, "bottleneck expects " + std::to_string(block.in_channels()) +
                                             " input channels");
  }
  Tensor h = conv(map, block.reduce_weight, block.reduce_bias);
  relu_inplace(h);
  h = conv(h, block.spatial_weight, block.spatial_bias);
  relu_inplace(h);
  Tensor out = conv(h, block.expand_weight, block.expand_bias);
  const Tensor shortcut = conv(map, block.project_weight, block.project_bias);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] + shortcut[i];
  return out;
}

HyperfeatureMap aggregate_with_weights(const AggregatorParams& params, const FeatureStack& stack,
                                       const Tensor& weights) {
  check_stack(params, stack);
  const std::size_t L = params.config.layers(), S = params.config.slots;
  if (weights.size() != L * S) throw Error(ErrorCode::InvalidShape, "weight grid must be L×S");
  const Tensor::Shape out_shape{params.config.descriptor_dim, params.config.out_h, params.config.out_w};
  const std::size_t n = shape_product(out_shape);

  // Slots s and S-1-s are summed as a pair before joining the layer total,
  // so reversing slot order (with the weights) reproduces the same bits.
  Tensor out(out_shape);
  std::vector<double> layer_acc(n);
  for (std::size_t l = 0; l < L; ++l) {
    std::fill(layer_acc.begin(), layer_acc.end(), 0.0);
    for (std::size_t s = 0; s < S / 2; ++s) {
      const std::size_t m = S - 1 - s;
      const Tensor a = branch(params, stack, l, s);
      const Tensor b = branch(params, stack, l, m);
      const double wa = weights[l * S + s], wb = weights[l * S + m];
      for (std::size_t i = 0; i < n; ++i) layer_acc[i] += wa * a[i] + wb * b[i];
    }
    if (S % 2 == 1) {
      const Tensor mid = branch(params, stack, l, S / 2);
      const double w = weights[l * S + S / 2];
      for (std::size_t i = 0; i < n; ++i) layer_acc[i] += w * mid[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] += layer_acc[i];
  }
  require_finite(out, "aggregate");
  HyperfeatureMap result;
  result.data = std::move(out);
  result.provenance = stack.meta;
  return result;
}

HyperfeatureMap aggregate(const AggregatorParams& params, const FeatureStack& stack) {
  return aggregate_with_weights(params, stack, params.mixing_weights());
}

TopWeight top_mixing_weight(const AggregatorParams& params) {
  const Tensor w = params.mixing_weights();
  const std::size_t S = params.config.slots;
  TopWeight best{0, 0, w[0]};
  for (std::size_t i = 1; i < w.size(); ++i) {
    if (w[i] > best.weight) best = {i / S, i % S, w[i]};
  }
  return best;
}

PrunedMaps pruned_variants(const AggregatorParams& params, const FeatureStack& stack) {
  check_stack(params, stack);
  PrunedMaps out;
  out.top = top_mixing_weight(params);
  out.raw = bilinear_resize(stack.map(out.top.layer, out.top.slot), params.config.out_h, params.config.out_w);
  out.bottlenecked = bottleneck_forward(params.bottlenecks[out.top.layer], out.raw);
  return out;
}

std::array<std::uint8_t, 3> viridis(double v) {
  static constexpr std::array<std::array<double, 3>, 5> kAnchors{{
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  const double x = std::clamp(v, 0.0, 1.0) * 4.0;
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(x), 3);
  const double f = x - static_cast<double>(i);
  std::array<std::uint8_t, 3> rgb{};
  for (std::size_t c = 0; c < 3; ++c) {
    rgb[c] = static_cast<std::uint8_t>(std::lround(kAnchors[i][c] * (1.0 - f) + kAnchors[i + 1][c] * f));
  }
  return rgb;
}

Tensor weight_heatmap(const AggregatorParams& params, const std::filesystem::path& path,
                      std::size_t cell_px) {
  const std::size_t L = params.config.layers(), S = params.config.slots;
  Tensor grid = params.mixing_weights().reshaped({L, S});
  if (path.empty()) return grid;
  const auto [lo_it, hi_it] = std::minmax_element(grid.values().begin(), grid.values().end());
  const double lo = *lo_it, span = *hi_it - *lo_it;
  Tensor img({3, L * cell_px, S * cell_px});
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t s = 0; s < S; ++s) {
      const auto rgb = viridis(span > 0.0 ? (grid.at(l, s) - lo) / span : 0.5);
      for (std::size_t y = 0; y < cell_px; ++y) {
        for (std::size_t x = 0; x < cell_px; ++x) {
          for (std::size_t c = 0; c < 3; ++c) {
            img.at(c, l * cell_px + y, s * cell_px + x) = rgb[c] / 255.0;
          }
        }
      }
    }
  }
  image_io::write_ppm(path, img);
  return grid;
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const AggregatorParams& params) {
  params.config.validate();
  std::vector<std::uint8_t> out{'D', 'H', 'A', 'W'};
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.config.layers()));
  put_u32(out, static_cast<std::uint32_t>(params.config.slots));
  put_u32(out, static_cast<std::uint32_t>(params.config.descriptor_dim));
  put_u32(out, static_cast<std::uint32_t>(params.config.out_h));
  put_u32(out, static_cast<std::uint32_t>(params.config.out_w));
  for (std::size_t c : params.config.layer_channels) put_u32(out, static_cast<std::uint32_t>(c));
  for (const Tensor* t : params.tensors()) {
    for (double v : t->values()) put_f64(out, v);
  }
  put_u32(out, crc_of(out.data(), out.size()));
  return out;
}

AggregatorParams decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (bytes.size() - pos < n) throw Error(ErrorCode::CorruptArchive, "checkpoint truncated");
  };
  auto u32 = [&]() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * i);
    return v;
  };
  auto f64 = [&]() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * i);
    return std::bit_cast<double>(v);
  };
  if (bytes.size() < 4 || !std::equal(bytes.begin(), bytes.begin() + 4, "DHAW")) {
    throw Error(ErrorCode::UnsupportedFormat, "bad checkpoint magic");
  }
  pos = 4;
  if (u32() != kCheckpointVersion) throw Error(ErrorCode::UnsupportedFormat, "unsupported checkpoint version");
  if (bytes.size() < 8 + 4) throw Error(ErrorCode::CorruptArchive, "checkpoint truncated");
  const std::uint32_t stored_crc = static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
                                   static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
                                   static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 |
                                   static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
  if (crc_of(bytes.data(), bytes.size() - 4) != stored_crc) {
    throw Error(ErrorCode::CorruptArchive, "checkpoint CRC mismatch");
  }
  AggregatorConfig cfg;
  const std::size_t layers = u32();
  cfg.slots = u32();
  cfg.descriptor_dim = u32();
  cfg.out_h = u32();
  cfg.out_w = u32();
  if (layers > (bytes.size() - pos) / 4) throw Error(ErrorCode::CorruptArchive, "checkpoint truncated");
  for (std::size_t l = 0; l < layers; ++l) cfg.layer_channels.push_back(u32());
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::CorruptArchive, e.what());
  }
  AggregatorParams params = init_params(cfg, 0);
  for (Tensor* t : params.tensors()) {
    for (double& v : t->values()) v = f64();
  }
  if (bytes.size() - pos != 4) throw Error(ErrorCode::CorruptArchive, "checkpoint size mismatch");
  return params;
}

void write_checkpoint(const AggregatorParams& params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

AggregatorParams read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace hyperagg
