#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hyperagg/feature_stack.hpp"
#include "hyperagg/tensor.hpp"

namespace hyperagg {

struct AggregatorConfig {
  std::vector<std::size_t> layer_channels;  // C_l
  std::size_t slots = 0;                    // S
  std::size_t descriptor_dim = 32;          // D, even
  std::size_t out_h = 16;                   // standard resolution H'
  std::size_t out_w = 16;                   // standard resolution W'

  std::size_t layers() const { return layer_channels.size(); }
  void validate() const;  // InvalidConfig
  bool operator==(const AggregatorConfig&) const = default;
};

// Layer signature of a stack with the given descriptor settings.
AggregatorConfig config_for_stack(const FeatureStack& stack, std::size_t descriptor_dim,
                                  std::size_t out_h, std::size_t out_w);

// Residual bottleneck shared by all timesteps of one layer:
//   main  = expand(relu(spatial3x3(relu(reduce(x)))))
//   out   = main + project(x)
// reduce C→D/2, spatial D/2→D/2 (pad 1), expand D/2→D, project C→D.
struct Bottleneck {
  Tensor reduce_weight, reduce_bias;
  Tensor spatial_weight, spatial_bias;
  Tensor expand_weight, expand_bias;
  Tensor project_weight, project_bias;

  std::size_t in_channels() const { return reduce_weight.dim(1); }
  std::size_t out_channels() const { return expand_weight.dim(0); }
  bool operator==(const Bottleneck&) const = default;
};

struct AggregatorParams {
  AggregatorConfig config;
  std::vector<Bottleneck> bottlenecks;
  Tensor mixing_logits;  // L×S

  // Declaration order: per layer the eight bottleneck tensors, then logits.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  // Parallel to tensors(): true for conv weights (subject to weight decay).
  std::vector<bool> decay_mask() const;
  std::size_t parameter_count() const;

  // softmax over all L·S logits, L×S.
  Tensor mixing_weights() const;

  bool operator==(const AggregatorParams&) const = default;
};

AggregatorParams init_params(const AggregatorConfig& config, std::uint64_t seed);

// map must already be at the standard resolution.
Tensor bottleneck_forward(const Bottleneck& block, const Tensor& map);

struct HyperfeatureMap {
  Tensor data;  // D×H'×W'
  std::map<std::string, std::string> provenance;
};

// Σ_{l,s} w_{l,s} · B_l(resize(r_{l,s})) with w = softmax(mixing_logits).
HyperfeatureMap aggregate(const AggregatorParams& params, const FeatureStack& stack);
// Same with an explicit L×S weight grid instead of the softmax.
HyperfeatureMap aggregate_with_weights(const AggregatorParams& params, const FeatureStack& stack,
                                       const Tensor& weights);

struct TopWeight {
  std::size_t layer = 0;
  std::size_t slot = 0;
  double weight = 0.0;
};

// Argmax of the weight grid; ties → smallest layer, then slot.
TopWeight top_mixing_weight(const AggregatorParams& params);

struct PrunedMaps {
  Tensor raw;           // resize(r_{l*,s*}) at the standard resolution
  Tensor bottlenecked;  // B_{l*}(raw)
  TopWeight top;
};

PrunedMaps pruned_variants(const AggregatorParams& params, const FeatureStack& stack);

// Viridis colormap, v ∈ [0, 1].
std::array<std::uint8_t, 3> viridis(double v);

// L×S weight grid; writes a PPM heatmap (rows = layers, cols = slots) when
// path is non-empty.
Tensor weight_heatmap(const AggregatorParams& params, const std::filesystem::path& path = {},
                      std::size_t cell_px = 16);

// DHAW checkpoint: "DHAW" | u32 version | u32 L,S,D,H',W' | u32 C_l[L]
// | f64 tensors in declaration order | u32 CRC32 of all preceding bytes.
std::vector<std::uint8_t> encode_checkpoint(const AggregatorParams& params);
AggregatorParams decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void write_checkpoint(const AggregatorParams& params, const std::filesystem::path& path);
AggregatorParams read_checkpoint(const std::filesystem::path& path);

}  // namespace hyperagg
