#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hyperagg/tensor.hpp"

namespace hyperagg {

enum class Direction : std::uint8_t { Generation = 0, Inversion = 1 };

const char* to_string(Direction direction);
Direction toggled(Direction direction);

// Cached feature maps r[l][s] of one chain: L layers × S timestep slots.
// Slots are numbered in denoiser-call order; slot_timesteps holds the
// diffusion timestep each slot was taken at, so it increases along an
// Inversion chain and decreases along a Generation chain.
struct FeatureStack {
  std::size_t layers = 0;
  std::size_t slots = 0;
  std::vector<Tensor> maps;  // l-major: maps[l * slots + s], each C_l×H_l×W_l
  std::vector<std::uint32_t> slot_timesteps;
  Direction direction = Direction::Inversion;
  bool conditional = false;
  std::map<std::string, std::string> meta;

  const Tensor& map(std::size_t layer, std::size_t slot) const { return maps[layer * slots + slot]; }
  Tensor& map(std::size_t layer, std::size_t slot) { return maps[layer * slots + slot]; }

  std::size_t channels(std::size_t layer) const { return map(layer, 0).dim(0); }

  // Throws InvalidInput describing the first violated invariant.
  void validate() const;

  bool operator==(const FeatureStack&) const = default;
};

// maps[l][s] ↦ maps[l][S-1-s], timesteps reversed, direction toggled.
FeatureStack flip_timestep_order(const FeatureStack& stack);

}  // namespace hyperagg
