#include "hyperagg/feature_stack.hpp"

#include <string>

namespace hyperagg {

const char* to_string(Direction direction) {
  return direction == Direction::Inversion ? "inversion" : "generation";
}

Direction toggled(Direction direction) {
  return direction == Direction::Inversion ? Direction::Generation : Direction::Inversion;
}

void FeatureStack::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidInput, why); };
  if (layers == 0 || slots == 0) fail("stack must have at least one layer and one slot");
  if (maps.size() != layers * slots) fail("map grid has holes");
  if (slot_timesteps.size() != slots) fail("slot_timesteps length differs from slot count");
  for (std::size_t l = 0; l < layers; ++l) {
    const Tensor& first = map(l, 0);
    if (first.rank() != 3 || first.size() == 0) {
      fail("layer " + std::to_string(l) + " map is not a non-empty C×H×W tensor");
    }
    for (std::size_t s = 1; s < slots; ++s) {
      if (map(l, s).shape() != first.shape()) {
        fail("layer " + std::to_string(l) + " changes shape across slots");
      }
    }
  }
  for (std::size_t s = 1; s < slots; ++s) {
    const bool ok = direction == Direction::Inversion ? slot_timesteps[s] > slot_timesteps[s - 1]
                                                      : slot_timesteps[s] < slot_timesteps[s - 1];
    if (!ok) fail("slot timesteps are not strictly monotone along the chain direction");
  }
}

FeatureStack flip_timestep_order(const FeatureStack& stack) {
  FeatureStack out = stack;
  for (std::size_t l = 0; l < stack.layers; ++l) {
    for (std::size_t s = 0; s < stack.slots; ++s) {
      out.map(l, s) = stack.map(l, stack.slots - 1 - s);
    }
  }
  for (std::size_t s = 0; s < stack.slots; ++s) {
    out.slot_timesteps[s] = stack.slot_timesteps[stack.slots - 1 - s];
  }
  out.direction = toggled(stack.direction);
  return out;
}

}  // namespace hyperagg
