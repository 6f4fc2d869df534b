#pragma once

#include <cstdint>
#include <vector>

#include "hyperagg/datasets.hpp"

namespace fixture {

// Pair i of a benchmark uses scene seed mix_seed(seed, i), like `toygen`.
inline std::vector<hyperagg::LoadedPair> toy_pairs(std::uint64_t seed, std::size_t n,
                                                   hyperagg::ToySpec base = {}) {
  std::vector<hyperagg::LoadedPair> out(n);
  const long count = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < count; ++i) {
    hyperagg::ToySpec spec = base;
    spec.seed = hyperagg::mix_seed(seed, static_cast<std::uint64_t>(i));
    hyperagg::ToyPair tp = hyperagg::generate_toy_pair(spec);
    out[static_cast<std::size_t>(i)] = {std::move(tp.record), std::move(tp.src_stack), std::move(tp.tgt_stack)};
  }
  return out;
}

}  // namespace fixture
