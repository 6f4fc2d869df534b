#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "hyperagg/feature_stack.hpp"
#include "hyperagg/tensor.hpp"

namespace hyperagg {

inline constexpr double kDefaultBetaStart = 8.5e-4;
inline constexpr double kDefaultBetaEnd = 1.2e-2;

struct ChainConfig {
  int num_steps = 0;             // T
  std::vector<double> alphas;    // α_0..α_T, cumulative signal coefficients, α_0 = 1
  Direction direction = Direction::Inversion;
  int subsample_stride = 1;

  // Throws InvalidConfig.
  void validate() const;
};

// Linear β schedule over T steps, α_t = Π_{i≤t} (1 − β_i).
ChainConfig make_schedule(int num_steps, double beta_start = kDefaultBetaStart,
                          double beta_end = kDefaultBetaEnd,
                          Direction direction = Direction::Inversion, int subsample_stride = 1);

// Timesteps whose features are cached: {0, stride, 2·stride, ...} below T
// plus T−1. An Inversion chain visits t = 0..T−1, so these are also its
// call indices; a Generation chain visits the same set in reverse.
std::vector<int> subsample_timesteps(const ChainConfig& cfg);

// Deterministic DDIM update between two noise levels. Stepping to a smaller
// α moves toward noise, to a larger α toward the clean sample.
Tensor ddim_step(const Tensor& x, double alpha_from, double alpha_to, const Tensor& epsilon);

struct LayerSignature {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const LayerSignature&) const = default;
};

struct DenoiserOutput {
  Tensor epsilon;
  std::vector<Tensor> features;
};

class Denoiser {
 public:
  virtual ~Denoiser() = default;
  // Must be deterministic in (x, t) and safe to call concurrently.
  virtual DenoiserOutput predict(const Tensor& x, int t) const = 0;
  virtual std::vector<LayerSignature> layers() const = 0;
  virtual Tensor::Shape latent_shape() const = 0;
  std::size_t layer_count() const { return layers().size(); }
};

// ε ≡ 0 with all-zero feature maps.
class ZeroDenoiser final : public Denoiser {
 public:
  ZeroDenoiser(Tensor::Shape latent, std::vector<LayerSignature> layers)
      : latent_(std::move(latent)), layers_(std::move(layers)) {}
  DenoiserOutput predict(const Tensor& x, int t) const override;
  std::vector<LayerSignature> layers() const override { return layers_; }
  Tensor::Shape latent_shape() const override { return latent_; }

 private:
  Tensor::Shape latent_;
  std::vector<LayerSignature> layers_;
};

struct ChainResult {
  Tensor final;
  FeatureStack stack;
};

// Runs T denoiser calls from `start` (x_0 for Inversion, x_T for
// Generation) and caches features at subsample_timesteps(cfg). Cached maps
// are rounded to archive (f32) precision.
ChainResult run_chain(const Denoiser& denoiser, const Tensor& start, const ChainConfig& cfg);

// Desk-scale stand-in for a diffusion UNet. Feature maps are built from a
// ground-truth field: the leading "fine" channels dominate at small t and the
// trailing `coarse_channels` emerge as t grows, both blurred further and
// noise-corrupted more strongly as t approaches the horizon. Layer l is
// produced at resolution resolutions[l] with channel_plan[l] channels by a
// fixed random projection drawn from the model seed.
struct ToyDenoiserOptions {
  std::vector<std::size_t> channel_plan;
  std::vector<std::size_t> resolutions;  // empty → base/2^(L-1-l), coarse to fine
  Tensor::Shape latent_shape{4, 16, 16};
  int horizon = 10;                      // T the timestep is normalised by
  std::size_t coarse_channels = 0;
  std::uint64_t noise_seed = 0;          // 0 → derived from base_field content
  double fine_blur = 0.3;                // base-field pixels at t = 0
  double fine_blur_growth = 1.5;         // added at t = horizon
  double coarse_blur = 1.0;
  double coarse_blur_growth = 2.0;
  double fine_decay = 0.7;               // fine weight 1 − decay·τ
  double coarse_rise = 1.2;              // coarse weight rise·τ
  double noise = 0.05;
  double noise_growth = 0.6;
  double dc_offset = 2.0;                // per-layer constant offset magnitude
  double latent_coupling = 0.1;
};

class ToyDenoiser final : public Denoiser {
 public:
  ToyDenoiser(std::uint64_t seed, Tensor base_field, ToyDenoiserOptions options);

  DenoiserOutput predict(const Tensor& x, int t) const override;
  std::vector<LayerSignature> layers() const override;
  Tensor::Shape latent_shape() const override { return options_.latent_shape; }

  const Tensor& base_field() const { return base_field_; }

 private:
  Tensor layer_features(std::size_t layer, const Tensor& x, int t, const Tensor& fine_field,
                        const Tensor& coarse_field) const;

  std::uint64_t seed_;
  std::uint64_t noise_seed_;
  Tensor base_field_;
  ToyDenoiserOptions options_;
  std::vector<Tensor> fine_proj_;    // C_l × fine channels
  std::vector<Tensor> coarse_proj_;  // C_l × coarse channels
  std::vector<Tensor> latent_proj_;  // C_l × latent channels
  std::vector<std::vector<double>> offsets_;
};

std::unique_ptr<Denoiser> toy_denoiser(std::uint64_t seed, std::size_t layers,
                                       std::vector<std::size_t> channel_plan, Tensor base_field,
                                       ToyDenoiserOptions options = {});

// Separable Gaussian blur of each channel, sigma in pixels, clamped borders.
Tensor gaussian_blur(const Tensor& map, double sigma);

// splitmix64 step, used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace hyperagg
