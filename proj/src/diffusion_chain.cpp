#include "hyperagg/diffusion_chain.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <string>

namespace hyperagg {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void ChainConfig::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidConfig, why); };
  if (num_steps < 1) fail("num_steps must be ≥ 1");
  if (alphas.size() != static_cast<std::size_t>(num_steps) + 1) fail("alphas must have T+1 entries");
  if (alphas[0] != 1.0) fail("alpha_0 must be 1");
  for (std::size_t t = 1; t < alphas.size(); ++t) {
    if (!(alphas[t] > 0.0 && alphas[t] <= 1.0)) fail("alphas must lie in (0, 1]");
    if (!(alphas[t] < alphas[t - 1])) fail("alphas must be strictly decreasing");
  }
  if (subsample_stride < 1 || subsample_stride > num_steps) fail("subsample_stride must be in [1, T]");
}

ChainConfig make_schedule(int num_steps, double beta_start, double beta_end, Direction direction,
                          int subsample_stride) {
  if (num_steps < 1 || !(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "need T ≥ 1 and 0 < beta_start ≤ beta_end < 1");
  }
  ChainConfig cfg;
  cfg.num_steps = num_steps;
  cfg.direction = direction;
  cfg.subsample_stride = subsample_stride;
  cfg.alphas.resize(static_cast<std::size_t>(num_steps) + 1);
  cfg.alphas[0] = 1.0;
  for (int i = 1; i <= num_steps; ++i) {
    const double frac = num_steps == 1 ? 0.0 : static_cast<double>(i - 1) / (num_steps - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    cfg.alphas[static_cast<std::size_t>(i)] = cfg.alphas[static_cast<std::size_t>(i) - 1] * (1.0 - beta);
  }
  cfg.validate();
  return cfg;
}

std::vector<int> subsample_timesteps(const ChainConfig& cfg) {
  cfg.validate();
  std::vector<int> slots;
  for (int t = 0; t < cfg.num_steps; t += cfg.subsample_stride) slots.push_back(t);
  if (slots.back() != cfg.num_steps - 1) slots.push_back(cfg.num_steps - 1);
  return slots;
}

Tensor ddim_step(const Tensor& x, double alpha_from, double alpha_to, const Tensor& epsilon) {
  if (x.shape() != epsilon.shape()) throw Error(ErrorCode::InvalidShape, "x and epsilon shapes differ");
  if (!(alpha_from > 0.0 && alpha_from <= 1.0 && alpha_to > 0.0 && alpha_to <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "alpha values must lie in (0, 1]");
  }
  if (alpha_from == alpha_to) return x;
  const double sf = std::sqrt(alpha_from), nf = std::sqrt(1.0 - alpha_from);
  const double st = std::sqrt(alpha_to), nt = std::sqrt(1.0 - alpha_to);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = (x[i] - nf * epsilon[i]) / sf;
    out[i] = st * x0 + nt * epsilon[i];
  }
  require_finite(out, "ddim_step");
  return out;
}

DenoiserOutput ZeroDenoiser::predict(const Tensor& x, int) const {
  DenoiserOutput out;
  out.epsilon = Tensor(x.shape());
  for (const auto& sig : layers_) out.features.emplace_back(Tensor::Shape{sig.channels, sig.height, sig.width});
  return out;
}

ChainResult run_chain(const Denoiser& denoiser, const Tensor& start, const ChainConfig& cfg) {
  cfg.validate();
  if (start.shape() != denoiser.latent_shape()) {
    throw Error(ErrorCode::InvalidShape, "start latent does not match the denoiser signature");
  }
  const std::vector<LayerSignature> signature = denoiser.layers();
  const std::vector<int> cached = subsample_timesteps(cfg);
  const int T = cfg.num_steps;
  const bool inversion = cfg.direction == Direction::Inversion;

  std::vector<std::vector<Tensor>> per_slot;
  std::vector<std::uint32_t> timesteps;
  Tensor x = start;
  for (int call = 0; call < T; ++call) {
    const int t = inversion ? call : T - 1 - call;
    DenoiserOutput out = denoiser.predict(x, t);
    if (out.features.size() != signature.size()) {
      throw Error(ErrorCode::InconsistentDenoiser,
                  "denoiser returned " + std::to_string(out.features.size()) + " maps, expected " +
                      std::to_string(signature.size()));
    }
    for (std::size_t l = 0; l < signature.size(); ++l) {
      const Tensor& f = out.features[l];
      if (f.rank() != 3 || LayerSignature{f.dim(0), f.dim(1), f.dim(2)} != signature[l]) {
        throw Error(ErrorCode::InconsistentDenoiser, "layer " + std::to_string(l) + " changed shape");
      }
    }
    if (std::binary_search(cached.begin(), cached.end(), t)) {
      per_slot.push_back(std::move(out.features));
      timesteps.push_back(static_cast<std::uint32_t>(t));
    }
    const auto tu = static_cast<std::size_t>(t);
    x = inversion ? ddim_step(x, cfg.alphas[tu], cfg.alphas[tu + 1], out.epsilon)
                  : ddim_step(x, cfg.alphas[tu + 1], cfg.alphas[tu], out.epsilon);
  }

  ChainResult result;
  result.final = std::move(x);
  FeatureStack& stack = result.stack;
  stack.layers = signature.size();
  stack.slots = per_slot.size();
  stack.direction = cfg.direction;
  stack.slot_timesteps = std::move(timesteps);
  stack.maps.resize(stack.layers * stack.slots);
  for (std::size_t s = 0; s < stack.slots; ++s) {
    for (std::size_t l = 0; l < stack.layers; ++l) stack.map(l, s) = std::move(per_slot[s][l]);
  }
  stack.meta["num_steps"] = std::to_string(T);
  stack.meta["stride"] = std::to_string(cfg.subsample_stride);
  for (Tensor& m : stack.maps) {
    for (double& v : m.values()) v = static_cast<double>(static_cast<float>(v));
  }
  return result;
}

Tensor gaussian_blur(const Tensor& map, double sigma) {
  if (map.rank() != 3) throw Error(ErrorCode::InvalidShape, "gaussian_blur needs C×H×W");
  if (sigma <= 0.0) return map;
  const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : kernel) v /= total;
  auto clampi = [](long v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1));
  };
  Tensor tmp(map.shape()), out(map.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 map.at(ch, y, clampi(static_cast<long>(x) + i, w));
        }
        tmp.at(ch, y, x) = acc;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 tmp.at(ch, clampi(static_cast<long>(y) + i, h), x);
        }
        out.at(ch, y, x) = acc;
      }
    }
  }
  return out;
}

namespace {

Tensor random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> normal;
  Tensor m({rows, cols});
  const double scale = cols > 0 ? 1.0 / std::sqrt(static_cast<double>(cols)) : 0.0;
  for (double& v : m.values()) v = normal(rng) * scale;
  return m;
}

std::uint64_t content_hash(const Tensor& t) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : t.values()) {
    h ^= std::bit_cast<std::uint64_t>(v);
    h *= 1099511628211ULL;
  }
  return h;
}

// out (rows×n) = m (rows×k) · src (k×n), src channels [first, first+k).
void project_channels(const Tensor& m, const Tensor& src, std::size_t first, double weight,
                      Tensor& out) {
  const std::size_t rows = m.dim(0), k = m.dim(1), n = src.dim(1) * src.dim(2);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      const double coef = weight * m.at(r, j);
      const double* s = src.data() + (first + j) * n;
      double* o = out.data() + r * n;
      for (std::size_t p = 0; p < n; ++p) o[p] += coef * s[p];
    }
  }
}

// Box average for integer factors, otherwise blur then bilinear.
Tensor downsample(const Tensor& map, std::size_t res_h, std::size_t res_w) {
  const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
  if (h == res_h && w == res_w) return map;
  if (h % res_h == 0 && w % res_w == 0) {
    const std::size_t fy = h / res_h, fx = w / res_w;
    const double inv = 1.0 / static_cast<double>(fy * fx);
    Tensor out({c, res_h, res_w});
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) out.at(ch, y / fy, x / fx) += map.at(ch, y, x);
      }
    }
    for (double& v : out.values()) v *= inv;
    return out;
  }
  const double factor = static_cast<double>(h) / static_cast<double>(res_h);
  const Tensor smooth = factor > 1.0 ? gaussian_blur(map, 0.5 * factor) : map;
  return bilinear_resize(smooth, res_h, res_w);
}

Tensor channel_slice(const Tensor& map, std::size_t first, std::size_t count) {
  const std::size_t plane = map.dim(1) * map.dim(2);
  Tensor out({count, map.dim(1), map.dim(2)});
  std::copy_n(map.data() + first * plane, count * plane, out.data());
  return out;
}

}  // namespace

ToyDenoiser::ToyDenoiser(std::uint64_t seed, Tensor base_field, ToyDenoiserOptions options)
    : seed_(seed), base_field_(std::move(base_field)), options_(std::move(options)) {
  if (base_field_.rank() != 3 || base_field_.size() == 0) {
    throw Error(ErrorCode::InvalidShape, "base_field must be a non-empty C×H×W map");
  }
  const std::size_t layers = options_.channel_plan.size();
  if (layers == 0) throw Error(ErrorCode::InvalidConfig, "channel_plan must not be empty");
  if (options_.coarse_channels >= base_field_.dim(0) && options_.coarse_channels != 0) {
    throw Error(ErrorCode::InvalidConfig, "coarse_channels must leave at least one fine channel");
  }
  if (options_.horizon < 1) throw Error(ErrorCode::InvalidConfig, "horizon must be ≥ 1");
  if (options_.resolutions.empty()) {
    for (std::size_t l = 0; l < layers; ++l) {
      options_.resolutions.push_back(std::max<std::size_t>(1, base_field_.dim(1) >> (layers - 1 - l)));
    }
  }
  if (options_.resolutions.size() != layers) {
    throw Error(ErrorCode::InvalidConfig, "resolutions must match channel_plan length");
  }
  noise_seed_ = options_.noise_seed != 0 ? options_.noise_seed : mix_seed(seed_, content_hash(base_field_));

  const std::size_t coarse = options_.coarse_channels;
  const std::size_t fine = base_field_.dim(0) - coarse;
  const std::size_t latent_ch = options_.latent_shape.at(0);
  std::mt19937_64 rng(mix_seed(seed_, 0x70f));
  std::normal_distribution<double> normal;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t c = options_.channel_plan[l];
    fine_proj_.push_back(random_matrix(rng, c, fine));
    coarse_proj_.push_back(random_matrix(rng, c, coarse));
    latent_proj_.push_back(random_matrix(rng, c, latent_ch));
    std::vector<double> offset(c);
    double norm = 0.0;
    for (double& v : offset) {
      v = normal(rng);
      norm += v * v;
    }
    for (double& v : offset) v /= std::sqrt(norm);
    offsets_.push_back(std::move(offset));
  }
}

std::vector<LayerSignature> ToyDenoiser::layers() const {
  std::vector<LayerSignature> out;
  for (std::size_t l = 0; l < options_.channel_plan.size(); ++l) {
    out.push_back({options_.channel_plan[l], options_.resolutions[l], options_.resolutions[l]});
  }
  return out;
}

Tensor ToyDenoiser::layer_features(std::size_t layer, const Tensor& x, int t, const Tensor& fine_field,
                                   const Tensor& coarse_field) const {
  const double tau = static_cast<double>(t) / static_cast<double>(options_.horizon);
  const std::size_t c = options_.channel_plan[layer];
  const std::size_t res = options_.resolutions[layer];

  // Projection and downsampling are both linear, so downsampling first is
  // the same map and far cheaper.
  Tensor out({c, res, res});
  project_channels(fine_proj_[layer], downsample(fine_field, res, res), 0, 1.0 - options_.fine_decay * tau, out);
  if (options_.coarse_channels > 0) {
    project_channels(coarse_proj_[layer], downsample(coarse_field, res, res), 0, options_.coarse_rise * tau, out);
  }

  const Tensor latent = downsample(x, res, res);
  Tensor coupled({c, res, res});
  project_channels(latent_proj_[layer], latent, 0, options_.latent_coupling, coupled);

  std::mt19937_64 rng(mix_seed(mix_seed(noise_seed_, layer), static_cast<std::uint64_t>(t)));
  std::normal_distribution<double> normal;
  const double noise = options_.noise + options_.noise_growth * tau;
  const std::size_t plane = res * res;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double dc = options_.dc_offset * offsets_[layer][ch];
    for (std::size_t p = 0; p < plane; ++p) {
      double& v = out[ch * plane + p];
      v += coupled[ch * plane + p] + dc + noise * normal(rng);
    }
  }
  return out;
}

DenoiserOutput ToyDenoiser::predict(const Tensor& x, int t) const {
  if (x.shape() != options_.latent_shape) throw Error(ErrorCode::InvalidShape, "latent shape mismatch");
  DenoiserOutput out;
  out.epsilon = Tensor(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.epsilon[i] = 0.5 * std::tanh(x[i]);
  const double tau = static_cast<double>(t) / static_cast<double>(options_.horizon);
  const std::size_t coarse = options_.coarse_channels, fine = base_field_.dim(0) - coarse;
  const Tensor fine_field =
      gaussian_blur(channel_slice(base_field_, 0, fine), options_.fine_blur + options_.fine_blur_growth * tau);
  const Tensor coarse_field =
      coarse > 0 ? gaussian_blur(channel_slice(base_field_, fine, coarse),
                                 options_.coarse_blur + options_.coarse_blur_growth * tau)
                 : Tensor();
  for (std::size_t l = 0; l < options_.channel_plan.size(); ++l) {
    out.features.push_back(layer_features(l, x, t, fine_field, coarse_field));
  }
  return out;
}

std::unique_ptr<Denoiser> toy_denoiser(std::uint64_t seed, std::size_t layers,
                                       std::vector<std::size_t> channel_plan, Tensor base_field,
                                       ToyDenoiserOptions options) {
  if (channel_plan.size() != layers) {
    throw Error(ErrorCode::InvalidConfig, "channel_plan length must equal the layer count");
  }
  options.channel_plan = std::move(channel_plan);
  return std::make_unique<ToyDenoiser>(seed, std::move(base_field), std::move(options));
}

}  // namespace hyperagg
