#include "hyperagg/datasets.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "hyperagg/feature_archive.hpp"

namespace hyperagg {

std::vector<Point> PairRecord::src_points() const {
  std::vector<Point> out;
  for (const auto& kp : kps) out.push_back(kp.src);
  return out;
}

std::vector<Point> PairRecord::tgt_points() const {
  std::vector<Point> out;
  for (const auto& kp : kps) out.push_back(kp.tgt);
  return out;
}

void PairRecord::validate(long index) const {
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::InvalidRecord, "record " + std::to_string(index) + ": " + why, index);
  };
  if (src.empty() || tgt.empty()) fail("archive paths must be set");
  if (src_size.w == 0 || src_size.h == 0 || tgt_size.w == 0 || tgt_size.h == 0) fail("image sizes must be positive");
  if (kps.empty()) fail("at least one keypoint pair is required");
  auto inside = [](const Point& p, ImageSize s) {
    return p.x >= 0.0 && p.y >= 0.0 && p.x < static_cast<double>(s.w) && p.y < static_cast<double>(s.h);
  };
  for (std::size_t k = 0; k < kps.size(); ++k) {
    if (!inside(kps[k].src, src_size)) fail("source keypoint " + std::to_string(k) + " outside the image");
    if (!inside(kps[k].tgt, tgt_size)) fail("target keypoint " + std::to_string(k) + " outside the image");
  }
  const BBox& b = tgt_bbox;
  if (!(b.x0 >= 0.0 && b.y0 >= 0.0 && b.x0 < b.x1 && b.y0 < b.y1 && b.x1 <= static_cast<double>(tgt_size.w) &&
        b.y1 <= static_cast<double>(tgt_size.h))) {
    fail("bbox must be non-empty and inside the target image");
  }
}

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

struct LineParser {
  long line_no;

  [[noreturn]] void fail(const std::string& why) const {
    throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + why, line_no);
  }

  double number(const std::string& s) const {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) fail("bad number '" + s + "'");
    return v;
  }

  std::size_t integer(const std::string& s) const {
    std::size_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) fail("bad integer '" + s + "'");
    return v;
  }

  ImageSize size(const std::string& s) const {
    const auto parts = split_on(s, 'x');
    if (parts.size() != 2) fail("size must be WxH");
    return {integer(parts[0]), integer(parts[1])};
  }

  Point point(const std::string& s) const {
    const auto parts = split_on(s, ':');
    if (parts.size() != 2) fail("point must be x:y");
    return {number(parts[0]), number(parts[1])};
  }
};

}  // namespace

std::string format_record(const PairRecord& r) {
  std::ostringstream out;
  out << "src=" << r.src << " tgt=" << r.tgt << " src_size=" << r.src_size.w << 'x' << r.src_size.h
      << " tgt_size=" << r.tgt_size.w << 'x' << r.tgt_size.h << " bbox=" << fmt(r.tgt_bbox.x0) << ','
      << fmt(r.tgt_bbox.y0) << ',' << fmt(r.tgt_bbox.x1) << ',' << fmt(r.tgt_bbox.y1) << " cat=" << r.category
      << " kps=";
  for (std::size_t k = 0; k < r.kps.size(); ++k) {
    if (k > 0) out << ';';
    out << fmt(r.kps[k].src.x) << ':' << fmt(r.kps[k].src.y) << '>' << fmt(r.kps[k].tgt.x) << ':'
        << fmt(r.kps[k].tgt.y);
  }
  return out.str();
}

PairRecord parse_record(const std::string& line, long line_no) {
  const LineParser p{line_no};
  PairRecord r;
  std::istringstream in(line);
  std::string token;
  std::vector<std::string> seen;
  while (in >> token) {
    const std::size_t eq = token.find('=');
    if (eq == std::string::npos) p.fail("field '" + token + "' is not key=value");
    const std::string key = token.substr(0, eq), value = token.substr(eq + 1);
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) p.fail("duplicate field " + key);
    seen.push_back(key);
    if (key == "src") {
      r.src = value;
    } else if (key == "tgt") {
      r.tgt = value;
    } else if (key == "src_size") {
      r.src_size = p.size(value);
    } else if (key == "tgt_size") {
      r.tgt_size = p.size(value);
    } else if (key == "bbox") {
      const auto parts = split_on(value, ',');
      if (parts.size() != 4) p.fail("bbox must be x0,y0,x1,y1");
      r.tgt_bbox = {p.number(parts[0]), p.number(parts[1]), p.number(parts[2]), p.number(parts[3])};
    } else if (key == "cat") {
      r.category = value;
    } else if (key == "kps") {
      for (const std::string& item : split_on(value, ';')) {
        if (item.empty()) continue;  // tolerate a trailing ';'
        const auto ends = split_on(item, '>');
        if (ends.size() != 2) p.fail("keypoint pair must be x:y>x':y'");
        r.kps.push_back({p.point(ends[0]), p.point(ends[1])});
      }
    } else {
      p.fail("unknown field " + key);
    }
  }
  for (const char* required : {"src", "tgt", "src_size", "tgt_size", "bbox", "cat", "kps"}) {
    if (std::find(seen.begin(), seen.end(), required) == seen.end()) p.fail(std::string("missing field ") + required);
  }
  return r;
}

std::vector<PairRecord> load_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<PairRecord> records;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    records.push_back(parse_record(line, line_no));
    records.back().validate(static_cast<long>(records.size()) - 1);
  }
  return records;
}

void save_pairs(const std::vector<PairRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  for (const PairRecord& r : records) out << format_record(r) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::vector<LoadedPair> load_dataset(const std::filesystem::path& pair_file) {
  const auto base = pair_file.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  std::vector<LoadedPair> out;
  for (PairRecord& r : load_pairs(pair_file)) {
    LoadedPair lp;
    lp.src = archive::read_archive(resolve(r.src));
    lp.tgt = archive::read_archive(resolve(r.tgt));
    lp.record = std::move(r);
    out.push_back(std::move(lp));
  }
  return out;
}

std::vector<std::size_t> split_indices(std::size_t n, std::uint64_t seed, const SplitFractions& f,
                                       std::size_t* n_train, std::size_t* n_val) {
  if (!(f.train >= 0.0 && f.val >= 0.0 && f.test >= 0.0) || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidConfig, "split fractions must be non-negative and sum to 1");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(mix_seed(seed, 0x5b1));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  const auto count = [n](double frac) { return static_cast<std::size_t>(std::llround(frac * static_cast<double>(n))); };
  *n_train = std::min(n, count(f.train));
  *n_val = std::min(n - *n_train, count(f.val));
  return order;
}

Point ToyWarp::apply(Point p) const {
  const double rx = p.x - cx, ry = p.y - cy;
  Point q{cx + a00 * rx + a01 * ry + tx, cy + a10 * rx + a11 * ry + ty};
  for (const Mode& m : dx) q.x += m.amp * std::sin(m.fx * p.x + m.fy * p.y + m.phase);
  for (const Mode& m : dy) q.y += m.amp * std::sin(m.fx * p.x + m.fy * p.y + m.phase);
  return q;
}

Point ToyWarp::inverse(Point q) const {
  const double det = a00 * a11 - a01 * a10;
  const double i00 = a11 / det, i01 = -a01 / det, i10 = -a10 / det, i11 = a00 / det;
  Point p = q;
  for (int it = 0; it < 200; ++it) {
    double ux = q.x - cx - tx, uy = q.y - cy - ty;
    for (const Mode& m : dx) ux -= m.amp * std::sin(m.fx * p.x + m.fy * p.y + m.phase);
    for (const Mode& m : dy) uy -= m.amp * std::sin(m.fx * p.x + m.fy * p.y + m.phase);
    const Point next{cx + i00 * ux + i01 * uy, cy + i10 * ux + i11 * uy};
    const double change = std::abs(next.x - p.x) + std::abs(next.y - p.y);
    p = next;
    if (change < 1e-13) break;
  }
  return p;
}

double ToyWarp::max_displacement(std::size_t w, std::size_t h) const {
  double worst = 0.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const Point p{static_cast<double>(x), static_cast<double>(y)};
      const Point q = apply(p);
      worst = std::max(worst, std::hypot(q.x - p.x, q.y - p.y));
    }
  }
  return worst;
}

ToyDenoiserOptions ToySpec::default_denoiser() {
  ToyDenoiserOptions o;
  o.channel_plan = {16, 12, 8};
  o.resolutions = {4, 8, 16};
  o.latent_shape = {4, 16, 16};
  o.horizon = 10;
  o.coarse_channels = kToyCoarseChannels;
  return o;
}

void ToySpec::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidConfig, why); };
  if (image_size < 8) fail("image_size must be ≥ 8");
  if (blobs == 0 || categories == 0 || keypoints == 0) fail("blobs, categories and keypoints must be ≥ 1");
  if (!(max_displacement_frac > 0.0 && max_displacement_frac < 0.5)) fail("max_displacement_frac must lie in (0, 0.5)");
  if (num_steps < 1 || stride < 1) fail("num_steps and stride must be ≥ 1");
  if (denoiser.coarse_channels != kToyCoarseChannels) fail("toy scenes carry exactly 5 coarse channels");
  if (denoiser.channel_plan.empty()) fail("channel_plan must not be empty");
}

namespace {

struct Blob {
  double cx, cy, rx, ry, cos_t, sin_t;
  std::array<double, 3> color;
  std::array<double, 3> code;
};

struct Scene {
  std::vector<Blob> blobs;
  double bg_phase_x = 0.0, bg_phase_y = 0.0;
  std::size_t category = 0;
};

// Category palettes: two colors each, so same-colored objects recur.
constexpr std::array<std::array<std::array<double, 3>, 2>, 6> kPalettes{{
    {{{0.85, 0.25, 0.20}, {0.95, 0.70, 0.15}}},
    {{{0.20, 0.45, 0.85}, {0.30, 0.80, 0.85}}},
    {{{0.25, 0.75, 0.30}, {0.70, 0.85, 0.30}}},
    {{{0.65, 0.30, 0.80}, {0.90, 0.45, 0.65}}},
    {{{0.90, 0.90, 0.85}, {0.55, 0.55, 0.60}}},
    {{{0.55, 0.35, 0.20}, {0.80, 0.60, 0.40}}},
}};

Scene make_scene(const ToySpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal;
  const double n = static_cast<double>(spec.image_size);
  Scene scene;
  scene.category = static_cast<std::size_t>(rng() % spec.categories);
  scene.bg_phase_x = unit(rng) * 2.0 * std::numbers::pi;
  scene.bg_phase_y = unit(rng) * 2.0 * std::numbers::pi;
  const auto& palette = kPalettes[scene.category % kPalettes.size()];
  for (std::size_t b = 0; b < spec.blobs; ++b) {
    Blob blob{};
    blob.cx = n * (0.2 + 0.6 * unit(rng));
    blob.cy = n * (0.2 + 0.6 * unit(rng));
    blob.rx = n * (0.11 + 0.09 * unit(rng));
    blob.ry = n * (0.11 + 0.09 * unit(rng));
    const double theta = unit(rng) * std::numbers::pi;
    blob.cos_t = std::cos(theta);
    blob.sin_t = std::sin(theta);
    blob.color = palette[rng() % 2];
    double norm = 0.0;
    for (double& c : blob.code) {
      c = normal(rng);
      norm += c * c;
    }
    for (double& c : blob.code) c /= std::sqrt(norm);
    scene.blobs.push_back(blob);
  }
  return scene;
}

// Writes the 8 scene channels at p into out[0..7]; returns whether p is on an object.
bool shade(const Scene& scene, double n, Point p, double* out) {
  for (auto it = scene.blobs.rbegin(); it != scene.blobs.rend(); ++it) {
    const double dx = p.x - it->cx, dy = p.y - it->cy;
    const double u = (it->cos_t * dx + it->sin_t * dy) / it->rx;
    const double v = (-it->sin_t * dx + it->cos_t * dy) / it->ry;
    const double r2 = u * u + v * v;
    if (r2 > 1.0) continue;
    const double light = 0.75 + 0.25 * (1.0 - r2);
    for (int c = 0; c < 3; ++c) out[c] = it->color[static_cast<std::size_t>(c)] * light;
    out[3] = u;
    out[4] = v;
    for (int c = 0; c < 3; ++c) out[5 + c] = it->code[static_cast<std::size_t>(c)];
    return true;
  }
  const double tex = 0.08 * std::sin(2.0 * std::numbers::pi * 1.3 * p.x / n + scene.bg_phase_x) *
                     std::cos(2.0 * std::numbers::pi * 0.9 * p.y / n + scene.bg_phase_y);
  out[0] = 0.30 + tex;
  out[1] = 0.32 + tex;
  out[2] = 0.28 + tex;
  for (int c = 3; c < 8; ++c) out[c] = 0.0;
  return false;
}

// Renders the scene seen through `to_scene` (target pixel → scene point).
template <typename Map>
void render(const Scene& scene, std::size_t n, Map to_scene, Tensor& field, Tensor& mask) {
  field = Tensor({kToyFineChannels + kToyCoarseChannels, n, n});
  mask = Tensor({1, n, n});
  const std::size_t plane = n * n;
  double px[8];
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const Point p = to_scene(Point{static_cast<double>(x), static_cast<double>(y)});
      const bool on = shade(scene, static_cast<double>(n), p, px);
      const std::size_t i = y * n + x;
      for (std::size_t c = 0; c < 8; ++c) field[c * plane + i] = px[c];
      mask[i] = on ? 1.0 : 0.0;
    }
  }
}

ToyWarp make_warp(const ToySpec& spec, std::mt19937_64& rng) {
  ToyWarp warp;
  const double n = static_cast<double>(spec.image_size);
  warp.cx = warp.cy = 0.5 * (n - 1.0);
  if (spec.identity_warp) return warp;
  std::uniform_real_distribution<double> sym(-1.0, 1.0), unit(0.0, 1.0);
  const double limit = spec.max_displacement_frac * n;
  for (int attempt = 0;; ++attempt) {
    // Shrink toward identity if the sampler keeps overshooting.
    const double g = attempt < 50 ? 1.0 : std::pow(0.9, attempt - 49);
    const double scale = 1.0 + g * 0.1 * sym(rng);
    const double theta = g * (15.0 * std::numbers::pi / 180.0) * sym(rng);
    const double shear = g * 0.05 * sym(rng);
    warp.a00 = scale * std::cos(theta);
    warp.a01 = -scale * std::sin(theta) + shear;
    warp.a10 = scale * std::sin(theta);
    warp.a11 = scale * std::cos(theta);
    warp.tx = g * 0.06 * n * sym(rng);
    warp.ty = g * 0.06 * n * sym(rng);
    warp.dx.clear();
    warp.dy.clear();
    double lipschitz = 0.0;
    for (auto* modes : {&warp.dx, &warp.dy}) {
      for (int k = 0; k < 2; ++k) {
        ToyWarp::Mode m;
        const double freq = 2.0 * std::numbers::pi / n * (0.5 + 0.7 * unit(rng));
        const double dir = unit(rng) * 2.0 * std::numbers::pi;
        m.fx = freq * std::cos(dir);
        m.fy = freq * std::sin(dir);
        m.amp = g * 0.035 * n * unit(rng);
        m.phase = unit(rng) * 2.0 * std::numbers::pi;
        lipschitz += m.amp * freq;
        modes->push_back(m);
      }
    }
    const double det = warp.a00 * warp.a11 - warp.a01 * warp.a10;
    const double inv_norm = (std::abs(warp.a00) + std::abs(warp.a01) + std::abs(warp.a10) + std::abs(warp.a11)) /
                            std::abs(det);
    if (lipschitz * inv_norm < 0.6 && warp.max_displacement(spec.image_size, spec.image_size) <= limit) {
      return warp;
    }
  }
}

void apply_lighting(Tensor& field, double amount, std::mt19937_64& rng) {
  if (amount <= 0.0) return;
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  const std::size_t n = field.dim(1);
  for (std::size_t c = 0; c < kToyFineChannels; ++c) {
    const double shift = amount * sym(rng), gx = amount * sym(rng), gy = amount * sym(rng);
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const double u = static_cast<double>(x) / static_cast<double>(n) - 0.5;
        const double v = static_cast<double>(y) / static_cast<double>(n) - 0.5;
        field.at(c, y, x) = std::clamp(field.at(c, y, x) + shift + gx * u + gy * v, 0.0, 1.0);
      }
    }
  }
}

Tensor make_latent(const Tensor& field, const Tensor& mask, const Tensor::Shape& latent_shape) {
  const std::size_t n = field.dim(1), plane = n * n;
  const std::size_t channels = latent_shape.at(0);
  Tensor src({channels, n, n});
  for (std::size_t c = 0; c < channels; ++c) {
    const double* from = c < kToyFineChannels ? field.data() + c * plane : mask.data();
    for (std::size_t i = 0; i < plane; ++i) src[c * plane + i] = 2.0 * from[i] - 1.0;
  }
  const double factor = static_cast<double>(n) / static_cast<double>(latent_shape.at(1));
  return bilinear_resize(gaussian_blur(src, 0.5 * factor), latent_shape.at(1), latent_shape.at(2));
}

Tensor rgb_of(const Tensor& field) {
  const std::size_t n = field.dim(1), plane = n * n;
  Tensor img({3, n, n});
  std::copy_n(field.data(), 3 * plane, img.data());
  return img;
}

FeatureStack extract(const ToySpec& spec, const Tensor& field, const Tensor& mask) {
  const ToyDenoiser denoiser(spec.model_seed, field, spec.denoiser);
  const ChainConfig cfg =
      make_schedule(spec.num_steps, kDefaultBetaStart, kDefaultBetaEnd, spec.direction, spec.stride);
  return run_chain(denoiser, make_latent(field, mask, spec.denoiser.latent_shape), cfg).stack;
}

}  // namespace

ToyPair generate_toy_pair(const ToySpec& spec) {
  spec.validate();
  const std::size_t n = spec.image_size;
  std::mt19937_64 scene_rng(mix_seed(spec.seed, 1));
  std::mt19937_64 warp_rng(mix_seed(spec.seed, 2));
  std::mt19937_64 kp_rng(mix_seed(spec.seed, 3));
  std::mt19937_64 light_rng(mix_seed(spec.seed, 4));
  const Scene scene = make_scene(spec, scene_rng);

  ToyPair out;
  out.warp = make_warp(spec, warp_rng);
  Tensor src_field, tgt_field;
  render(scene, n, [](Point p) { return p; }, src_field, out.src_mask);
  render(scene, n, [&](Point q) { return out.warp.inverse(q); }, tgt_field, out.tgt_mask);
  apply_lighting(src_field, spec.lighting, light_rng);
  apply_lighting(tgt_field, spec.lighting, light_rng);
  out.src_image = rgb_of(src_field);
  out.tgt_image = rgb_of(tgt_field);

  const std::size_t plane = n * n;
  out.dense_map = Tensor({2, n, n});
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const Point q = out.warp.apply({static_cast<double>(x), static_cast<double>(y)});
      out.dense_map[y * n + x] = q.x;
      out.dense_map[plane + y * n + x] = q.y;
    }
  }

  PairRecord& rec = out.record;
  rec.src_size = rec.tgt_size = {n, n};
  rec.category = "cat" + std::to_string(scene.category);
  std::vector<bool> used(plane, false);
  const double bound = static_cast<double>(n);
  for (int attempt = 0; attempt < 20000 && rec.kps.size() < spec.keypoints; ++attempt) {
    const std::size_t i = static_cast<std::size_t>(kp_rng() % plane);
    if (used[i] || out.src_mask[i] == 0.0) continue;
    const Point tgt{out.dense_map[i], out.dense_map[plane + i]};
    if (!(tgt.x >= 0.0 && tgt.y >= 0.0 && tgt.x < bound && tgt.y < bound)) continue;
    used[i] = true;
    rec.kps.push_back({{static_cast<double>(i % n), static_cast<double>(i / n)}, tgt});
  }
  if (rec.kps.empty()) throw Error(ErrorCode::InvalidInput, "toy scene has no visible keypoints");

  BBox box{bound, bound, 0.0, 0.0};
  for (std::size_t i = 0; i < plane; ++i) {
    if (out.tgt_mask[i] == 0.0) continue;
    const double x = static_cast<double>(i % n), y = static_cast<double>(i / n);
    box = {std::min(box.x0, x), std::min(box.y0, y), std::max(box.x1, x + 1.0), std::max(box.y1, y + 1.0)};
  }
  if (box.x0 >= box.x1) box = {0.0, 0.0, bound, bound};
  rec.tgt_bbox = box;

  out.src_stack = extract(spec, src_field, out.src_mask);
  out.tgt_stack = extract(spec, tgt_field, out.tgt_mask);
  for (FeatureStack* s : {&out.src_stack, &out.tgt_stack}) {
    s->meta["category"] = rec.category;
    s->meta["scene_seed"] = std::to_string(spec.seed);
    s->meta["model_seed"] = std::to_string(spec.model_seed);
  }
  out.src_stack.meta["role"] = "src";
  out.tgt_stack.meta["role"] = "tgt";
  return out;
}

PermutationPair make_permutation_pair(std::uint64_t seed, std::size_t h, std::size_t w, std::size_t d) {
  std::mt19937_64 rng(mix_seed(seed, 0x9e7));
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t plane = h * w;
  PermutationPair out;
  out.desc_src = Tensor({d, h, w});
  for (double& v : out.desc_src.values()) v = normal(rng);
  out.src_image = Tensor({3, h, w});
  for (double& v : out.src_image.values()) v = unit(rng);
  out.tgt_to_src.resize(plane);
  for (std::size_t i = 0; i < plane; ++i) out.tgt_to_src[i] = i;
  for (std::size_t i = plane; i > 1; --i) std::swap(out.tgt_to_src[i - 1], out.tgt_to_src[rng() % i]);
  out.desc_tgt = Tensor({d, h, w});
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t q = 0; q < plane; ++q) out.desc_tgt[c * plane + q] = out.desc_src[c * plane + out.tgt_to_src[q]];
  }
  return out;
}

}  // namespace hyperagg
