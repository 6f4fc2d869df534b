#include "hyperagg/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hyperagg/aggregator.hpp"
#include "hyperagg/correspondence.hpp"
#include "hyperagg/datasets.hpp"
#include "hyperagg/feature_archive.hpp"
#include "hyperagg/image_io.hpp"
#include "hyperagg/kernels.hpp"
#include "hyperagg/training.hpp"

#ifndef HYPERAGG_VERSION
#define HYPERAGG_VERSION "dev"
#endif

namespace hyperagg {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Manifest {
  std::string command;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::vector<std::pair<std::string, double>> timings_ms;
  fs::path path;

  template <typename F>
  auto phase(const std::string& name, F&& body) {
    const auto start = Clock::now();
    struct Record {
      Manifest* m;
      std::string name;
      Clock::time_point start;
      ~Record() {
        m->timings_ms.emplace_back(name, std::chrono::duration<double, std::milli>(Clock::now() - start).count());
      }
    } record{this, name, start};
    return body();
  }

  void write(const std::string& status, const std::string& error = {}) const {
    if (path.empty()) return;
    nlohmann::ordered_json j;
    j["tool"] = "hyperagg";
    j["version"] = HYPERAGG_VERSION;
    j["command"] = command;
    j["status"] = status;
    if (!error.empty()) j["error"] = error;
    j["seed"] = seed;
    j["threads"] = kernels::thread_limit();
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    nlohmann::ordered_json t = nlohmann::ordered_json::object();
    for (const auto& [name, ms] : timings_ms) t[name] = ms;
    j["timings_ms"] = t;
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
      out << j.dump(2) << '\n';
    }
    fs::rename(tmp, path);
  }
};

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

Direction parse_direction(const std::string& s) {
  if (s == "inversion") return Direction::Inversion;
  if (s == "generation") return Direction::Generation;
  throw Error(ErrorCode::InvalidConfig, "direction must be inversion or generation");
}

DescriptorMode parse_mode(const std::string& s) {
  if (s == "aggregate") return DescriptorMode::Aggregate;
  if (s == "ours_pruned") return DescriptorMode::OursPruned;
  if (s == "layer_pruned") return DescriptorMode::LayerPruned;
  throw Error(ErrorCode::InvalidConfig, "mode must be aggregate, ours_pruned or layer_pruned");
}

std::string indexed(const char* prefix, std::size_t i, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%04zu%s", prefix, i, suffix);
  return buf;
}

// Source/target image of a loaded pair, via the archive's image= entry.
Tensor pair_image(const FeatureStack& stack, const fs::path& base) {
  const auto it = stack.meta.find("image");
  if (it == stack.meta.end()) throw Error(ErrorCode::IoError, "archive has no image= entry");
  const fs::path p(it->second);
  return image_io::read_ppm(p.is_absolute() ? p : base / p);
}

void draw_marker(Tensor& img, double x, double y, const std::array<double, 3>& color, bool cross) {
  const long h = static_cast<long>(img.dim(1)), w = static_cast<long>(img.dim(2));
  const long cx = std::lround(x), cy = std::lround(y);
  for (long d = -2; d <= 2; ++d) {
    const std::array<std::pair<long, long>, 4> pts =
        cross ? std::array<std::pair<long, long>, 4>{{{cx + d, cy}, {cx, cy + d}, {cx + d, cy}, {cx, cy + d}}}
              : std::array<std::pair<long, long>, 4>{{{cx + d, cy - 2}, {cx + d, cy + 2}, {cx - 2, cy + d}, {cx + 2, cy + d}}};
    for (const auto& [px, py] : pts) {
      if (px < 0 || py < 0 || px >= w || py >= h) continue;
      for (std::size_t c = 0; c < 3; ++c) img.at(c, static_cast<std::size_t>(py), static_cast<std::size_t>(px)) = color[c];
    }
  }
}

Tensor upscale_nearest(const Tensor& img, std::size_t factor) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out({c, h * factor, w * factor});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h * factor; ++y) {
      for (std::size_t x = 0; x < w * factor; ++x) out.at(ch, y, x) = img.at(ch, y / factor, x / factor);
    }
  }
  return out;
}

// Option values as given (or their defaults), for the manifest.
nlohmann::ordered_json snapshot(const CLI::App& sub) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help") continue;
    const auto& results = opt->results();
    if (!results.empty()) {
      std::string joined;
      for (std::size_t i = 0; i < results.size(); ++i) joined += (i ? "," : "") + results[i];
      j[name] = opt->get_type_size() == 0 && joined.empty() ? "true" : joined;
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

struct Options {
  // shared
  std::uint64_t seed = 0;
  std::string out;
  std::string data;
  std::string eval_data;
  std::string ckpt;
  std::size_t index = 0;
  std::string mode = "aggregate";
  // toy generation
  std::size_t pairs = 250;
  int steps_chain = 10;
  int stride = 4;
  std::size_t image_size = 64;
  std::size_t keypoints = 8;
  std::size_t blobs = 4;
  std::size_t categories = 3;
  std::uint64_t model_seed = 7;
  double lighting = 0.25;
  bool identity_warp = false;
  bool one_step = false;
  std::string direction = "inversion";
  std::vector<double> fractions{0.8, 0.0, 0.2};
  std::vector<std::uint64_t> scene_seeds;
  // training
  int steps = 5000;
  int batch = 2;
  double lr = 1e-3;
  double tau = kDefaultTemperature;
  int eval_every = 100;
  double weight_decay = 1e-2;
  std::size_t dim = 32;
  std::size_t res = 16;
  // eval
  double alpha = 0.1;
  std::string basis = "both";
  bool oracle_gt = false;
  // viz / io
  std::size_t k = 3;
  std::size_t scale = 8;
  std::string input;
  std::string mask;
  std::string overlay;
  std::size_t bench_pairs = 10;
};

ToySpec toy_spec(const Options& o, std::uint64_t scene_seed) {
  ToySpec spec;
  spec.seed = scene_seed;
  spec.model_seed = o.model_seed;
  spec.image_size = o.image_size;
  spec.keypoints = o.keypoints;
  spec.blobs = o.blobs;
  spec.categories = o.categories;
  spec.lighting = o.lighting;
  spec.identity_warp = o.identity_warp;
  spec.num_steps = o.one_step ? 1 : o.steps_chain;
  spec.stride = o.one_step ? 1 : o.stride;
  spec.direction = parse_direction(o.direction);
  return spec;
}

// ---- subcommands -----------------------------------------------------------

int cmd_toygen(const Options& o, Manifest& m) {
  if (o.fractions.size() != 3) throw Error(ErrorCode::InvalidConfig, "--split needs three fractions");
  const fs::path dir(o.out);
  fs::create_directories(dir / "archives");
  fs::create_directories(dir / "images");
  m.path = dir / "manifest.json";
  m.seed = o.seed;

  std::vector<PairRecord> records(o.pairs);
  std::vector<std::exception_ptr> errors(o.pairs);
  m.phase("generate", [&] {
    const long n = static_cast<long>(o.pairs);
#pragma omp parallel for schedule(dynamic)
    for (long li = 0; li < n; ++li) {
      const auto i = static_cast<std::size_t>(li);
      try {
        ToyPair tp = generate_toy_pair(toy_spec(o, mix_seed(o.seed, i)));
        const std::string stem = indexed("p", i, "");
        const std::string src_img = "images/" + stem + "_src.ppm", tgt_img = "images/" + stem + "_tgt.ppm";
        const std::string src_mask = "images/" + stem + "_src_mask.pgm", tgt_mask = "images/" + stem + "_tgt_mask.pgm";
        image_io::write_ppm(dir / src_img, tp.src_image);
        image_io::write_ppm(dir / tgt_img, tp.tgt_image);
        image_io::write_pgm(dir / src_mask, tp.src_mask);
        image_io::write_pgm(dir / tgt_mask, tp.tgt_mask);
        tp.src_stack.meta["image"] = src_img;
        tp.src_stack.meta["mask"] = src_mask;
        tp.tgt_stack.meta["image"] = tgt_img;
        tp.tgt_stack.meta["mask"] = tgt_mask;
        tp.record.src = "archives/" + stem + "_src.dhfa";
        tp.record.tgt = "archives/" + stem + "_tgt.dhfa";
        archive::write_archive(tp.src_stack, dir / tp.record.src);
        archive::write_archive(tp.tgt_stack, dir / tp.record.tgt);
        records[i] = std::move(tp.record);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    return 0;
  });
  const auto parts = split(records, o.seed, SplitFractions{o.fractions[0], o.fractions[1], o.fractions[2]});
  m.phase("write_lists", [&] {
    save_pairs(records, dir / "pairs.txt");
    save_pairs(parts.train, dir / "train.txt");
    save_pairs(parts.val, dir / "val.txt");
    save_pairs(parts.test, dir / "test.txt");
    return 0;
  });
  for (const char* f : {"pairs.txt", "train.txt", "val.txt", "test.txt"}) m.outputs.push_back((dir / f).string());
  std::cout << "pairs=" << records.size() << "\ntrain=" << parts.train.size() << "\nval=" << parts.val.size()
            << "\ntest=" << parts.test.size() << '\n';
  return 0;
}

int cmd_extract_toy(const Options& o, Manifest& m) {
  const fs::path dir(o.out);
  fs::create_directories(dir);
  m.path = dir / "manifest.json";
  m.seed = o.seed;
  std::vector<std::uint64_t> seeds = o.scene_seeds;
  if (seeds.empty()) seeds.push_back(o.seed);
  for (std::uint64_t s : seeds) {
    const ToyPair tp = m.phase("chain_" + std::to_string(s), [&] { return generate_toy_pair(toy_spec(o, s)); });
    const std::string stem = "scene" + std::to_string(s);
    archive::write_archive(tp.src_stack, dir / (stem + "_src.dhfa"));
    archive::write_archive(tp.tgt_stack, dir / (stem + "_tgt.dhfa"));
    m.outputs.push_back((dir / (stem + "_src.dhfa")).string());
    m.outputs.push_back((dir / (stem + "_tgt.dhfa")).string());
    std::cout << "scene=" << s << " layers=" << tp.src_stack.layers << " slots=" << tp.src_stack.slots
              << " direction=" << to_string(tp.src_stack.direction) << '\n';
  }
  return 0;
}

int cmd_train(const Options& o, Manifest& m) {
  fs::path ckpt, log_path;
  const fs::path out(o.out);
  if (out.extension() == ".dhaw") {
    ckpt = out;
    log_path = out.parent_path() / (out.stem().string() + ".metrics.log");
    m.path = out.parent_path() / (out.stem().string() + ".manifest.json");
  } else {
    ckpt = out / "aggregator.dhaw";
    log_path = out / "metrics.log";
    m.path = out / "manifest.json";
  }
  if (!ckpt.parent_path().empty()) fs::create_directories(ckpt.parent_path());
  m.seed = o.seed;
  m.inputs.push_back(o.data);

  TrainConfig cfg;
  cfg.max_steps = o.steps;
  cfg.batch_size = o.batch;
  cfg.lr = o.lr;
  cfg.temperature = o.tau;
  cfg.seed = o.seed;
  cfg.eval_every = o.eval_every;
  cfg.weight_decay = o.weight_decay;
  cfg.descriptor_dim = o.dim;
  cfg.out_h = cfg.out_w = o.res;
  cfg.validate();

  const auto train_set = m.phase("load", [&] { return load_dataset(o.data); });
  std::vector<LoadedPair> eval_set;
  if (!o.eval_data.empty()) {
    m.inputs.push_back(o.eval_data);
    eval_set = m.phase("load_eval", [&] { return load_dataset(o.eval_data); });
  }
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw Error(ErrorCode::IoError, "cannot open " + log_path.string());
  const TrainResult result = m.phase("train", [&] {
    return train(train_set, eval_set, cfg, [&](const std::string& line) {
      log << line << '\n' << std::flush;
      std::cout << line << '\n' << std::flush;
    });
  });
  m.phase("save", [&] {
    write_checkpoint(result.params, ckpt);
    return 0;
  });
  m.outputs = {ckpt.string(), log_path.string()};
  std::cout << "checkpoint=" << ckpt.string() << "\ninitial_loss=" << fixed6(result.initial_loss)
            << "\nfinal_loss=" << fixed6(result.final_loss) << '\n';
  return 0;
}

int cmd_eval(const Options& o, Manifest& m) {
  const fs::path dir(o.out);
  m.path = dir / "manifest.json";
  m.seed = o.seed;
  if (o.basis != "img" && o.basis != "bbox" && o.basis != "both") {
    throw Error(ErrorCode::InvalidConfig, "basis must be img, bbox or both");
  }
  const auto pairs = m.phase("load", [&] { return load_dataset(o.data); });
  m.inputs.push_back(o.data);
  EvalReport report;
  std::string mode_name;
  if (o.oracle_gt) {
    mode_name = "oracle_gt";
    std::vector<std::vector<Point>> preds;
    for (const LoadedPair& p : pairs) preds.push_back(p.record.tgt_points());
    report = score_predictions(pairs, preds, o.alpha);
  } else {
    if (o.ckpt.empty()) throw Error(ErrorCode::InvalidConfig, "--ckpt is required unless --oracle-gt is given");
    m.inputs.push_back(o.ckpt);
    const AggregatorParams params = read_checkpoint(o.ckpt);
    const DescriptorMode mode = parse_mode(o.mode);
    mode_name = to_string(mode);
    report = m.phase("evaluate", [&] { return evaluate(params, pairs, o.alpha, mode); });
  }
  const std::string body = "mode=" + mode_name + "\n" + format_report(report);
  const fs::path report_path = dir / "eval_report.txt";
  write_text(report_path, body);
  m.outputs.push_back(report_path.string());

  char tag[32];
  std::snprintf(tag, sizeof tag, "pck@%g", o.alpha);
  if (o.basis != "bbox") std::cout << tag << "_img=" << fixed6(report.overall.pck_img()) << '\n';
  if (o.basis != "img") std::cout << tag << "_bbox=" << fixed6(report.overall.pck_bbox()) << '\n';
  return 0;
}

int cmd_prune(const Options& o, Manifest& m) {
  const fs::path dir(o.out);
  m.path = dir / "manifest.json";
  m.inputs.push_back(o.ckpt);
  const AggregatorParams params = read_checkpoint(o.ckpt);
  const TopWeight top = top_mixing_weight(params);
  std::ostringstream body;
  body << "l=" << top.layer << " s=" << top.slot << " w=" << fixed6(top.weight) << '\n';
  std::cout << body.str();
  if (!o.data.empty()) {
    m.inputs.push_back(o.data);
    const auto pairs = m.phase("load", [&] { return load_dataset(o.data); });
    for (DescriptorMode mode : {DescriptorMode::Aggregate, DescriptorMode::OursPruned, DescriptorMode::LayerPruned}) {
      const EvalReport r = m.phase(std::string("eval_") + to_string(mode), [&] { return evaluate(params, pairs, o.alpha, mode); });
      body << format_report(r, std::string(to_string(mode)) + ".");
    }
    const fs::path report_path = dir / "prune_report.txt";
    write_text(report_path, body.str());
    m.outputs.push_back(report_path.string());
  }
  return 0;
}

int cmd_viz_weights(const Options& o, Manifest& m) {
  const fs::path dir(o.out);
  fs::create_directories(dir);
  m.path = dir / "manifest.json";
  m.inputs.push_back(o.ckpt);
  const AggregatorParams params = read_checkpoint(o.ckpt);
  const Tensor grid = weight_heatmap(params, dir / "weights.ppm", o.scale * 2);
  std::ostringstream text;
  for (std::size_t l = 0; l < grid.dim(0); ++l) {
    text << "l=" << l;
    for (std::size_t s = 0; s < grid.dim(1); ++s) text << ' ' << fixed6(grid.at(l, s));
    text << '\n';
  }
  write_text(dir / "weights.txt", text.str());
  std::cout << text.str();
  m.outputs = {(dir / "weights.ppm").string(), (dir / "weights.txt").string()};
  return 0;
}

int cmd_viz_pca(const Options& o, Manifest& m) {
  const fs::path dir(o.out);
  fs::create_directories(dir);
  m.path = dir / "manifest.json";
  m.inputs.push_back(o.input);
  const FeatureStack stack = archive::read_archive(o.input);
  std::ostringstream text;
  for (std::size_t l = 0; l < stack.layers; ++l) {
    for (std::size_t s = 0; s < stack.slots; ++s) {
      const Tensor& map = stack.map(l, s);
      const std::size_t k = std::min({o.k, map.dim(0), map.dim(1) * map.dim(2)});
      const PcaResult pca = pca_decompose(map, k);
      Tensor proj = pca_project(map, k);
      Tensor rgb({3, map.dim(1), map.dim(2)});
      const std::size_t plane = map.dim(1) * map.dim(2);
      for (std::size_t c = 0; c < 3; ++c) std::copy_n(proj.data() + std::min(c, k - 1) * plane, plane, rgb.data() + c * plane);
      const std::size_t factor = std::max<std::size_t>(1, (o.scale * 8) / map.dim(1));
      const std::string name = "l" + std::to_string(l) + "_s" + std::to_string(s) + ".ppm";
      image_io::write_ppm(dir / name, upscale_nearest(rgb, factor));
      m.outputs.push_back((dir / name).string());
      text << "l=" << l << " s=" << s << " t=" << stack.slot_timesteps[s]
           << " explained=" << fixed6(pca.explained_variance_ratio) << '\n';
    }
  }
  write_text(dir / "pca.txt", text.str());
  std::cout << text.str();
  return 0;
}

struct PairContext {
  std::vector<LoadedPair> pairs;
  AggregatorParams params;
  fs::path base;
  const LoadedPair& pair(std::size_t i) const {
    if (i >= pairs.size()) throw Error(ErrorCode::InvalidConfig, "--index out of range");
    return pairs[i];
  }
};

PairContext load_context(const Options& o, Manifest& m) {
  PairContext ctx;
  ctx.pairs = m.phase("load", [&] { return load_dataset(o.data); });
  ctx.params = read_checkpoint(o.ckpt);
  ctx.base = fs::path(o.data).parent_path();
  m.inputs = {o.data, o.ckpt};
  return ctx;
}

int cmd_match(const Options& o, Manifest& m) {
  const fs::path dir(o.out);
  fs::create_directories(dir);
  m.path = dir / "manifest.json";
  const PairContext ctx = load_context(o, m);
  const LoadedPair& p = ctx.pair(o.index);
  const DescriptorMode mode = parse_mode(o.mode);
  const auto matches = m.phase("match", [&] {
    return match_keypoints(descriptor_map(ctx.params, p.src, mode), descriptor_map(ctx.params, p.tgt, mode),
                           p.record.src_points(), p.record.src_size, p.record.tgt_size);
  });
  Tensor src = pair_image(p.src, ctx.base), tgt = pair_image(p.tgt, ctx.base);
  const std::size_t h = std::max(src.dim(1), tgt.dim(1));
  Tensor canvas({3, h, src.dim(2) + tgt.dim(2)});
  std::ostringstream text;
  for (std::size_t k = 0; k < matches.size(); ++k) {
    const double hue = static_cast<double>(k) / static_cast<double>(std::max<std::size_t>(1, matches.size()));
    const auto rgb = viridis(hue);
    const std::array<double, 3> color{rgb[0] / 255.0, rgb[1] / 255.0, rgb[2] / 255.0};
    const KeypointPair& kp = p.record.kps[k];
    draw_marker(src, kp.src.x, kp.src.y, color, true);
    draw_marker(tgt, matches[k].pixel.x, matches[k].pixel.y, color, true);
    draw_marker(tgt, kp.tgt.x, kp.tgt.y, color, false);
    text << "k=" << k << " src=" << kp.src.x << ':' << kp.src.y << " pred=" << matches[k].pixel.x << ':'
         << matches[k].pixel.y << " gt=" << kp.tgt.x << ':' << kp.tgt.y << " sim=" << fixed6(matches[k].similarity)
         << '\n';
  }
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < src.dim(1); ++y) {
      for (std::size_t x = 0; x < src.dim(2); ++x) canvas.at(c, y, x) = src.at(c, y, x);
    }
    for (std::size_t y = 0; y < tgt.dim(1); ++y) {
      for (std::size_t x = 0; x < tgt.dim(2); ++x) canvas.at(c, y, src.dim(2) + x) = tgt.at(c, y, x);
    }
  }
  image_io::write_ppm(dir / "match.ppm", canvas);
  write_text(dir / "matches.txt", text.str());
  std::cout << text.str();
  m.outputs = {(dir / "match.ppm").string(), (dir / "matches.txt").string()};
  return 0;
}

int cmd_warp(const Options& o, Manifest& m) {
  const fs::path dir(o.out);
  fs::create_directories(dir);
  m.path = dir / "manifest.json";
  const PairContext ctx = load_context(o, m);
  const LoadedPair& p = ctx.pair(o.index);
  const DescriptorMode mode = parse_mode(o.mode);
  const Tensor src = pair_image(p.src, ctx.base);
  const Tensor mask = o.mask.empty() ? Tensor() : image_io::read_pgm(o.mask);
  const Tensor warped = m.phase("warp", [&] {
    return dense_backward_warp(descriptor_map(ctx.params, p.src, mode), descriptor_map(ctx.params, p.tgt, mode), src,
                               mask);
  });
  image_io::write_ppm(dir / "warped.ppm", warped);
  m.outputs = {(dir / "warped.ppm").string()};
  std::cout << "warped=" << (dir / "warped.ppm").string() << '\n';
  return 0;
}

int cmd_splat(const Options& o, Manifest& m) {
  const fs::path dir(o.out);
  fs::create_directories(dir);
  m.path = dir / "manifest.json";
  const PairContext ctx = load_context(o, m);
  const LoadedPair& p = ctx.pair(o.index);
  const DescriptorMode mode = parse_mode(o.mode);
  Tensor overlay;
  if (!o.overlay.empty()) {
    overlay = image_io::read_pam(o.overlay);
  } else {
    // Horizontal colormap over the whole first frame.
    const std::size_t h = p.record.src_size.h, w = p.record.src_size.w;
    overlay = Tensor({4, h, w});
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const auto rgb = viridis(static_cast<double>(x) / static_cast<double>(std::max<std::size_t>(1, w - 1)));
        for (std::size_t c = 0; c < 3; ++c) overlay.at(c, y, x) = rgb[c] / 255.0;
        overlay.at(3, y, x) = 1.0;
      }
    }
    image_io::write_pam(dir / "overlay.pam", overlay);
    m.outputs.push_back((dir / "overlay.pam").string());
  }
  const Tensor splat = m.phase("splat", [&] {
    return forward_splat(descriptor_map(ctx.params, p.src, mode), descriptor_map(ctx.params, p.tgt, mode), overlay);
  });
  image_io::write_pam(dir / "splat.pam", splat);
  m.outputs.push_back((dir / "splat.pam").string());
  std::size_t filled = 0;
  for (std::size_t i = 0; i < splat.dim(1) * splat.dim(2); ++i) filled += splat[3 * splat.dim(1) * splat.dim(2) + i] != 0.0;
  std::cout << "filled=" << filled << '\n';
  return 0;
}

int cmd_flip(const Options& o, Manifest& m) {
  const fs::path out(o.out);
  m.path = out.parent_path() / (out.stem().string() + ".manifest.json");
  m.inputs.push_back(o.input);
  const FeatureStack stack = archive::read_archive(o.input);
  const FeatureStack flipped = flip_timestep_order(stack);
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  archive::write_archive(flipped, out);
  m.outputs.push_back(out.string());
  std::cout << "direction=" << to_string(flipped.direction) << " slots=" << flipped.slots << '\n';
  return 0;
}

int cmd_bench(const Options& o, Manifest& m) {
  const fs::path dir(o.out);
  fs::create_directories(dir);
  m.path = dir / "manifest.json";
  m.inputs.push_back(o.data);
  auto pairs = m.phase("load", [&] { return load_dataset(o.data); });
  if (pairs.empty()) throw Error(ErrorCode::InvalidConfig, "dataset is empty");
  if (pairs.size() > o.bench_pairs) pairs.resize(o.bench_pairs);
  const AggregatorParams params =
      o.ckpt.empty() ? init_params(config_for_stack(pairs.front().src, o.dim, o.res, o.res), o.seed)
                     : read_checkpoint(o.ckpt);
  std::vector<Tensor> descs;
  m.phase("aggregate", [&] {
    for (const LoadedPair& p : pairs) {
      descs.push_back(aggregate(params, p.src).data);
      descs.push_back(aggregate(params, p.tgt).data);
    }
    return 0;
  });
  m.phase("match", [&] {
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      match_keypoints(descs[2 * i], descs[2 * i + 1], pairs[i].record.src_points(), pairs[i].record.src_size,
                      pairs[i].record.tgt_size);
    }
    return 0;
  });
  std::vector<TrainingExample> examples;
  for (const LoadedPair& p : pairs) examples.push_back(make_example(p, params.config.out_h, params.config.out_w));
  m.phase("loss_and_gradients", [&] {
    for (const TrainingExample& ex : examples) loss_and_gradients(params, {&ex}, kDefaultTemperature);
    return 0;
  });
  std::ostringstream text;
  text << "pairs=" << pairs.size() << '\n';
  for (const auto& [name, ms] : m.timings_ms) {
    const double per = name == "load" ? ms : ms / static_cast<double>(pairs.size());
    text << name << (name == "load" ? "_ms=" : "_ms_per_pair=") << fixed6(per) << '\n';
  }
  write_text(dir / "bench.txt", text.str());
  m.outputs.push_back((dir / "bench.txt").string());
  std::cout << text.str();
  return 0;
}

}  // namespace

int cli_dispatch(int argc, char** argv) {
  kernels::apply_thread_limit_from_env();

  CLI::App app{"hyperagg: multi-timestep feature aggregation and semantic correspondence toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(HYPERAGG_VERSION));
  Options o;

  auto add_toy_flags = [&](CLI::App* sub) {
    sub->add_option("--steps", o.steps_chain, "diffusion steps T")->capture_default_str();
    sub->add_option("--stride", o.stride, "timestep subsample stride")->capture_default_str();
    sub->add_option("--image-size", o.image_size, "square image size")->capture_default_str();
    sub->add_option("--keypoints", o.keypoints, "keypoints per pair")->capture_default_str();
    sub->add_option("--blobs", o.blobs, "objects per scene")->capture_default_str();
    sub->add_option("--categories", o.categories, "scene categories")->capture_default_str();
    sub->add_option("--model-seed", o.model_seed, "toy denoiser seed")->capture_default_str();
    sub->add_option("--lighting", o.lighting, "per-image lighting jitter")->capture_default_str();
    sub->add_option("--direction", o.direction, "inversion or generation")->capture_default_str();
    sub->add_flag("--identity-warp", o.identity_warp, "target is the untransformed scene");
    sub->add_flag("--one-step", o.one_step, "single denoiser call (T=1, S=1)");
  };

  CLI::App* toygen = app.add_subcommand("toygen", "generate the toy correspondence benchmark");
  toygen->add_option("--seed", o.seed, "benchmark seed")->capture_default_str();
  toygen->add_option("--pairs", o.pairs, "number of pairs")->capture_default_str();
  toygen->add_option("--out", o.out, "output directory")->required();
  toygen->add_option("--split", o.fractions, "train,val,test fractions")->expected(3)->delimiter(',')->capture_default_str();
  add_toy_flags(toygen);

  CLI::App* extract = app.add_subcommand("extract-toy", "run toy chains on given scenes and write archives");
  extract->add_option("--seed", o.seed, "scene seed when --scenes is absent")->capture_default_str();
  extract->add_option("--scenes", o.scene_seeds, "scene seeds")->delimiter(',');
  extract->add_option("--out", o.out, "output directory")->required();
  add_toy_flags(extract);

  CLI::App* train_cmd = app.add_subcommand("train", "train an aggregator");
  train_cmd->add_option("--data", o.data, "training pair list")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--eval", o.eval_data, "pair list for periodic PCK")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", o.out, "checkpoint path (*.dhaw) or output directory")->required();
  train_cmd->add_option("--steps", o.steps, "optimizer steps")->capture_default_str();
  train_cmd->add_option("--batch", o.batch, "pairs per step")->capture_default_str();
  train_cmd->add_option("--lr", o.lr, "learning rate")->capture_default_str();
  train_cmd->add_option("--tau", o.tau, "similarity temperature")->capture_default_str();
  train_cmd->add_option("--weight-decay", o.weight_decay, "AdamW weight decay")->capture_default_str();
  train_cmd->add_option("--eval-every", o.eval_every, "steps between log lines")->capture_default_str();
  train_cmd->add_option("--dim", o.dim, "descriptor channels D")->capture_default_str();
  train_cmd->add_option("--res", o.res, "standard resolution")->capture_default_str();
  train_cmd->add_option("--seed", o.seed, "init and shuffling seed")->capture_default_str();

  CLI::App* eval_cmd = app.add_subcommand("eval", "PCK table per category and overall");
  eval_cmd->add_option("--ckpt", o.ckpt, "checkpoint")->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", o.data, "pair list")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--alpha", o.alpha, "PCK threshold fraction")->capture_default_str();
  eval_cmd->add_option("--basis", o.basis, "img, bbox or both")->capture_default_str();
  eval_cmd->add_option("--mode", o.mode, "aggregate, ours_pruned or layer_pruned")->capture_default_str();
  eval_cmd->add_flag("--oracle-gt", o.oracle_gt, "score the ground truth itself");
  eval_cmd->add_option("--out", o.out, "report directory")->capture_default_str();

  CLI::App* prune = app.add_subcommand("prune", "report the top mixing weight and pruned-variant PCK");
  prune->add_option("--ckpt", o.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  prune->add_option("--data", o.data, "pair list for pruned-variant eval")->check(CLI::ExistingFile);
  prune->add_option("--alpha", o.alpha, "PCK threshold fraction")->capture_default_str();
  prune->add_option("--out", o.out, "report directory")->capture_default_str();

  CLI::App* vizw = app.add_subcommand("viz-weights", "mixing weight heatmap");
  vizw->add_option("--ckpt", o.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  vizw->add_option("--out", o.out, "output directory")->required();
  vizw->add_option("--scale", o.scale, "cell size / 2 in pixels")->capture_default_str();

  CLI::App* vizp = app.add_subcommand("viz-pca", "per-layer, per-slot PCA images of an archive");
  vizp->add_option("--archive", o.input, "feature archive")->required()->check(CLI::ExistingFile);
  vizp->add_option("--out", o.out, "output directory")->required();
  vizp->add_option("--k", o.k, "components (first three become RGB)")->capture_default_str();
  vizp->add_option("--scale", o.scale, "upscaling target / 8")->capture_default_str();

  auto add_pair_flags = [&](CLI::App* sub) {
    sub->add_option("--ckpt", o.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    sub->add_option("--data", o.data, "pair list")->required()->check(CLI::ExistingFile);
    sub->add_option("--index", o.index, "pair index in the list")->capture_default_str();
    sub->add_option("--mode", o.mode, "aggregate, ours_pruned or layer_pruned")->capture_default_str();
    sub->add_option("--out", o.out, "output directory")->required();
  };
  CLI::App* match = app.add_subcommand("match", "keypoint transfer for one pair");
  add_pair_flags(match);
  CLI::App* warp = app.add_subcommand("warp", "dense backward warp of the source image");
  add_pair_flags(warp);
  warp->add_option("--mask", o.mask, "target mask (PGM)")->check(CLI::ExistingFile);
  CLI::App* splat = app.add_subcommand("splat", "forward propagation of an RGBA overlay");
  add_pair_flags(splat);
  splat->add_option("--overlay", o.overlay, "RGBA overlay (PAM); default colormap")->check(CLI::ExistingFile);

  CLI::App* flip = app.add_subcommand("flip", "reverse the timestep order of an archive");
  flip->add_option("--in", o.input, "input archive")->required()->check(CLI::ExistingFile);
  flip->add_option("--out", o.out, "output archive")->required();

  CLI::App* bench = app.add_subcommand("bench", "timings per phase");
  bench->add_option("--data", o.data, "pair list")->required()->check(CLI::ExistingFile);
  bench->add_option("--ckpt", o.ckpt, "checkpoint (default: random init)")->check(CLI::ExistingFile);
  bench->add_option("--pairs", o.bench_pairs, "pairs to time")->capture_default_str();
  bench->add_option("--dim", o.dim, "descriptor channels when no checkpoint")->capture_default_str();
  bench->add_option("--res", o.res, "standard resolution when no checkpoint")->capture_default_str();
  bench->add_option("--seed", o.seed, "init seed when no checkpoint")->capture_default_str();
  bench->add_option("--out", o.out, "output directory")->capture_default_str();

  o.out = ".";
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e);
      return 0;
    }
    std::cerr << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  Manifest manifest;
  manifest.command = sub->get_name();
  manifest.config = snapshot(*sub);
  const std::vector<std::pair<CLI::App*, int (*)(const Options&, Manifest&)>> table{
      {toygen, cmd_toygen}, {extract, cmd_extract_toy}, {train_cmd, cmd_train}, {eval_cmd, cmd_eval},
      {prune, cmd_prune},   {vizw, cmd_viz_weights},    {vizp, cmd_viz_pca},    {match, cmd_match},
      {warp, cmd_warp},     {splat, cmd_splat},         {flip, cmd_flip},       {bench, cmd_bench}};
  try {
    for (const auto& [app_ptr, fn] : table) {
      if (app_ptr == sub) {
        const int code = fn(o, manifest);
        manifest.write("ok");
        return code;
      }
    }
    throw Error(ErrorCode::InvalidConfig, "unhandled subcommand");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    try {
      manifest.write("error", e.what());
    } catch (const std::exception&) {
      // the manifest location itself may be what failed
    }
    return 2;
  }
}

int cli_dispatch(const std::vector<std::string>& args) {
  std::vector<std::string> storage = args;
  std::vector<char*> argv;
  for (std::string& s : storage) argv.push_back(s.data());
  argv.push_back(nullptr);
  return cli_dispatch(static_cast<int>(storage.size()), argv.data());
}

}  // namespace hyperagg
