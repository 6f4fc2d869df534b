#include "hyperagg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <random>
#include <sstream>

namespace hyperagg {

std::size_t keypoint_cell(Point p, ImageSize image, std::size_t out_h, std::size_t out_w) {
  if (image.w == 0 || image.h == 0 || out_h == 0 || out_w == 0) {
    throw Error(ErrorCode::InvalidShape, "image and grid sizes must be positive");
  }
  auto axis = [](double v, std::size_t size, std::size_t cells) {
    const double scaled = std::floor(v * static_cast<double>(cells) / static_cast<double>(size));
    return static_cast<std::size_t>(std::clamp(scaled, 0.0, static_cast<double>(cells - 1)));
  };
  return axis(p.y, image.h, out_h) * out_w + axis(p.x, image.w, out_w);
}

std::vector<CellPair> keypoint_cells(const PairRecord& record, std::size_t out_h, std::size_t out_w) {
  std::vector<CellPair> out;
  for (const KeypointPair& kp : record.kps) {
    out.emplace_back(keypoint_cell(kp.src, record.src_size, out_h, out_w),
                     keypoint_cell(kp.tgt, record.tgt_size, out_h, out_w));
  }
  return out;
}

namespace {

void check_cells(const std::vector<CellPair>& kps, std::size_t cells) {
  if (kps.empty()) throw Error(ErrorCode::InvalidKeypoint, "at least one keypoint pair is required");
  for (std::size_t k = 0; k < kps.size(); ++k) {
    if (kps[k].first >= cells || kps[k].second >= cells) {
      throw Error(ErrorCode::InvalidKeypoint, "keypoint pair " + std::to_string(k) + " lies outside the grid",
                  static_cast<long>(k));
    }
  }
}

// Normalized rows → scaled similarity → symmetric CE, appended to g.
ad::NodeId loss_head(ad::Graph& g, ad::NodeId desc_a, ad::NodeId desc_b, const std::vector<CellPair>& kps,
                     double temperature) {
  const ad::NodeId a = g.row_normalize(g.transpose(desc_a));
  const ad::NodeId b = g.row_normalize(g.transpose(desc_b));
  return g.cross_entropy(g.matmul(a, b, temperature), kps);
}

struct ParamNodes {
  std::vector<ad::NodeId> all;
  ad::NodeId weights = 0;
};

ad::NodeId bottleneck_nodes(ad::Graph& g, const std::vector<ad::NodeId>& p, std::size_t layer, ad::NodeId x) {
  const std::size_t o = layer * 8;
  ad::NodeId h = g.relu(g.conv(x, p[o + 0], p[o + 1]));
  h = g.relu(g.conv(h, p[o + 2], p[o + 3]));
  const ad::NodeId main = g.conv(h, p[o + 4], p[o + 5]);
  return g.add(main, g.conv(x, p[o + 6], p[o + 7]));
}

ad::NodeId aggregate_nodes(ad::Graph& g, const AggregatorParams& params, const ParamNodes& pn,
                           const FeatureStack& stack) {
  const std::size_t L = params.config.layers(), S = params.config.slots;
  if (stack.layers != L || stack.slots != S) throw Error(ErrorCode::InvalidShape, "stack grid does not match aggregator");
  std::vector<ad::NodeId> terms;
  std::vector<long> index;
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t s = 0; s < S; ++s) {
      const ad::NodeId raw = g.leaf(stack.map(l, s), false);
      const ad::NodeId resized = g.resize(raw, params.config.out_h, params.config.out_w);
      terms.push_back(bottleneck_nodes(g, pn.all, l, resized));
      index.push_back(static_cast<long>(l * S + s));
    }
  }
  return g.weighted_sum(pn.weights, std::move(terms), std::move(index), S);
}

}  // namespace

double correspondence_loss(const Tensor& desc_a, const Tensor& desc_b, const std::vector<CellPair>& kps,
                           double temperature) {
  if (desc_a.rank() != 3 || desc_a.shape() != desc_b.shape()) {
    throw Error(ErrorCode::InvalidShape, "descriptor maps must share one D×H'×W' shape");
  }
  check_cells(kps, desc_a.dim(1) * desc_a.dim(2));
  ad::Graph g;
  const ad::NodeId loss = loss_head(g, g.leaf(desc_a, false), g.leaf(desc_b, false), kps, temperature);
  return g.value(loss)[0];
}

double correspondence_loss(const HyperfeatureMap& desc_a, const HyperfeatureMap& desc_b,
                           const std::vector<CellPair>& kps, double temperature) {
  return correspondence_loss(desc_a.data, desc_b.data, kps, temperature);
}

OptimState make_optim_state(const std::vector<const Tensor*>& params, const AdamWConfig& hyper) {
  OptimState state;
  state.hyper = hyper;
  for (const Tensor* p : params) {
    state.m.emplace_back(p->shape());
    state.v.emplace_back(p->shape());
  }
  return state;
}

void adamw_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                const std::vector<bool>& decay, OptimState& state) {
  if (params.size() != grads.size() || params.size() != decay.size() || params.size() != state.m.size()) {
    throw Error(ErrorCode::InvalidShape, "parameter, gradient and moment lists differ in length");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || params[i]->shape() != state.m[i].shape()) {
      throw Error(ErrorCode::InvalidShape, "tensor " + std::to_string(i) + " shape mismatch");
    }
  }
  const AdamWConfig& h = state.hyper;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);
  const double shrink = 1.0 - h.lr * h.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * g[k];
      v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * g[k] * g[k];
      if (decay[i]) p[k] *= shrink;
      p[k] -= h.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + h.eps);
    }
  }
}

void adamw_step(AggregatorParams& params, const std::vector<Tensor>& grads, OptimState& state) {
  adamw_step(params.tensors(), grads, params.decay_mask(), state);
}

TrainingExample make_example(const LoadedPair& pair, std::size_t out_h, std::size_t out_w) {
  return {pair.src, pair.tgt, keypoint_cells(pair.record, out_h, out_w)};
}

LossGraph build_loss_graph(const AggregatorParams& params, const std::vector<const TrainingExample*>& batch,
                           double temperature) {
  if (batch.empty()) throw Error(ErrorCode::InvalidConfig, "batch must not be empty");
  LossGraph lg;
  ad::Graph& g = lg.graph;
  ParamNodes pn;
  for (const Tensor* t : params.tensors()) pn.all.push_back(g.leaf(*t, true));
  lg.param_nodes = pn.all;
  pn.weights = g.softmax(pn.all.back(), params.config.slots);

  const std::size_t cells = params.config.out_h * params.config.out_w;
  std::vector<ad::NodeId> losses;
  std::vector<long> index;
  for (const TrainingExample* ex : batch) {
    check_cells(ex->cells, cells);
    const ad::NodeId a = aggregate_nodes(g, params, pn, ex->src);
    const ad::NodeId b = aggregate_nodes(g, params, pn, ex->tgt);
    losses.push_back(loss_head(g, a, b, ex->cells, temperature));
    index.push_back(0);
  }
  const ad::NodeId mean_weight = g.leaf(Tensor({1}, 1.0 / static_cast<double>(batch.size())), false);
  lg.loss = g.weighted_sum(mean_weight, std::move(losses), std::move(index));
  return lg;
}

LossAndGrad loss_and_gradients(const AggregatorParams& params, const std::vector<const TrainingExample*>& batch,
                               double temperature) {
  LossGraph lg = build_loss_graph(params, batch, temperature);
  lg.graph.backward(lg.loss);
  LossAndGrad out;
  out.loss = lg.graph.value(lg.loss)[0];
  for (ad::NodeId id : lg.param_nodes) out.grads.push_back(lg.graph.grad(id));
  return out;
}

double batch_loss(const AggregatorParams& params, const std::vector<const TrainingExample*>& batch,
                  double temperature) {
  if (batch.empty()) throw Error(ErrorCode::InvalidConfig, "batch must not be empty");
  const double weight = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const TrainingExample* ex : batch) {
    const Tensor a = aggregate(params, ex->src).data;
    const Tensor b = aggregate(params, ex->tgt).data;
    total += weight * correspondence_loss(a, b, ex->cells, temperature);
  }
  return total;
}

GradCheckReport finite_diff_check(std::vector<double>& x, const std::function<double()>& f,
                                  const std::vector<double>& analytic, double h) {
  if (x.size() != analytic.size()) throw Error(ErrorCode::InvalidShape, "analytic gradient length mismatch");
  GradCheckReport report;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    if (err > report.max_rel_error || report.checked == 0) {
      report.max_rel_error = err;
      report.worst_index = i;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
    ++report.checked;
  }
  return report;
}

GradCheckReport finite_diff_check(const AggregatorParams& params, const std::vector<const TrainingExample*>& batch,
                                  double temperature, double h) {
  const LossAndGrad lg = loss_and_gradients(params, batch, temperature);
  AggregatorParams probe = params;
  std::vector<Tensor*> tensors = probe.tensors();
  std::vector<double> flat, analytic;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    flat.insert(flat.end(), tensors[i]->values().begin(), tensors[i]->values().end());
    analytic.insert(analytic.end(), lg.grads[i].values().begin(), lg.grads[i].values().end());
  }
  auto loss_at = [&]() {
    std::size_t k = 0;
    for (Tensor* t : tensors) {
      for (double& v : t->values()) v = flat[k++];
    }
    return batch_loss(probe, batch, temperature);
  };
  return finite_diff_check(flat, loss_at, analytic, h);
}

GradCheckProblem standard_gradcheck_problem(std::uint64_t seed) {
  const std::vector<std::size_t> channels{6, 5, 4};
  const std::vector<std::size_t> res{2, 4, 8};
  constexpr std::size_t kSlots = 2;
  std::mt19937_64 rng(mix_seed(seed, 0x6c));
  std::normal_distribution<double> normal;

  auto random_stack = [&]() {
    FeatureStack s;
    s.layers = channels.size();
    s.slots = kSlots;
    s.slot_timesteps = {0, 1};
    s.maps.resize(s.layers * s.slots);
    for (std::size_t l = 0; l < s.layers; ++l) {
      for (std::size_t t = 0; t < kSlots; ++t) {
        Tensor m({channels[l], res[l], res[l]});
        for (double& v : m.values()) v = normal(rng);
        s.map(l, t) = std::move(m);
      }
    }
    return s;
  };

  GradCheckProblem problem;
  AggregatorConfig cfg;
  cfg.layer_channels = channels;
  cfg.slots = kSlots;
  cfg.descriptor_dim = 8;
  cfg.out_h = cfg.out_w = 8;
  problem.params = init_params(cfg, mix_seed(seed, 0x70));
  // Nonzero biases and logits so every parameter family carries gradient.
  for (Bottleneck& b : problem.params.bottlenecks) {
    for (Tensor* t : {&b.reduce_bias, &b.spatial_bias, &b.expand_bias, &b.project_bias}) {
      for (double& v : t->values()) v = 0.1 * normal(rng);
    }
  }
  for (double& v : problem.params.mixing_logits.values()) v = 0.5 * normal(rng);

  TrainingExample ex;
  ex.src = random_stack();
  ex.tgt = random_stack();
  ex.cells = {{9, 12}, {45, 38}};
  problem.batch.push_back(std::move(ex));
  return problem;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidConfig, why); };
  if (max_steps < 0) fail("max_steps must be ≥ 0");
  if (batch_size < 1) fail("batch_size must be ≥ 1");
  if (!(lr >= 0.0) || !(weight_decay >= 0.0)) fail("lr and weight_decay must be ≥ 0");
  if (!(temperature > 0.0)) fail("temperature must be positive");
  if (eval_every < 0) fail("eval_every must be ≥ 0");
  if (descriptor_dim < 2 || descriptor_dim % 2 != 0 || out_h == 0 || out_w == 0) {
    fail("descriptor_dim must be even and the standard resolution positive");
  }
}

const char* to_string(DescriptorMode mode) {
  switch (mode) {
    case DescriptorMode::Aggregate: return "aggregate";
    case DescriptorMode::OursPruned: return "ours_pruned";
    case DescriptorMode::LayerPruned: return "layer_pruned";
  }
  return "unknown";
}

Tensor descriptor_map(const AggregatorParams& params, const FeatureStack& stack, DescriptorMode mode) {
  switch (mode) {
    case DescriptorMode::Aggregate: return aggregate(params, stack).data;
    case DescriptorMode::OursPruned: return pruned_variants(params, stack).bottlenecked;
    case DescriptorMode::LayerPruned: return pruned_variants(params, stack).raw;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown descriptor mode");
}

double PckTally::pck_img() const {
  return keypoints == 0 ? 0.0 : static_cast<double>(hits_img) / static_cast<double>(keypoints);
}

double PckTally::pck_bbox() const {
  return keypoints == 0 ? 0.0 : static_cast<double>(hits_bbox) / static_cast<double>(keypoints);
}

std::vector<std::vector<Point>> predict_keypoints(const AggregatorParams& params,
                                                  const std::vector<LoadedPair>& pairs, DescriptorMode mode) {
  std::vector<std::vector<Point>> preds(pairs.size());
  std::vector<std::exception_ptr> errors(pairs.size());
  const long n = static_cast<long>(pairs.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    const LoadedPair& pair = pairs[static_cast<std::size_t>(i)];
    try {
      const Tensor a = descriptor_map(params, pair.src, mode);
      const Tensor b = descriptor_map(params, pair.tgt, mode);
      const auto matches =
          match_keypoints(a, b, pair.record.src_points(), pair.record.src_size, pair.record.tgt_size);
      auto& out = preds[static_cast<std::size_t>(i)];
      for (const MatchResult& m : matches) out.push_back(m.pixel);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return preds;
}

EvalReport score_predictions(const std::vector<LoadedPair>& pairs, const std::vector<std::vector<Point>>& preds,
                             double alpha) {
  if (preds.size() != pairs.size()) throw Error(ErrorCode::InvalidInput, "one prediction list per pair is required");
  EvalReport report;
  report.alpha = alpha;
  report.pairs = pairs.size();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const PairRecord& r = pairs[i].record;
    const auto gts = r.tgt_points();
    PckConfig img{alpha, PckBasis::Image, static_cast<double>(r.tgt_size.h), static_cast<double>(r.tgt_size.w)};
    PckConfig box{alpha, PckBasis::Bbox, r.tgt_bbox.height(), r.tgt_bbox.width()};
    PckTally t;
    t.keypoints = gts.size();
    t.hits_img = pck_hits(preds[i], gts, img);
    t.hits_bbox = pck_hits(preds[i], gts, box);
    for (PckTally* into : {&report.overall, &report.per_category[r.category]}) {
      into->keypoints += t.keypoints;
      into->hits_img += t.hits_img;
      into->hits_bbox += t.hits_bbox;
    }
  }
  return report;
}

EvalReport evaluate(const AggregatorParams& params, const std::vector<LoadedPair>& pairs, double alpha,
                    DescriptorMode mode) {
  return score_predictions(pairs, predict_keypoints(params, pairs, mode), alpha);
}

EvalReport chance_baseline(const std::vector<LoadedPair>& pairs, double alpha, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0xc4a));
  std::vector<std::vector<Point>> preds;
  for (const LoadedPair& p : pairs) {
    auto& out = preds.emplace_back();
    for (std::size_t k = 0; k < p.record.kps.size(); ++k) {
      out.push_back({static_cast<double>(rng() % p.record.tgt_size.w), static_cast<double>(rng() % p.record.tgt_size.h)});
    }
  }
  return score_predictions(pairs, preds, alpha);
}

namespace {

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string alpha_tag(double alpha) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", alpha);
  return std::string("pck@") + buf;
}

}  // namespace

std::string format_report(const EvalReport& r, const std::string& prefix) {
  const std::string tag = alpha_tag(r.alpha);
  std::ostringstream out;
  out << prefix << "pairs=" << r.pairs << '\n';
  out << prefix << "keypoints=" << r.overall.keypoints << '\n';
  out << prefix << tag << "_img=" << fixed(r.overall.pck_img()) << '\n';
  out << prefix << tag << "_bbox=" << fixed(r.overall.pck_bbox()) << '\n';
  for (const auto& [cat, t] : r.per_category) {
    out << prefix << "cat." << cat << ".keypoints=" << t.keypoints << '\n';
    out << prefix << "cat." << cat << '.' << tag << "_img=" << fixed(t.pck_img()) << '\n';
    out << prefix << "cat." << cat << '.' << tag << "_bbox=" << fixed(t.pck_bbox()) << '\n';
  }
  return out.str();
}

TrainResult train(const std::vector<LoadedPair>& train_set, const std::vector<LoadedPair>& eval_set,
                  const TrainConfig& cfg, const std::function<void(const std::string&)>& on_log) {
  cfg.validate();
  if (train_set.empty()) throw Error(ErrorCode::InvalidConfig, "training set is empty");
  std::vector<TrainingExample> examples;
  for (const LoadedPair& p : train_set) examples.push_back(make_example(p, cfg.out_h, cfg.out_w));
  const AggregatorConfig acfg = config_for_stack(train_set.front().src, cfg.descriptor_dim, cfg.out_h, cfg.out_w);
  return train_from(init_params(acfg, cfg.seed), examples, eval_set, cfg, on_log);
}

TrainResult train_from(AggregatorParams params, const std::vector<TrainingExample>& examples,
                       const std::vector<LoadedPair>& eval_set, const TrainConfig& cfg,
                       const std::function<void(const std::string&)>& on_log) {
  cfg.validate();
  if (examples.empty()) throw Error(ErrorCode::InvalidConfig, "training set is empty");
  AdamWConfig hyper;
  hyper.lr = cfg.lr;
  hyper.weight_decay = cfg.weight_decay;
  OptimState state = make_optim_state(std::as_const(params).tensors(), hyper);

  TrainResult result;
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x7a1));
  std::vector<std::size_t> order(examples.size());
  std::size_t cursor = order.size();
  const std::size_t batch_size = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), examples.size());

  auto next_batch = [&]() {
    std::vector<const TrainingExample*> batch;
    while (batch.size() < batch_size) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
        cursor = 0;
      }
      batch.push_back(&examples[order[cursor++]]);
    }
    return batch;
  };

  for (int step = 1; step <= cfg.max_steps; ++step) {
    const auto batch = next_batch();
    const LossAndGrad lg = loss_and_gradients(params, batch, cfg.temperature);
    if (step == 1) result.initial_loss = lg.loss;
    result.final_loss = lg.loss;
    adamw_step(params, lg.grads, state);
    const bool report = (cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.max_steps;
    if (report) {
      const std::string pck =
          eval_set.empty() ? std::string("na") : fixed(evaluate(params, eval_set).overall.pck_img());
      result.log.push_back("step=" + std::to_string(step) + " loss=" + fixed(lg.loss) + " pck@0.1=" + pck);
      if (on_log) on_log(result.log.back());
    }
  }
  result.params = std::move(params);
  return result;
}

}  // namespace hyperagg
