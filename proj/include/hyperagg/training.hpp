#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hyperagg/aggregator.hpp"
#include "hyperagg/autodiff.hpp"
#include "hyperagg/correspondence.hpp"
#include "hyperagg/datasets.hpp"

namespace hyperagg {

inline constexpr double kDefaultTemperature = 14.2857;

// Row-major descriptor cell index (cell_a or cell_b).
using CellPair = std::pair<std::size_t, std::size_t>;

// floor(x·W'/w), floor(y·H'/h), clamped into the grid; returns y·W' + x.
std::size_t keypoint_cell(Point p, ImageSize image, std::size_t out_h, std::size_t out_w);
std::vector<CellPair> keypoint_cells(const PairRecord& record, std::size_t out_h, std::size_t out_w);

// Symmetric contrastive loss over all H'·W' cells of two D×H'×W' maps.
// Throws InvalidKeypoint for a cell outside the grid.
double correspondence_loss(const Tensor& desc_a, const Tensor& desc_b, const std::vector<CellPair>& kps,
                           double temperature = kDefaultTemperature);
double correspondence_loss(const HyperfeatureMap& desc_a, const HyperfeatureMap& desc_b,
                           const std::vector<CellPair>& kps, double temperature = kDefaultTemperature);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

struct OptimState {
  AdamWConfig hyper;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;
};

OptimState make_optim_state(const std::vector<const Tensor*>& params, const AdamWConfig& hyper);

// One decoupled-decay AdamW update. decay[i] selects which tensors decay.
void adamw_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                const std::vector<bool>& decay, OptimState& state);
void adamw_step(AggregatorParams& params, const std::vector<Tensor>& grads, OptimState& state);

struct TrainingExample {
  FeatureStack src;
  FeatureStack tgt;
  std::vector<CellPair> cells;
};

TrainingExample make_example(const LoadedPair& pair, std::size_t out_h, std::size_t out_w);

// Mean correspondence loss over the batch, as a graph whose first
// parameter_count leaves are the params' tensors in declaration order.
struct LossGraph {
  ad::Graph graph;
  std::vector<ad::NodeId> param_nodes;
  ad::NodeId loss = 0;
};

LossGraph build_loss_graph(const AggregatorParams& params, const std::vector<const TrainingExample*>& batch,
                           double temperature);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<Tensor> grads;  // parallel to params.tensors()
};

LossAndGrad loss_and_gradients(const AggregatorParams& params, const std::vector<const TrainingExample*>& batch,
                               double temperature);

// Same value through aggregate() and correspondence_loss(), without a graph.
double batch_loss(const AggregatorParams& params, const std::vector<const TrainingExample*>& batch,
                  double temperature);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_index = 0;  // flat index over all parameter scalars
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central differences on every entry of x; f reads x, analytic is df/dx.
// Relative error is |a − n| / max(|a|, |n|, 1e-8).
GradCheckReport finite_diff_check(std::vector<double>& x, const std::function<double()>& f,
                                  const std::vector<double>& analytic, double h = 1e-5);
GradCheckReport finite_diff_check(const AggregatorParams& params, const std::vector<const TrainingExample*>& batch,
                                  double temperature = kDefaultTemperature, double h = 1e-5);

// L=3, S=2, D=8, 8×8 standard resolution, one pair with 2 keypoints.
struct GradCheckProblem {
  AggregatorParams params;
  std::vector<TrainingExample> batch;
};
GradCheckProblem standard_gradcheck_problem(std::uint64_t seed = 0);

struct TrainConfig {
  int max_steps = 5000;
  int batch_size = 2;
  double lr = 1e-3;
  double temperature = kDefaultTemperature;
  std::uint64_t seed = 0;
  int eval_every = 100;  // 0 → only after the last step
  double weight_decay = 1e-2;
  std::size_t descriptor_dim = 32;
  std::size_t out_h = 16;
  std::size_t out_w = 16;

  void validate() const;  // InvalidConfig
};

enum class DescriptorMode { Aggregate, OursPruned, LayerPruned };

const char* to_string(DescriptorMode mode);

Tensor descriptor_map(const AggregatorParams& params, const FeatureStack& stack, DescriptorMode mode);

struct PckTally {
  std::size_t keypoints = 0;
  std::size_t hits_img = 0;
  std::size_t hits_bbox = 0;
  double pck_img() const;
  double pck_bbox() const;
};

// Keypoint-pooled PCK, overall and per category.
struct EvalReport {
  double alpha = 0.1;
  std::size_t pairs = 0;
  PckTally overall;
  std::map<std::string, PckTally> per_category;
};

std::vector<std::vector<Point>> predict_keypoints(const AggregatorParams& params,
                                                  const std::vector<LoadedPair>& pairs, DescriptorMode mode);
EvalReport score_predictions(const std::vector<LoadedPair>& pairs, const std::vector<std::vector<Point>>& preds,
                             double alpha);
EvalReport evaluate(const AggregatorParams& params, const std::vector<LoadedPair>& pairs, double alpha = 0.1,
                    DescriptorMode mode = DescriptorMode::Aggregate);
// Uniform random target pixels, seeded.
EvalReport chance_baseline(const std::vector<LoadedPair>& pairs, double alpha, std::uint64_t seed);

// Stable key=value lines; keys prefixed with `prefix` when non-empty.
std::string format_report(const EvalReport& report, const std::string& prefix = {});

struct TrainResult {
  AggregatorParams params;
  std::vector<std::string> log;  // "step=<n> loss=<f> pck@0.1=<f>"
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// eval_set may be empty; the pck field then reads "na". on_log sees each
// line as it is produced.
TrainResult train(const std::vector<LoadedPair>& train_set, const std::vector<LoadedPair>& eval_set,
                  const TrainConfig& cfg, const std::function<void(const std::string&)>& on_log = {});
// Trains starting from the given params.
TrainResult train_from(AggregatorParams params, const std::vector<TrainingExample>& examples,
                       const std::vector<LoadedPair>& eval_set, const TrainConfig& cfg,
                       const std::function<void(const std::string&)>& on_log = {});

}  // namespace hyperagg
