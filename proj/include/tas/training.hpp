#pragma once

#include <iosfwd>

#include "tas/dispnet.hpp"
#include "tas/metrics.hpp"
#include "tas/task_aware.hpp"

namespace tas {

enum class TaskKind { Segmentation, Completion, Keypoint };
enum class DispLossKind { CD, EMD, EMDStar };
enum class SupervisionKind { FPS, EdgeFPS, PartFPS, KeyFPS, Complete };
enum class InitPointsKind { FPS, Random, NoisyEdgeFPS };
// Which points feed the sampled downsampling layer: plain FPS (baseline), the
// task-aware supervision points themselves, or the displacement network.
enum class PipelineKind { Baseline, TaskAware, Learned };
// Joint loss ablations: full joint training, task loss only, displacement
// loss only (task gradients blocked from the sampler), or the latter with a
// joint finetune phase.
enum class TrainStrategy { Joint, TaskLossOnly, NoTaskGradient, NoTaskGradientThenFinetune };
enum class OptimizerKind { Momentum, Adam };

struct TrainConfig {
  TaskKind task = TaskKind::Segmentation;
  TaskAwareConfig task_aware{3.5, 0.75, 0.0, 20};
  double alpha0 = 50.0;
  double alpha_decay = 0.95;
  int alpha_period_epochs = 20;
  DispLossKind disp_loss = DispLossKind::EMDStar;
  DispMode disp_mode = DispMode::Offset;
  SupervisionKind supervision = SupervisionKind::EdgeFPS;
  InitPointsKind init_points = InitPointsKind::FPS;
  PipelineKind pipeline = PipelineKind::Learned;
  TrainStrategy strategy = TrainStrategy::Joint;
  OptimizerKind optimizer = OptimizerKind::Momentum;
  int epochs = 30;
  int batch_size = 4;
  int finetune_epochs = 10;
  int sampler_layer = 2;  // which downsampling layer hosts the sampler
  double lr = 0.01;
  double momentum = 0.98;
  double loss_scale = 1.0;  // completion uses 100
  double positive_weight = 10.0;
  double flip_rate = 0.1;
  std::uint64_t seed = 1;
  std::vector<std::size_t> sample_counts = {256, 32};
  int num_parts = 0;  // 0 -> derive from labels

  void check() const;
};

struct EpochRecord {
  int epoch = 0;
  double task_loss = 0.0;
  double disp_loss = 0.0;
  double total_loss = 0.0;
  double metric = 0.0;  // oA (segmentation), CD (completion), AP (keypoint)
  double alpha = 0.0;
  double boundary_fraction = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  bool diverged = false;
  std::string note;
  // Post-training sampler statistics.
  double init_boundary_fraction = 0.0;
  double final_boundary_fraction = 0.0;
  double mean_displacement = 0.0;
  SegScores final_scores{};
  std::vector<std::vector<int>> final_pred_labels;   // segmentation / keypoint (>0 flag)
  std::vector<std::vector<Vec3>> final_sample_points;  // sampled-layer points per sample
};

// One training example. `complete` is used by the completion task,
// `keypoints` by keypoint detection.
struct TrainSample {
  PointCloud cloud;
  PointCloud complete;
  std::vector<std::size_t> keypoints;
};

// task_loss + alpha * disp_loss.
double joint_loss(double task_loss, double disp_loss, double alpha);

// alpha0 * alpha_decay^floor(epoch / alpha_period_epochs).
double alpha_at(int epoch, const TrainConfig& cfg);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Momentum;
  double lr = 0.01;
  double momentum = 0.98;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct OptimizerState {
  std::vector<Matrix> v;  // momentum velocity / Adam second moment
  std::vector<Matrix> m;  // Adam first moment
  long step = 0;
};

// Momentum: v <- mu v + g, w <- w - lr v. Adam: bias-corrected moments.
// Throws on non-finite gradients.
void optimizer_step(ParamSet& params, OptimizerState& state, const OptimizerConfig& cfg);

// Edge-FPS on a label-derived boundary mask corrupted by flipping each flag
// with probability flip_rate; stands in for a learned boundary detector.
SampleResult noisy_edge_init(const PointCloud& cloud, std::size_t m, const TaskAwareConfig& cfg,
                             double flip_rate, std::uint64_t seed);

// Joint sampler + toy-task training. Per-epoch records are evaluated with
// the parameters as of the start of that epoch.
TrainReport train(const std::vector<TrainSample>& dataset, const TrainConfig& cfg,
                  ParamSet* out_disp_params = nullptr);

// Synthetic dataset for a task (split plane / sphere pair / box frame).
std::vector<TrainSample> make_task_dataset(TaskKind task, std::size_t n_shapes,
                                           std::size_t n_points, int parts, std::uint64_t seed);

// CSV: epoch,task_loss,disp_loss,total_loss,metric,alpha,boundary_fraction
void write_report_csv(const TrainReport& report, std::ostream& out);

}  // namespace tas
