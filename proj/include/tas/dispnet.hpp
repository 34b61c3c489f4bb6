#pragma once

#include <functional>

#include "tas/nn.hpp"
#include "tas/point_cloud.hpp"
#include "tas/sampling.hpp"

namespace tas {

enum class DispMode { Offset, Coordinate, CoordinateSoftProjected };

// Layer widths of the two-level displacement encoder. The paper-style
// defaults keep the network tiny: shared MLPs (16, 32) and (32, 64), one
// propagation level back to 32 channels, and a 3-output head.
struct DispNetSizes {
  std::size_t input_feature_dim = 0;
  std::size_t l1_hidden = 16, l1_out = 32;
  std::size_t l2_hidden = 32, l2_out = 64;
  std::size_t fp_out = 32;
  std::size_t k = 8;            // grouping neighbors per level
  std::size_t fp_k = 3;         // propagation neighbors
  std::size_t proj_k = 8;       // soft-projection neighbors
  double level2_fraction = 0.25;
};

// All trainable tensors of the displacement network, with gradient slots.
// The head starts at zero so Offset mode begins as the identity on the
// initial point set; the soft-projection temperature is trainable.
struct DispNetParams {
  DispNetSizes sizes;
  ParamSet params;
};

DispNetParams make_dispnet(const DispNetSizes& sizes, std::uint64_t seed);

struct SoftProjCache {
  std::vector<std::size_t> idx;  // pred-major, size M*proj_k
  std::vector<double> s;         // softmax weights
  std::vector<double> d2;        // squared distances
  std::vector<Vec3> pred, picks;
  std::size_t k = 0;
  double t = 1.0;
};

struct DispNetCache {
  SampleResult level2;  // FPS sub-subset of init (indices into init order)
  SACache sa1, sa2;
  FPCache fp;
  DenseCache fpd, head;
  Matrix f1;
  SoftProjCache proj;
  DispMode mode = DispMode::Offset;
  std::vector<Vec3> init_points;
  std::size_t skip_cols = 0, interp_cols = 0;
};

// Forward pass of Fig.-4-style displacement prediction: group features
// around each initial point, two set-abstraction levels, propagate back to
// init resolution, and emit one 3-vector per initial point. Offset mode adds
// it to init; Coordinate emits it directly; CoordinateSoftProjected snaps it
// softly onto the input cloud.
std::vector<Vec3> displacement_forward(const PointCloud& input_cloud, const SampleResult& init,
                                       const DispNetParams& net, DispMode mode,
                                       DispNetCache* cache = nullptr);

// Accumulates parameter gradients for a given upstream gradient on the
// output points.
void displacement_backward(DispNetParams& net, const DispNetCache& cache,
                           const std::vector<Vec3>& grad_out);

// Softmax(-d^2/t^2)-weighted combination of the proj_k nearest cloud points.
std::vector<Vec3> soft_project(std::span<const Vec3> pred, const PointCloud& cloud,
                               std::size_t proj_k, double temperature,
                               SoftProjCache* cache = nullptr);
// Returns grad w.r.t. pred; adds d(loss)/d(temperature) into *grad_t.
std::vector<Vec3> soft_project_backward(const SoftProjCache& cache,
                                        const std::vector<Vec3>& grad_out, double* grad_t);

// Single-centroid PointNet aggregation through the level-1 MLP of `net`:
// concat [rel_coords, neighbor_features], shared dense+ReLU stack, max-pool.
std::vector<double> pointnet_aggregate(const Matrix& neighbor_features, const Matrix& rel_coords,
                                       const DispNetParams& net);

// Central-difference gradient audit on probe_count randomly chosen scalar
// parameters. eval(true) must return the loss with params.grad filled;
// eval(false) just the loss. Returns the max relative error
// |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-12).
double grad_check(const std::function<double(bool)>& eval, ParamSet& params,
                  std::size_t probe_count, std::uint64_t seed, double step = 1e-5);

}  // namespace tas
