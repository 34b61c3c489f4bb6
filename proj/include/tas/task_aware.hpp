#pragma once

#include <cstdint>
#include <span>

#include "tas/sampling.hpp"

namespace tas {

// Hyperparameters of the quota-based task-aware samplers.
//   lambda : scale ratio (>= 1), boosts the flagged-subset sampling rate.
//   beta   : clip ratio in [0, 1], caps the flagged quota at beta * m.
//   epsilon: boundary radius; 0 means "derive from the cloud" (2x mean
//            nearest-neighbor spacing).
struct TaskAwareConfig {
  double lambda = 1.0;
  double beta = 1.0;
  double epsilon = 0.0;
  std::size_t knn_soft = 20;

  void check() const {
    if (lambda < 1.0) fail_input("task-aware config requires lambda >= 1");
    if (beta < 0.0 || beta > 1.0) fail_input("task-aware config requires beta in [0, 1]");
    if (epsilon < 0.0) fail_input("task-aware config requires epsilon >= 0");
    if (knn_soft < 1) fail_input("task-aware config requires knn_soft >= 1");
  }
};

struct BoundaryMask {
  std::vector<char> flags;

  std::size_t size() const { return flags.size(); }
  std::size_t boundary_count() const {
    std::size_t c = 0;
    for (char f : flags) c += (f != 0);
    return c;
  }
};

// flags[i] = true iff some labeled j != i within epsilon carries a different
// label. Unlabeled points (-1) are never boundary and never induce one.
BoundaryMask detect_boundary(const PointCloud& cloud, double epsilon);

// Quota split for a flagged subset of size n_flagged out of n, sampling m
// points total:
//   boundary = min(round(lambda * (n_flagged/n) * m), n_flagged, round(beta*m))
// with round-half-up, then any non-boundary shortfall returned to the
// flagged quota so the two always sum to m.
struct QuotaSplit {
  std::size_t flagged;
  std::size_t rest;
};
QuotaSplit edge_quota(std::size_t n, std::size_t n_flagged, std::size_t m, double lambda,
                      double beta);

// FPS run independently inside the flagged and unflagged subsets (seed: first
// subset member in parent order), flagged picks first. An all-false or
// all-true mask degrades to plain FPS over the whole cloud.
SampleResult masked_fps(const PointCloud& cloud, const BoundaryMask& mask, std::size_t m,
                        const TaskAwareConfig& cfg);

// masked_fps over the label-boundary mask.
SampleResult edge_fps(const PointCloud& cloud, std::size_t m, const TaskAwareConfig& cfg);

// FPS within each semantic part, quotas proportional to part sizes
// (largest-remainder rounding, ties to lower label id), concatenated by
// ascending label id.
SampleResult part_fps(const PointCloud& cloud, std::size_t m);

// flags[i] = true iff i is among the knn_soft nearest neighbors of any
// keypoint. Empty keypoint list yields an all-false mask.
BoundaryMask soft_keypoints(const PointCloud& cloud, std::span<const std::size_t> keypoint_indices,
                            std::size_t knn_soft);

// masked_fps over a soft-keypoint mask.
SampleResult key_fps(const PointCloud& cloud, const BoundaryMask& soft_mask, std::size_t m,
                     const TaskAwareConfig& cfg);

// Uniform FPS over the complete cloud (not the partial input).
SampleResult completion_supervision(const PointCloud& complete, std::size_t m);

// 2x mean nearest-neighbor spacing; the resolution-invariant default radius.
double default_epsilon(const PointCloud& cloud);

}  // namespace tas
