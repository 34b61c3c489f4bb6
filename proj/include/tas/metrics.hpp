#pragma once

#include <span>
#include <utility>
#include <vector>

#include "tas/geometry.hpp"

namespace tas {

// Bijection between two equal-size point sets with its total transport cost.
struct Matching {
  std::vector<std::size_t> a_to_b;  // a_to_b[i] = index in B matched to A[i]
  double total_cost = 0.0;
};

struct SegScores {
  double shape_miou = 0.0;
  double part_miou = 0.0;
  double overall_acc = 0.0;
};

// Symmetric Chamfer distance, unsquared and summed:
//   1/2 (sum_a min_b ||a-b|| + sum_b min_a ||b-a||).
double chamfer(std::span<const Vec3> a, std::span<const Vec3> b);

// Per-point mean variant: 1/2 (avg_a min_b + avg_b min_a).
double chamfer_mean(std::span<const Vec3> a, std::span<const Vec3> b);

// Chamfer value plus its gradient with respect to the points of a
// (nearest-neighbor selections treated as constant).
double chamfer_with_grad(std::span<const Vec3> a, std::span<const Vec3> b,
                         std::vector<Vec3>& grad_a);

// Minimum-cost perfect matching on a square nonnegative cost matrix
// (Kuhn-Munkres with potentials, O(n^3)).
Matching assignment(const Matrix& cost);

// Earth mover's distance: min over bijections of the summed Euclidean
// distances between matched points.
std::pair<double, Matching> emd(std::span<const Vec3> a, std::span<const Vec3> b);

// EMD cost and gradient with respect to a under the optimal (recomputed)
// matching, matching treated as constant.
double emd_with_grad(std::span<const Vec3> a, std::span<const Vec3> b, std::vector<Vec3>& grad_a);

// Stabilized EMD: the bijection is computed between init and target, then the
// cost is charged on the predictions. pred[i] displaces init[i].
double emd_star(std::span<const Vec3> pred, std::span<const Vec3> init,
                std::span<const Vec3> target);

// EMD* with a caller-supplied matching (e.g. cached across a training run).
double emd_star_with_matching(std::span<const Vec3> pred, std::span<const Vec3> target,
                              const Matching& phi, std::vector<Vec3>* grad_pred = nullptr);

// Dataset segmentation scores. gt label -1 is excluded from every tally.
// Part mIoU averages per-part IoU over dataset-wide confusion counts; shape
// mIoU averages per-shape IoU over the parts present in each shape.
SegScores seg_scores(const std::vector<std::vector<int>>& pred_labels,
                     const std::vector<std::vector<int>>& gt_labels, int num_parts);

// Fraction of ground-truth keypoints with at least one prediction within
// threshold (inclusive).
double keypoint_ap(std::span<const Vec3> pred_points, std::span<const Vec3> gt_points,
                   double threshold);

}  // namespace tas
