#pragma once

#include <cstdint>
#include <utility>

#include "tas/point_cloud.hpp"

namespace tas {

enum class SyntheticKind { SplitPlane, MultiPart, PartialComplete, KeypointShape };

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::SplitPlane;
  std::size_t n_points = 2048;
  int parts = 2;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void check() const {
    if (n_points < 1) fail_input("synthetic spec requires n_points >= 1");
    if (parts < 1 || static_cast<std::size_t>(parts) > n_points)
      fail_input("synthetic spec requires n_points >= parts >= 1");
    if (noise_sigma < 0.0) fail_input("synthetic spec requires noise_sigma >= 0");
  }
};

// Stratified-jitter samples of the unit square, labeled by `parts` equal
// x-strips, Gaussian z-noise.
PointCloud gen_split_plane(const SyntheticSpec& spec);

// Touching primitive surfaces (boxes, cylinder shell, disk cap), one label
// per primitive, point counts proportional to surface area.
PointCloud gen_multipart(const SyntheticSpec& spec);

// (partial, complete) sphere-surface pair: the partial cloud keeps only the
// half-space facing view_direction, re-sampled to n_points.
std::pair<PointCloud, PointCloud> gen_partial_complete(const SyntheticSpec& spec,
                                                       const Vec3& view_direction);

// Box wireframe normalized into the unit sphere; corners and a few edge
// midpoints are keypoints (and members of the cloud).
std::pair<PointCloud, std::vector<std::size_t>> gen_keypoint_shape(const SyntheticSpec& spec);

}  // namespace tas
