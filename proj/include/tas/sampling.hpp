#pragma once

#include <cstdint>
#include <vector>

#include "tas/point_cloud.hpp"

namespace tas {

// Sampled coordinates plus, when meaningful, the source indices into the
// parent cloud. Displaced points synthesized by a network carry no indices.
struct SampleResult {
  std::vector<Vec3> coordinates;
  std::vector<std::size_t> source_indices;

  bool has_indices() const { return !source_indices.empty(); }
  std::size_t size() const { return coordinates.size(); }
};

// Greedy max-min farthest point sampling. First pick is seed_index; each
// later pick maximizes the minimum distance to everything picked so far,
// ties broken by lower index. Result order is pick order.
SampleResult fps(const PointCloud& cloud, std::size_t m, std::size_t seed_index = 0);

// m distinct indices without replacement from a seeded generator.
SampleResult random_sample(const PointCloud& cloud, std::size_t m, std::uint64_t rng_seed);

// One representative per occupied voxel: the point nearest the voxel center,
// ties by lower index; output sorted by voxel key.
SampleResult grid_sample(const PointCloud& cloud, double cell_size);

// Deterministic uniform double in [0, 1) from a raw 64-bit draw.
inline double uniform01(std::uint64_t raw) { return static_cast<double>(raw >> 11) * 0x1.0p-53; }

}  // namespace tas
