#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "tas/geometry.hpp"

namespace tas {

// Point set with optional per-point feature rows and semantic labels.
// Label -1 means unlabeled.
struct PointCloud {
  std::vector<Vec3> points;
  Matrix features;          // rows == 0 -> no features
  std::vector<int> labels;  // empty -> no labels

  std::size_t size() const { return points.size(); }
  bool has_features() const { return features.rows > 0; }
  bool has_labels() const { return !labels.empty(); }

  // Throws std::invalid_argument on any invariant violation.
  void check() const;
};

struct Neighbor {
  std::size_t index;
  double dist;
};

// One entry per query point, sorted ascending by (distance, source index).
using NeighborList = std::vector<std::vector<Neighbor>>;

// Uniform-grid hash over the cloud's bounding box. Exact: the grid only
// prunes the candidate set, it never approximates. Read-only after
// construction, safe for concurrent queries.
class GridIndex {
 public:
  explicit GridIndex(const PointCloud& cloud, double cell_size = 0.0);

  std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const;
  // All points with dist <= r, truncated to the `cap` nearest.
  std::vector<Neighbor> radius(const Vec3& query, double r, std::size_t cap) const;

  double cell_size() const { return cell_; }

 private:
  const std::vector<Vec3>& pts_;
  double cell_ = 1.0;
  Vec3 origin_;
  long long lo_[3] = {0, 0, 0}, hi_[3] = {0, 0, 0};  // occupied cell index range
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> cells_;

  std::uint64_t pack(long long ix, long long iy, long long iz) const;
  void cell_of(const Vec3& p, long long out[3]) const;
};

NeighborList knn_query(const PointCloud& cloud, std::span<const Vec3> queries, std::size_t k);
NeighborList radius_query(const PointCloud& cloud, std::span<const Vec3> queries, double r,
                          std::size_t cap);

// Inverse-distance weighted interpolation of coarse features at fine points,
// w_i = 1/(d_i + 1e-8) over the k nearest coarse points. A fine point closer
// than 1e-8 to a coarse point reproduces that coarse feature exactly.
Matrix interpolate_features(const PointCloud& coarse, std::span<const Vec3> fine_points,
                            std::size_t k);

// Mean distance to the nearest other point; 0 for a single-point cloud.
double mean_nn_spacing(const PointCloud& cloud);

}  // namespace tas
