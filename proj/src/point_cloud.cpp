#include "tas/point_cloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tas {

void PointCloud::check() const {
  if (points.empty()) fail_input("point cloud must contain at least one point");
  for (const Vec3& p : points)
    if (!p.finite()) fail_input("point cloud contains non-finite coordinates");
  if (has_features() && features.rows != points.size())
    fail_input("feature row count does not match point count");
  if (has_labels() && labels.size() != points.size())
    fail_input("label count does not match point count");
}

namespace {

constexpr std::uint64_t kCellBias = 1u << 20;  // grid indices fit in 21 bits per axis

double auto_cell_size(const std::vector<Vec3>& pts) {
  Vec3 lo = pts[0], hi = pts[0];
  for (const Vec3& p : pts)
    for (int d = 0; d < 3; ++d) {
      lo[d] = std::min(lo[d], p[d]);
      hi[d] = std::max(hi[d], p[d]);
    }
  double extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  if (extent <= 0.0) return 1.0;
  double cells_per_axis = std::ceil(std::cbrt(static_cast<double>(2 * pts.size())));
  return extent / std::max(1.0, cells_per_axis);
}

void sort_neighbors(std::vector<Neighbor>& v) {
  std::sort(v.begin(), v.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.index < b.index;
  });
}

}  // namespace

GridIndex::GridIndex(const PointCloud& cloud, double cell_size) : pts_(cloud.points) {
  cloud.check();
  cell_ = cell_size > 0.0 ? cell_size : auto_cell_size(pts_);
  origin_ = pts_[0];
  for (const Vec3& p : pts_)
    for (int d = 0; d < 3; ++d) origin_[d] = std::min(origin_[d], p[d]);

  for (int d = 0; d < 3; ++d) {
    lo_[d] = std::numeric_limits<long long>::max();
    hi_[d] = std::numeric_limits<long long>::min();
  }
  for (std::size_t i = 0; i < pts_.size(); ++i) {
    long long c[3];
    cell_of(pts_[i], c);
    for (int d = 0; d < 3; ++d) {
      lo_[d] = std::min(lo_[d], c[d]);
      hi_[d] = std::max(hi_[d], c[d]);
    }
    cells_[pack(c[0], c[1], c[2])].push_back(static_cast<std::uint32_t>(i));
  }
}

std::uint64_t GridIndex::pack(long long ix, long long iy, long long iz) const {
  return ((static_cast<std::uint64_t>(ix + kCellBias) & 0x1FFFFF) << 42) |
         ((static_cast<std::uint64_t>(iy + kCellBias) & 0x1FFFFF) << 21) |
         (static_cast<std::uint64_t>(iz + kCellBias) & 0x1FFFFF);
}

void GridIndex::cell_of(const Vec3& p, long long out[3]) const {
  for (int d = 0; d < 3; ++d) out[d] = static_cast<long long>(std::floor((p[d] - origin_[d]) / cell_));
}

std::vector<Neighbor> GridIndex::knn(const Vec3& query, std::size_t k) const {
  if (k == 0) fail_input("knn requires k >= 1");
  if (!query.finite()) fail_input("non-finite query coordinate");
  k = std::min(k, pts_.size());

  long long qc[3];
  cell_of(query, qc);
  std::vector<Neighbor> cand;
  cand.reserve(4 * k);

  // Expand Chebyshev shells around the query cell until the unscanned region
  // provably cannot hold a closer point than the current k-th candidate.
  long long max_shell = 0;
  for (int d = 0; d < 3; ++d)
    max_shell = std::max({max_shell, std::llabs(qc[d] - lo_[d]), std::llabs(hi_[d] - qc[d])});

  for (long long s = 0;; ++s) {
    for (long long ix = qc[0] - s; ix <= qc[0] + s; ++ix) {
      if (ix < lo_[0] || ix > hi_[0]) continue;
      bool face_x = (ix == qc[0] - s || ix == qc[0] + s);
      for (long long iy = qc[1] - s; iy <= qc[1] + s; ++iy) {
        if (iy < lo_[1] || iy > hi_[1]) continue;
        bool face_y = (iy == qc[1] - s || iy == qc[1] + s);
        for (long long iz = qc[2] - s; iz <= qc[2] + s; ++iz) {
          if (iz < lo_[2] || iz > hi_[2]) continue;
          if (!face_x && !face_y && !(iz == qc[2] - s || iz == qc[2] + s)) continue;
          auto it = cells_.find(pack(ix, iy, iz));
          if (it == cells_.end()) continue;
          for (std::uint32_t idx : it->second)
            cand.push_back({idx, dist2(query, pts_[idx])});
        }
      }
    }
    if (cand.size() >= k) {
      std::nth_element(cand.begin(), cand.begin() + (k - 1), cand.end(),
                       [](const Neighbor& a, const Neighbor& b) {
                         if (a.dist != b.dist) return a.dist < b.dist;
                         return a.index < b.index;
                       });
      double kth = cand[k - 1].dist;
      // Any unscanned point lies outside the box of half-width (s+1) cells
      // around the query cell.
      double bound = std::numeric_limits<double>::infinity();
      for (int d = 0; d < 3; ++d) {
        double box_lo = origin_[d] + static_cast<double>(qc[d] - s) * cell_;
        double box_hi = origin_[d] + static_cast<double>(qc[d] + s + 1) * cell_;
        bound = std::min({bound, query[d] - box_lo, box_hi - query[d]});
      }
      if (bound >= 0.0 && kth <= bound * bound) break;
    }
    if (s >= max_shell) break;  // every occupied cell scanned
  }

  sort_neighbors(cand);
  cand.resize(k);
  for (Neighbor& n : cand) n.dist = std::sqrt(n.dist);
  return cand;
}

std::vector<Neighbor> GridIndex::radius(const Vec3& query, double r, std::size_t cap) const {
  if (r <= 0.0) fail_input("radius query requires r > 0");
  if (cap == 0) fail_input("radius query requires cap >= 1");
  if (!query.finite()) fail_input("non-finite query coordinate");

  long long clo[3], chi[3];
  cell_of({query.x - r, query.y - r, query.z - r}, clo);
  cell_of({query.x + r, query.y + r, query.z + r}, chi);
  for (int d = 0; d < 3; ++d) {
    clo[d] = std::max(clo[d], lo_[d]);
    chi[d] = std::min(chi[d], hi_[d]);
  }

  double r2 = r * r;
  std::vector<Neighbor> out;
  for (long long ix = clo[0]; ix <= chi[0]; ++ix)
    for (long long iy = clo[1]; iy <= chi[1]; ++iy)
      for (long long iz = clo[2]; iz <= chi[2]; ++iz) {
        auto it = cells_.find(pack(ix, iy, iz));
        if (it == cells_.end()) continue;
        for (std::uint32_t idx : it->second) {
          double d2 = dist2(query, pts_[idx]);
          if (d2 <= r2) out.push_back({idx, d2});
        }
      }
  sort_neighbors(out);
  if (out.size() > cap) out.resize(cap);
  for (Neighbor& n : out) n.dist = std::sqrt(n.dist);
  return out;
}

NeighborList knn_query(const PointCloud& cloud, std::span<const Vec3> queries, std::size_t k) {
  GridIndex index(cloud);
  NeighborList out;
  out.reserve(queries.size());
  for (const Vec3& q : queries) out.push_back(index.knn(q, k));
  return out;
}

NeighborList radius_query(const PointCloud& cloud, std::span<const Vec3> queries, double r,
                          std::size_t cap) {
  GridIndex index(cloud);
  NeighborList out;
  out.reserve(queries.size());
  for (const Vec3& q : queries) out.push_back(index.radius(q, r, cap));
  return out;
}

Matrix interpolate_features(const PointCloud& coarse, std::span<const Vec3> fine_points,
                            std::size_t k) {
  if (!coarse.has_features()) fail_input("interpolate_features requires features on the coarse cloud");
  if (k == 0) fail_input("interpolate_features requires k >= 1");
  constexpr double kDelta = 1e-8;

  GridIndex index(coarse);
  Matrix out(fine_points.size(), coarse.features.cols);
  for (std::size_t i = 0; i < fine_points.size(); ++i) {
    auto nn = index.knn(fine_points[i], k);
    if (nn[0].dist < kDelta) {
      const double* src = coarse.features.row(nn[0].index);
      std::copy(src, src + out.cols, out.row(i));
      continue;
    }
    double wsum = 0.0;
    for (const Neighbor& n : nn) {
      double w = 1.0 / (n.dist + kDelta);
      wsum += w;
      const double* src = coarse.features.row(n.index);
      double* dst = out.row(i);
      for (std::size_t c = 0; c < out.cols; ++c) dst[c] += w * src[c];
    }
    double* dst = out.row(i);
    for (std::size_t c = 0; c < out.cols; ++c) dst[c] /= wsum;
  }
  return out;
}

double mean_nn_spacing(const PointCloud& cloud) {
  cloud.check();
  if (cloud.size() < 2) return 0.0;
  GridIndex index(cloud);
  double total = 0.0;
  for (const Vec3& p : cloud.points) {
    auto nn = index.knn(p, 2);
    total += nn[1].dist;  // nn[0] is the point itself at distance 0
  }
  return total / static_cast<double>(cloud.size());
}

}  // namespace tas
