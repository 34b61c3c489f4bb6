#include "tas/sampling.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

namespace tas {

SampleResult fps(const PointCloud& cloud, std::size_t m, std::size_t seed_index) {
  cloud.check();
  std::size_t n = cloud.size();
  if (m < 1 || m > n) fail_input("fps requires 1 <= m <= N");
  if (seed_index >= n) fail_input("fps seed index out of range");

  SampleResult res;
  res.coordinates.reserve(m);
  res.source_indices.reserve(m);

  // Squared distances: monotone equivalent to Euclidean in the max-min rule.
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = seed_index;
  for (std::size_t t = 0; t < m; ++t) {
    res.source_indices.push_back(pick);
    res.coordinates.push_back(cloud.points[pick]);
    if (t + 1 == m) break;
    const Vec3& p = cloud.points[pick];
    std::size_t best = n;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d2 = std::min(min_d2[i], dist2(cloud.points[i], p));
      min_d2[i] = d2;
      if (d2 > best_d2 && min_d2[i] != 0.0) {
        best_d2 = d2;
        best = i;
      }
    }
    if (best == n) {
      // All remaining candidates coincide with picks (duplicate points);
      // fall back to the lowest unpicked index.
      std::vector<char> taken(n, 0);
      for (std::size_t s : res.source_indices) taken[s] = 1;
      for (std::size_t i = 0; i < n; ++i)
        if (!taken[i]) {
          best = i;
          break;
        }
    }
    pick = best;
  }
  return res;
}

SampleResult random_sample(const PointCloud& cloud, std::size_t m, std::uint64_t rng_seed) {
  cloud.check();
  std::size_t n = cloud.size();
  if (m < 1 || m > n) fail_input("random_sample requires 1 <= m <= N");

  std::mt19937_64 rng(rng_seed);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  SampleResult res;
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(idx[i], idx[j]);
    res.source_indices.push_back(idx[i]);
    res.coordinates.push_back(cloud.points[idx[i]]);
  }
  return res;
}

SampleResult grid_sample(const PointCloud& cloud, double cell_size) {
  cloud.check();
  if (cell_size <= 0.0) fail_input("grid_sample requires cell_size > 0");

  struct Best {
    std::size_t index;
    double d2;
  };
  std::map<std::array<long long, 3>, Best> voxels;  // ordered by voxel key
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    std::array<long long, 3> key;
    Vec3 center;
    for (int d = 0; d < 3; ++d) {
      key[d] = static_cast<long long>(std::floor(p[d] / cell_size));
      center[d] = (static_cast<double>(key[d]) + 0.5) * cell_size;
    }
    double d2 = dist2(p, center);
    auto it = voxels.find(key);
    if (it == voxels.end()) {
      voxels.emplace(key, Best{i, d2});
    } else if (d2 < it->second.d2 || (d2 == it->second.d2 && i < it->second.index)) {
      it->second = {i, d2};
    }
  }

  SampleResult res;
  for (const auto& [key, best] : voxels) {
    res.source_indices.push_back(best.index);
    res.coordinates.push_back(cloud.points[best.index]);
  }
  return res;
}

}  // namespace tas
