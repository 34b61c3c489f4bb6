#include "tas/task_aware.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace tas {

double default_epsilon(const PointCloud& cloud) {
  double spacing = mean_nn_spacing(cloud);
  return spacing > 0.0 ? 2.0 * spacing : 1e-6;
}

BoundaryMask detect_boundary(const PointCloud& cloud, double epsilon) {
  cloud.check();
  if (!cloud.has_labels()) fail_input("detect_boundary requires labels");
  if (epsilon <= 0.0) fail_input("detect_boundary requires epsilon > 0");

  GridIndex index(cloud, epsilon);
  BoundaryMask mask;
  mask.flags.assign(cloud.size(), 0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.labels[i] < 0) continue;
    auto nn = index.radius(cloud.points[i], epsilon, cloud.size());
    for (const Neighbor& nb : nn) {
      if (nb.index == i || cloud.labels[nb.index] < 0) continue;
      if (cloud.labels[nb.index] != cloud.labels[i]) {
        mask.flags[i] = 1;
        break;
      }
    }
  }
  return mask;
}

QuotaSplit edge_quota(std::size_t n, std::size_t n_flagged, std::size_t m, double lambda,
                      double beta) {
  if (n == 0 || m > n || n_flagged > n) fail_input("edge_quota: inconsistent counts");
  double fraction = static_cast<double>(n_flagged) / static_cast<double>(n);
  long long scaled = round_half_up(lambda * fraction * static_cast<double>(m));
  long long clipped = round_half_up(beta * static_cast<double>(m));
  long long flagged = std::min<long long>({scaled, static_cast<long long>(n_flagged), clipped});
  flagged = std::max<long long>(flagged, 0);

  long long rest = static_cast<long long>(m) - flagged;
  long long rest_avail = static_cast<long long>(n - n_flagged);
  if (rest > rest_avail) {  // shortfall goes back to the flagged subset
    flagged += rest - rest_avail;
    rest = rest_avail;
  }
  return {static_cast<std::size_t>(flagged), static_cast<std::size_t>(rest)};
}

namespace {

// Cloud restricted to the given parent indices (parent order preserved).
PointCloud subset_cloud(const PointCloud& cloud, const std::vector<std::size_t>& idx) {
  PointCloud sub;
  sub.points.reserve(idx.size());
  for (std::size_t i : idx) sub.points.push_back(cloud.points[i]);
  if (cloud.has_labels()) {
    sub.labels.reserve(idx.size());
    for (std::size_t i : idx) sub.labels.push_back(cloud.labels[i]);
  }
  return sub;
}

void append_subset_fps(const PointCloud& cloud, const std::vector<std::size_t>& subset,
                       std::size_t quota, SampleResult& out) {
  if (quota == 0) return;
  PointCloud sub = subset_cloud(cloud, subset);
  SampleResult picks = fps(sub, quota, 0);
  for (std::size_t local : picks.source_indices) {
    out.source_indices.push_back(subset[local]);
    out.coordinates.push_back(cloud.points[subset[local]]);
  }
}

}  // namespace

SampleResult masked_fps(const PointCloud& cloud, const BoundaryMask& mask, std::size_t m,
                        const TaskAwareConfig& cfg) {
  cloud.check();
  cfg.check();
  if (mask.size() != cloud.size()) fail_input("mask size does not match cloud");
  if (m < 1 || m > cloud.size()) fail_input("masked_fps requires 1 <= m <= N");

  std::vector<std::size_t> flagged, rest;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    (mask.flags[i] ? flagged : rest).push_back(i);

  if (flagged.empty() || rest.empty()) return fps(cloud, m, 0);

  QuotaSplit q = edge_quota(cloud.size(), flagged.size(), m, cfg.lambda, cfg.beta);
  SampleResult out;
  out.coordinates.reserve(m);
  out.source_indices.reserve(m);
  append_subset_fps(cloud, flagged, q.flagged, out);
  append_subset_fps(cloud, rest, q.rest, out);
  return out;
}

SampleResult edge_fps(const PointCloud& cloud, std::size_t m, const TaskAwareConfig& cfg) {
  cfg.check();
  double eps = cfg.epsilon > 0.0 ? cfg.epsilon : default_epsilon(cloud);
  return masked_fps(cloud, detect_boundary(cloud, eps), m, cfg);
}

SampleResult part_fps(const PointCloud& cloud, std::size_t m) {
  cloud.check();
  if (!cloud.has_labels()) fail_input("part_fps requires labels");
  if (m < 1 || m > cloud.size()) fail_input("part_fps requires 1 <= m <= N");

  std::map<int, std::vector<std::size_t>> parts;  // ascending label id
  for (std::size_t i = 0; i < cloud.size(); ++i) parts[cloud.labels[i]].push_back(i);

  // Largest-remainder quotas, ties to lower label id, capped at part size.
  struct Share {
    int label;
    std::size_t count;
    std::size_t quota;
    double remainder;
  };
  std::vector<Share> shares;
  std::size_t assigned = 0;
  double n = static_cast<double>(cloud.size());
  for (const auto& [label, idx] : parts) {
    double exact = static_cast<double>(m) * static_cast<double>(idx.size()) / n;
    std::size_t base = static_cast<std::size_t>(std::floor(exact));
    shares.push_back({label, idx.size(), base, exact - std::floor(exact)});
    assigned += base;
  }
  std::vector<std::size_t> order(shares.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return shares[a].remainder > shares[b].remainder;
  });
  std::size_t cursor = 0;
  while (assigned < m) {
    Share& s = shares[order[cursor % order.size()]];
    if (s.quota < s.count) {
      ++s.quota;
      ++assigned;
    }
    ++cursor;
  }

  SampleResult out;
  out.coordinates.reserve(m);
  out.source_indices.reserve(m);
  for (const Share& s : shares) append_subset_fps(cloud, parts[s.label], s.quota, out);
  return out;
}

BoundaryMask soft_keypoints(const PointCloud& cloud, std::span<const std::size_t> keypoint_indices,
                            std::size_t knn_soft) {
  cloud.check();
  if (knn_soft < 1) fail_input("soft_keypoints requires knn_soft >= 1");
  BoundaryMask mask;
  mask.flags.assign(cloud.size(), 0);
  if (keypoint_indices.empty()) return mask;

  GridIndex index(cloud);
  for (std::size_t kp : keypoint_indices) {
    if (kp >= cloud.size()) fail_input("soft_keypoints: keypoint index out of range");
    for (const Neighbor& nb : index.knn(cloud.points[kp], knn_soft)) mask.flags[nb.index] = 1;
  }
  return mask;
}

SampleResult key_fps(const PointCloud& cloud, const BoundaryMask& soft_mask, std::size_t m,
                     const TaskAwareConfig& cfg) {
  return masked_fps(cloud, soft_mask, m, cfg);
}

SampleResult completion_supervision(const PointCloud& complete, std::size_t m) {
  return fps(complete, m, 0);
}

}  // namespace tas
