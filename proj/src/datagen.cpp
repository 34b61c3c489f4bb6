#include "tas/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "tas/sampling.hpp"

namespace tas {

namespace {

// Seeded generator with hand-rolled uniform/gaussian draws so results do not
// depend on the standard library's distribution implementations.
struct Rng {
  std::mt19937_64 g;
  bool has_spare = false;
  double spare = 0.0;

  explicit Rng(std::uint64_t seed) : g(seed) {}
  double uniform() { return uniform01(g()); }
  double gaussian() {
    if (has_spare) {
      has_spare = false;
      return spare;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare = r * std::sin(2.0 * M_PI * u2);
    has_spare = true;
    return r * std::cos(2.0 * M_PI * u2);
  }
};

// Largest-remainder allocation of total among weights.
std::vector<std::size_t> proportional_counts(const std::vector<double>& weights,
                                             std::size_t total) {
  double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    double exact = static_cast<double>(total) * weights[i] / wsum;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    rem.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; assigned < total; ++j, ++assigned) ++counts[rem[j % rem.size()].second];
  return counts;
}

void normalize_to_unit_cube(PointCloud& cloud) {
  Vec3 lo = cloud.points[0], hi = cloud.points[0];
  for (const Vec3& p : cloud.points)
    for (int d = 0; d < 3; ++d) {
      lo[d] = std::min(lo[d], p[d]);
      hi[d] = std::max(hi[d], p[d]);
    }
  double extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  if (extent <= 0.0) return;
  for (Vec3& p : cloud.points) p = (p - lo) * (1.0 / extent);
}

}  // namespace

PointCloud gen_split_plane(const SyntheticSpec& spec) {
  spec.check();
  if (spec.parts > 4) fail_input("gen_split_plane supports at most 4 parts");
  Rng rng(spec.seed);

  std::size_t gx = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(spec.n_points))));
  std::size_t gy = (spec.n_points + gx - 1) / gx;

  PointCloud cloud;
  cloud.points.reserve(spec.n_points);
  cloud.labels.reserve(spec.n_points);
  for (std::size_t c = 0; c < gx * gy && cloud.points.size() < spec.n_points; ++c) {
    std::size_t cx = c % gx, cy = c / gx;
    double x = (static_cast<double>(cx) + rng.uniform()) / static_cast<double>(gx);
    double y = (static_cast<double>(cy) + rng.uniform()) / static_cast<double>(gy);
    double z = spec.noise_sigma > 0.0 ? spec.noise_sigma * rng.gaussian() : 0.0;
    int label = std::min(spec.parts - 1, static_cast<int>(x * static_cast<double>(spec.parts)));
    cloud.points.push_back({x, y, z});
    cloud.labels.push_back(label);
  }
  return cloud;
}

PointCloud gen_multipart(const SyntheticSpec& spec) {
  spec.check();
  if (spec.parts < 2 || spec.parts > 4) fail_input("gen_multipart requires 2 to 4 parts");
  Rng rng(spec.seed);

  // Primitive surfaces, one per part. Boxes share the face at x = 1 (both
  // copies excluded so only the seam curve joins them); the cylinder shell
  // stands on box A's top face, capped by the disk.
  const double cyl_r = 0.3, cyl_h = 0.6;
  struct Primitive {
    double area;
    std::function<Vec3(Rng&)> sample;
  };
  std::vector<Primitive> prims;
  auto box_sampler = [](double x0) {
    return [x0](Rng& r) -> Vec3 {
      // five unit faces: skip the +x face at the seam for box A (x0 = 0) and
      // the -x face for box B (x0 = 1)
      int face = static_cast<int>(r.uniform() * 5.0);
      double a = r.uniform(), b = r.uniform();
      switch (face) {
        case 0: return {x0 + (x0 == 0.0 ? 0.0 : 1.0), a, b};  // outer x face
        case 1: return {x0 + a, 0.0, b};
        case 2: return {x0 + a, 1.0, b};
        case 3: return {x0 + a, b, 0.0};
        default: return {x0 + a, b, 1.0};
      }
    };
  };
  prims.push_back({5.0, box_sampler(0.0)});
  prims.push_back({5.0, box_sampler(1.0)});
  if (spec.parts >= 3)
    prims.push_back({2.0 * M_PI * cyl_r * cyl_h, [&](Rng& r) -> Vec3 {
                       double ang = 2.0 * M_PI * r.uniform();
                       return {0.5 + cyl_r * std::cos(ang), 0.5 + cyl_r * std::sin(ang),
                               1.0 + cyl_h * r.uniform()};
                     }});
  if (spec.parts >= 4)
    prims.push_back({M_PI * cyl_r * cyl_r, [&](Rng& r) -> Vec3 {
                       double ang = 2.0 * M_PI * r.uniform();
                       double rad = cyl_r * std::sqrt(r.uniform());
                       return {0.5 + rad * std::cos(ang), 0.5 + rad * std::sin(ang), 1.0 + cyl_h};
                     }});
  prims.resize(static_cast<std::size_t>(spec.parts));

  std::vector<double> areas;
  for (const Primitive& p : prims) areas.push_back(p.area);
  std::vector<std::size_t> counts = proportional_counts(areas, spec.n_points);

  PointCloud cloud;
  cloud.points.reserve(spec.n_points);
  cloud.labels.reserve(spec.n_points);
  for (std::size_t part = 0; part < prims.size(); ++part) {
    for (std::size_t i = 0; i < counts[part]; ++i) {
      Vec3 p = prims[part].sample(rng);
      if (spec.noise_sigma > 0.0)
        p += Vec3{rng.gaussian(), rng.gaussian(), rng.gaussian()} * spec.noise_sigma;
      cloud.points.push_back(p);
      cloud.labels.push_back(static_cast<int>(part));
    }
  }
  normalize_to_unit_cube(cloud);
  return cloud;
}

std::pair<PointCloud, PointCloud> gen_partial_complete(const SyntheticSpec& spec,
                                                       const Vec3& view_direction) {
  spec.check();
  double vn = view_direction.norm();
  if (!view_direction.finite() || std::abs(vn - 1.0) > 1e-6)
    fail_input("gen_partial_complete requires a unit view direction");

  auto sphere_point = [](Rng& r) {
    Vec3 p;
    do {
      p = {r.gaussian(), r.gaussian(), r.gaussian()};
    } while (p.norm() < 1e-9);
    return p * (1.0 / p.norm());
  };

  PointCloud complete;
  Rng rng(spec.seed);
  for (std::size_t i = 0; i < spec.n_points; ++i) complete.points.push_back(sphere_point(rng));

  // The visible half-space, sampled fresh to n_points (back-projection analog
  // of removing everything behind the silhouette).
  PointCloud partial;
  Rng rng2(spec.seed ^ 0x9e3779b97f4a7c15ull);
  while (partial.points.size() < spec.n_points) {
    Vec3 p = sphere_point(rng2);
    if (p.dot(view_direction) >= 0.0) partial.points.push_back(p);
  }

  if (spec.noise_sigma > 0.0) {
    for (Vec3& p : complete.points)
      p += Vec3{rng.gaussian(), rng.gaussian(), rng.gaussian()} * spec.noise_sigma;
    for (Vec3& p : partial.points)
      p += Vec3{rng2.gaussian(), rng2.gaussian(), rng2.gaussian()} * spec.noise_sigma;
  }
  return {std::move(partial), std::move(complete)};
}

std::pair<PointCloud, std::vector<std::size_t>> gen_keypoint_shape(const SyntheticSpec& spec) {
  spec.check();
  if (spec.n_points < 200) fail_input("gen_keypoint_shape requires n_points >= 200");
  Rng rng(spec.seed);

  std::vector<Vec3> corners;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1}) corners.push_back({0.5 * sx, 0.5 * sy, 0.5 * sz});

  // 12 box edges as corner index pairs.
  const std::pair<int, int> edges[12] = {{0, 1}, {0, 2}, {0, 4}, {1, 3}, {1, 5}, {2, 3},
                                         {2, 6}, {3, 7}, {4, 5}, {4, 6}, {5, 7}, {6, 7}};

  PointCloud cloud;
  std::vector<std::size_t> keys;
  for (std::size_t i = 0; i < corners.size(); ++i) {
    keys.push_back(cloud.points.size());
    cloud.points.push_back(corners[i]);
  }
  // Midpoints of the four z-direction edges are extra keypoints.
  for (const auto& [a, b] : edges) {
    if (corners[a].x == corners[b].x && corners[a].y == corners[b].y) {
      keys.push_back(cloud.points.size());
      cloud.points.push_back((corners[a] + corners[b]) * 0.5);
    }
  }

  std::size_t remaining = spec.n_points - cloud.points.size();
  std::vector<double> w(12, 1.0);
  std::vector<std::size_t> counts = proportional_counts(w, remaining);
  for (std::size_t e = 0; e < 12; ++e) {
    const Vec3& a = corners[edges[e].first];
    const Vec3& b = corners[edges[e].second];
    for (std::size_t i = 0; i < counts[e]; ++i) {
      double t = rng.uniform();
      Vec3 p = a + (b - a) * t;
      if (spec.noise_sigma > 0.0)
        p += Vec3{rng.gaussian(), rng.gaussian(), rng.gaussian()} * spec.noise_sigma;
      cloud.points.push_back(p);
    }
  }

  // Normalize into the unit sphere (corners end on the sphere).
  double max_norm = 0.0;
  for (const Vec3& p : cloud.points) max_norm = std::max(max_norm, p.norm());
  if (max_norm > 0.0)
    for (Vec3& p : cloud.points) p *= 1.0 / max_norm;
  return {std::move(cloud), std::move(keys)};
}

}  // namespace tas
