#include <doctest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "tas/task_aware.hpp"

using namespace tas;

namespace {

PointCloud labeled(std::vector<Vec3> pts, std::vector<int> labels) {
  PointCloud c;
  c.points = std::move(pts);
  c.labels = std::move(labels);
  return c;
}

// Quota arithmetic restated independently of the implementation.
std::size_t quota_oracle(std::size_t n, std::size_t nb, std::size_t m, double lambda,
                         double beta) {
  auto rnd = [](double x) { return static_cast<long long>(std::floor(x + 0.5)); };
  long long q = std::min<long long>(
      {rnd(lambda * (double(nb) / double(n)) * double(m)), (long long)nb, rnd(beta * double(m))});
  long long rest = (long long)m - q;
  if (rest > (long long)(n - nb)) q += rest - (long long)(n - nb);
  return (std::size_t)q;
}

// A labeled plane strip cloud with a controllable boundary.
PointCloud split_cloud(std::size_t n, std::uint64_t seed) {
  auto pts = oracle::random_points(n, seed);
  std::vector<int> labels;
  for (const Vec3& p : pts) labels.push_back(p.x < 0.5 ? 0 : 1);
  return labeled(std::move(pts), std::move(labels));
}

}  // namespace

TEST_SUITE("task-aware") {
  TEST_CASE("detect_boundary single part is all false") {
    PointCloud c = labeled(oracle::random_points(50, 1), std::vector<int>(50, 3));
    BoundaryMask m = detect_boundary(c, 0.3);
    CHECK(m.boundary_count() == 0);
  }

  TEST_CASE("detect_boundary two-point case") {
    PointCloud c = labeled({{0, 0, 0}, {1, 0, 0}}, {0, 1});
    BoundaryMask m = detect_boundary(c, 1.5);
    CHECK(m.flags[0]);
    CHECK(m.flags[1]);
  }

  TEST_CASE("detect_boundary ignores unlabeled points") {
    PointCloud c = labeled({{0, 0, 0}, {0.5, 0, 0}, {1, 0, 0}}, {0, -1, 0});
    BoundaryMask m = detect_boundary(c, 0.6);
    CHECK(m.boundary_count() == 0);  // -1 neither boundary nor inducing
  }

  TEST_CASE("detect_boundary matches pairwise scan on split plane") {
    PointCloud c = split_cloud(300, 5);
    double eps = 2.0 * mean_nn_spacing(c);
    BoundaryMask m = detect_boundary(c, eps);
    for (std::size_t i = 0; i < c.size(); ++i) {
      bool expect = false;
      for (std::size_t j = 0; j < c.size() && !expect; ++j)
        if (j != i && dist(c.points[i], c.points[j]) <= eps && c.labels[j] != c.labels[i])
          expect = true;
      CHECK(bool(m.flags[i]) == expect);
    }
    CHECK(m.boundary_count() > 0);
  }

  TEST_CASE("detect_boundary requires labels") {
    PointCloud c;
    c.points = oracle::random_points(10, 6);
    CHECK_THROWS_AS(detect_boundary(c, 0.1), std::invalid_argument);
  }

  TEST_CASE("edge quota hand case from the quota formula") {
    QuotaSplit q = edge_quota(1000, 100, 256, 3.5, 0.75);
    CHECK(q.flagged == 90);  // min(round(89.6), 100, 192)
    CHECK(q.rest == 166);
  }

  TEST_CASE("edge quota neutral lambda is proportional") {
    QuotaSplit q = edge_quota(1000, 300, 100, 1.0, 1.0);
    CHECK(q.flagged == 30);
    CHECK(q.rest == 70);
  }

  TEST_CASE("edge quota key-fps constants") {
    // 5% soft keypoints, m = 256, lambda 7.5, beta 0.8
    QuotaSplit q = edge_quota(4000, 200, 256, 7.5, 0.8);
    CHECK(q.flagged == 96);  // min(round(96), 200, round(204.8)=205)
    CHECK(q.rest == 160);
  }

  TEST_CASE("edge_fps boundary pick count equals the quota") {
    PointCloud c = split_cloud(400, 9);
    TaskAwareConfig cfg{3.5, 0.75, 0.0, 20};
    double eps = 2.0 * mean_nn_spacing(c);
    cfg.epsilon = eps;
    BoundaryMask mask = detect_boundary(c, eps);
    SampleResult r = edge_fps(c, 128, cfg);
    REQUIRE(r.size() == 128);
    std::size_t picked_boundary = 0;
    for (std::size_t i : r.source_indices) picked_boundary += mask.flags[i] ? 1 : 0;
    CHECK(picked_boundary == quota_oracle(c.size(), mask.boundary_count(), 128, 3.5, 0.75));
  }

  TEST_CASE("edge_fps with no boundary degrades to fps") {
    PointCloud c = labeled(oracle::random_points(60, 10), std::vector<int>(60, 0));
    TaskAwareConfig cfg{2.0, 0.5, 0.1, 20};
    CHECK(edge_fps(c, 20, cfg).source_indices == fps(c, 20, 0).source_indices);
  }

  TEST_CASE("all-boundary mask equals plain fps") {
    PointCloud c;
    c.points = oracle::random_points(40, 11);
    BoundaryMask mask;
    mask.flags.assign(40, 1);
    TaskAwareConfig cfg{3.5, 0.75, 0.1, 20};
    CHECK(key_fps(c, mask, 16, cfg).source_indices == fps(c, 16, 0).source_indices);
  }

  TEST_CASE("quota monotone in lambda until a clamp binds") {
    std::size_t prev = 0;
    for (double lambda : {1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 10.0}) {
      QuotaSplit q = edge_quota(500, 80, 120, lambda, 0.9);
      CHECK(q.flagged >= prev);
      prev = q.flagged;
      CHECK(q.flagged <= 80);
      CHECK(q.flagged <= std::size_t(std::floor(0.9 * 120 + 0.5)));
    }
  }

  TEST_CASE("beta and availability always bind") {
    std::mt19937_64 rng(12);
    for (int t = 0; t < 200; ++t) {
      std::size_t n = 10 + rng() % 500;
      std::size_t nb = rng() % (n + 1);
      std::size_t m = 1 + rng() % n;
      double lambda = 1.0 + 9.0 * uniform01(rng());
      double beta = uniform01(rng());
      QuotaSplit q = edge_quota(n, nb, m, lambda, beta);
      CHECK(q.flagged + q.rest == m);
      CHECK(q.flagged <= nb);
      CHECK(q.rest <= n - nb);
    }
  }

  TEST_CASE("part_fps single part equals fps") {
    PointCloud c = labeled(oracle::random_points(40, 13), std::vector<int>(40, 7));
    CHECK(part_fps(c, 10).source_indices == fps(c, 10, 0).source_indices);
  }

  TEST_CASE("part_fps symmetric quota") {
    auto pts = oracle::random_points(60, 14);
    std::vector<int> labels(60);
    for (int i = 0; i < 60; ++i) labels[i] = i < 30 ? 0 : 1;
    PointCloud c = labeled(std::move(pts), std::move(labels));
    SampleResult r = part_fps(c, 12);
    std::size_t in_first = 0;
    for (std::size_t i : r.source_indices) in_first += (c.labels[i] == 0);
    CHECK(in_first == 6);
  }

  TEST_CASE("part_fps largest remainder 50/30/20") {
    auto pts = oracle::random_points(100, 15);
    std::vector<int> labels(100);
    for (int i = 0; i < 100; ++i) labels[i] = i < 50 ? 0 : (i < 80 ? 1 : 2);
    PointCloud c = labeled(std::move(pts), std::move(labels));
    SampleResult r = part_fps(c, 10);
    std::vector<std::size_t> hist(3, 0);
    for (std::size_t i : r.source_indices) ++hist[c.labels[i]];
    CHECK(hist == std::vector<std::size_t>{5, 3, 2});
    // concatenated by ascending label id
    CHECK(c.labels[r.source_indices.front()] == 0);
    CHECK(c.labels[r.source_indices.back()] == 2);
  }

  TEST_CASE("soft_keypoints saturated neighborhood") {
    PointCloud c;
    c.points = oracle::random_points(30, 16);
    std::vector<std::size_t> keys = {4};
    BoundaryMask m = soft_keypoints(c, keys, 30);
    CHECK(m.boundary_count() == 30);
  }

  TEST_CASE("soft_keypoints self nearest") {
    PointCloud c;
    c.points = oracle::random_points(25, 17);
    std::vector<std::size_t> keys = {9};
    BoundaryMask m = soft_keypoints(c, keys, 1);
    CHECK(m.boundary_count() == 1);
    CHECK(m.flags[9]);
  }

  TEST_CASE("soft_keypoints empty list is all false") {
    PointCloud c;
    c.points = oracle::random_points(10, 18);
    CHECK(soft_keypoints(c, {}, 20).boundary_count() == 0);
  }

  TEST_CASE("soft_keypoints equals union of brute-force knn lists") {
    PointCloud c;
    c.points = oracle::random_points(200, 19);
    std::vector<std::size_t> keys = {3, 150};
    BoundaryMask m = soft_keypoints(c, keys, 20);
    std::set<std::size_t> expect;
    for (std::size_t kp : keys)
      for (const auto& h : oracle::brute_knn(c.points, c.points[kp], 20)) expect.insert(h.index);
    std::set<std::size_t> got;
    for (std::size_t i = 0; i < c.size(); ++i)
      if (m.flags[i]) got.insert(i);
    CHECK(got == expect);
  }

  TEST_CASE("key_fps empty and full masks are plain fps") {
    PointCloud c;
    c.points = oracle::random_points(64, 20);
    TaskAwareConfig cfg{7.5, 0.8, 0.1, 20};
    BoundaryMask none, all;
    none.flags.assign(64, 0);
    all.flags.assign(64, 1);
    CHECK(key_fps(c, none, 16, cfg).source_indices == fps(c, 16, 0).source_indices);
    CHECK(key_fps(c, all, 16, cfg).source_indices == fps(c, 16, 0).source_indices);
  }

  TEST_CASE("key_fps pick count matches quota on random masks") {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 30; ++t) {
      std::size_t n = 30 + rng() % 200;
      PointCloud c;
      c.points = oracle::random_points(n, 2100 + t);
      BoundaryMask mask;
      mask.flags.assign(n, 0);
      std::size_t nb = 1 + rng() % (n - 1);
      for (std::size_t i = 0; i < nb; ++i) mask.flags[i] = 1;
      std::size_t m = 1 + rng() % n;
      double lambda = 1.0 + 8.0 * uniform01(rng());
      double beta = uniform01(rng());
      TaskAwareConfig cfg{lambda, beta, 0.1, 20};
      SampleResult r = key_fps(c, mask, m, cfg);
      REQUIRE(r.size() == m);
      std::size_t picked = 0;
      for (std::size_t i : r.source_indices) picked += mask.flags[i] ? 1 : 0;
      if (nb < n) CHECK(picked == quota_oracle(n, nb, m, lambda, beta));
    }
  }

  TEST_CASE("completion_supervision equals fps on the same cloud") {
    PointCloud c;
    c.points = oracle::random_points(128, 22);
    CHECK(completion_supervision(c, 32).source_indices == fps(c, 32, 0).source_indices);
  }

  TEST_CASE("task-aware samplers output subsets of the source cloud") {
    PointCloud c = split_cloud(150, 23);
    TaskAwareConfig cfg{3.5, 0.75, 0.0, 20};
    for (const SampleResult& r : {edge_fps(c, 40, cfg), part_fps(c, 40)}) {
      for (std::size_t i = 0; i < r.size(); ++i)
        CHECK(c.points[r.source_indices[i]] == r.coordinates[i]);
    }
  }

  TEST_CASE("config validation") {
    CHECK_THROWS_AS((TaskAwareConfig{0.5, 0.5, 0.1, 20}.check()), std::invalid_argument);
    CHECK_THROWS_AS((TaskAwareConfig{1.5, 1.5, 0.1, 20}.check()), std::invalid_argument);
    CHECK_THROWS_AS((TaskAwareConfig{1.5, 0.5, -1.0, 20}.check()), std::invalid_argument);
  }
}
