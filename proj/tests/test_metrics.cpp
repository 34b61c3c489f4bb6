#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "tas/metrics.hpp"
#include "tas/sampling.hpp"

using namespace tas;

TEST_SUITE("metrics") {
  TEST_CASE("chamfer identity is zero") {
    auto a = oracle::random_points(20, 1);
    CHECK(chamfer(a, a) == 0.0);
  }

  TEST_CASE("chamfer hand case") {
    std::vector<Vec3> a = {{0, 0, 0}};
    std::vector<Vec3> b = {{1, 0, 0}, {0, 1, 0}};
    CHECK(chamfer(a, b) == doctest::Approx(1.5).epsilon(1e-12));
  }

  TEST_CASE("chamfer matches double loop") {
    auto a = oracle::random_points(50, 2);
    auto b = oracle::random_points(50, 3);
    CHECK(chamfer(a, b) == doctest::Approx(oracle::brute_chamfer(a, b)).epsilon(1e-10));
  }

  TEST_CASE("chamfer is symmetric and rejects empties") {
    auto a = oracle::random_points(20, 4);
    auto b = oracle::random_points(15, 5);
    CHECK(chamfer(a, b) == chamfer(b, a));
    CHECK_THROWS_AS(chamfer(a, {}), std::invalid_argument);
  }

  TEST_CASE("chamfer invariant under a joint exact rotation") {
    auto a = oracle::random_points(20, 6);
    auto b = oracle::random_points(20, 7);
    std::vector<Vec3> ar, br;
    for (const Vec3& p : a) ar.push_back({p.y, p.z, p.x});
    for (const Vec3& p : b) br.push_back({p.y, p.z, p.x});
    CHECK(chamfer(a, b) == chamfer(ar, br));
  }

  TEST_CASE("chamfer gradient matches finite differences") {
    auto a = oracle::random_points(8, 8);
    auto b = oracle::random_points(8, 9);
    std::vector<Vec3> grad;
    chamfer_with_grad(a, b, grad);
    double h = 1e-6;
    for (std::size_t i = 0; i < a.size(); ++i)
      for (int d = 0; d < 3; ++d) {
        auto up = a, down = a;
        up[i][d] += h;
        down[i][d] -= h;
        double fd = (chamfer(up, b) - chamfer(down, b)) / (2 * h);
        CHECK(grad[i][d] == doctest::Approx(fd).epsilon(1e-4));
      }
  }

  TEST_CASE("assignment diagonal optimum") {
    Matrix cost(3, 3);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) cost.at(i, j) = i == j ? 0.0 : 1.0;
    Matching m = assignment(cost);
    CHECK(m.total_cost == 0.0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(m.a_to_b[i] == i);
  }

  TEST_CASE("assignment 2x2 enumeration") {
    Matrix cost(2, 2);
    cost.at(0, 0) = 1;
    cost.at(0, 1) = 2;
    cost.at(1, 0) = 3;
    cost.at(1, 1) = 1;
    Matching m = assignment(cost);
    CHECK(m.total_cost == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(m.a_to_b == std::vector<std::size_t>{0, 1});
  }

  TEST_CASE("assignment equals factorial brute force for n <= 6") {
    std::mt19937_64 rng(10);
    for (int t = 0; t < 60; ++t) {
      std::size_t n = 1 + rng() % 6;
      Matrix cost(n, n);
      for (double& v : cost.data) v = uniform01(rng());
      Matching m = assignment(cost);
      CHECK(m.total_cost == doctest::Approx(oracle::brute_assignment(cost)).epsilon(1e-12));
      // bijection sanity
      std::vector<char> used(n, 0);
      for (std::size_t j : m.a_to_b) {
        CHECK(!used[j]);
        used[j] = 1;
      }
    }
  }

  TEST_CASE("assignment rejects bad matrices") {
    Matrix rect(2, 3);
    CHECK_THROWS_AS(assignment(rect), std::invalid_argument);
    Matrix neg(2, 2);
    neg.at(0, 0) = -1.0;
    CHECK_THROWS_AS(assignment(neg), std::invalid_argument);
  }

  TEST_CASE("assignment cost bounded by identity permutation") {
    std::mt19937_64 rng(11);
    Matrix cost(10, 10);
    for (double& v : cost.data) v = uniform01(rng());
    double identity = 0.0;
    for (std::size_t i = 0; i < 10; ++i) identity += cost.at(i, i);
    CHECK(assignment(cost).total_cost <= identity + 1e-12);
  }

  TEST_CASE("emd permutation gives zero") {
    auto a = oracle::random_points(12, 12);
    std::vector<Vec3> b(a.rbegin(), a.rend());
    CHECK(emd(a, b).first == doctest::Approx(0.0).epsilon(1e-12));
  }

  TEST_CASE("emd two-point hand case") {
    std::vector<Vec3> a = {{0, 0, 0}, {1, 0, 0}};
    std::vector<Vec3> b = {{0, 0, 0}, {2, 0, 0}};
    auto [cost, phi] = emd(a, b);
    CHECK(cost == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(phi.a_to_b == std::vector<std::size_t>{0, 1});
  }

  TEST_CASE("emd equals factorial brute force") {
    std::mt19937_64 rng(13);
    for (int t = 0; t < 40; ++t) {
      std::size_t n = 1 + rng() % 6;
      auto a = oracle::random_points(n, 1300 + t);
      auto b = oracle::random_points(n, 1400 + t);
      Matrix cost(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) cost.at(i, j) = dist(a[i], b[j]);
      CHECK(emd(a, b).first == doctest::Approx(oracle::brute_assignment(cost)).epsilon(1e-12));
    }
  }

  TEST_CASE("emd rejects size mismatch") {
    CHECK_THROWS_AS(emd(oracle::random_points(3, 1), oracle::random_points(4, 2)),
                    std::invalid_argument);
  }

  TEST_CASE("emd_star fixed point and perfect displacement") {
    auto init = oracle::random_points(6, 14);
    CHECK(emd_star(init, init, init) == doctest::Approx(0.0).epsilon(1e-12));

    auto target = oracle::random_points(6, 15);
    auto [cost, phi] = emd(init, target);
    std::vector<Vec3> pred(init.size());
    for (std::size_t i = 0; i < init.size(); ++i) pred[i] = target[phi.a_to_b[i]];
    CHECK(emd_star(pred, init, target) == doctest::Approx(0.0).epsilon(1e-12));
  }

  TEST_CASE("emd_star hand case") {
    std::vector<Vec3> init = {{0, 0, 0}, {3, 0, 0}};
    std::vector<Vec3> target = {{1, 0, 0}, {2, 0, 0}};
    std::vector<Vec3> pred = {{0.5, 0, 0}, {3, 0, 0}};
    CHECK(emd_star(pred, init, target) == doctest::Approx(1.5).epsilon(1e-12));
  }

  TEST_CASE("emd_star upper-bounds optimal emd of (pred, target)") {
    for (int t = 0; t < 20; ++t) {
      auto init = oracle::random_points(5, 1600 + t);
      auto target = oracle::random_points(5, 1700 + t);
      auto pred = oracle::random_points(5, 1800 + t);
      CHECK(emd_star(pred, init, target) >= emd(pred, target).first - 1e-12);
    }
  }

  TEST_CASE("emd_star matching ignores pred") {
    auto init = oracle::random_points(5, 19);
    auto target = oracle::random_points(5, 20);
    Matching phi = emd(init, target).second;
    auto pred1 = oracle::random_points(5, 21);
    double direct = 0.0;
    for (std::size_t i = 0; i < 5; ++i) direct += dist(pred1[i], target[phi.a_to_b[i]]);
    CHECK(emd_star(pred1, init, target) == doctest::Approx(direct).epsilon(1e-12));
  }

  TEST_CASE("seg_scores perfect prediction") {
    std::vector<std::vector<int>> gt = {{0, 1, 1, 0}};
    SegScores s = seg_scores(gt, gt, 2);
    CHECK(s.shape_miou == 1.0);
    CHECK(s.part_miou == 1.0);
    CHECK(s.overall_acc == 1.0);
  }

  TEST_CASE("seg_scores hand confusion case") {
    std::vector<std::vector<int>> gt = {{0, 0, 1, 1}};
    std::vector<std::vector<int>> pred = {{0, 1, 1, 1}};
    SegScores s = seg_scores(pred, gt, 2);
    CHECK(s.shape_miou == doctest::Approx(7.0 / 12.0).epsilon(1e-12));
    CHECK(s.part_miou == doctest::Approx(7.0 / 12.0).epsilon(1e-12));
    CHECK(s.overall_acc == doctest::Approx(0.75).epsilon(1e-12));
  }

  TEST_CASE("seg_scores excludes unlabeled ground truth") {
    std::vector<std::vector<int>> gt = {{0, 0, 1, 1, -1, -1}};
    std::vector<std::vector<int>> pred_a = {{0, 1, 1, 1, 0, 0}};
    std::vector<std::vector<int>> pred_b = {{0, 1, 1, 1, 1, 1}};  // flipped on unlabeled
    SegScores a = seg_scores(pred_a, gt, 2);
    SegScores b = seg_scores(pred_b, gt, 2);
    CHECK(a.shape_miou == b.shape_miou);
    CHECK(a.part_miou == b.part_miou);
    CHECK(a.overall_acc == b.overall_acc);
  }

  TEST_CASE("seg_scores oA invariant to consistent permutation") {
    std::vector<int> gt = {0, 1, 0, 1, 1, 0};
    std::vector<int> pred = {0, 1, 1, 1, 0, 0};
    std::vector<int> gt2 = {gt[1], gt[0], gt[3], gt[2], gt[5], gt[4]};
    std::vector<int> pred2 = {pred[1], pred[0], pred[3], pred[2], pred[5], pred[4]};
    CHECK(seg_scores({pred}, {gt}, 2).overall_acc == seg_scores({pred2}, {gt2}, 2).overall_acc);
  }

  TEST_CASE("seg_scores rejects length mismatch") {
    CHECK_THROWS_AS(seg_scores({{0, 1}}, {{0}}, 2), std::invalid_argument);
  }

  TEST_CASE("keypoint_ap exact detection") {
    auto gt = oracle::random_points(5, 22);
    CHECK(keypoint_ap(gt, gt, 0.05) == 1.0);
  }

  TEST_CASE("keypoint_ap boundary-inside case") {
    std::vector<Vec3> gt = {{0, 0, 0}};
    std::vector<Vec3> pred = {{0.049, 0, 0}};
    CHECK(keypoint_ap(pred, gt, 0.05) == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("keypoint_ap partial coverage") {
    std::vector<Vec3> gt = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
    std::vector<Vec3> pred = {{0.01, 0, 0}, {1.01, 0, 0}};
    CHECK(keypoint_ap(pred, gt, 0.05) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }

  TEST_CASE("keypoint_ap empty cases") {
    std::vector<Vec3> gt = {{0, 0, 0}};
    CHECK(keypoint_ap({}, gt, 0.05) == 0.0);
    CHECK_THROWS_AS(keypoint_ap(gt, {}, 0.05), std::invalid_argument);
  }
}
