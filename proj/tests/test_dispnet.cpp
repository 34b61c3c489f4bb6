#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <random>

#include "oracles.hpp"
#include "tas/dispnet.hpp"
#include "tas/io.hpp"
#include "tas/metrics.hpp"

using namespace tas;

namespace {

PointCloud cloud_of(std::vector<Vec3> pts) {
  PointCloud c;
  c.points = std::move(pts);
  return c;
}

struct Rig {
  PointCloud cloud;
  SampleResult init;
  std::vector<Vec3> target;
  DispNetParams net;
};

Rig make_rig(std::uint64_t seed, std::size_t n = 48, std::size_t m = 12, bool random_head = true) {
  Rig r;
  r.cloud = cloud_of(oracle::random_points(n, seed));
  r.init = fps(r.cloud, m, 0);
  r.target = oracle::random_points(m, seed + 7);
  r.net = make_dispnet(DispNetSizes{}, seed + 13);
  if (random_head) {
    xavier_init(r.net.params.at("head.w").value, seed + 14);
    for (double& v : r.net.params.at("head.w").value.data) v *= 0.3;
  }
  return r;
}

enum class LossKind { CD, EMDStar };

// Loss closures for grad_check: CD or EMD* between the net output and target.

std::function<double(bool)> loss_fn(Rig& rig, DispMode mode, LossKind kind) {
  auto phi = std::make_shared<Matching>();
  if (kind == LossKind::EMDStar) *phi = emd(rig.init.coordinates, rig.target).second;
  return [&rig, mode, kind, phi](bool with_grad) {
    DispNetCache cache;
    std::vector<Vec3> out = displacement_forward(rig.cloud, rig.init, rig.net, mode, &cache);
    std::vector<Vec3> grad;
    double loss = kind == LossKind::CD
                      ? chamfer_with_grad(out, rig.target, grad)
                      : emd_star_with_matching(out, rig.target, *phi, &grad);
    if (with_grad) displacement_backward(rig.net, cache, grad);
    return loss;
  };
}

}  // namespace

TEST_SUITE("dispnet") {
  TEST_CASE("zero head in offset mode reproduces init exactly") {
    Rig rig = make_rig(1, 40, 10, false);
    auto out = displacement_forward(rig.cloud, rig.init, rig.net, DispMode::Offset);
    REQUIRE(out.size() == rig.init.size());
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == rig.init.coordinates[i]);
  }

  TEST_CASE("zero head in coordinate mode emits the origin") {
    Rig rig = make_rig(2, 40, 10, false);
    auto out = displacement_forward(rig.cloud, rig.init, rig.net, DispMode::Coordinate);
    for (const Vec3& p : out) CHECK(p == Vec3{0, 0, 0});
  }

  TEST_CASE("init must be a subset of the input cloud") {
    Rig rig = make_rig(3);
    rig.init.coordinates[0].x += 0.5;
    CHECK_THROWS_AS(displacement_forward(rig.cloud, rig.init, rig.net, DispMode::Offset),
                    std::invalid_argument);
  }

  TEST_CASE("determinism within one build") {
    Rig rig = make_rig(4);
    auto a = displacement_forward(rig.cloud, rig.init, rig.net, DispMode::Offset);
    auto b = displacement_forward(rig.cloud, rig.init, rig.net, DispMode::Offset);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }

  TEST_CASE("pointnet_aggregate singleton pooling") {
    DispNetParams net = make_dispnet(DispNetSizes{}, 5);
    Matrix rel(1, 3);
    rel.at(0, 0) = 0.2;
    rel.at(0, 1) = -0.1;
    rel.at(0, 2) = 0.05;
    auto out = pointnet_aggregate(Matrix{}, rel, net);
    CHECK(out.size() == net.sizes.l1_out);
    // max over a singleton equals the transformed row: duplicate to check
    Matrix rel2(2, 3);
    for (int d = 0; d < 3; ++d) rel2.at(0, d) = rel2.at(1, d) = rel.at(0, d);
    auto out2 = pointnet_aggregate(Matrix{}, rel2, net);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == out2[i]);
  }

  TEST_CASE("max-pool routes gradient only to argmax rows") {
    Matrix rows(4, 2);
    rows.at(0, 0) = 1.0;
    rows.at(1, 0) = 3.0;
    rows.at(2, 0) = 2.0;
    rows.at(3, 0) = 0.0;
    rows.at(0, 1) = -1.0;
    rows.at(1, 1) = -2.0;
    rows.at(2, 1) = -0.5;
    rows.at(3, 1) = -4.0;
    PoolCache cache;
    Matrix pooled = maxpool_groups(rows, 4, &cache);
    CHECK(pooled.at(0, 0) == 3.0);
    CHECK(pooled.at(0, 1) == -0.5);
    // perturb a non-argmax row below the margin: output unchanged
    rows.at(2, 0) += 0.5;
    Matrix pooled2 = maxpool_groups(rows, 4, nullptr);
    CHECK(pooled2.at(0, 0) == 3.0);
    Matrix dY(1, 2);
    dY.at(0, 0) = 1.0;
    dY.at(0, 1) = 1.0;
    Matrix dRows = maxpool_backward(cache, 4, dY);
    CHECK(dRows.at(1, 0) == 1.0);
    CHECK(dRows.at(2, 1) == 1.0);
    CHECK(dRows.at(0, 0) == 0.0);
    CHECK(dRows.at(3, 1) == 0.0);
  }

  TEST_CASE("soft projection hard limit at tiny temperature") {
    PointCloud cloud = cloud_of(oracle::random_points(60, 6));
    auto pred = oracle::random_points(10, 7);
    auto out = soft_project(pred, cloud, 8, 1e-4);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      auto nn = oracle::brute_knn(cloud.points, pred[i], 1);
      CHECK(dist(out[i], cloud.points[nn[0].index]) < 1e-6);
    }
  }

  TEST_CASE("soft projection identity on a coincident prediction") {
    PointCloud cloud = cloud_of(oracle::random_points(30, 8));
    std::vector<Vec3> pred = {cloud.points[4]};
    auto out = soft_project(pred, cloud, 1, 0.7);
    CHECK(out[0] == cloud.points[4]);
  }

  TEST_CASE("soft projection output stays in the hull of its picks") {
    PointCloud cloud = cloud_of(oracle::random_points(50, 9));
    auto pred = oracle::random_points(12, 10);
    SoftProjCache cache;
    auto out = soft_project(pred, cloud, 6, 0.5, &cache);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      for (int d = 0; d < 3; ++d) {
        double lo = 1e18, hi = -1e18;
        for (std::size_t j = 0; j < cache.k; ++j) {
          lo = std::min(lo, cache.picks[i * cache.k + j][d]);
          hi = std::max(hi, cache.picks[i * cache.k + j][d]);
        }
        CHECK(out[i][d] >= lo - 1e-12);
        CHECK(out[i][d] <= hi + 1e-12);
      }
    }
  }

  TEST_CASE("soft projection rejects bad arguments") {
    PointCloud cloud = cloud_of(oracle::random_points(10, 11));
    CHECK_THROWS_AS(soft_project(cloud.points, cloud, 0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(soft_project(cloud.points, cloud, 3, 0.0), std::invalid_argument);
  }

  TEST_CASE("grad_check exact on a quadratic toy loss") {
    ParamSet params;
    Tensor& w = params.add("w", 4, 4);
    xavier_init(w.value, 12);
    auto eval = [&params](bool with_grad) {
      const Tensor& w = params.at("w");
      double loss = 0.0;
      for (double v : w.value.data) loss += v * v;
      if (with_grad) {
        Tensor& wm = params.at("w");
        for (std::size_t i = 0; i < wm.value.size(); ++i) wm.grad.data[i] += 2.0 * wm.value.data[i];
      }
      return loss;
    };
    CHECK(grad_check(eval, params, 16, 99) < 1e-9);
  }

  TEST_CASE("grad_check detects a sign-flipped backward") {
    ParamSet params;
    Tensor& w = params.add("w", 3, 3);
    xavier_init(w.value, 13);
    auto eval = [&params](bool with_grad) {
      Tensor& wm = params.at("w");
      double loss = 0.0;
      for (double v : wm.value.data) loss += v * v;
      if (with_grad)
        for (std::size_t i = 0; i < wm.value.size(); ++i) wm.grad.data[i] -= 2.0 * wm.value.data[i];
      return loss;
    };
    CHECK(grad_check(eval, params, 9, 100) > 1.9);
  }

  TEST_CASE("full net gradients: offset mode, CD loss") {
    Rig rig = make_rig(20);
    auto eval = loss_fn(rig, DispMode::Offset, LossKind::CD);
    CHECK(grad_check(eval, rig.net.params, 40, 101) < 1e-4);
  }

  TEST_CASE("full net gradients: offset mode, EMD* loss") {
    Rig rig = make_rig(21);
    auto eval = loss_fn(rig, DispMode::Offset, LossKind::EMDStar);
    CHECK(grad_check(eval, rig.net.params, 40, 102) < 1e-4);
  }

  TEST_CASE("full net gradients: coordinate mode") {
    Rig rig = make_rig(22);
    auto eval = loss_fn(rig, DispMode::Coordinate, LossKind::EMDStar);
    CHECK(grad_check(eval, rig.net.params, 40, 103) < 1e-4);
  }

  TEST_CASE("full net gradients: soft-projected coordinates") {
    Rig rig = make_rig(23);
    auto eval = loss_fn(rig, DispMode::CoordinateSoftProjected, LossKind::CD);
    CHECK(grad_check(eval, rig.net.params, 40, 104) < 1e-4);
  }

  TEST_CASE("checkpoint round trip") {
    DispNetParams net = make_dispnet(DispNetSizes{}, 30);
    xavier_init(net.params.at("head.w").value, 31);
    std::string path = "ckpt_roundtrip.bin";
    save_checkpoint(net.params, path);
    ParamSet loaded = load_checkpoint(path);
    REQUIRE(loaded.tensors.size() == net.params.tensors.size());
    for (std::size_t i = 0; i < loaded.tensors.size(); ++i) {
      CHECK(loaded.tensors[i].name == net.params.tensors[i].name);
      CHECK(loaded.tensors[i].value.data == net.params.tensors[i].value.data);
    }
    std::remove(path.c_str());
  }

  TEST_CASE("checkpoint rejects a foreign file") {
    std::ofstream f("not_a_ckpt.bin", std::ios::binary);
    f << "GARBAGE!";
    f.close();
    CHECK_THROWS_AS(load_checkpoint("not_a_ckpt.bin"), std::invalid_argument);
    std::remove("not_a_ckpt.bin");
  }
}
