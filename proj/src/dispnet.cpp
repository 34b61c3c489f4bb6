#include "tas/dispnet.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace tas {

namespace {

DenseRef dense(DispNetParams& net, const char* w, const char* b, bool relu) {
  return {&net.params.at(w), &net.params.at(b), relu};
}

DenseRef dense(const DispNetParams& net, const char* w, const char* b, bool relu) {
  auto& p = const_cast<DispNetParams&>(net).params;
  return {&p.at(w), &p.at(b), relu};
}

}  // namespace

DispNetParams make_dispnet(const DispNetSizes& sizes, std::uint64_t seed) {
  DispNetParams net;
  net.sizes = sizes;
  ParamSet& p = net.params;
  std::size_t in1 = 3 + sizes.input_feature_dim;
  p.add("sa1.w1", sizes.l1_hidden, in1);
  p.add("sa1.b1", 1, sizes.l1_hidden);
  p.add("sa1.w2", sizes.l1_out, sizes.l1_hidden);
  p.add("sa1.b2", 1, sizes.l1_out);
  p.add("sa2.w1", sizes.l2_hidden, 3 + sizes.l1_out);
  p.add("sa2.b1", 1, sizes.l2_hidden);
  p.add("sa2.w2", sizes.l2_out, sizes.l2_hidden);
  p.add("sa2.b2", 1, sizes.l2_out);
  p.add("fp.w", sizes.fp_out, sizes.l2_out + sizes.l1_out);
  p.add("fp.b", 1, sizes.fp_out);
  p.add("head.w", 3, sizes.fp_out);  // zero: Offset mode starts as identity
  p.add("head.b", 1, 3);
  p.add("proj.t", 1, 1).value.data[0] = 1.0;

  std::uint64_t s = seed;
  for (Tensor& t : p.tensors) {
    if (t.name == "head.w" || t.name == "head.b" || t.name == "proj.t" ||
        t.name.find(".b") != std::string::npos)
      continue;
    xavier_init(t.value, s++);
  }
  return net;
}

std::vector<Vec3> soft_project(std::span<const Vec3> pred, const PointCloud& cloud,
                               std::size_t proj_k, double temperature, SoftProjCache* cache) {
  if (proj_k < 1) fail_input("soft_project requires proj_k >= 1");
  if (temperature <= 0.0) fail_input("soft_project requires temperature > 0");
  cloud.check();
  std::size_t k = std::min(proj_k, cloud.size());
  Grouping g = group_knn(cloud.points, pred, k);

  SoftProjCache local;
  SoftProjCache& cc = cache ? *cache : local;
  cc.k = k;
  cc.t = temperature;
  cc.idx = g.idx;
  cc.s.assign(pred.size() * k, 0.0);
  cc.d2.assign(pred.size() * k, 0.0);
  cc.pred.assign(pred.begin(), pred.end());
  cc.picks.resize(pred.size() * k);

  std::vector<Vec3> out(pred.size());
  double t2 = temperature * temperature;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      const Vec3& x = cloud.points[g.idx[i * k + j]];
      cc.picks[i * k + j] = x;
      double d2v = dist2(pred[i], x);
      cc.d2[i * k + j] = d2v;
      zmax = std::max(zmax, -d2v / t2);
    }
    double zsum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double e = std::exp(-cc.d2[i * k + j] / t2 - zmax);
      cc.s[i * k + j] = e;
      zsum += e;
    }
    Vec3 acc{};
    for (std::size_t j = 0; j < k; ++j) {
      cc.s[i * k + j] /= zsum;
      acc += cc.picks[i * k + j] * cc.s[i * k + j];
    }
    out[i] = acc;
  }
  return out;
}

std::vector<Vec3> soft_project_backward(const SoftProjCache& cache,
                                        const std::vector<Vec3>& grad_out, double* grad_t) {
  std::size_t k = cache.k;
  double t = cache.t;
  double t2 = t * t;
  std::vector<Vec3> grad_pred(cache.pred.size());
  for (std::size_t i = 0; i < cache.pred.size(); ++i) {
    const Vec3& g = grad_out[i];
    // out = sum_j s_j x_j with s = softmax(-d^2/t^2)
    double gdot_out = 0.0;
    Vec3 out{};
    for (std::size_t j = 0; j < k; ++j) out += cache.picks[i * k + j] * cache.s[i * k + j];
    gdot_out = g.dot(out);
    for (std::size_t j = 0; j < k; ++j) {
      double s = cache.s[i * k + j];
      double gz = s * (g.dot(cache.picks[i * k + j]) - gdot_out);
      // z_j = -d_j^2 / t^2
      Vec3 dd = (cache.pred[i] - cache.picks[i * k + j]) * 2.0;  // d d^2 / d pred
      grad_pred[i] += dd * (-gz / t2);
      if (grad_t) *grad_t += gz * 2.0 * cache.d2[i * k + j] / (t2 * t);
    }
  }
  return grad_pred;
}

std::vector<Vec3> displacement_forward(const PointCloud& input_cloud, const SampleResult& init,
                                       const DispNetParams& net, DispMode mode,
                                       DispNetCache* cache) {
  input_cloud.check();
  if (init.size() == 0) fail_input("displacement_forward: empty init set");
  if (!init.has_indices() || init.source_indices.size() != init.size())
    fail_input("displacement_forward: init must index into the input cloud");
  for (std::size_t i = 0; i < init.size(); ++i) {
    std::size_t s = init.source_indices[i];
    if (s >= input_cloud.size() || !(input_cloud.points[s] == init.coordinates[i]))
      fail_input("displacement_forward: init is not a subset of the input cloud");
  }
  if (input_cloud.has_features() && input_cloud.features.cols != net.sizes.input_feature_dim)
    fail_input("displacement_forward: feature width does not match network");
  if (!input_cloud.has_features() && net.sizes.input_feature_dim != 0)
    fail_input("displacement_forward: network expects input features");

  DispNetCache local;
  DispNetCache& cc = cache ? *cache : local;
  cc.mode = mode;
  cc.init_points = init.coordinates;

  // Level-2 centroids: FPS down to a quarter of the init set.
  PointCloud init_cloud;
  init_cloud.points = init.coordinates;
  std::size_t m2 = std::max<std::size_t>(
      1, static_cast<std::size_t>(static_cast<double>(init.size()) * net.sizes.level2_fraction));
  cc.level2 = fps(init_cloud, m2, 0);

  SALayer sa1{dense(net, "sa1.w1", "sa1.b1", true), dense(net, "sa1.w2", "sa1.b2", true),
              net.sizes.k};
  SALayer sa2{dense(net, "sa2.w1", "sa2.b1", true), dense(net, "sa2.w2", "sa2.b2", true),
              net.sizes.k};

  cc.f1 = sa_forward(sa1, input_cloud.points, init.coordinates, input_cloud.features, &cc.sa1);
  Matrix f2 = sa_forward(sa2, init.coordinates, cc.level2.coordinates, cc.f1, &cc.sa2);
  Matrix interp = fp_forward(init.coordinates, cc.level2.coordinates, f2, net.sizes.fp_k, &cc.fp);

  // Concat [interpolated level-2, skip level-1] then propagate.
  cc.interp_cols = interp.cols;
  cc.skip_cols = cc.f1.cols;
  Matrix concat(init.size(), interp.cols + cc.f1.cols);
  for (std::size_t r = 0; r < init.size(); ++r) {
    std::copy(interp.row(r), interp.row(r) + interp.cols, concat.row(r));
    std::copy(cc.f1.row(r), cc.f1.row(r) + cc.f1.cols, concat.row(r) + interp.cols);
  }
  Matrix g = dense_forward(dense(net, "fp.w", "fp.b", true), concat, &cc.fpd);
  Matrix h = dense_forward(dense(net, "head.w", "head.b", false), g, &cc.head);

  std::vector<Vec3> raw(init.size());
  for (std::size_t i = 0; i < init.size(); ++i) raw[i] = {h.at(i, 0), h.at(i, 1), h.at(i, 2)};

  switch (mode) {
    case DispMode::Offset:
      for (std::size_t i = 0; i < raw.size(); ++i) raw[i] += init.coordinates[i];
      return raw;
    case DispMode::Coordinate:
      return raw;
    case DispMode::CoordinateSoftProjected:
      return soft_project(raw, input_cloud, net.sizes.proj_k,
                          net.params.at("proj.t").value.data[0], &cc.proj);
  }
  fail_input("displacement_forward: bad mode");
}

void displacement_backward(DispNetParams& net, const DispNetCache& cache,
                           const std::vector<Vec3>& grad_out) {
  std::vector<Vec3> grad_head = grad_out;
  if (cache.mode == DispMode::CoordinateSoftProjected) {
    double gt = 0.0;
    grad_head = soft_project_backward(cache.proj, grad_out, &gt);
    net.params.at("proj.t").grad.data[0] += gt;
  }
  // Offset/Coordinate: d out / d head = I.

  Matrix dH(grad_head.size(), 3);
  for (std::size_t i = 0; i < grad_head.size(); ++i) {
    dH.at(i, 0) = grad_head[i].x;
    dH.at(i, 1) = grad_head[i].y;
    dH.at(i, 2) = grad_head[i].z;
  }
  Matrix dG = dense_backward(dense(net, "head.w", "head.b", false), cache.head, dH);
  Matrix dConcat = dense_backward(dense(net, "fp.w", "fp.b", true), cache.fpd, dG);

  Matrix dInterp(dConcat.rows, cache.interp_cols), dSkip(dConcat.rows, cache.skip_cols);
  for (std::size_t r = 0; r < dConcat.rows; ++r) {
    std::copy(dConcat.row(r), dConcat.row(r) + cache.interp_cols, dInterp.row(r));
    std::copy(dConcat.row(r) + cache.interp_cols, dConcat.row(r) + dConcat.cols, dSkip.row(r));
  }

  Matrix dF2 = fp_backward(cache.fp, dInterp, nullptr);  // level-2 points are constant

  SALayer sa2{dense(net, "sa2.w1", "sa2.b1", true), dense(net, "sa2.w2", "sa2.b2", true),
              net.sizes.k};
  Matrix dF1(cache.f1.rows, cache.f1.cols);
  sa_backward(sa2, cache.sa2, dF2, &dF1, nullptr, nullptr);
  for (std::size_t i = 0; i < dF1.size(); ++i) dF1.data[i] += dSkip.data[i];

  SALayer sa1{dense(net, "sa1.w1", "sa1.b1", true), dense(net, "sa1.w2", "sa1.b2", true),
              net.sizes.k};
  sa_backward(sa1, cache.sa1, dF1, nullptr, nullptr, nullptr);
}

std::vector<double> pointnet_aggregate(const Matrix& neighbor_features, const Matrix& rel_coords,
                                       const DispNetParams& net) {
  if (rel_coords.cols != 3) fail_input("pointnet_aggregate: relative coords must be k x 3");
  if (rel_coords.rows == 0) fail_input("pointnet_aggregate: requires k >= 1");
  if (!neighbor_features.empty() && neighbor_features.rows != rel_coords.rows)
    fail_input("pointnet_aggregate: row count mismatch");
  std::size_t feat_cols = neighbor_features.empty() ? 0 : neighbor_features.cols;
  if (3 + feat_cols != net.params.at("sa1.w1").value.cols)
    fail_input("pointnet_aggregate: feature width does not match network");

  Matrix X(rel_coords.rows, 3 + feat_cols);
  for (std::size_t r = 0; r < X.rows; ++r) {
    std::copy(rel_coords.row(r), rel_coords.row(r) + 3, X.row(r));
    if (feat_cols)
      std::copy(neighbor_features.row(r), neighbor_features.row(r) + feat_cols, X.row(r) + 3);
  }
  Matrix h = dense_forward(dense(net, "sa1.w1", "sa1.b1", true), X, nullptr);
  Matrix h2 = dense_forward(dense(net, "sa1.w2", "sa1.b2", true), h, nullptr);
  Matrix pooled = maxpool_groups(h2, h2.rows, nullptr);
  return {pooled.row(0), pooled.row(0) + pooled.cols};
}

double grad_check(const std::function<double(bool)>& eval, ParamSet& params,
                  std::size_t probe_count, std::uint64_t seed, double step) {
  if (probe_count < 1) fail_input("grad_check requires probe_count >= 1");
  params.zero_grad();
  double base = eval(true);
  if (!std::isfinite(base)) fail_input("grad_check: non-finite loss");

  std::vector<double> analytic(params.scalar_count());
  for (std::size_t i = 0; i < analytic.size(); ++i) analytic[i] = params.get_grad(i);

  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t probe = 0; probe < probe_count; ++probe) {
    std::size_t i = static_cast<std::size_t>(rng() % params.scalar_count());
    double saved = params.get_value(i);
    params.set_value(i, saved + step);
    double up = eval(false);
    params.set_value(i, saved - step);
    double down = eval(false);
    params.set_value(i, saved);
    if (!std::isfinite(up) || !std::isfinite(down)) fail_input("grad_check: non-finite loss");
    double fd = (up - down) / (2.0 * step);
    double denom = std::max({std::abs(analytic[i]), std::abs(fd), 1e-12});
    worst = std::max(worst, std::abs(analytic[i] - fd) / denom);
  }
  return worst;
}

}  // namespace tas
