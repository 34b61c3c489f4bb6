#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tas/geometry.hpp"

namespace tas {

// Named tensor with a paired gradient slot.
struct Tensor {
  std::string name;
  Matrix value;
  Matrix grad;
};

struct ParamSet {
  std::vector<Tensor> tensors;

  Tensor& add(std::string name, std::size_t rows, std::size_t cols);
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  bool has(std::string_view name) const;

  void zero_grad();
  std::size_t scalar_count() const;
  double get_value(std::size_t flat) const;
  void set_value(std::size_t flat, double v);
  double get_grad(std::size_t flat) const;
  bool values_finite() const;
};

// Xavier-uniform fill in +/- sqrt(6 / (fan_in + fan_out)).
void xavier_init(Matrix& w, std::uint64_t seed);

// Shared linear layer applied row-wise: Y = X W^T + b, optional ReLU.
// W is (out x in), b is (1 x out).
struct DenseRef {
  Tensor* W = nullptr;
  Tensor* b = nullptr;
  bool relu = false;
};

struct DenseCache {
  Matrix X;
  std::vector<char> mask;  // post-ReLU activity, empty when relu == false
};

Matrix dense_forward(const DenseRef& d, const Matrix& X, DenseCache* cache);
// Accumulates into W/b grads, returns dX.
Matrix dense_backward(const DenseRef& d, const DenseCache& cache, const Matrix& dY);

// k nearest sources per centroid (brute force; layer point counts are small).
struct Grouping {
  std::size_t k = 0;
  std::vector<std::size_t> idx;  // centroid-major, size M*k
};
Grouping group_knn(std::span<const Vec3> sources, std::span<const Vec3> centroids, std::size_t k);

struct PoolCache {
  std::size_t k = 0;
  std::vector<std::size_t> argmax;  // per (group, channel): winning stacked row
};
// rows: (M*k) x C stacked neighbor features -> M x C channel-wise max.
Matrix maxpool_groups(const Matrix& rows, std::size_t k, PoolCache* cache);
Matrix maxpool_backward(const PoolCache& cache, std::size_t rows_in, const Matrix& dY);

// Set-abstraction layer: group -> [rel_xyz, source_feat] -> two shared dense
// layers -> max-pool. source_feats may be empty (coordinates only).
struct SALayer {
  DenseRef l1, l2;
  std::size_t k = 8;
};

struct SACache {
  Grouping grouping;
  DenseCache c1, c2;
  PoolCache pool;
  std::size_t n_sources = 0;
  std::size_t feat_cols = 0;
  std::size_t rows = 0;
};

Matrix sa_forward(const SALayer& sa, std::span<const Vec3> sources,
                  std::span<const Vec3> centroids, const Matrix& source_feats, SACache* cache,
                  const Grouping* precomputed = nullptr);
// Accumulates parameter grads. Optional outputs: gradient w.r.t. source
// features, centroid coordinates and source coordinates (for layers whose
// points are themselves network outputs).
void sa_backward(const SALayer& sa, const SACache& cache, const Matrix& dOut,
                 Matrix* grad_source_feats, std::vector<Vec3>* grad_centroids,
                 std::vector<Vec3>* grad_sources);

// Inverse-distance-weighted propagation of source features to query points,
// w = 1/(d + 1e-8) over the k nearest sources, normalized.
struct FPCache {
  std::size_t k = 0;
  std::vector<std::size_t> idx;  // query-major, size P*k
  std::vector<double> u;         // raw weights
  std::vector<double> usum;      // per query
  std::vector<double> d;         // distances
  Matrix out;
  Matrix source_feats;
  std::vector<Vec3> queries, sources;
};

Matrix fp_forward(std::span<const Vec3> queries, std::span<const Vec3> sources,
                  const Matrix& source_feats, std::size_t k, FPCache* cache);
// Returns gradient w.r.t. source features; optionally w.r.t. source coords.
Matrix fp_backward(const FPCache& cache, const Matrix& dOut, std::vector<Vec3>* grad_sources);

// Mean-reduced softmax cross-entropy; labels < 0 are ignored rows.
double softmax_ce_loss(const Matrix& logits, const std::vector<int>& labels, Matrix* dLogits);

// Mean-reduced binary cross-entropy on logits with a positive-class weight.
double weighted_bce_loss(const Matrix& logits, const std::vector<char>& positive,
                         double pos_weight, Matrix* dLogits);

}  // namespace tas
