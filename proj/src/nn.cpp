#include "tas/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "tas/sampling.hpp"

namespace tas {

Tensor& ParamSet::add(std::string name, std::size_t rows, std::size_t cols) {
  tensors.push_back(Tensor{std::move(name), Matrix(rows, cols), Matrix(rows, cols)});
  return tensors.back();
}

Tensor& ParamSet::at(std::string_view name) {
  for (Tensor& t : tensors)
    if (t.name == name) return t;
  fail_input("unknown tensor: " + std::string(name));
}

const Tensor& ParamSet::at(std::string_view name) const {
  for (const Tensor& t : tensors)
    if (t.name == name) return t;
  fail_input("unknown tensor: " + std::string(name));
}

bool ParamSet::has(std::string_view name) const {
  for (const Tensor& t : tensors)
    if (t.name == name) return true;
  return false;
}

void ParamSet::zero_grad() {
  for (Tensor& t : tensors) t.grad.set_zero();
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors) n += t.value.size();
  return n;
}

double ParamSet::get_value(std::size_t flat) const {
  for (const Tensor& t : tensors) {
    if (flat < t.value.size()) return t.value.data[flat];
    flat -= t.value.size();
  }
  fail_input("flat parameter index out of range");
}

void ParamSet::set_value(std::size_t flat, double v) {
  for (Tensor& t : tensors) {
    if (flat < t.value.size()) {
      t.value.data[flat] = v;
      return;
    }
    flat -= t.value.size();
  }
  fail_input("flat parameter index out of range");
}

double ParamSet::get_grad(std::size_t flat) const {
  for (const Tensor& t : tensors) {
    if (flat < t.grad.size()) return t.grad.data[flat];
    flat -= t.grad.size();
  }
  fail_input("flat parameter index out of range");
}

bool ParamSet::values_finite() const {
  for (const Tensor& t : tensors)
    if (!t.value.all_finite()) return false;
  return true;
}

void xavier_init(Matrix& w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double bound = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
  for (double& v : w.data) v = (2.0 * uniform01(rng()) - 1.0) * bound;
}

Matrix dense_forward(const DenseRef& d, const Matrix& X, DenseCache* cache) {
  const Matrix& W = d.W->value;
  const Matrix& b = d.b->value;
  if (X.cols != W.cols) fail_input("dense_forward: input width mismatch");
  Matrix Y(X.rows, W.rows);
  for (std::size_t r = 0; r < X.rows; ++r) {
    const double* xr = X.row(r);
    double* yr = Y.row(r);
    for (std::size_t o = 0; o < W.rows; ++o) {
      const double* wr = W.row(o);
      double acc = b.data[o];
      for (std::size_t i = 0; i < W.cols; ++i) acc += xr[i] * wr[i];
      yr[o] = acc;
    }
  }
  if (cache) {
    cache->X = X;
    cache->mask.clear();
  }
  if (d.relu) {
    if (cache) cache->mask.assign(Y.size(), 0);
    for (std::size_t i = 0; i < Y.size(); ++i) {
      if (Y.data[i] > 0.0) {
        if (cache) cache->mask[i] = 1;
      } else {
        Y.data[i] = 0.0;
      }
    }
  }
  return Y;
}

Matrix dense_backward(const DenseRef& d, const DenseCache& cache, const Matrix& dY) {
  const Matrix& W = d.W->value;
  Matrix dYr = dY;
  if (d.relu) {
    for (std::size_t i = 0; i < dYr.size(); ++i)
      if (!cache.mask[i]) dYr.data[i] = 0.0;
  }
  Matrix& gW = d.W->grad;
  Matrix& gb = d.b->grad;
  for (std::size_t r = 0; r < dYr.rows; ++r) {
    const double* gyr = dYr.row(r);
    const double* xr = cache.X.row(r);
    for (std::size_t o = 0; o < W.rows; ++o) {
      double g = gyr[o];
      if (g == 0.0) continue;
      gb.data[o] += g;
      double* gwr = gW.row(o);
      for (std::size_t i = 0; i < W.cols; ++i) gwr[i] += g * xr[i];
    }
  }
  Matrix dX(dYr.rows, W.cols);
  for (std::size_t r = 0; r < dYr.rows; ++r) {
    const double* gyr = dYr.row(r);
    double* dxr = dX.row(r);
    for (std::size_t o = 0; o < W.rows; ++o) {
      double g = gyr[o];
      if (g == 0.0) continue;
      const double* wr = W.row(o);
      for (std::size_t i = 0; i < W.cols; ++i) dxr[i] += g * wr[i];
    }
  }
  return dX;
}

Grouping group_knn(std::span<const Vec3> sources, std::span<const Vec3> centroids, std::size_t k) {
  if (sources.empty()) fail_input("group_knn: empty source set");
  k = std::min(k, sources.size());
  Grouping g;
  g.k = k;
  g.idx.resize(centroids.size() * k);
  std::vector<std::pair<double, std::size_t>> cand(sources.size());
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    for (std::size_t s = 0; s < sources.size(); ++s) cand[s] = {dist2(centroids[c], sources[s]), s};
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (std::size_t j = 0; j < k; ++j) g.idx[c * k + j] = cand[j].second;
  }
  return g;
}

Matrix maxpool_groups(const Matrix& rows, std::size_t k, PoolCache* cache) {
  if (k == 0 || rows.rows % k != 0) fail_input("maxpool_groups: row count not divisible by k");
  std::size_t m = rows.rows / k;
  Matrix out(m, rows.cols);
  if (cache) {
    cache->k = k;
    cache->argmax.assign(m * rows.cols, 0);
  }
  for (std::size_t g = 0; g < m; ++g) {
    double* orow = out.row(g);
    for (std::size_t c = 0; c < rows.cols; ++c) {
      double best = -std::numeric_limits<double>::infinity();
      std::size_t best_row = g * k;
      for (std::size_t j = 0; j < k; ++j) {
        double v = rows.at(g * k + j, c);
        if (v > best) {
          best = v;
          best_row = g * k + j;
        }
      }
      orow[c] = best;
      if (cache) cache->argmax[g * rows.cols + c] = best_row;
    }
  }
  return out;
}

Matrix maxpool_backward(const PoolCache& cache, std::size_t rows_in, const Matrix& dY) {
  Matrix dRows(rows_in, dY.cols);
  for (std::size_t g = 0; g < dY.rows; ++g)
    for (std::size_t c = 0; c < dY.cols; ++c)
      dRows.at(cache.argmax[g * dY.cols + c], c) += dY.at(g, c);
  return dRows;
}

Matrix sa_forward(const SALayer& sa, std::span<const Vec3> sources,
                  std::span<const Vec3> centroids, const Matrix& source_feats, SACache* cache,
                  const Grouping* precomputed) {
  if (!source_feats.empty() && source_feats.rows != sources.size())
    fail_input("sa_forward: feature row count mismatch");
  Grouping g = precomputed ? *precomputed : group_knn(sources, centroids, sa.k);
  std::size_t feat_cols = source_feats.empty() ? 0 : source_feats.cols;
  Matrix X(centroids.size() * g.k, 3 + feat_cols);
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    for (std::size_t j = 0; j < g.k; ++j) {
      std::size_t row = c * g.k + j;
      std::size_t s = g.idx[row];
      Vec3 rel = sources[s] - centroids[c];
      double* xr = X.row(row);
      xr[0] = rel.x;
      xr[1] = rel.y;
      xr[2] = rel.z;
      if (feat_cols) {
        const double* fr = source_feats.row(s);
        std::copy(fr, fr + feat_cols, xr + 3);
      }
    }
  }
  SACache local;
  SACache& cc = cache ? *cache : local;
  cc.grouping = std::move(g);
  cc.n_sources = sources.size();
  cc.feat_cols = feat_cols;
  cc.rows = X.rows;
  Matrix h = dense_forward(sa.l1, X, &cc.c1);
  Matrix h2 = dense_forward(sa.l2, h, &cc.c2);
  return maxpool_groups(h2, cc.grouping.k, &cc.pool);
}

void sa_backward(const SALayer& sa, const SACache& cache, const Matrix& dOut,
                 Matrix* grad_source_feats, std::vector<Vec3>* grad_centroids,
                 std::vector<Vec3>* grad_sources) {
  Matrix dH2 = maxpool_backward(cache.pool, cache.rows, dOut);
  Matrix dH = dense_backward(sa.l2, cache.c2, dH2);
  Matrix dX = dense_backward(sa.l1, cache.c1, dH);

  std::size_t k = cache.grouping.k;
  std::size_t m = cache.rows / k;
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t row = c * k + j;
      std::size_t s = cache.grouping.idx[row];
      const double* gx = dX.row(row);
      Vec3 rel_grad{gx[0], gx[1], gx[2]};
      if (grad_centroids) (*grad_centroids)[c] -= rel_grad;
      if (grad_sources) (*grad_sources)[s] += rel_grad;
      if (grad_source_feats && cache.feat_cols) {
        double* gf = grad_source_feats->row(s);
        for (std::size_t f = 0; f < cache.feat_cols; ++f) gf[f] += gx[3 + f];
      }
    }
  }
}

Matrix fp_forward(std::span<const Vec3> queries, std::span<const Vec3> sources,
                  const Matrix& source_feats, std::size_t k, FPCache* cache) {
  if (source_feats.rows != sources.size()) fail_input("fp_forward: feature row count mismatch");
  constexpr double kDelta = 1e-8;
  k = std::min(k, sources.size());
  Grouping g = group_knn(sources, queries, k);

  Matrix out(queries.size(), source_feats.cols);
  FPCache local;
  FPCache& cc = cache ? *cache : local;
  cc.k = k;
  cc.idx = g.idx;
  cc.u.assign(queries.size() * k, 0.0);
  cc.d.assign(queries.size() * k, 0.0);
  cc.usum.assign(queries.size(), 0.0);

  for (std::size_t q = 0; q < queries.size(); ++q) {
    double usum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t s = cc.idx[q * k + j];
      double d = dist(queries[q], sources[s]);
      double u = 1.0 / (d + kDelta);
      cc.d[q * k + j] = d;
      cc.u[q * k + j] = u;
      usum += u;
    }
    cc.usum[q] = usum;
    double* orow = out.row(q);
    for (std::size_t j = 0; j < k; ++j) {
      double w = cc.u[q * k + j] / usum;
      const double* fr = source_feats.row(cc.idx[q * k + j]);
      for (std::size_t f = 0; f < out.cols; ++f) orow[f] += w * fr[f];
    }
  }
  if (cache) {
    cache->out = out;
    cache->source_feats = source_feats;
    cache->queries.assign(queries.begin(), queries.end());
    cache->sources.assign(sources.begin(), sources.end());
  }
  return out;
}

Matrix fp_backward(const FPCache& cache, const Matrix& dOut, std::vector<Vec3>* grad_sources) {
  std::size_t k = cache.k;
  std::size_t nq = cache.queries.size();
  Matrix dF(cache.source_feats.rows, cache.source_feats.cols);
  for (std::size_t q = 0; q < nq; ++q) {
    const double* go = dOut.row(q);
    double usum = cache.usum[q];
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t s = cache.idx[q * k + j];
      double u = cache.u[q * k + j];
      double w = u / usum;
      double* gf = dF.row(s);
      for (std::size_t f = 0; f < dF.cols; ++f) gf[f] += w * go[f];

      if (grad_sources) {
        // d out / d u_j = (f_j - out_q) / usum; d u / d d = -u^2;
        // d d / d q_j = (q_j - p) / d.
        double gu = 0.0;
        const double* fr = cache.source_feats.row(s);
        const double* orow = cache.out.row(q);
        for (std::size_t f = 0; f < dF.cols; ++f) gu += go[f] * (fr[f] - orow[f]);
        gu /= usum;
        double d = cache.d[q * k + j];
        if (d > 1e-12) {
          double gd = -gu * u * u;
          Vec3 dir = (cache.sources[s] - cache.queries[q]) * (1.0 / d);
          (*grad_sources)[s] += dir * gd;
        }
      }
    }
  }
  return dF;
}

double softmax_ce_loss(const Matrix& logits, const std::vector<int>& labels, Matrix* dLogits) {
  if (labels.size() != logits.rows) fail_input("softmax_ce_loss: label count mismatch");
  if (dLogits) *dLogits = Matrix(logits.rows, logits.cols);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    if (labels[r] < 0) continue;
    ++counted;
  }
  if (counted == 0) return 0.0;
  double inv = 1.0 / static_cast<double>(counted);
  std::vector<double> prob(logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    int y = labels[r];
    if (y < 0) continue;
    const double* lr = logits.row(r);
    double mx = lr[0];
    for (std::size_t c = 1; c < logits.cols; ++c) mx = std::max(mx, lr[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) {
      prob[c] = std::exp(lr[c] - mx);
      z += prob[c];
    }
    total += -(lr[y] - mx - std::log(z));
    if (dLogits) {
      double* gr = dLogits->row(r);
      for (std::size_t c = 0; c < logits.cols; ++c)
        gr[c] = (prob[c] / z - (static_cast<int>(c) == y ? 1.0 : 0.0)) * inv;
    }
  }
  return total * inv;
}

double weighted_bce_loss(const Matrix& logits, const std::vector<char>& positive,
                         double pos_weight, Matrix* dLogits) {
  if (logits.cols != 1 || positive.size() != logits.rows)
    fail_input("weighted_bce_loss: shape mismatch");
  if (dLogits) *dLogits = Matrix(logits.rows, 1);
  double inv = 1.0 / static_cast<double>(logits.rows);
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    double z = logits.at(r, 0);
    double w = positive[r] ? pos_weight : 1.0;
    // log(1 + exp(-|z|)) formulation for stability
    double softplus = std::log1p(std::exp(-std::abs(z)));
    double nll = positive[r] ? (z > 0 ? softplus : softplus - z) : (z > 0 ? softplus + z : softplus);
    total += w * nll;
    if (dLogits) {
      double sig = 1.0 / (1.0 + std::exp(-z));
      dLogits->at(r, 0) = w * (sig - (positive[r] ? 1.0 : 0.0)) * inv;
    }
  }
  return total * inv;
}

}  // namespace tas
