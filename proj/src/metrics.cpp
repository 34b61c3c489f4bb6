#include "tas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tas {

namespace {

void check_points(std::span<const Vec3> pts, const char* what) {
  if (pts.empty()) fail_input(std::string(what) + ": empty point set");
  for (const Vec3& p : pts)
    if (!p.finite()) fail_input(std::string(what) + ": non-finite coordinate");
}

// Index of the nearest point of b to p, ties to lower index.
std::size_t nearest(const Vec3& p, std::span<const Vec3> b) {
  std::size_t best = 0;
  double best_d2 = dist2(p, b[0]);
  for (std::size_t j = 1; j < b.size(); ++j) {
    double d2 = dist2(p, b[j]);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = j;
    }
  }
  return best;
}

double directed_sum(std::span<const Vec3> a, std::span<const Vec3> b) {
  double s = 0.0;
  for (const Vec3& p : a) s += dist(p, b[nearest(p, b)]);
  return s;
}

}  // namespace

double chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
  check_points(a, "chamfer");
  check_points(b, "chamfer");
  return 0.5 * (directed_sum(a, b) + directed_sum(b, a));
}

double chamfer_mean(std::span<const Vec3> a, std::span<const Vec3> b) {
  check_points(a, "chamfer");
  check_points(b, "chamfer");
  return 0.5 * (directed_sum(a, b) / static_cast<double>(a.size()) +
                directed_sum(b, a) / static_cast<double>(b.size()));
}

double chamfer_with_grad(std::span<const Vec3> a, std::span<const Vec3> b,
                         std::vector<Vec3>& grad_a) {
  check_points(a, "chamfer");
  check_points(b, "chamfer");
  grad_a.assign(a.size(), Vec3{});
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::size_t j = nearest(a[i], b);
    double d = dist(a[i], b[j]);
    total += d;
    if (d > 0.0) grad_a[i] += (a[i] - b[j]) * (0.5 / d);
  }
  for (std::size_t j = 0; j < b.size(); ++j) {
    std::size_t i = nearest(b[j], a);
    double d = dist(b[j], a[i]);
    total += d;
    if (d > 0.0) grad_a[i] += (a[i] - b[j]) * (0.5 / d);
  }
  return 0.5 * total;
}

Matching assignment(const Matrix& cost) {
  if (cost.rows == 0 || cost.rows != cost.cols) fail_input("assignment requires a square matrix");
  for (double v : cost.data)
    if (!std::isfinite(v) || v < 0.0) fail_input("assignment requires finite nonnegative costs");

  // Kuhn-Munkres with row/column potentials; 1-based working arrays.
  std::size_t n = cost.rows;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);

  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      std::size_t i0 = match[j0], j1 = 0;
      double delta = kInf;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Matching res;
  res.a_to_b.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) res.a_to_b[match[j] - 1] = j - 1;
  res.total_cost = 0.0;
  for (std::size_t i = 0; i < n; ++i) res.total_cost += cost.at(i, res.a_to_b[i]);
  return res;
}

std::pair<double, Matching> emd(std::span<const Vec3> a, std::span<const Vec3> b) {
  check_points(a, "emd");
  check_points(b, "emd");
  if (a.size() != b.size()) fail_input("emd requires equal-size point sets");
  Matrix cost(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) cost.at(i, j) = dist(a[i], b[j]);
  Matching phi = assignment(cost);
  return {phi.total_cost, std::move(phi)};
}

double emd_with_grad(std::span<const Vec3> a, std::span<const Vec3> b, std::vector<Vec3>& grad_a) {
  auto [value, phi] = emd(a, b);
  grad_a.assign(a.size(), Vec3{});
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = dist(a[i], b[phi.a_to_b[i]]);
    if (d > 0.0) grad_a[i] = (a[i] - b[phi.a_to_b[i]]) * (1.0 / d);
  }
  return value;
}

double emd_star(std::span<const Vec3> pred, std::span<const Vec3> init,
                std::span<const Vec3> target) {
  check_points(pred, "emd_star");
  if (pred.size() != init.size() || pred.size() != target.size())
    fail_input("emd_star requires |pred| = |init| = |target|");
  auto [ignored, phi] = emd(init, target);
  (void)ignored;
  return emd_star_with_matching(pred, target, phi);
}

double emd_star_with_matching(std::span<const Vec3> pred, std::span<const Vec3> target,
                              const Matching& phi, std::vector<Vec3>* grad_pred) {
  check_points(pred, "emd_star");
  check_points(target, "emd_star");
  if (phi.a_to_b.size() != pred.size() || pred.size() != target.size())
    fail_input("emd_star: matching size mismatch");
  if (grad_pred) grad_pred->assign(pred.size(), Vec3{});
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Vec3& t = target[phi.a_to_b[i]];
    double d = dist(pred[i], t);
    total += d;
    if (grad_pred && d > 0.0) (*grad_pred)[i] = (pred[i] - t) * (1.0 / d);
  }
  return total;
}

SegScores seg_scores(const std::vector<std::vector<int>>& pred_labels,
                     const std::vector<std::vector<int>>& gt_labels, int num_parts) {
  if (pred_labels.size() != gt_labels.size()) fail_input("seg_scores: cloud count mismatch");
  if (num_parts < 1) fail_input("seg_scores: num_parts must be >= 1");

  std::size_t np = static_cast<std::size_t>(num_parts);
  std::vector<double> tp(np, 0), fp(np, 0), fn(np, 0);
  double correct = 0, labeled = 0;
  double shape_sum = 0;
  std::size_t shape_count = 0;

  for (std::size_t s = 0; s < gt_labels.size(); ++s) {
    const auto& gt = gt_labels[s];
    const auto& pr = pred_labels[s];
    if (gt.size() != pr.size()) fail_input("seg_scores: per-cloud length mismatch");

    std::vector<double> stp(np, 0), sfp(np, 0), sfn(np, 0);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] < 0) continue;  // unlabeled ground truth is dropped
      if (gt[i] >= num_parts || pr[i] < 0 || pr[i] >= num_parts)
        fail_input("seg_scores: label out of range");
      labeled += 1;
      if (gt[i] == pr[i]) {
        correct += 1;
        stp[gt[i]] += 1;
      } else {
        sfn[gt[i]] += 1;
        sfp[pr[i]] += 1;
      }
    }
    double iou_sum = 0;
    std::size_t present = 0;
    for (std::size_t p = 0; p < np; ++p) {
      tp[p] += stp[p];
      fp[p] += sfp[p];
      fn[p] += sfn[p];
      double uni = stp[p] + sfp[p] + sfn[p];
      if (uni > 0) {
        iou_sum += stp[p] / uni;
        ++present;
      }
    }
    if (present > 0) {
      shape_sum += iou_sum / static_cast<double>(present);
      ++shape_count;
    }
  }

  SegScores out;
  double part_sum = 0;
  std::size_t part_present = 0;
  for (std::size_t p = 0; p < np; ++p) {
    double uni = tp[p] + fp[p] + fn[p];
    if (uni > 0) {
      part_sum += tp[p] / uni;
      ++part_present;
    }
  }
  out.part_miou = part_present ? part_sum / static_cast<double>(part_present) : 0.0;
  out.shape_miou = shape_count ? shape_sum / static_cast<double>(shape_count) : 0.0;
  out.overall_acc = labeled > 0 ? correct / labeled : 0.0;
  return out;
}

double keypoint_ap(std::span<const Vec3> pred_points, std::span<const Vec3> gt_points,
                   double threshold) {
  check_points(gt_points, "keypoint_ap ground truth");
  if (threshold <= 0.0) fail_input("keypoint_ap requires threshold > 0");
  if (pred_points.empty()) return 0.0;
  std::size_t detected = 0;
  for (const Vec3& g : gt_points) {
    for (const Vec3& p : pred_points)
      if (dist(g, p) <= threshold) {
        ++detected;
        break;
      }
  }
  return static_cast<double>(detected) / static_cast<double>(gt_points.size());
}

}  // namespace tas
