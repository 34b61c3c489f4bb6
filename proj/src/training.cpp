#include "tas/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <random>
#include <thread>

#include "tas/datagen.hpp"

namespace tas {

void TrainConfig::check() const {
  task_aware.check();
  if (alpha0 <= 0.0) fail_input("train config requires alpha0 > 0");
  if (alpha_decay <= 0.0 || alpha_decay > 1.0) fail_input("train config requires 0 < alpha_decay <= 1");
  if (alpha_period_epochs < 1) fail_input("train config requires alpha_period_epochs >= 1");
  if (epochs < 0) fail_input("train config requires epochs >= 0");
  if (batch_size < 1) fail_input("train config requires batch_size >= 1");
  if (finetune_epochs < 0) fail_input("train config requires finetune_epochs >= 0");
  if (sampler_layer != 1 && sampler_layer != 2) fail_input("sampler_layer must be 1 or 2");
  if (lr <= 0.0) fail_input("train config requires lr > 0");
  if (momentum < 0.0 || momentum >= 1.0) fail_input("train config requires momentum in [0, 1)");
  if (loss_scale <= 0.0) fail_input("train config requires loss_scale > 0");
  if (positive_weight < 1.0) fail_input("train config requires positive_weight >= 1");
  if (flip_rate < 0.0 || flip_rate > 1.0) fail_input("train config requires flip_rate in [0, 1]");
  if (sample_counts.size() < 2) fail_input("train config requires two sample counts");
  for (std::size_t i = 1; i < sample_counts.size(); ++i)
    if (sample_counts[i] >= sample_counts[i - 1])
      fail_input("sample_counts must be strictly decreasing");
}

double joint_loss(double task_loss, double disp_loss, double alpha) {
  if (!std::isfinite(task_loss) || !std::isfinite(disp_loss) || !std::isfinite(alpha))
    fail_input("joint_loss requires finite inputs");
  if (alpha < 0.0) fail_input("joint_loss requires alpha >= 0");
  return task_loss + alpha * disp_loss;
}

double alpha_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) fail_input("alpha_at requires epoch >= 0");
  return cfg.alpha0 * std::pow(cfg.alpha_decay, static_cast<double>(epoch / cfg.alpha_period_epochs));
}

void optimizer_step(ParamSet& params, OptimizerState& state, const OptimizerConfig& cfg) {
  if (state.v.empty()) {
    for (const Tensor& t : params.tensors) state.v.emplace_back(t.value.rows, t.value.cols);
    if (cfg.kind == OptimizerKind::Adam)
      for (const Tensor& t : params.tensors) state.m.emplace_back(t.value.rows, t.value.cols);
  }
  for (const Tensor& t : params.tensors)
    if (!t.grad.all_finite()) throw std::runtime_error("optimizer_step: non-finite gradient");

  if (cfg.kind == OptimizerKind::Momentum) {
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
      Tensor& t = params.tensors[i];
      Matrix& v = state.v[i];
      for (std::size_t j = 0; j < t.value.size(); ++j) {
        v.data[j] = cfg.momentum * v.data[j] + t.grad.data[j];
        t.value.data[j] -= cfg.lr * v.data[j];
      }
    }
  } else {
    ++state.step;
    double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
      Tensor& t = params.tensors[i];
      Matrix& m = state.m[i];
      Matrix& v = state.v[i];
      for (std::size_t j = 0; j < t.value.size(); ++j) {
        double g = t.grad.data[j];
        m.data[j] = cfg.beta1 * m.data[j] + (1.0 - cfg.beta1) * g;
        v.data[j] = cfg.beta2 * v.data[j] + (1.0 - cfg.beta2) * g * g;
        double mh = m.data[j] / c1;
        double vh = v.data[j] / c2;
        t.value.data[j] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
      }
    }
  }
}

SampleResult noisy_edge_init(const PointCloud& cloud, std::size_t m, const TaskAwareConfig& cfg,
                             double flip_rate, std::uint64_t seed) {
  if (flip_rate < 0.0 || flip_rate > 1.0) fail_input("noisy_edge_init requires flip_rate in [0, 1]");
  double eps = cfg.epsilon > 0.0 ? cfg.epsilon : default_epsilon(cloud);
  BoundaryMask mask = detect_boundary(cloud, eps);
  std::mt19937_64 rng(seed);
  for (char& f : mask.flags)
    if (uniform01(rng()) < flip_rate) f = !f;
  return masked_fps(cloud, mask, m, cfg);
}

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::size_t thread_budget(std::size_t jobs) {
  const char* env = std::getenv("TAS_THREADS");
  long t = env ? std::strtol(env, nullptr, 10) : 1;
  if (t < 1) t = 1;
  return std::min<std::size_t>(static_cast<std::size_t>(t), jobs);
}

// Results are written into per-job slots, so any schedule is deterministic.
template <typename Fn>
void parallel_over(std::size_t jobs, Fn&& fn) {
  std::size_t threads = thread_budget(jobs);
  if (threads <= 1) {
    for (std::size_t i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= jobs) return;
        fn(i);
      }
    });
  for (std::thread& th : pool) th.join();
}

Matrix coords_as_features(std::span<const Vec3> pts) {
  Matrix m(pts.size(), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    m.at(i, 0) = pts[i].x;
    m.at(i, 1) = pts[i].y;
    m.at(i, 2) = pts[i].z;
  }
  return m;
}

PointCloud subset_cloud(const PointCloud& cloud, const std::vector<std::size_t>& idx) {
  PointCloud sub;
  sub.points.reserve(idx.size());
  for (std::size_t i : idx) sub.points.push_back(cloud.points[i]);
  if (cloud.has_labels())
    for (std::size_t i : idx) sub.labels.push_back(cloud.labels[i]);
  return sub;
}

// Everything about one sample that is fixed before training starts
// (supervision points included, so they are generated exactly once).
struct Prep {
  const TrainSample* sample = nullptr;
  PointCloud host;  // cloud the sampler operates on (labels kept, no features)
  SampleResult l1;  // layer-1 FPS when the sampler is hosted at layer 2
  SampleResult init;
  std::vector<Vec3> supervision;
  Matching phi;  // EMD* matching, init -> supervision
  std::vector<char> interest;    // boundary / soft-keypoint flags on the input cloud
  std::vector<char> positives;   // keypoint class labels
  std::vector<Vec3> gt_keypoints;
  std::vector<std::size_t> level2_local;  // layer-1 hosting: FPS subset of init order
  Grouping sa1_groups;
  bool sa1_static = false;
  Matrix p0_feats;  // absolute coordinates as level-1 features
};

// Two-level toy task network: SA(input->C1), SA(C1->C2), propagation of the
// C2 features back to every input point, then a per-point linear head.
struct TaskNet {
  ParamSet params;
  std::size_t k1 = 8, k2 = 8, fp_k = 3;
};

TaskNet make_task_net(std::size_t out_dim, std::uint64_t seed) {
  TaskNet net;
  ParamSet& p = net.params;
  p.add("sa1.w1", 16, 6);
  p.add("sa1.b1", 1, 16);
  p.add("sa1.w2", 32, 16);
  p.add("sa1.b2", 1, 32);
  p.add("sa2.w1", 32, 35);
  p.add("sa2.b1", 1, 32);
  p.add("sa2.w2", 64, 32);
  p.add("sa2.b2", 1, 64);
  p.add("head.w", out_dim, 64);
  p.add("head.b", 1, out_dim);
  std::uint64_t s = seed;
  for (Tensor& t : p.tensors)
    if (t.name.find(".w") != std::string::npos) xavier_init(t.value, s++);
  return net;
}

struct TaskNetCache {
  SACache sa1c, sa2c;
  FPCache fpc;
  DenseCache headc;
  Matrix f1;
  std::size_t c1_count = 0, c2_count = 0;
};

DenseRef dref(ParamSet& p, const char* w, const char* b, bool relu) {
  return {&p.at(w), &p.at(b), relu};
}

Matrix tasknet_forward(TaskNet& net, const Prep& prep, std::span<const Vec3> c1,
                       std::span<const Vec3> c2, TaskNetCache& cc) {
  const PointCloud& p0 = prep.sample->cloud;
  SALayer sa1{dref(net.params, "sa1.w1", "sa1.b1", true), dref(net.params, "sa1.w2", "sa1.b2", true),
              net.k1};
  SALayer sa2{dref(net.params, "sa2.w1", "sa2.b1", true), dref(net.params, "sa2.w2", "sa2.b2", true),
              net.k2};
  cc.c1_count = c1.size();
  cc.c2_count = c2.size();
  cc.f1 = sa_forward(sa1, p0.points, c1, prep.p0_feats, &cc.sa1c,
                     prep.sa1_static ? &prep.sa1_groups : nullptr);
  Matrix f2 = sa_forward(sa2, c1, c2, cc.f1, &cc.sa2c);
  Matrix fpout = fp_forward(p0.points, c2, f2, net.fp_k, &cc.fpc);
  return dense_forward(dref(net.params, "head.w", "head.b", false), fpout, &cc.headc);
}

void tasknet_backward(TaskNet& net, TaskNetCache& cc, const Matrix& dLogits, bool c1_var,
                      bool c2_var, std::vector<Vec3>* dC1, std::vector<Vec3>* dC2) {
  SALayer sa1{dref(net.params, "sa1.w1", "sa1.b1", true), dref(net.params, "sa1.w2", "sa1.b2", true),
              net.k1};
  SALayer sa2{dref(net.params, "sa2.w1", "sa2.b1", true), dref(net.params, "sa2.w2", "sa2.b2", true),
              net.k2};
  Matrix dFp = dense_backward(dref(net.params, "head.w", "head.b", false), cc.headc, dLogits);
  if (c2_var) dC2->assign(cc.c2_count, Vec3{});
  Matrix dF2 = fp_backward(cc.fpc, dFp, c2_var ? dC2 : nullptr);

  Matrix dF1(cc.f1.rows, cc.f1.cols);
  std::vector<Vec3> dC1src;
  if (c1_var) {
    dC1->assign(cc.c1_count, Vec3{});
    dC1src.assign(cc.c1_count, Vec3{});
  }
  sa_backward(sa2, cc.sa2c, dF2, &dF1, c2_var ? dC2 : nullptr, c1_var ? &dC1src : nullptr);
  sa_backward(sa1, cc.sa1c, dF1, nullptr, c1_var ? dC1 : nullptr, nullptr);
  if (c1_var)
    for (std::size_t i = 0; i < dC1->size(); ++i) (*dC1)[i] += dC1src[i];
}

std::size_t nearest_point(const Vec3& q, std::span<const Vec3> pts) {
  std::size_t best = 0;
  double best_d2 = dist2(q, pts[0]);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    double d2 = dist2(q, pts[i]);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

struct SampleOut {
  double task_loss = 0.0;
  double disp_loss = 0.0;
  double metric = 0.0;  // completion CD / keypoint AP (seg handled dataset-wide)
  double boundary_frac = 0.0;
  double mean_disp = 0.0;
  std::vector<int> pred_labels;
  std::vector<Vec3> sampled;
  bool finite = true;
};

struct RunContext {
  const TrainConfig* cfg;
  int num_parts = 2;
};

// Forward (and optionally backward) for one sample. Gradients accumulate
// into the supplied nets, scaled by grad_scale; strat controls which loss
// terms reach the sampler.
SampleOut process_sample(const Prep& prep, const RunContext& ctx, TaskNet& tnet,
                         DispNetParams& dnet, double alpha, TrainStrategy strat, bool with_grad,
                         double grad_scale, bool want_eval) {
  const TrainConfig& cfg = *ctx.cfg;
  const PointCloud& p0 = prep.sample->cloud;
  SampleOut out;

  // Sampled-layer points.
  DispNetCache dcache;
  std::vector<Vec3> cs;
  bool learned = cfg.pipeline == PipelineKind::Learned;
  switch (cfg.pipeline) {
    case PipelineKind::Baseline: cs = prep.init.coordinates; break;
    case PipelineKind::TaskAware: cs = prep.supervision; break;
    case PipelineKind::Learned:
      cs = displacement_forward(prep.host, prep.init, dnet, cfg.disp_mode, &dcache);
      break;
  }
  for (const Vec3& p : cs)
    if (!p.finite()) {
      out.finite = false;
      return out;
    }

  bool layer1 = cfg.sampler_layer == 1;
  std::vector<Vec3> c2_store;
  std::span<const Vec3> c1, c2;
  if (layer1) {
    c2_store.reserve(prep.level2_local.size());
    for (std::size_t j : prep.level2_local) c2_store.push_back(cs[j]);
    c1 = cs;
    c2 = c2_store;
  } else {
    c1 = prep.l1.coordinates;
    c2 = cs;
  }

  TaskNetCache tc;
  Matrix logits = tasknet_forward(tnet, prep, c1, c2, tc);

  Matrix dLogits;
  std::vector<Vec3> pred_coords;
  switch (cfg.task) {
    case TaskKind::Segmentation: {
      out.task_loss = softmax_ce_loss(logits, p0.labels, with_grad ? &dLogits : nullptr);
      if (want_eval) {
        out.pred_labels.resize(logits.rows);
        for (std::size_t r = 0; r < logits.rows; ++r) {
          const double* lr = logits.row(r);
          int arg = 0;
          for (std::size_t c = 1; c < logits.cols; ++c)
            if (lr[c] > lr[arg]) arg = static_cast<int>(c);
          out.pred_labels[r] = arg;
        }
      }
      break;
    }
    case TaskKind::Completion: {
      pred_coords.resize(logits.rows);
      for (std::size_t r = 0; r < logits.rows; ++r)
        pred_coords[r] = p0.points[r] + Vec3{logits.at(r, 0), logits.at(r, 1), logits.at(r, 2)};
      std::vector<Vec3> gpred;
      out.task_loss = chamfer_with_grad(pred_coords, prep.sample->complete.points, gpred);
      out.metric = out.task_loss;
      if (with_grad) {
        dLogits = Matrix(logits.rows, 3);
        for (std::size_t r = 0; r < logits.rows; ++r) {
          dLogits.at(r, 0) = gpred[r].x;
          dLogits.at(r, 1) = gpred[r].y;
          dLogits.at(r, 2) = gpred[r].z;
        }
      }
      break;
    }
    case TaskKind::Keypoint: {
      out.task_loss = weighted_bce_loss(logits, prep.positives, cfg.positive_weight,
                                        with_grad ? &dLogits : nullptr);
      if (want_eval) {
        out.pred_labels.resize(logits.rows);
        std::vector<Vec3> pred_kp;
        for (std::size_t r = 0; r < logits.rows; ++r) {
          out.pred_labels[r] = logits.at(r, 0) > 0.0 ? 1 : 0;
          if (out.pred_labels[r]) pred_kp.push_back(p0.points[r]);
        }
        out.metric = keypoint_ap(pred_kp, prep.gt_keypoints, 0.05);
      }
      break;
    }
  }

  // Displacement loss for the learned sampler.
  std::vector<Vec3> g_disp;
  if (learned) {
    switch (cfg.disp_loss) {
      case DispLossKind::CD:
        out.disp_loss = chamfer_with_grad(cs, prep.supervision, g_disp);
        break;
      case DispLossKind::EMD:
        out.disp_loss = emd_with_grad(cs, prep.supervision, g_disp);
        break;
      case DispLossKind::EMDStar:
        out.disp_loss = emd_star_with_matching(cs, prep.supervision, prep.phi,
                                               with_grad ? &g_disp : nullptr);
        break;
    }
  }
  if (!std::isfinite(out.task_loss) || !std::isfinite(out.disp_loss)) {
    out.finite = false;
    return out;
  }

  if (with_grad) {
    for (double& v : dLogits.data) v *= grad_scale;
    bool block_task = strat == TrainStrategy::NoTaskGradient;
    bool use_disp = learned && strat != TrainStrategy::TaskLossOnly;

    std::vector<Vec3> dC1, dC2;
    bool cs_var = learned;
    tasknet_backward(tnet, tc, dLogits, cs_var && layer1, cs_var, &dC1, &dC2);

    if (learned) {
      std::vector<Vec3> dCs(cs.size());
      if (!block_task) {
        if (layer1) {
          dCs = dC1;
          for (std::size_t j = 0; j < prep.level2_local.size(); ++j)
            dCs[prep.level2_local[j]] += dC2[j];
        } else {
          dCs = dC2;
        }
      }
      if (use_disp) {
        double w = grad_scale * alpha;
        for (std::size_t i = 0; i < dCs.size(); ++i) dCs[i] += g_disp[i] * w;
      }
      displacement_backward(dnet, dcache, dCs);
    }
  }

  if (want_eval) {
    out.sampled = cs;
    if (!prep.interest.empty()) {
      std::size_t flagged = 0;
      for (const Vec3& c : cs) flagged += prep.interest[nearest_point(c, p0.points)] ? 1 : 0;
      out.boundary_frac = static_cast<double>(flagged) / static_cast<double>(cs.size());
    }
    if (learned) {
      double acc = 0.0;
      for (std::size_t i = 0; i < cs.size(); ++i) acc += dist(cs[i], prep.init.coordinates[i]);
      out.mean_disp = acc / static_cast<double>(cs.size());
    }
  }
  return out;
}

}  // namespace

std::vector<TrainSample> make_task_dataset(TaskKind task, std::size_t n_shapes,
                                           std::size_t n_points, int parts, std::uint64_t seed) {
  std::vector<TrainSample> out;
  for (std::size_t i = 0; i < n_shapes; ++i) {
    SyntheticSpec spec;
    spec.n_points = n_points;
    spec.parts = parts;
    spec.seed = mix_seed(seed, i);
    TrainSample s;
    switch (task) {
      case TaskKind::Segmentation:
        spec.kind = SyntheticKind::SplitPlane;
        s.cloud = gen_split_plane(spec);
        break;
      case TaskKind::Completion: {
        spec.kind = SyntheticKind::PartialComplete;
        auto [partial, complete] = gen_partial_complete(spec, {1, 0, 0});
        s.cloud = std::move(partial);
        s.complete = std::move(complete);
        break;
      }
      case TaskKind::Keypoint: {
        spec.kind = SyntheticKind::KeypointShape;
        auto [cloud, keys] = gen_keypoint_shape(spec);
        s.cloud = std::move(cloud);
        s.keypoints = std::move(keys);
        break;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

TrainReport train(const std::vector<TrainSample>& dataset, const TrainConfig& cfg,
                  ParamSet* out_disp_params) {
  cfg.check();
  if (dataset.empty()) fail_input("train requires a nonempty dataset");

  RunContext ctx;
  ctx.cfg = &cfg;
  if (cfg.task == TaskKind::Segmentation) {
    int max_label = 0;
    for (const TrainSample& s : dataset) {
      if (!s.cloud.has_labels()) fail_input("segmentation training requires labeled clouds");
      for (int l : s.cloud.labels) max_label = std::max(max_label, l);
    }
    ctx.num_parts = cfg.num_parts > 0 ? cfg.num_parts : max_label + 1;
  }

  std::size_t n1 = cfg.sample_counts[0], n2 = cfg.sample_counts[1];
  bool layer1 = cfg.sampler_layer == 1;
  std::size_t m_s = layer1 ? n1 : n2;  // points emitted by the sampled layer

  // Per-sample preparation; supervision points are generated once, up front.
  std::vector<Prep> preps(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    Prep& pr = preps[i];
    pr.sample = &dataset[i];
    const PointCloud& p0 = dataset[i].cloud;
    p0.check();
    if (n1 > p0.size()) fail_input("sample_counts[0] exceeds cloud size");
    pr.p0_feats = coords_as_features(p0.points);

    if (layer1) {
      pr.host = p0;
      pr.host.features = Matrix();
    } else {
      pr.l1 = fps(p0, n1, 0);
      pr.host = subset_cloud(p0, pr.l1.source_indices);
    }

    switch (cfg.init_points) {
      case InitPointsKind::FPS: pr.init = fps(pr.host, m_s, 0); break;
      case InitPointsKind::Random:
        pr.init = random_sample(pr.host, m_s, mix_seed(cfg.seed, 3000 + i));
        break;
      case InitPointsKind::NoisyEdgeFPS:
        pr.init = noisy_edge_init(pr.host, m_s, cfg.task_aware, cfg.flip_rate,
                                  mix_seed(cfg.seed, 4000 + i));
        break;
    }

    BoundaryMask soft;
    if (cfg.task == TaskKind::Keypoint) {
      soft = soft_keypoints(p0, dataset[i].keypoints, cfg.task_aware.knn_soft);
      pr.interest = soft.flags;
      pr.positives.assign(p0.size(), 0);
      for (std::size_t kp : dataset[i].keypoints) pr.positives[kp] = 1;
      for (std::size_t kp : dataset[i].keypoints) pr.gt_keypoints.push_back(p0.points[kp]);
    } else if (cfg.task == TaskKind::Segmentation) {
      double eps = cfg.task_aware.epsilon > 0.0 ? cfg.task_aware.epsilon : default_epsilon(p0);
      pr.interest = detect_boundary(p0, eps).flags;
    }

    switch (cfg.supervision) {
      case SupervisionKind::FPS: pr.supervision = fps(pr.host, m_s, 0).coordinates; break;
      case SupervisionKind::EdgeFPS:
        pr.supervision = edge_fps(pr.host, m_s, cfg.task_aware).coordinates;
        break;
      case SupervisionKind::PartFPS: pr.supervision = part_fps(pr.host, m_s).coordinates; break;
      case SupervisionKind::KeyFPS: {
        BoundaryMask restricted;
        if (layer1) {
          restricted = soft;
        } else {
          restricted.flags.resize(pr.host.size());
          for (std::size_t j = 0; j < pr.host.size(); ++j)
            restricted.flags[j] = soft.flags[pr.l1.source_indices[j]];
        }
        pr.supervision = key_fps(pr.host, restricted, m_s, cfg.task_aware).coordinates;
        break;
      }
      case SupervisionKind::Complete:
        if (dataset[i].complete.size() == 0) fail_input("Complete supervision requires complete clouds");
        pr.supervision = completion_supervision(dataset[i].complete, m_s).coordinates;
        break;
    }

    if (cfg.pipeline == PipelineKind::Learned && cfg.disp_loss == DispLossKind::EMDStar)
      pr.phi = emd(pr.init.coordinates, pr.supervision).second;

    if (layer1) {
      PointCloud init_cloud;
      init_cloud.points = pr.init.coordinates;
      pr.level2_local = fps(init_cloud, n2, 0).source_indices;
      pr.sa1_static = cfg.pipeline != PipelineKind::Learned;
      if (pr.sa1_static) {
        std::span<const Vec3> c1 = cfg.pipeline == PipelineKind::Baseline
                                       ? std::span<const Vec3>(pr.init.coordinates)
                                       : std::span<const Vec3>(pr.supervision);
        pr.sa1_groups = group_knn(p0.points, c1, 8);
      }
    } else {
      pr.sa1_static = true;
      pr.sa1_groups = group_knn(p0.points, pr.l1.coordinates, 8);
    }
  }

  std::size_t out_dim = cfg.task == TaskKind::Segmentation
                            ? static_cast<std::size_t>(ctx.num_parts)
                            : (cfg.task == TaskKind::Completion ? 3 : 1);
  TaskNet tnet = make_task_net(out_dim, mix_seed(cfg.seed, 101));
  DispNetParams dnet = make_dispnet(DispNetSizes{}, mix_seed(cfg.seed, 202));

  OptimizerConfig opt{cfg.optimizer, cfg.lr, cfg.momentum};
  OptimizerState tstate, dstate;

  TrainReport report;
  bool learned = cfg.pipeline == PipelineKind::Learned;

  auto eval_pass = [&](std::vector<SampleOut>& outs, double alpha) {
    outs.assign(dataset.size(), SampleOut{});
    parallel_over(dataset.size(), [&](std::size_t i) {
      TaskNet tclone = tnet;
      DispNetParams dclone = dnet;
      outs[i] = process_sample(preps[i], ctx, tclone, dclone, alpha, cfg.strategy, false, 1.0, true);
    });
  };

  auto summarize = [&](const std::vector<SampleOut>& outs, int epoch, double alpha,
                       EpochRecord& rec) -> bool {
    double task = 0, disp = 0, metric = 0, bfrac = 0;
    std::vector<std::vector<int>> preds, gts;
    for (std::size_t i = 0; i < outs.size(); ++i) {
      if (!outs[i].finite) return false;
      task += outs[i].task_loss;
      disp += outs[i].disp_loss;
      metric += outs[i].metric;
      bfrac += outs[i].boundary_frac;
      if (cfg.task == TaskKind::Segmentation) {
        preds.push_back(outs[i].pred_labels);
        gts.push_back(dataset[i].cloud.labels);
      }
    }
    double n = static_cast<double>(outs.size());
    rec.epoch = epoch;
    rec.task_loss = task / n;
    rec.disp_loss = disp / n;
    rec.alpha = alpha;
    rec.total_loss = cfg.loss_scale * joint_loss(rec.task_loss, rec.disp_loss,
                                                 cfg.strategy == TrainStrategy::TaskLossOnly ? 0.0
                                                                                             : alpha);
    rec.boundary_fraction = bfrac / n;
    if (cfg.task == TaskKind::Segmentation) {
      report.final_scores = seg_scores(preds, gts, ctx.num_parts);
      report.final_pred_labels = std::move(preds);
      rec.metric = report.final_scores.overall_acc;
    } else {
      rec.metric = metric / n;
      if (cfg.task == TaskKind::Keypoint) {
        report.final_pred_labels.clear();
        for (const SampleOut& o : outs) report.final_pred_labels.push_back(o.pred_labels);
      }
    }
    return true;
  };

  for (int epoch = 0; epoch < cfg.epochs && !report.diverged; ++epoch) {
    double alpha = alpha_at(epoch, cfg);
    TrainStrategy strat = cfg.strategy;
    if (strat == TrainStrategy::NoTaskGradientThenFinetune)
      strat = epoch >= cfg.epochs - cfg.finetune_epochs ? TrainStrategy::Joint
                                                        : TrainStrategy::NoTaskGradient;

    // Pre-update evaluation: the record reflects parameters entering the epoch.
    std::vector<SampleOut> outs;
    eval_pass(outs, alpha);
    EpochRecord rec;
    if (!summarize(outs, epoch, alpha, rec)) {
      report.diverged = true;
      report.note = "non-finite loss at epoch " + std::to_string(epoch);
      break;
    }
    report.epochs.push_back(rec);

    // Update pass over fixed-order batches.
    try {
      for (std::size_t start = 0; start < dataset.size();
           start += static_cast<std::size_t>(cfg.batch_size)) {
        std::size_t count = std::min<std::size_t>(cfg.batch_size, dataset.size() - start);
        double grad_scale = cfg.loss_scale / static_cast<double>(count);
        std::vector<TaskNet> tclones(count, tnet);
        std::vector<DispNetParams> dclones(count, dnet);
        std::vector<char> ok(count, 1);
        parallel_over(count, [&](std::size_t j) {
          tclones[j].params.zero_grad();
          dclones[j].params.zero_grad();
          SampleOut o = process_sample(preps[start + j], ctx, tclones[j], dclones[j], alpha, strat,
                                       true, grad_scale, false);
          ok[j] = o.finite;
        });
        for (char c : ok)
          if (!c) throw std::runtime_error("non-finite loss in update pass");

        tnet.params.zero_grad();
        dnet.params.zero_grad();
        for (std::size_t j = 0; j < count; ++j) {
          for (std::size_t t = 0; t < tnet.params.tensors.size(); ++t)
            for (std::size_t v = 0; v < tnet.params.tensors[t].grad.size(); ++v)
              tnet.params.tensors[t].grad.data[v] += tclones[j].params.tensors[t].grad.data[v];
          if (learned)
            for (std::size_t t = 0; t < dnet.params.tensors.size(); ++t)
              for (std::size_t v = 0; v < dnet.params.tensors[t].grad.size(); ++v)
                dnet.params.tensors[t].grad.data[v] += dclones[j].params.tensors[t].grad.data[v];
        }
        optimizer_step(tnet.params, tstate, opt);
        if (learned) optimizer_step(dnet.params, dstate, opt);
      }
    } catch (const std::runtime_error& e) {
      report.diverged = true;
      report.note = std::string(e.what()) + " at epoch " + std::to_string(epoch);
      break;
    }
  }

  // Post-training sampler statistics (and final predictions).
  if (!report.diverged) {
    std::vector<SampleOut> outs;
    eval_pass(outs, alpha_at(std::max(0, cfg.epochs - 1), cfg));
    EpochRecord scratch;
    if (summarize(outs, cfg.epochs, 0.0, scratch)) {
      double bfrac = 0, mdisp = 0, init_b = 0;
      for (std::size_t i = 0; i < outs.size(); ++i) {
        bfrac += outs[i].boundary_frac;
        mdisp += outs[i].mean_disp;
        if (!preps[i].interest.empty()) {
          std::size_t flagged = 0;
          for (std::size_t s : preps[i].init.source_indices) {
            std::size_t p0_idx = layer1 ? s : preps[i].l1.source_indices[s];
            flagged += preps[i].interest[p0_idx] ? 1 : 0;
          }
          init_b += static_cast<double>(flagged) / static_cast<double>(preps[i].init.size());
        }
      }
      double n = static_cast<double>(outs.size());
      report.final_boundary_fraction = bfrac / n;
      report.mean_displacement = mdisp / n;
      report.init_boundary_fraction = init_b / n;
      for (SampleOut& o : outs) report.final_sample_points.push_back(std::move(o.sampled));
    }
  }

  if (out_disp_params) *out_disp_params = dnet.params;
  return report;
}

void write_report_csv(const TrainReport& report, std::ostream& out) {
  out << "epoch,task_loss,disp_loss,total_loss,metric,alpha,boundary_fraction\n";
  char buf[256];
  for (const EpochRecord& r : report.epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.task_loss,
                  r.disp_loss, r.total_loss, r.metric, r.alpha, r.boundary_fraction);
    out << buf;
  }
}

}  // namespace tas
