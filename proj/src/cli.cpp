#include "tas/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "tas/datagen.hpp"
#include "tas/io.hpp"
#include "tas/metrics.hpp"
#include "tas/task_aware.hpp"
#include "tas/training.hpp"

namespace tas::cli {

namespace {

std::string fmt9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", v);
  return buf;
}

template <typename T>
T parse_enum(const std::map<std::string, T>& table, const std::string& key, const char* what) {
  auto it = table.find(key);
  if (it == table.end()) fail_input(std::string("unknown ") + what + ": " + key);
  return it->second;
}

const std::map<std::string, SyntheticKind> kKinds = {
    {"split-plane", SyntheticKind::SplitPlane},
    {"multi-part", SyntheticKind::MultiPart},
    {"partial-complete", SyntheticKind::PartialComplete},
    {"keypoint", SyntheticKind::KeypointShape}};

const std::map<std::string, TaskKind> kTasks = {{"segmentation", TaskKind::Segmentation},
                                                {"completion", TaskKind::Completion},
                                                {"keypoint", TaskKind::Keypoint}};

const std::map<std::string, DispLossKind> kDispLoss = {
    {"cd", DispLossKind::CD}, {"emd", DispLossKind::EMD}, {"emd-star", DispLossKind::EMDStar}};

const std::map<std::string, DispMode> kDispModes = {
    {"offset", DispMode::Offset},
    {"coordinate", DispMode::Coordinate},
    {"coordinate-soft", DispMode::CoordinateSoftProjected}};

const std::map<std::string, SupervisionKind> kSupervision = {{"fps", SupervisionKind::FPS},
                                                             {"edge-fps", SupervisionKind::EdgeFPS},
                                                             {"part-fps", SupervisionKind::PartFPS},
                                                             {"key-fps", SupervisionKind::KeyFPS},
                                                             {"complete", SupervisionKind::Complete}};

const std::map<std::string, InitPointsKind> kInit = {{"fps", InitPointsKind::FPS},
                                                     {"random", InitPointsKind::Random},
                                                     {"noisy-edge-fps", InitPointsKind::NoisyEdgeFPS}};

const std::map<std::string, PipelineKind> kPipelines = {{"baseline", PipelineKind::Baseline},
                                                        {"task-aware", PipelineKind::TaskAware},
                                                        {"learned", PipelineKind::Learned}};

const std::map<std::string, TrainStrategy> kStrategies = {
    {"joint", TrainStrategy::Joint},
    {"task-only", TrainStrategy::TaskLossOnly},
    {"no-task-grad", TrainStrategy::NoTaskGradient},
    {"finetune", TrainStrategy::NoTaskGradientThenFinetune}};

const std::map<std::string, OptimizerKind> kOptimizers = {{"momentum", OptimizerKind::Momentum},
                                                          {"adam", OptimizerKind::Adam}};

std::vector<double> parse_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stod(tok));
  }
  if (out.empty()) fail_input("empty numeric list: " + csv);
  return out;
}

struct GenArgs {
  std::string kind, out;
  std::size_t n = 2048;
  int parts = 2;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> view = {1, 0, 0};
};

int cmd_gen(const GenArgs& a) {
  SyntheticSpec spec;
  spec.kind = parse_enum(kKinds, a.kind, "kind");
  spec.n_points = a.n;
  spec.parts = a.parts;
  spec.noise_sigma = a.noise;
  spec.seed = a.seed;

  switch (spec.kind) {
    case SyntheticKind::SplitPlane:
      write_point_file(gen_split_plane(spec), a.out + ".xyz");
      break;
    case SyntheticKind::MultiPart:
      write_point_file(gen_multipart(spec), a.out + ".xyz");
      break;
    case SyntheticKind::PartialComplete: {
      if (a.view.size() != 3) fail_input("--view requires three components");
      Vec3 v{a.view[0], a.view[1], a.view[2]};
      double n = v.norm();
      if (n <= 0.0) fail_input("--view must be nonzero");
      auto [partial, complete] = gen_partial_complete(spec, v * (1.0 / n));
      write_point_file(partial, a.out + ".partial.xyz");
      write_point_file(complete, a.out + ".complete.xyz");
      break;
    }
    case SyntheticKind::KeypointShape: {
      auto [cloud, keys] = gen_keypoint_shape(spec);
      write_point_file(cloud, a.out + ".xyz");
      write_key_file(keys, a.out + ".keys");
      break;
    }
  }
  return 0;
}

struct SampleArgs {
  std::string input, sampler, out, keys;
  std::size_t m = 0;
  double lambda = 3.5, beta = 0.75, epsilon = 0.0, cell = 0.0;
  std::uint64_t seed = 0;
  std::size_t knn_soft = 20;
};

int cmd_sample(const SampleArgs& a) {
  PointCloud cloud = read_point_file(a.input);
  TaskAwareConfig cfg{a.lambda, a.beta, a.epsilon, a.knn_soft};

  SampleResult res;
  if (a.sampler == "fps") {
    res = fps(cloud, a.m, 0);
  } else if (a.sampler == "random") {
    res = random_sample(cloud, a.m, a.seed);
  } else if (a.sampler == "grid") {
    res = grid_sample(cloud, a.cell);
  } else if (a.sampler == "edge-fps") {
    if (!cloud.has_labels()) fail_input("edge-fps requires a labeled point file");
    res = edge_fps(cloud, a.m, cfg);
  } else if (a.sampler == "part-fps") {
    if (!cloud.has_labels()) fail_input("part-fps requires a labeled point file");
    res = part_fps(cloud, a.m);
  } else if (a.sampler == "key-fps") {
    if (a.keys.empty()) fail_input("key-fps requires --keys");
    auto keys = read_key_file(a.keys);
    res = key_fps(cloud, soft_keypoints(cloud, keys, a.knn_soft), a.m, cfg);
  } else {
    fail_input("unknown sampler: " + a.sampler);
  }

  PointCloud out;
  out.points = res.coordinates;
  if (cloud.has_labels() && res.has_indices())
    for (std::size_t i : res.source_indices) out.labels.push_back(cloud.labels[i]);
  if (!a.out.empty()) write_point_file(out, a.out);

  if (cloud.has_labels() && res.has_indices()) {
    double eps = a.epsilon > 0.0 ? a.epsilon : default_epsilon(cloud);
    BoundaryMask mask = detect_boundary(cloud, eps);
    std::size_t flagged = 0;
    for (std::size_t i : res.source_indices) flagged += mask.flags[i] ? 1 : 0;
    double frac = static_cast<double>(flagged) / static_cast<double>(res.size());
    std::cout << "m=" << res.size() << " boundary_fraction=" << fmt9(frac) << "\n";
  } else {
    std::cout << "m=" << res.size() << "\n";
  }
  return 0;
}

int cmd_boundary(const std::string& input, double epsilon, const std::string& out) {
  PointCloud cloud = read_point_file(input);
  if (!cloud.has_labels()) fail_input("boundary requires a labeled point file");
  double eps = epsilon > 0.0 ? epsilon : default_epsilon(cloud);
  BoundaryMask mask = detect_boundary(cloud, eps);
  std::size_t nb = mask.boundary_count();
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw IoError("cannot create mask file: " + out);
    for (char flag : mask.flags) f << int(flag) << "\n";
  }
  std::cout << "boundary=" << nb << " non_boundary=" << (mask.size() - nb)
            << " fraction=" << fmt9(static_cast<double>(nb) / static_cast<double>(mask.size()))
            << " epsilon=" << fmt9(eps) << "\n";
  return 0;
}

struct MetricArgs {
  std::string name;
  std::vector<std::string> files;
  int parts = 0;
  double threshold = 0.05;
};

int cmd_metric(const MetricArgs& a) {
  auto need = [&](std::size_t n) {
    if (a.files.size() != n)
      fail_input("metric " + a.name + " expects " + std::to_string(n) + " file operands");
  };
  if (a.name == "cd") {
    need(2);
    PointCloud x = read_point_file(a.files[0]), y = read_point_file(a.files[1]);
    std::cout << "metric=cd value=" << fmt9(chamfer(x.points, y.points))
              << " mean=" << fmt9(chamfer_mean(x.points, y.points)) << "\n";
  } else if (a.name == "emd") {
    need(2);
    PointCloud x = read_point_file(a.files[0]), y = read_point_file(a.files[1]);
    std::cout << "metric=emd value=" << fmt9(emd(x.points, y.points).first) << "\n";
  } else if (a.name == "emd-star") {
    need(3);
    PointCloud p = read_point_file(a.files[0]);
    PointCloud i = read_point_file(a.files[1]);
    PointCloud t = read_point_file(a.files[2]);
    std::cout << "metric=emd-star value=" << fmt9(emd_star(p.points, i.points, t.points)) << "\n";
  } else if (a.name == "miou") {
    need(2);
    PointCloud pred = read_point_file(a.files[0]), gt = read_point_file(a.files[1]);
    if (!pred.has_labels() || !gt.has_labels()) fail_input("miou requires labeled files");
    int parts = a.parts;
    if (parts == 0) {
      for (int l : gt.labels) parts = std::max(parts, l + 1);
      for (int l : pred.labels) parts = std::max(parts, l + 1);
    }
    SegScores s = seg_scores({pred.labels}, {gt.labels}, parts);
    std::cout << "metric=miou shape=" << fmt9(s.shape_miou) << " part=" << fmt9(s.part_miou)
              << " oa=" << fmt9(s.overall_acc) << "\n";
  } else if (a.name == "ap") {
    need(2);
    PointCloud pred = read_point_file(a.files[0]), gt = read_point_file(a.files[1]);
    std::cout << "metric=ap value=" << fmt9(keypoint_ap(pred.points, gt.points, a.threshold))
              << "\n";
  } else {
    fail_input("unknown metric: " + a.name);
  }
  return 0;
}

struct TrainArgs {
  TrainConfig cfg;
  std::string task = "segmentation", disp_loss = "emd-star", disp_mode = "offset";
  std::string supervision = "edge-fps", init_points = "fps", pipeline = "learned";
  std::string strategy = "joint", optimizer = "momentum";
  std::string out_csv = "train_report.csv", out_ckpt = "dispnet.ckpt";
  std::string counts = "256,32";
  std::size_t n_shapes = 4, n_points = 1024;
  int parts = 2;
  bool optimizer_set = false, alpha_set = false, scale_set = false;
};

int cmd_train(TrainArgs& a) {
  TrainConfig& cfg = a.cfg;
  cfg.task = parse_enum(kTasks, a.task, "task");
  cfg.disp_loss = parse_enum(kDispLoss, a.disp_loss, "disp-loss");
  cfg.disp_mode = parse_enum(kDispModes, a.disp_mode, "disp-mode");
  cfg.supervision = parse_enum(kSupervision, a.supervision, "supervision");
  cfg.init_points = parse_enum(kInit, a.init_points, "init-points");
  cfg.pipeline = parse_enum(kPipelines, a.pipeline, "pipeline");
  cfg.strategy = parse_enum(kStrategies, a.strategy, "strategy");
  cfg.optimizer = parse_enum(kOptimizers, a.optimizer, "optimizer");

  cfg.sample_counts.clear();
  for (double v : parse_list(a.counts)) cfg.sample_counts.push_back(static_cast<std::size_t>(v));

  // Per-task defaults unless explicitly set.
  if (!a.optimizer_set && cfg.task == TaskKind::Keypoint) cfg.optimizer = OptimizerKind::Adam;
  if (!a.alpha_set && cfg.task != TaskKind::Segmentation) cfg.alpha0 = 0.5;
  if (!a.scale_set && cfg.task == TaskKind::Completion) cfg.loss_scale = 100.0;
  if (cfg.task == TaskKind::Completion) cfg.supervision = SupervisionKind::Complete;

  auto dataset = make_task_dataset(cfg.task, a.n_shapes, a.n_points, a.parts, cfg.seed);
  ParamSet disp_params;
  TrainReport report = train(dataset, cfg, &disp_params);

  std::ofstream csv(a.out_csv);
  if (!csv) throw IoError("cannot create CSV report: " + a.out_csv);
  write_report_csv(report, csv);
  csv.close();
  save_checkpoint(disp_params, a.out_ckpt);

  if (report.diverged) {
    std::cerr << "training diverged: " << report.note << "\n";
    return 2;
  }
  if (!report.epochs.empty()) {
    const EpochRecord& last = report.epochs.back();
    std::cout << "epochs=" << report.epochs.size() << " final_task_loss=" << fmt9(last.task_loss)
              << " final_disp_loss=" << fmt9(last.disp_loss) << " metric=" << fmt9(last.metric)
              << " boundary_fraction=" << fmt9(report.final_boundary_fraction) << "\n";
  } else {
    std::cout << "epochs=0\n";
  }
  return 0;
}

struct SweepArgs {
  std::string lambdas = "1.5,2,2.5,3,3.5,4", betas = "0.5,0.75";
  std::string out = "sweep.csv";
  std::size_t n_shapes = 2, n_points = 1024;
  int parts = 2, epochs = 30;
  std::uint64_t seed = 1;
};

// Lambda x beta grid of task-aware segmentation runs plus an FPS baseline
// row; one CSV row per cell.
int cmd_sweep(const SweepArgs& a) {
  std::vector<double> lambdas = parse_list(a.lambdas);
  std::vector<double> betas = parse_list(a.betas);

  std::ofstream csv(a.out);
  if (!csv) throw IoError("cannot create sweep CSV: " + a.out);
  csv << "sampler,lambda,beta,shape_miou,part_miou,oa\n";

  auto dataset = make_task_dataset(TaskKind::Segmentation, a.n_shapes, a.n_points, a.parts, a.seed);
  auto run_one = [&](PipelineKind pipeline, double lambda, double beta) {
    TrainConfig cfg;
    cfg.task = TaskKind::Segmentation;
    cfg.pipeline = pipeline;
    cfg.task_aware.lambda = lambda;
    cfg.task_aware.beta = beta;
    cfg.epochs = a.epochs;
    cfg.seed = a.seed;
    cfg.lr = 0.02;
    cfg.momentum = 0.9;
    cfg.sample_counts = {192, 24};
    cfg.num_parts = a.parts;
    return train(dataset, cfg);
  };

  TrainReport base = run_one(PipelineKind::Baseline, 1.0, 1.0);
  csv << "fps,," << "," << fmt9(base.final_scores.shape_miou) << ","
      << fmt9(base.final_scores.part_miou) << "," << fmt9(base.final_scores.overall_acc) << "\n";
  for (double beta : betas)
    for (double lambda : lambdas) {
      TrainReport r = run_one(PipelineKind::TaskAware, lambda, beta);
      csv << "edge-fps," << fmt9(lambda) << "," << fmt9(beta) << ","
          << fmt9(r.final_scores.shape_miou) << "," << fmt9(r.final_scores.part_miou) << ","
          << fmt9(r.final_scores.overall_acc) << "\n";
    }
  if (!csv) throw IoError("failed writing sweep CSV: " + a.out);
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"task-aware point cloud sampling toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* cgen = app.add_subcommand("gen", "generate a synthetic dataset");
  cgen->add_option("--kind", gen.kind, "split-plane|multi-part|partial-complete|keypoint")
      ->required();
  cgen->add_option("--n", gen.n, "point count");
  cgen->add_option("--parts", gen.parts, "number of parts");
  cgen->add_option("--noise", gen.noise, "noise sigma");
  cgen->add_option("--seed", gen.seed, "random seed");
  cgen->add_option("--view", gen.view, "view direction (partial-complete)")->expected(3);
  cgen->add_option("--out", gen.out, "output basename")->required();

  SampleArgs smp;
  CLI::App* csmp = app.add_subcommand("sample", "downsample a point file");
  csmp->add_option("input", smp.input, "input point file")->required();
  csmp->add_option("--sampler", smp.sampler, "fps|random|grid|edge-fps|part-fps|key-fps")
      ->required();
  csmp->add_option("--m", smp.m, "sample count");
  csmp->add_option("--lambda", smp.lambda, "scale ratio");
  csmp->add_option("--beta", smp.beta, "clip ratio");
  csmp->add_option("--epsilon", smp.epsilon, "boundary radius (0 = derive)");
  csmp->add_option("--cell", smp.cell, "grid cell size");
  csmp->add_option("--seed", smp.seed, "random sampler seed");
  csmp->add_option("--keys", smp.keys, "keypoint index file (key-fps)");
  csmp->add_option("--knn-soft", smp.knn_soft, "soft keypoint neighborhood");
  csmp->add_option("--out", smp.out, "output point file");

  std::string bnd_input, bnd_out;
  double bnd_eps = 0.0;
  CLI::App* cbnd = app.add_subcommand("boundary", "label-boundary detection");
  cbnd->add_option("input", bnd_input)->required();
  cbnd->add_option("--epsilon", bnd_eps, "boundary radius (0 = derive)");
  cbnd->add_option("--out", bnd_out, "write 0/1 flags here");

  MetricArgs met;
  CLI::App* cmet = app.add_subcommand("metric", "evaluate a metric on point files");
  cmet->add_option("name", met.name, "cd|emd|emd-star|miou|ap")->required();
  cmet->add_option("files", met.files, "file operands")->expected(-1);
  cmet->add_option("--parts", met.parts, "part count for miou (0 = derive)");
  cmet->add_option("--threshold", met.threshold, "ap distance threshold");

  TrainArgs tr;
  CLI::App* ctr = app.add_subcommand("train", "train the sampler with a toy task");
  ctr->set_config("--config", "", "flat `key = value` config file");
  ctr->add_option("--task", tr.task, "segmentation|completion|keypoint");
  ctr->add_option("--supervision", tr.supervision, "fps|edge-fps|part-fps|key-fps|complete");
  ctr->add_option("--disp-loss", tr.disp_loss, "cd|emd|emd-star");
  ctr->add_option("--disp-mode", tr.disp_mode, "offset|coordinate|coordinate-soft");
  ctr->add_option("--init-points", tr.init_points, "fps|random|noisy-edge-fps");
  ctr->add_option("--pipeline", tr.pipeline, "baseline|task-aware|learned");
  ctr->add_option("--strategy", tr.strategy, "joint|task-only|no-task-grad|finetune");
  auto* opt_optimizer = ctr->add_option("--optimizer", tr.optimizer, "momentum|adam");
  ctr->add_option("--epochs", tr.cfg.epochs, "training epochs");
  ctr->add_option("--batch-size", tr.cfg.batch_size, "batch size");
  ctr->add_option("--finetune-epochs", tr.cfg.finetune_epochs, "joint finetune epochs");
  ctr->add_option("--sampler-layer", tr.cfg.sampler_layer, "layer hosting the sampler (1|2)");
  ctr->add_option("--lr", tr.cfg.lr, "learning rate");
  ctr->add_option("--momentum", tr.cfg.momentum, "momentum coefficient");
  auto* opt_alpha = ctr->add_option("--alpha0", tr.cfg.alpha0, "initial joint loss weight");
  ctr->add_option("--alpha-decay", tr.cfg.alpha_decay, "alpha decay factor");
  ctr->add_option("--alpha-period", tr.cfg.alpha_period_epochs, "epochs per alpha decay");
  auto* opt_scale = ctr->add_option("--loss-scale", tr.cfg.loss_scale, "global joint loss scale");
  ctr->add_option("--positive-weight", tr.cfg.positive_weight, "keypoint positive class weight");
  ctr->add_option("--flip-rate", tr.cfg.flip_rate, "noisy-edge-fps flip rate");
  ctr->add_option("--lambda", tr.cfg.task_aware.lambda, "scale ratio");
  ctr->add_option("--beta", tr.cfg.task_aware.beta, "clip ratio");
  ctr->add_option("--epsilon", tr.cfg.task_aware.epsilon, "boundary radius (0 = derive)");
  ctr->add_option("--knn-soft", tr.cfg.task_aware.knn_soft, "soft keypoint neighborhood");
  ctr->add_option("--seed", tr.cfg.seed, "random seed");
  ctr->add_option("--samples", tr.counts, "per-layer sample counts, e.g. 256,32");
  ctr->add_option("--n-shapes", tr.n_shapes, "synthetic dataset size");
  ctr->add_option("--n-points", tr.n_points, "points per shape");
  ctr->add_option("--parts", tr.parts, "parts per shape (segmentation)");
  ctr->add_option("--out-csv", tr.out_csv, "per-epoch CSV report");
  ctr->add_option("--out-ckpt", tr.out_ckpt, "DISPNET1 checkpoint path");

  SweepArgs sw;
  CLI::App* csw = app.add_subcommand("sweep", "lambda x beta grid of task-aware runs");
  csw->add_option("--lambdas", sw.lambdas, "comma-separated lambda values");
  csw->add_option("--betas", sw.betas, "comma-separated beta values");
  csw->add_option("--epochs", sw.epochs, "epochs per cell");
  csw->add_option("--seed", sw.seed, "random seed");
  csw->add_option("--n-shapes", sw.n_shapes, "synthetic dataset size");
  csw->add_option("--n-points", sw.n_points, "points per shape");
  csw->add_option("--parts", sw.parts, "parts per shape");
  csw->add_option("--out", sw.out, "output CSV");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (cgen->parsed()) return cmd_gen(gen);
    if (csmp->parsed()) return cmd_sample(smp);
    if (cbnd->parsed()) return cmd_boundary(bnd_input, bnd_eps, bnd_out);
    if (cmet->parsed()) return cmd_metric(met);
    if (ctr->parsed()) {
      tr.optimizer_set = opt_optimizer->count() > 0;
      tr.alpha_set = opt_alpha->count() > 0;
      tr.scale_set = opt_scale->count() > 0;
      return cmd_train(tr);
    }
    if (csw->parsed()) return cmd_sweep(sw);
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace tas::cli
