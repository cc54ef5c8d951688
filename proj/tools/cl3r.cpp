// cl3r: data generation, pre-training, verification, probing and feature export.
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cl3r/checkpoint.hpp"
#include "cl3r/config.hpp"
#include "cl3r/dataset.hpp"
#include "cl3r/error.hpp"
#include "cl3r/evaluation.hpp"
#include "cl3r/training.hpp"
#include "cl3r/verify.hpp"

using nlohmann::json;
using namespace cl3r;

namespace {

enum Exit { kOk = 0, kVerifyFailed = 1, kUsage = 2, kIo = 3 };

struct Globals {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string precision = "float32";
  std::string config_file;
};

void echo(const std::string& command, const json& resolved) {
  std::cout << json{{"command", command}, {"resolved", resolved}}.dump() << std::endl;
}

TrainConfig base_config(const Globals& g, const CLI::App& app) {
  TrainConfig c;
  if (!g.config_file.empty()) {
    std::ifstream in(g.config_file);
    if (!in) throw IoError("cannot open config " + g.config_file);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw InvalidArgument(g.config_file + ": " + e.what());
    }
    c = train_config_from_json(j, c);
  }
  if (app.count("--seed")) c.seed = g.seed;
  if (app.count("--threads")) c.threads = g.threads;
  if (app.count("--precision")) c.precision = precision_from_string(g.precision);
  return c;
}

// Encoder for probe / view-shift / export: a checkpoint, or a fresh init from the config.
struct EncoderSource {
  std::string checkpoint;
  bool random_init = false;
};

Model<float> load_encoder(const EncoderSource& src, TrainConfig& config, std::uint64_t init_seed) {
  if (!src.checkpoint.empty()) {
    const Checkpoint ckpt = load_checkpoint(src.checkpoint);
    config = ckpt.config;
    return model_from_checkpoint(ckpt);
  }
  config.validate();
  return Model<float>(config.model, init_seed, config.weights.init_temperature);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CL3R point-cloud pre-training toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Global seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker cap; 1 is the deterministic single-worker mode")->check(CLI::PositiveNumber);
  app.add_option("--precision", g.precision, "float32 or float64")->check(CLI::IsMember({"float32", "float64", "32", "64"}));
  app.add_option("--config", g.config_file, "TrainConfig JSON file (defaults < file < flags)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-view dataset");
  std::string gen_out;
  int scenes = 0, views = 4, teacher_dim = 32, resolution = 96;
  std::uint64_t teacher_seed = 0;
  bool force = false;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--scenes", scenes, "Number of scenes")->required()->check(CLI::PositiveNumber);
  gen->add_option("--views", views, "Views per scene")->check(CLI::PositiveNumber);
  gen->add_option("--teacher-dim", teacher_dim, "Teacher embedding dimension")->check(CLI::Range(8, 4096));
  gen->add_option("--teacher-seed", teacher_seed, "Synthetic teacher seed");
  gen->add_option("--resolution", resolution, "Depth raster width and height")->check(CLI::PositiveNumber);
  gen->add_flag("--force", force, "Overwrite a non-empty output directory");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Pre-train the point-cloud encoder");
  std::string data_dir, ckpt_out, metrics_file;
  std::optional<int> steps, batch, num_points, log_every;
  std::optional<double> lr;
  std::optional<std::string> fusion_mode, sim_mode;
  bool no_contrastive = false, no_mae = false;
  pre->add_option("--data", data_dir, "Dataset directory")->required();
  pre->add_option("--out", ckpt_out, "Checkpoint file")->required();
  pre->add_option("--metrics", metrics_file, "Metrics JSONL file ('-' for stdout)");
  pre->add_option("--steps", steps, "Optimizer steps");
  pre->add_option("--batch-size", batch, "Scenes per batch");
  pre->add_option("--lr", lr, "Base learning rate");
  pre->add_option("--num-points", num_points, "Points per fused cloud");
  pre->add_option("--fusion", fusion_mode, "uniform, strict_subset, fixed or all");
  pre->add_option("--similarity", sim_mode, "paper or standard");
  pre->add_option("--log-every", log_every, "Progress line interval on stderr");
  pre->add_flag("--no-contrastive", no_contrastive, "Disable the contrastive terms");
  pre->add_flag("--no-mae", no_mae, "Disable the reconstruction term");

  // check
  auto* check = app.add_subcommand("check", "Run oracle and property suites at 64-bit");
  std::string suite = "all";
  check->add_option("--suite", suite, "grads, chamfer, fps, fusion or all")->check(CLI::IsMember({"grads", "chamfer", "fps", "fusion", "all"}));

  // probe
  auto* prb = app.add_subcommand("probe", "Frozen-feature pose-regression probe");
  EncoderSource probe_src;
  ProbeConfig probe_cfg;
  prb->add_option("--data", data_dir, "Dataset directory")->required();
  auto* prb_ckpt = prb->add_option("--checkpoint", probe_src.checkpoint, "Checkpoint file");
  auto* prb_rand = prb->add_flag("--random-init", probe_src.random_init, "Use a freshly initialized frozen encoder");
  prb_ckpt->excludes(prb_rand);
  prb->add_option("--probe-steps", probe_cfg.steps, "Head training steps")->check(CLI::PositiveNumber);
  prb->add_option("--hidden", probe_cfg.hidden, "Head hidden width")->check(CLI::PositiveNumber);
  prb->add_option("--probe-lr", probe_cfg.learning_rate, "Head learning rate");
  prb->add_flag("--zero-state", probe_cfg.zero_state, "Zero the robot-state channel");

  // view-shift
  auto* vs = app.add_subcommand("view-shift", "Disjoint-view scene retrieval");
  EncoderSource vs_src;
  ViewShiftConfig vs_cfg;
  vs->add_option("--data", data_dir, "Dataset directory")->required();
  auto* vs_ckpt = vs->add_option("--checkpoint", vs_src.checkpoint, "Checkpoint file");
  auto* vs_rand = vs->add_flag("--random-init", vs_src.random_init, "Use a freshly initialized encoder");
  vs_ckpt->excludes(vs_rand);
  vs->add_option("--gallery", vs_cfg.gallery_size, "Gallery size")->check(CLI::Range(2, 1 << 20));
  vs->add_flag("--identical-subsets", vs_cfg.identical_subsets, "Use the same view subset for query and gallery");

  // export-features
  auto* ex = app.add_subcommand("export-features", "Write per-scene embeddings and patch features");
  std::string ex_ckpt, ex_out;
  ex->add_option("--data", data_dir, "Dataset directory")->required();
  ex->add_option("--checkpoint", ex_ckpt, "Checkpoint file")->required();
  ex->add_option("--out", ex_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      GeneratorConfig gc;
      gc.views = views;
      gc.width = gc.height = resolution;
      echo("gen-data", {{"out", gen_out}, {"scenes", scenes}, {"views", views}, {"teacher_dim", teacher_dim}, {"teacher_seed", teacher_seed},
                        {"resolution", resolution}, {"seed", g.seed}, {"threads", g.threads}, {"force", force}});
      const auto samples = generate_dataset(scenes, g.seed, gc, teacher_dim, teacher_seed, g.threads);
      write_dataset(samples, gen_out, force);
      const DatasetManifest m = read_manifest(gen_out);
      std::cout << json{{"format_version", m.format_version}, {"scene_count", m.scene_count}, {"views_per_scene", m.views_per_scene},
                        {"teacher_dim", m.teacher_dim}, {"depth_height", m.depth_height}, {"depth_width", m.depth_width}}
                       .dump()
                << std::endl;
      return kOk;
    }
    if (*check) {
      echo("check", {{"suite", suite}, {"seed", g.seed}});
      const auto report = verify::run_suite(suite, g.seed);
      verify::print_report(report, std::cout);
      return report.passed() ? kOk : kVerifyFailed;
    }
    if (*pre) {
      TrainConfig c = base_config(g, app);
      if (steps) c.steps = *steps;
      if (batch) c.batch_size = *batch;
      if (lr) c.learning_rate = *lr;
      if (num_points) c.num_points = *num_points;
      if (fusion_mode) c.fusion.mode = fusion_mode_from_string(*fusion_mode);
      if (sim_mode) c.weights.mode = similarity_mode_from_string(*sim_mode);
      if (no_contrastive) c.disable_contrastive = true;
      if (no_mae) c.disable_mae = true;
      c.validate();
      echo("pretrain", {{"data", data_dir}, {"out", ckpt_out}, {"metrics", metrics_file}, {"config", to_json(c)}});
      const auto dataset = read_dataset(data_dir);
      PretrainOptions opts;
      opts.checkpoint_path = ckpt_out;
      opts.log = &std::cerr;
      opts.log_every = log_every.value_or(0);
      std::ofstream metrics;
      if (metrics_file == "-") {
        opts.metrics = &std::cout;
      } else if (!metrics_file.empty()) {
        metrics.open(metrics_file, std::ios::trunc);
        if (!metrics) throw IoError("cannot open metrics file " + metrics_file);
        opts.metrics = &metrics;
      }
      const auto result = pretrain(dataset, c, opts);
      const auto& last = result.reports.back();
      std::cout << json{{"checkpoint", ckpt_out}, {"final", metrics_record(c.steps, last)}}.dump() << std::endl;
      return kOk;
    }
    if (*prb || *vs || *ex) {
      const EncoderSource src = *prb ? probe_src : *vs ? vs_src : EncoderSource{ex_ckpt, false};
      if (src.checkpoint.empty() && !src.random_init) throw InvalidArgument("either --checkpoint or --random-init is required");
      TrainConfig c = base_config(g, app);
      Model<float> model = load_encoder(src, c, derive_seed(g.seed, 0x7a4d));
      const auto dataset = read_dataset(data_dir);
      if (*prb) {
        probe_cfg.seed = g.seed;
        probe_cfg.holdout_stride = c.holdout_stride;
        echo("probe", {{"data", data_dir}, {"checkpoint", src.checkpoint}, {"random_init", src.random_init}, {"config", to_json(c)},
                       {"probe", {{"hidden", probe_cfg.hidden}, {"steps", probe_cfg.steps}, {"learning_rate", probe_cfg.learning_rate},
                                  {"weight_decay", probe_cfg.weight_decay}, {"seed", probe_cfg.seed}, {"zero_state", probe_cfg.zero_state}}}});
        const ProbeReport r = probe(model, dataset, c, probe_cfg);
        std::cout << json{{"train_mse", r.train_mse}, {"heldout_mse", r.heldout_mse}, {"heldout_yaw_error", r.heldout_yaw_error},
                          {"target_variance", r.target_variance}, {"train_count", r.train_count}, {"heldout_count", r.heldout_count}}
                         .dump()
                  << std::endl;
      } else if (*vs) {
        vs_cfg.seed = g.seed;
        vs_cfg.holdout_stride = c.holdout_stride;
        echo("view-shift", {{"data", data_dir}, {"checkpoint", src.checkpoint}, {"random_init", src.random_init}, {"config", to_json(c)},
                            {"gallery", vs_cfg.gallery_size}, {"identical_subsets", vs_cfg.identical_subsets}, {"seed", vs_cfg.seed}});
        const ViewShiftReport r = view_shift_eval(model, dataset, c, vs_cfg);
        std::cout << json{{"top1", r.top1}, {"scene_ids", r.scene_ids}}.dump() << std::endl;
      } else {
        echo("export-features", {{"data", data_dir}, {"checkpoint", ex_ckpt}, {"out", ex_out}, {"seed", g.seed}, {"config", to_json(c)}});
        export_features(model, dataset, c, ex_out, g.seed);
        std::cout << json{{"scenes", dataset.size()}, {"out", ex_out}}.dump() << std::endl;
      }
      return kOk;
    }
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << std::endl;
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kVerifyFailed;
  }
  return kUsage;
}
