// Acceptance runner: one PASS/FAIL line per criterion, exit status 0 iff every criterion passes.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cl3r/autodiff.hpp"
#include "cl3r/checkpoint.hpp"
#include "cl3r/datagen.hpp"
#include "cl3r/evaluation.hpp"
#include "cl3r/losses.hpp"
#include "cl3r/training.hpp"
#include "cl3r/verify.hpp"

using namespace cl3r;

namespace {

// Pinned thresholds.
constexpr double kChamferTol = 1e-9;
constexpr double kGradTol = 1e-4;
constexpr double kHandValueTol = 1e-9;
constexpr double kRigidTol = 1e-9;
constexpr double kSurfaceTol = 1e-6;
constexpr double kLossRatio = 0.5;
constexpr double kReconRatio = 0.7;
constexpr double kRetrievalMin = 0.80;
constexpr double kProbeRatio = 0.7;
constexpr double kViewShiftPretrainedMin = 0.60;
constexpr double kViewShiftUntrainedMax = 0.20;

constexpr int kScenes = 256;
constexpr int kSteps = 2000;
constexpr int kRetrievalBatch = 16;
constexpr int kViewShiftSeeds = 10;
constexpr int kViewShiftGallery = 16;
constexpr std::uint64_t kEvalSeed = 1234;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

struct Ledger {
  int failed = 0;
  void report(const std::string& name, bool ok, const std::string& detail) {
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << ": " << detail << std::endl;
    failed += !ok;
  }
};

TrainConfig acceptance_config() {
  TrainConfig c;
  c.steps = kSteps;
  c.batch_size = 8;
  c.seed = 0;
  c.model.embed_dim = 64;
  c.model.encoder_depth = 3;
  c.model.decoder_depth = 2;
  c.model.n = c.patch.n = 32;
  c.model.k_nn = c.patch.k_nn = 16;
  c.threads = 1;
  return c;
}

struct Run {
  PretrainResult result;
  std::string metrics;
  double seconds = 0;
};

Run run_pretrain(const std::vector<SceneSample>& data, const TrainConfig& config, std::optional<ad::ParameterStore<float>> initial = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream metrics;
  PretrainOptions opts;
  opts.metrics = &metrics;
  opts.initial = std::move(initial);
  Run run;
  run.result = pretrain(data, config, opts);
  run.metrics = metrics.str();
  run.seconds = seconds_since(t0);
  return run;
}

double mean_total(const std::vector<LossReport>& r, std::size_t begin, std::size_t end) {
  double s = 0;
  for (std::size_t i = begin; i < end; ++i) s += r[i].total;
  return s / static_cast<double>(end - begin);
}

struct Capabilities {
  double recon = 0;
  double retrieval = 0;
};

Capabilities measure(const Checkpoint& ckpt, const std::vector<SceneSample>& data, const std::vector<int>& heldout) {
  Model<float> model = model_from_checkpoint(ckpt);
  return {evaluate_reconstruction(model, data, heldout, ckpt.config, kEvalSeed, 4),
          evaluate_retrieval(model, data, heldout, ckpt.config, kRetrievalBatch, kEvalSeed, 4)};
}

}  // namespace

int main() {
  Ledger ledger;

  {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = verify::check_chamfer(0, 100);
    const double t = seconds_since(t0);
    ledger.report("oracle equivalence, Chamfer", r.passed && t < 5.0, r.detail + ", " + num(t) + " s (limit 5 s, tol " + num(kChamferTol) + ")");
  }
  {
    const auto t0 = std::chrono::steady_clock::now();
    const auto f = verify::check_fps(0, 1000);
    const auto k = verify::check_knn(0, 1000);
    const double t = seconds_since(t0);
    ledger.report("oracle equivalence, FPS and KNN", f.passed && k.passed && t < 30.0,
                  "fps " + f.detail + "; knn " + k.detail + ", " + num(t) + " s (limit 30 s)");
  }
  {
    const auto t0 = std::chrono::steady_clock::now();
    std::string worst_name;
    bool ok = true;
    for (const auto& c : verify::check_op_gradients(0)) {
      ok = ok && c.passed;
      if (!c.passed) worst_name += " " + c.name;
    }
    const auto e2e = verify::check_model_gradient(0);
    ok = ok && e2e.passed;
    const double t = seconds_since(t0);
    ledger.report("gradient soundness", ok && t < 120.0,
                  "all ops < " + num(kGradTol) + (worst_name.empty() ? "" : " except" + worst_name) + "; " + e2e.detail + ", " + num(t) +
                      " s (limit 120 s)");
  }
  {
    ad::Graph<double> g;
    const auto u = g.constant({2, 2}, ad::Vec<double>((ad::Vec<double>(4) << 1, 0, 0, 1).finished()));
    const auto tau = g.scalar(1.0);
    const auto paper = similarity_scores(u, u, tau, SimilarityMode::paper);
    const auto standard = similarity_scores(u, u, tau, SimilarityMode::standard);
    const auto same = g.constant({3, 2}, ad::Vec<double>((ad::Vec<double>(6) << 1, 0, 1, 0, 1, 0).finished()));
    const auto degenerate = similarity_scores(same, same, tau, SimilarityMode::paper);
    double err = 0;
    for (int i = 0; i < 2; ++i) {
      err = std::max(err, std::abs(paper.value()[i] - 1.0));
      err = std::max(err, std::abs(standard.value()[i] + std::log1p(std::exp(-1.0))));
    }
    for (int i = 0; i < 3; ++i) err = std::max(err, std::abs(degenerate.value()[i] + std::log(2.0)));
    ledger.report("contrastive hand values", err <= kHandValueTol, "max |err| " + num(err) + " (tol " + num(kHandValueTol) + ")");
  }
  {
    const auto t0 = std::chrono::steady_clock::now();
    const auto c = verify::check_fusion_commutativity(0, 100);
    const auto r = verify::check_rigid_round_trip(0, 1000);
    const auto s = verify::check_surface_residual(0, 20);
    ledger.report("fusion geometry", c.passed && r.passed && s.passed,
                  c.detail + "; " + r.detail + " (tol " + num(kRigidTol) + "); " + s.detail + " (tol " + num(kSurfaceTol) + "), " +
                      num(seconds_since(t0)) + " s");
  }

  // Desk-scale pipeline.
  const auto tg = std::chrono::steady_clock::now();
  const GeneratorConfig gen;
  const std::vector<SceneSample> data = generate_dataset(kScenes, 0, gen, 32, 0, 1);
  std::cout << "generated " << data.size() << " scenes in " << num(seconds_since(tg)) << " s" << std::endl;
  const TrainConfig config = acceptance_config();
  const std::vector<int> heldout = heldout_indices(data, config.holdout_stride);

  const Run main_run = run_pretrain(data, config);
  const auto& reports = main_run.result.reports;
  const double first = mean_total(reports, 0, 50);
  const double last = mean_total(reports, reports.size() - 50, reports.size());
  const bool trend_a = last < kLossRatio * first;

  // Control arm for (b): frozen random-init encoder, decoder trained from scratch on reconstruction only.
  TrainConfig control = config;
  control.disable_contrastive = true;
  control.frozen_prefixes = kEncoderPrefixes;
  const Model<float> random_model(config.model, derive_seed(config.seed, 0xc0de), config.weights.init_temperature);
  const Run control_run = run_pretrain(data, control, random_model.params());
  const Capabilities pretrained = measure(main_run.result.checkpoint, data, heldout);
  const Capabilities random_arm = measure(control_run.result.checkpoint, data, heldout);
  const bool trend_b = pretrained.recon <= kReconRatio * random_arm.recon;
  const bool trend_c = pretrained.retrieval >= kRetrievalMin;
  ledger.report("pre-training trend", trend_a && trend_b && trend_c && main_run.seconds < 1800,
                "(a) mean L last 50 " + num(last) + " vs first 50 " + num(first) + (trend_a ? " ok" : " NOT below ratio") +
                    "; (b) held-out masked Chamfer " + num(pretrained.recon) + " vs control " + num(random_arm.recon) +
                    " (ratio " + num(pretrained.recon / random_arm.recon) + ", limit " + num(kReconRatio) + ")" +
                    "; (c) held-out top-1 " + num(pretrained.retrieval) + " (min " + num(kRetrievalMin) + "); pretrain " +
                    num(main_run.seconds) + " s");

  {
    const auto t0 = std::chrono::steady_clock::now();
    Model<float> trained = model_from_checkpoint(main_run.result.checkpoint);
    bool ok = true;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      ProbeConfig pc;
      pc.seed = seed;
      Model<float> random_encoder(config.model, derive_seed(seed, 0x7a4d), config.weights.init_temperature);
      const ProbeReport a = probe(trained, data, config, pc);
      const ProbeReport b = probe(random_encoder, data, config, pc);
      ok = ok && a.heldout_mse <= kProbeRatio * b.heldout_mse;
      detail += "seed " + std::to_string(seed) + ": " + num(a.heldout_mse) + " vs " + num(b.heldout_mse) + " m^2; ";
    }
    const double t = seconds_since(t0);
    ledger.report("probe trend", ok && t < 600, detail + "limit ratio " + num(kProbeRatio) + ", " + num(t) + " s");
  }
  {
    const auto t0 = std::chrono::steady_clock::now();
    Model<float> trained = model_from_checkpoint(main_run.result.checkpoint);
    double pre = 0, untrained = 0;
    for (std::uint64_t seed = 0; seed < kViewShiftSeeds; ++seed) {
      ViewShiftConfig vc;
      vc.seed = seed;
      vc.gallery_size = kViewShiftGallery;
      Model<float> fresh(config.model, derive_seed(seed, 0x7a4d), config.weights.init_temperature);
      pre += view_shift_eval(trained, data, config, vc).top1;
      untrained += view_shift_eval(fresh, data, config, vc).top1;
    }
    pre /= kViewShiftSeeds;
    untrained /= kViewShiftSeeds;
    const double t = seconds_since(t0);
    ledger.report("view-shift trend", pre >= kViewShiftPretrainedMin && untrained < kViewShiftUntrainedMax && t < 300,
                  "pretrained " + num(pre) + " (min " + num(kViewShiftPretrainedMin) + "), untrained " + num(untrained) + " (max " +
                      num(kViewShiftUntrainedMax) + "), " + num(t) + " s");
  }
  {
    TrainConfig no_con = config;
    no_con.disable_contrastive = true;
    TrainConfig no_mae = config;
    no_mae.disable_mae = true;
    const Capabilities c_run = measure(run_pretrain(data, no_con).result.checkpoint, data, heldout);
    const Capabilities m_run = measure(run_pretrain(data, no_mae).result.checkpoint, data, heldout);
    const bool con_ok = c_run.retrieval < kRetrievalMin && c_run.recon <= kReconRatio * random_arm.recon;
    const bool mae_ok = m_run.recon > kReconRatio * random_arm.recon && m_run.retrieval >= kRetrievalMin;
    ledger.report("ablation monotonicity", con_ok && mae_ok,
                  "w/o contrastive: top-1 " + num(c_run.retrieval) + ", Chamfer ratio " + num(c_run.recon / random_arm.recon) +
                      "; w/o reconstruction: top-1 " + num(m_run.retrieval) + ", Chamfer ratio " + num(m_run.recon / random_arm.recon));
  }
  {
    const Run rerun = run_pretrain(data, config);
    const bool metrics_equal = rerun.metrics == main_run.metrics && !rerun.metrics.empty();
    const bool ckpt_equal = serialize_checkpoint(rerun.result.checkpoint) == serialize_checkpoint(main_run.result.checkpoint);
    Model<float> a = model_from_checkpoint(main_run.result.checkpoint);
    Model<float> b = model_from_checkpoint(rerun.result.checkpoint);
    ProbeConfig pc;
    const ProbeReport pa = probe(a, data, config, pc), pb = probe(b, data, config, pc);
    ViewShiftConfig vc;
    const double va = view_shift_eval(a, data, config, vc).top1, vb = view_shift_eval(b, data, config, vc).top1;
    const bool downstream_equal = pa.heldout_mse == pb.heldout_mse && pa.train_mse == pb.train_mse && va == vb;
    ledger.report("determinism", metrics_equal && ckpt_equal && downstream_equal,
                  std::string("metrics streams ") + (metrics_equal ? "identical" : "DIFFER") + ", checkpoints " +
                      (ckpt_equal ? "identical" : "DIFFER") + ", probe/view-shift " + (downstream_equal ? "identical" : "DIFFER"));
  }

  std::cout << (ledger.failed == 0 ? "acceptance: all criteria passed" : "acceptance: " + std::to_string(ledger.failed) + " criteria failed")
            << std::endl;
  return ledger.failed == 0 ? 0 : 1;
}
