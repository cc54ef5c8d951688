#include "cl3r/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <ostream>
#include <thread>

#include "cl3r/error.hpp"

namespace cl3r {

std::uint64_t sample_seed(std::uint64_t run_seed, std::int64_t step, int slot) {
  return derive_seed(derive_seed(run_seed, 0x5a3b1e), static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(slot));
}

PreparedSample prepare_sample(const SceneSample& sample, const TrainConfig& config, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  PreparedSample out;
  out.fused = fuse_random_views(sample.views, rng, config.fusion);
  const PointCloud cloud = downsample(out.fused.cloud, config.num_points, rng);
  const FpsResult centers = fps(cloud.points, config.patch.n, rng);
  out.patches = knn_patches(cloud.points, centers.centers, config.patch.k_nn);
  out.mask = sample_mask(config.patch.n, config.patch, rng);
  out.image_view = static_cast<int>(uniform_index(rng, 0, static_cast<std::int64_t>(sample.views.size()) - 1));
  return out;
}

BatchSampler::BatchSampler(std::vector<int> indices, int batch_size, std::uint64_t seed)
    : indices_(std::move(indices)), batch_size_(batch_size), seed_(seed) {
  if (batch_size_ < 1 || indices_.size() < static_cast<std::size_t>(batch_size_)) {
    throw InvalidArgument("batch sampler: " + std::to_string(indices_.size()) + " samples cannot fill a batch of " +
                          std::to_string(batch_size_));
  }
  reshuffle();
}

void BatchSampler::reshuffle() {
  order_ = indices_;
  Rng rng = make_rng(derive_seed(seed_, 0xe90c, epoch_++));
  for (std::size_t i = order_.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, 0, static_cast<std::int64_t>(i) - 1));
    std::swap(order_[i - 1], order_[j]);
  }
  cursor_ = 0;
}

std::vector<int> BatchSampler::next() {
  if (cursor_ + static_cast<std::size_t>(batch_size_) > order_.size()) reshuffle();
  std::vector<int> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                         order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_size_));
  cursor_ += static_cast<std::size_t>(batch_size_);
  return batch;
}

namespace {

std::vector<PreparedSample> prepare_batch(const std::vector<const SceneSample*>& batch, const TrainConfig& config, std::int64_t step) {
  std::vector<PreparedSample> out(batch.size());
  const int workers = std::max(1, std::min<int>(config.threads, static_cast<int>(batch.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) out[i] = prepare_sample(*batch[i], config, sample_seed(config.seed, step, static_cast<int>(i)));
    return out;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = static_cast<std::size_t>(w); i < batch.size(); i += static_cast<std::size_t>(workers)) {
          out[i] = prepare_sample(*batch[i], config, sample_seed(config.seed, step, static_cast<int>(i)));
        }
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

template <typename S>
ad::Tensor<S> rows_tensor(ad::Graph<S>& g, const std::vector<Eigen::VectorXd>& rows) {
  const auto d = rows.front().size();
  ad::Vec<S> values(static_cast<ad::Index>(rows.size()) * d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != d) throw InvalidArgument("teacher embeddings have inconsistent dimensions");
    values.segment(static_cast<ad::Index>(r) * d, d) = rows[r].template cast<S>().array();
  }
  return g.constant({static_cast<ad::Index>(rows.size()), d}, std::move(values));
}

template <typename S>
void batch_alignment(const ad::Tensor<S>& points, const ad::Tensor<S>& images, LossReport& report) {
  const ad::Index b = points.dim(0), d = points.dim(1);
  const auto p = points.value().template cast<double>();
  const auto x = images.value().template cast<double>();
  double positive = 0;
  int hits = 0;
  for (ad::Index i = 0; i < b; ++i) {
    ad::Index best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (ad::Index j = 0; j < b; ++j) {
      const double s = (p.segment(i * d, d) * x.segment(j * d, d)).sum();
      if (j == i) positive += s;
      if (s > best_score) best_score = s, best = j;
    }
    hits += best == i;
  }
  report.mean_positive_similarity = positive / static_cast<double>(b);
  report.retrieval_top1 = static_cast<double>(hits) / static_cast<double>(b);
}

}  // namespace

template <typename S>
LossReport evaluate_step_loss(Model<S>& model, const std::vector<const SceneSample*>& batch, const TrainConfig& config,
                              std::int64_t step, bool backward) {
  if (batch.empty()) throw InvalidArgument("pretrain_step: empty batch");
  if (!config.disable_contrastive && batch.size() < 2) throw InvalidArgument("pretrain_step: contrastive loss needs a batch of at least 2");
  const LossWeights weights = ablated(config.weights, config.disable_mae, config.disable_contrastive);
  const std::vector<PreparedSample> prepared = prepare_batch(batch, config, step);

  ad::Graph<S> g;
  LossReport report;
  std::vector<ad::Tensor<S>> recon_terms;
  std::vector<ad::Tensor<S>> embeddings;
  std::vector<Eigen::VectorXd> image_rows, text_rows;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PreparedSample& ps = prepared[i];
    if (!config.disable_mae) {
      const SplitPatches parts = split(ps.patches, ps.mask);
      if (parts.masked.size() > 0) {
        ad::Tensor<S> visible_features;
        if (parts.visible.size() > 0) {
          const auto emb = model.embed_tokens(g, patches_tensor(g, parts.visible.patches), points_tensor(g, parts.visible.centers));
          visible_features = model.encode(g, emb.tokens, emb.pos);
        } else {
          visible_features = g.constant({0, model.config().embed_dim}, S(0));
        }
        const ad::Tensor<S> predicted =
            model.decode_mae(g, visible_features, ps.mask.visible, ps.mask.masked, points_tensor(g, ps.patches.centers));
        recon_terms.push_back(ad::reshape(chamfer_l2(predicted, patches_tensor(g, parts.masked.patches)), {1}));
      }
    }
    if (!config.disable_contrastive) {
      const SceneSample& s = *batch[i];
      if (s.image_embeddings.cols() != model.config().teacher_dim || s.text_embedding.size() != model.config().teacher_dim) {
        throw InvalidArgument("pretrain_step: scene " + std::to_string(s.scene_id) + " teacher dimension does not match the model");
      }
      embeddings.push_back(model.features(g, ps.patches.patches, ps.patches.centers).embedding);
      image_rows.push_back(s.image_embeddings.row(ps.image_view).transpose());
      text_rows.push_back(s.text_embedding);
    }
  }

  ad::Tensor<S> total = g.scalar(S(0));
  const ad::Tensor<S> temperature = model.temperature(g);
  report.temperature = static_cast<double>(temperature.item());
  if (!recon_terms.empty()) {
    const ad::Tensor<S> recon = ad::mean(recon_terms.size() == 1 ? recon_terms.front() : ad::concat(recon_terms, 0));
    report.reconstruction = static_cast<double>(recon.item());
    total = total + recon * static_cast<S>(weights.alpha);
  }
  if (!embeddings.empty()) {
    const ad::Tensor<S> points = ad::concat(embeddings, 0);
    const ad::Tensor<S> images = rows_tensor(g, image_rows);
    const ad::Tensor<S> texts = rows_tensor(g, text_rows);
    const ad::Tensor<S> pi = contrastive(points, images, temperature, weights.mode, weights.reduction);
    const ad::Tensor<S> pt = contrastive(points, texts, temperature, weights.mode, weights.reduction);
    report.point_image = static_cast<double>(pi.item());
    report.point_text = static_cast<double>(pt.item());
    total = total + pi * static_cast<S>(weights.beta) + pt * static_cast<S>(weights.gamma);
    batch_alignment(points, images, report);
  }
  report.total = static_cast<double>(total.item());
  if (!std::isfinite(report.total)) {
    throw NumericError("step " + std::to_string(step) + ": non-finite loss (L=" + std::to_string(report.total) +
                       ", L^R=" + std::to_string(report.reconstruction) + ", L^C_PI=" + std::to_string(report.point_image) +
                       ", L^C_PT=" + std::to_string(report.point_text) + "); step aborted");
  }
  if (backward) {
    model.params().zero_grad();
    g.backward(total);
  }
  return report;
}

template <typename S>
LossReport pretrain_step(TrainState<S>& state, const std::vector<const SceneSample*>& batch, const TrainConfig& config) {
  const LossReport report = evaluate_step_loss(state.model, batch, config, state.step, true);
  const auto& frozen = config.frozen_prefixes;
  const TrainablePredicate trainable = frozen.empty() ? TrainablePredicate{}
                                                      : TrainablePredicate([&frozen](const std::string& name) { return !has_prefix(name, frozen); });
  const double lr = learning_rate_at(state.step, config.steps, config.learning_rate, config.warmup_fraction);
  optimizer_step(state.model.params(), state.optimizer, config.optimizer, lr, trainable);
  auto& log_tau = state.model.params().at(kLogTemperature).value[0];
  log_tau = std::max(log_tau, static_cast<S>(std::log(config.weights.min_temperature)));
  ++state.step;
  return report;
}

template LossReport pretrain_step<float>(TrainState<float>&, const std::vector<const SceneSample*>&, const TrainConfig&);
template LossReport pretrain_step<double>(TrainState<double>&, const std::vector<const SceneSample*>&, const TrainConfig&);
template LossReport evaluate_step_loss<float>(Model<float>&, const std::vector<const SceneSample*>&, const TrainConfig&, std::int64_t,
                                              bool);
template LossReport evaluate_step_loss<double>(Model<double>&, const std::vector<const SceneSample*>&, const TrainConfig&,
                                               std::int64_t, bool);

nlohmann::json metrics_record(std::int64_t step, const LossReport& r) {
  return {{"step", step},
          {"L", r.total},
          {"L_R", r.reconstruction},
          {"L_C_PI", r.point_image},
          {"L_C_PT", r.point_text},
          {"tau", r.temperature},
          {"retrieval_top1", r.retrieval_top1}};
}

std::vector<int> training_indices(const std::vector<SceneSample>& dataset, int holdout_stride) {
  std::vector<int> out;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (!is_heldout(dataset[i].scene_id, holdout_stride)) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> heldout_indices(const std::vector<SceneSample>& dataset, int holdout_stride) {
  std::vector<int> out;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (is_heldout(dataset[i].scene_id, holdout_stride)) out.push_back(static_cast<int>(i));
  return out;
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) { return Model<float>(ckpt.config.model, ckpt.params); }

namespace {

template <typename S>
Checkpoint snapshot(const TrainState<S>& state, const TrainConfig& config) {
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.step = state.step;
  ckpt.params = state.model.params().template cast<float>();
  ckpt.optimizer.step = state.optimizer.step;
  for (const auto& m : state.optimizer.m) ckpt.optimizer.m.push_back(m.template cast<float>());
  for (const auto& v : state.optimizer.v) ckpt.optimizer.v.push_back(v.template cast<float>());
  return ckpt;
}

template <typename S>
PretrainResult run_pretrain(const std::vector<SceneSample>& dataset, const TrainConfig& config, const PretrainOptions& options) {
  Model<S> model = options.initial ? Model<S>(config.model, options.initial->template cast<S>())
                                   : Model<S>(config.model, derive_seed(config.seed, 0x30de1), config.weights.init_temperature);
  TrainState<S> state(std::move(model));
  BatchSampler sampler(training_indices(dataset, config.holdout_stride), config.batch_size, derive_seed(config.seed, 0xba7c));
  const int interval = config.resolved_checkpoint_interval();
  PretrainResult result;
  result.reports.reserve(static_cast<std::size_t>(config.steps));
  for (int s = 0; s < config.steps; ++s) {
    std::vector<const SceneSample*> batch;
    for (int i : sampler.next()) batch.push_back(&dataset[static_cast<std::size_t>(i)]);
    const LossReport report = pretrain_step(state, batch, config);
    result.reports.push_back(report);
    if (options.metrics) *options.metrics << metrics_record(state.step, report).dump() << '\n';
    if (options.log && options.log_every > 0 && state.step % options.log_every == 0) {
      *options.log << "step " << state.step << " L=" << report.total << " L_R=" << report.reconstruction << " L_C_PI=" << report.point_image
                   << " L_C_PT=" << report.point_text << " tau=" << report.temperature << " top1=" << report.retrieval_top1 << std::endl;
    }
    if (options.checkpoint_path && state.step % interval == 0 && state.step != config.steps) {
      save_checkpoint(*options.checkpoint_path, snapshot(state, config));
    }
  }
  if (options.metrics) options.metrics->flush();
  result.checkpoint = snapshot(state, config);
  if (options.checkpoint_path) save_checkpoint(*options.checkpoint_path, result.checkpoint);
  return result;
}

}  // namespace

PretrainResult pretrain(const std::vector<SceneSample>& dataset, const TrainConfig& config, const PretrainOptions& options) {
  config.validate();
  if (dataset.empty()) throw InvalidArgument("pretrain: empty dataset");
  if (config.fusion.mode == FusionPolicy::Mode::strict_subset && options.log) {
    const bool single = std::any_of(dataset.begin(), dataset.end(), [](const SceneSample& s) { return s.views.size() == 1; });
    if (single) *options.log << "warning: strict-subset fusion on single-view scenes; falling back to k=1" << std::endl;
  }
  return config.precision == Precision::float64 ? run_pretrain<double>(dataset, config, options)
                                                : run_pretrain<float>(dataset, config, options);
}

}  // namespace cl3r
