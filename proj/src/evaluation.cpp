#include "cl3r/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "cl3r/error.hpp"
#include "cl3r/losses.hpp"
#include "cl3r/optimizer.hpp"
#include "cl3r/training.hpp"

namespace cl3r {

namespace {

Eigen::VectorXd to_vector(const ad::Tensor<float>& t) { return t.value().cast<double>().matrix(); }

std::uint64_t view_bits(std::span<const int> views) {
  std::uint64_t bits = 0;
  for (int v : views) bits |= std::uint64_t{1} << (v & 63);
  return bits;
}

std::vector<int> sorted_by_scene(const std::vector<SceneSample>& dataset, std::vector<int> indices) {
  std::sort(indices.begin(), indices.end(), [&](int a, int b) {
    return dataset[static_cast<std::size_t>(a)].scene_id < dataset[static_cast<std::size_t>(b)].scene_id;
  });
  return indices;
}

PatchSet scene_patches(const SceneSample& sample, std::span<const int> views, const TrainConfig& config, Rng& rng) {
  const FusedCloud fused = fuse_views(sample.views, views, config.fusion.workspace);
  const PointCloud cloud = downsample(fused.cloud, config.num_points, rng);
  const FpsResult centers = fps(cloud.points, config.patch.n, rng);
  return knn_patches(cloud.points, centers.centers, config.patch.k_nn);
}

std::vector<int> all_views(const SceneSample& sample) {
  std::vector<int> v(sample.views.size());
  std::iota(v.begin(), v.end(), 0);
  return v;
}

double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2 * M_PI);
  if (a < 0) a += 2 * M_PI;
  return a - M_PI;
}

}  // namespace

EncodedScene encode_scene(Model<float>& model, const SceneSample& sample, std::span<const int> views, const TrainConfig& config,
                          std::uint64_t seed) {
  if (views.empty()) throw InvalidArgument("encode_scene: no views selected");
  Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(sample.scene_id), view_bits(views)));
  const PatchSet patches = scene_patches(sample, views, config, rng);
  ad::Graph<float> g(false);
  const auto f = model.features(g, patches.patches, patches.centers);
  EncodedScene out;
  out.pooled = to_vector(f.pooled);
  out.embedding = to_vector(f.embedding);
  const auto e = static_cast<Eigen::Index>(model.config().embed_dim);
  out.per_patch = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                      f.per_patch.value().data(), f.per_patch.dim(0), e)
                      .cast<double>();
  out.views.assign(views.begin(), views.end());
  return out;
}

EncodedScene encode_scene(Model<float>& model, const SceneSample& sample, const TrainConfig& config, std::uint64_t seed) {
  const std::vector<int> views = all_views(sample);
  return encode_scene(model, sample, views, config, seed);
}

double evaluate_reconstruction(Model<float>& model, const std::vector<SceneSample>& dataset, const std::vector<int>& indices,
                               const TrainConfig& config, std::uint64_t seed, int repeats) {
  if (indices.empty() || repeats < 1) throw InvalidArgument("evaluate_reconstruction: nothing to evaluate");
  double total = 0;
  int count = 0;
  for (int idx : indices) {
    const SceneSample& sample = dataset[static_cast<std::size_t>(idx)];
    const std::vector<int> views = all_views(sample);
    for (int r = 0; r < repeats; ++r) {
      Rng rng = make_rng(derive_seed(derive_seed(seed, 0x7ec0), static_cast<std::uint64_t>(sample.scene_id), static_cast<std::uint64_t>(r)));
      const PatchSet patches = scene_patches(sample, views, config, rng);
      const MaskSpec mask = sample_mask(config.patch.n, config.patch, rng);
      const SplitPatches parts = split(patches, mask);
      if (parts.masked.size() == 0) continue;
      ad::Graph<float> g(false);
      const auto emb = model.embed_tokens(g, patches_tensor(g, parts.visible.patches), points_tensor(g, parts.visible.centers));
      const auto visible = model.encode(g, emb.tokens, emb.pos);
      const auto predicted = model.decode_mae(g, visible, mask.visible, mask.masked, points_tensor(g, patches.centers));
      total += static_cast<double>(chamfer_l2(predicted, patches_tensor(g, parts.masked.patches)).item());
      ++count;
    }
  }
  return total / std::max(1, count);
}

double evaluate_retrieval(Model<float>& model, const std::vector<SceneSample>& dataset, const std::vector<int>& indices,
                          const TrainConfig& config, int batch_size, std::uint64_t seed, int repeats) {
  if (batch_size < 2 || static_cast<int>(indices.size()) < batch_size) {
    throw InvalidArgument("evaluate_retrieval: need at least one full batch of " + std::to_string(batch_size));
  }
  const std::vector<int> order = sorted_by_scene(dataset, indices);
  int hits = 0, queries = 0;
  for (int r = 0; r < repeats; ++r) {
    const std::uint64_t rseed = derive_seed(seed, 0x4e7, static_cast<std::uint64_t>(r));
    for (std::size_t start = 0; start + static_cast<std::size_t>(batch_size) <= order.size(); start += static_cast<std::size_t>(batch_size)) {
      std::vector<Eigen::VectorXd> points, images;
      for (int b = 0; b < batch_size; ++b) {
        const SceneSample& s = dataset[static_cast<std::size_t>(order[start + static_cast<std::size_t>(b)])];
        points.push_back(encode_scene(model, s, config, rseed).embedding);
        Rng rng = make_rng(derive_seed(rseed, static_cast<std::uint64_t>(s.scene_id), 0x1a9e));
        const auto view = uniform_index(rng, 0, static_cast<std::int64_t>(s.views.size()) - 1);
        images.push_back(s.image_embeddings.row(view).transpose());
      }
      for (int i = 0; i < batch_size; ++i) {
        int best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < batch_size; ++j) {
          const double sc = points[static_cast<std::size_t>(i)].dot(images[static_cast<std::size_t>(j)]);
          if (sc > best_score) best_score = sc, best = j;
        }
        hits += best == i;
        ++queries;
      }
    }
  }
  return static_cast<double>(hits) / queries;
}

ProbeReport probe(Model<float>& encoder, const std::vector<SceneSample>& dataset, const TrainConfig& data_config,
                  const ProbeConfig& config) {
  if (config.hidden < 1 || config.steps < 1) throw InvalidArgument("probe: hidden and steps must be positive");
  const std::vector<int> train = sorted_by_scene(dataset, training_indices(dataset, config.holdout_stride));
  const std::vector<int> test = sorted_by_scene(dataset, heldout_indices(dataset, config.holdout_stride));
  if (train.size() < 2 || test.empty()) throw InvalidArgument("probe: need training and held-out scenes");

  const std::uint64_t feature_seed = derive_seed(config.seed, 0xfea7);
  const auto features = [&](const std::vector<int>& idx) {
    std::vector<Eigen::VectorXd> rows;
    for (int i : idx) {
      const SceneSample& s = dataset[static_cast<std::size_t>(i)];
      const Eigen::VectorXd pooled = encode_scene(encoder, s, data_config, feature_seed).pooled;
      Eigen::VectorXd state = s.probe().robot_state;
      if (config.zero_state) state.setZero();
      Eigen::VectorXd row(pooled.size() + state.size());
      row << pooled, state;
      rows.push_back(row);
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
    return m;
  };
  const auto targets = [&](const std::vector<int>& idx) {
    Eigen::MatrixXd t(static_cast<Eigen::Index>(idx.size()), 4);
    for (std::size_t r = 0; r < idx.size(); ++r) t.row(static_cast<Eigen::Index>(r)) = dataset[static_cast<std::size_t>(idx[r])].probe().pose.transpose();
    return t;
  };
  Eigen::MatrixXd x_train = features(train), x_test = features(test);
  const Eigen::MatrixXd t_train = targets(train), t_test = targets(test);

  const Eigen::RowVectorXd mu = x_train.colwise().mean();
  Eigen::RowVectorXd sd = ((x_train.rowwise() - mu).array().square().colwise().mean()).sqrt();
  for (Eigen::Index c = 0; c < sd.size(); ++c)
    if (!(sd[c] > 1e-9)) sd[c] = 1;
  x_train = (x_train.rowwise() - mu).array().rowwise() / sd.array();
  x_test = (x_test.rowwise() - mu).array().rowwise() / sd.array();

  const Eigen::RowVector3d pos_mu = t_train.leftCols(3).colwise().mean();
  const Eigen::RowVector3d pos_sd = ((t_train.leftCols(3).rowwise() - pos_mu).array().square().colwise().mean()).sqrt().max(1e-9);
  const auto encode_targets = [&](const Eigen::MatrixXd& t) {
    Eigen::MatrixXd y(t.rows(), 5);
    y.leftCols(3) = (t.leftCols(3).rowwise() - pos_mu).array().rowwise() / pos_sd.array();
    y.col(3) = t.col(3).array().sin();
    y.col(4) = t.col(3).array().cos();
    return y;
  };
  const Eigen::MatrixXd y_train = encode_targets(t_train);

  const auto in = static_cast<int>(x_train.cols());
  ad::ParameterStore<double> head;
  Rng rng = make_rng(derive_seed(config.seed, 0x9e4d));
  const auto init_linear = [&](const std::string& name, int fan_in, int fan_out) {
    auto& w = head.add(name + ".w", {fan_in, fan_out}, true);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (ad::Index i = 0; i < w.size(); ++i) w.value[i] = uniform(rng, -limit, limit);
    head.add(name + ".b", {fan_out}, false);
  };
  init_linear("fc1", in, config.hidden);
  init_linear("fc2", config.hidden, 5);
  const auto to_vec = [](const Eigen::MatrixXd& m) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> r = m;
    return ad::Vec<double>(Eigen::Map<const ad::Vec<double>>(r.data(), r.size()));
  };
  const auto forward = [&](ad::Graph<double>& g, const Eigen::MatrixXd& x) {
    const auto xt = g.constant({x.rows(), x.cols()}, to_vec(x));
    const auto h = ad::gelu(ad::matmul(xt, g.param(head.at("fc1.w"))) + g.param(head.at("fc1.b")));
    return ad::matmul(h, g.param(head.at("fc2.w"))) + g.param(head.at("fc2.b"));
  };
  AdamState<double> state = AdamState<double>::zeros(head);
  const AdamConfig hyper{0.9, 0.999, 1e-8, config.weight_decay};
  for (int step = 0; step < config.steps; ++step) {
    ad::Graph<double> g;
    const auto pred = forward(g, x_train);
    const auto diff = pred - g.constant({y_train.rows(), 5}, to_vec(y_train));
    const auto loss = ad::mean(diff * diff);
    head.zero_grad();
    g.backward(loss);
    optimizer_step(head, state, hyper, config.learning_rate);
  }

  const auto evaluate = [&](const Eigen::MatrixXd& x, const Eigen::MatrixXd& t, double& mse, double* yaw_error) {
    ad::Graph<double> g(false);
    const auto pred = forward(g, x);
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 5, Eigen::RowMajor>> p(pred.value().data(), x.rows(), 5);
    const Eigen::MatrixXd pos = (p.leftCols(3).array().rowwise() * pos_sd.array()).rowwise() + pos_mu.array();
    mse = (pos - t.leftCols(3)).rowwise().squaredNorm().mean();
    if (yaw_error) {
      double err = 0;
      for (Eigen::Index r = 0; r < x.rows(); ++r) err += std::abs(wrap_angle(std::atan2(p(r, 3), p(r, 4)) - t(r, 3)));
      *yaw_error = err / static_cast<double>(x.rows());
    }
  };
  ProbeReport report;
  evaluate(x_train, t_train, report.train_mse, nullptr);
  evaluate(x_test, t_test, report.heldout_mse, &report.heldout_yaw_error);
  report.target_variance = (t_test.leftCols(3).rowwise() - pos_mu).rowwise().squaredNorm().mean();
  report.train_count = static_cast<int>(train.size());
  report.heldout_count = static_cast<int>(test.size());
  return report;
}

ViewShiftReport view_shift_eval(Model<float>& model, const std::vector<SceneSample>& dataset, const TrainConfig& data_config,
                                const ViewShiftConfig& config) {
  std::vector<int> pool = config.holdout_stride > 0 ? heldout_indices(dataset, config.holdout_stride) : training_indices(dataset, 0);
  pool = sorted_by_scene(dataset, pool);
  if (config.gallery_size < 2 || static_cast<int>(pool.size()) < config.gallery_size) {
    throw InvalidArgument("view_shift_eval: gallery of " + std::to_string(config.gallery_size) + " needs that many scenes, have " +
                          std::to_string(pool.size()));
  }
  for (int i : pool) {
    if (dataset[static_cast<std::size_t>(i)].views.size() < 2) throw InvalidArgument("view_shift_eval: every scene needs at least 2 views");
  }
  Rng rng = make_rng(derive_seed(config.seed, 0x5417));
  for (std::size_t i = 0; i < static_cast<std::size_t>(config.gallery_size); ++i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, static_cast<std::int64_t>(i), static_cast<std::int64_t>(pool.size()) - 1));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(static_cast<std::size_t>(config.gallery_size));
  pool = sorted_by_scene(dataset, pool);

  ViewShiftReport report;
  std::vector<Eigen::VectorXd> query, gallery;
  const std::uint64_t embed_seed = derive_seed(config.seed, 0xe3b);
  for (int idx : pool) {
    const SceneSample& s = dataset[static_cast<std::size_t>(idx)];
    report.scene_ids.push_back(s.scene_id);
    std::vector<int> views(s.views.size());
    std::iota(views.begin(), views.end(), 0);
    Rng split_rng = make_rng(derive_seed(config.seed, static_cast<std::uint64_t>(s.scene_id), 0x5b));
    for (std::size_t i = views.size(); i > 1; --i) {
      std::swap(views[i - 1], views[static_cast<std::size_t>(uniform_index(split_rng, 0, static_cast<std::int64_t>(i) - 1))]);
    }
    const std::size_t half = views.size() / 2;
    std::vector<int> a(views.begin(), views.begin() + static_cast<std::ptrdiff_t>(half));
    std::vector<int> b(views.begin() + static_cast<std::ptrdiff_t>(half), views.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (config.identical_subsets) b = a;
    query.push_back(encode_scene(model, s, a, data_config, embed_seed).embedding);
    gallery.push_back(encode_scene(model, s, b, data_config, embed_seed).embedding);
  }
  int hits = 0;
  for (std::size_t i = 0; i < query.size(); ++i) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      const double sc = query[i].dot(gallery[j]);
      if (sc > best_score) best_score = sc, best = j;
    }
    hits += best == i;
  }
  report.top1 = static_cast<double>(hits) / static_cast<double>(query.size());
  return report;
}

void export_features(Model<float>& model, const std::vector<SceneSample>& dataset, const TrainConfig& config,
                     const std::filesystem::path& out_dir, std::uint64_t seed) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  const auto write_floats = [](const std::filesystem::path& file, const Eigen::MatrixXd& m) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const float v = static_cast<float>(m(r, c));
        out.write(reinterpret_cast<const char*>(&v), sizeof(float));
      }
    if (!out) throw IoError("cannot write " + file.string());
  };
  for (const SceneSample& s : dataset) {
    const EncodedScene e = encode_scene(model, s, config, seed);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%06d", s.scene_id);
    const std::filesystem::path dir = out_dir / name;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    write_floats(dir / "embedding.bin", e.embedding.transpose());
    write_floats(dir / "patch_features.bin", e.per_patch);
    const nlohmann::json sidecar = {
        {"scene_id", s.scene_id},
        {"dtype", "float32"},
        {"byte_order", "little"},
        {"embedding", {{"file", "embedding.bin"}, {"shape", {e.embedding.size()}}}},
        {"patch_features", {{"file", "patch_features.bin"}, {"shape", {e.per_patch.rows(), e.per_patch.cols()}}}},
        {"views", e.views},
        {"seed", seed},
    };
    std::ofstream out(dir / "features.json", std::ios::trunc);
    out << sidecar.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + (dir / "features.json").string());
  }
}

}  // namespace cl3r
