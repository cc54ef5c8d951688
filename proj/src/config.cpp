#include "cl3r/config.hpp"

#include <set>

#include "cl3r/error.hpp"

using nlohmann::json;

namespace cl3r {

std::string to_string(Pooling p) { return p == Pooling::max_mean ? "max_mean" : "mean"; }

Pooling pooling_from_string(const std::string& s) {
  if (s == "max_mean") return Pooling::max_mean;
  if (s == "mean") return Pooling::mean;
  throw InvalidArgument("unknown pooling '" + s + "'");
}

std::string to_string(SimilarityMode m) { return m == SimilarityMode::paper ? "paper" : "standard"; }

SimilarityMode similarity_mode_from_string(const std::string& s) {
  if (s == "paper") return SimilarityMode::paper;
  if (s == "standard") return SimilarityMode::standard;
  throw InvalidArgument("unknown similarity mode '" + s + "'");
}

std::string to_string(BatchReduction r) { return r == BatchReduction::mean ? "mean" : "sum"; }

BatchReduction batch_reduction_from_string(const std::string& s) {
  if (s == "mean") return BatchReduction::mean;
  if (s == "sum") return BatchReduction::sum;
  throw InvalidArgument("unknown batch reduction '" + s + "'");
}

std::string to_string(Precision p) { return p == Precision::float32 ? "float32" : "float64"; }

Precision precision_from_string(const std::string& s) {
  if (s == "float32" || s == "32") return Precision::float32;
  if (s == "float64" || s == "64") return Precision::float64;
  throw InvalidArgument("unknown precision '" + s + "'");
}

void ModelConfig::validate() const {
  if (embed_dim < 1 || num_heads < 1 || mlp_ratio < 1 || teacher_dim < 1 || n < 1 || k_nn < 1 || encoder_depth < 0 ||
      decoder_depth < 0) {
    throw InvalidArgument("model config: extents must be positive");
  }
  if (embed_dim % num_heads != 0) throw InvalidArgument("model config: embed_dim must be divisible by num_heads");
}

void LossWeights::validate() const {
  for (double w : {alpha, beta, gamma}) {
    if (!std::isfinite(w) || w < 0) throw InvalidArgument("loss weights must be finite and >= 0");
  }
  if (!(init_temperature > 0) || !(min_temperature > 0) || init_temperature < min_temperature) {
    throw InvalidArgument("temperature: need init >= min > 0");
  }
}

LossWeights ablated(LossWeights w, bool disable_mae, bool disable_contrastive) {
  if (disable_mae) w.alpha = 0;
  if (disable_contrastive) w.beta = w.gamma = 0;
  return w;
}

bool is_heldout(int scene_id, int holdout_stride) { return holdout_stride > 0 && scene_id % holdout_stride == holdout_stride - 1; }

void TrainConfig::validate() const {
  if (steps < 1) throw InvalidArgument("train config: steps must be >= 1");
  if (batch_size < 1) throw InvalidArgument("train config: batch_size must be >= 1");
  if (!disable_contrastive && batch_size < 2) throw InvalidArgument("train config: contrastive loss needs batch_size >= 2");
  if (disable_mae && disable_contrastive) throw InvalidArgument("train config: both loss families disabled");
  if (!(learning_rate > 0) || warmup_fraction < 0 || warmup_fraction > 1) throw InvalidArgument("train config: bad learning-rate schedule");
  if (num_points < 1) throw InvalidArgument("train config: num_points must be >= 1");
  if (patch.n > num_points || patch.k_nn > num_points) throw InvalidArgument("train config: n and k_nn must not exceed num_points");
  if (patch.n < 2) throw InvalidArgument("train config: masking needs n >= 2");
  if (model.n != patch.n || model.k_nn != patch.k_nn) throw InvalidArgument("train config: model n/k_nn must match patch config");
  if (holdout_stride < 0 || holdout_stride == 1) throw InvalidArgument("train config: holdout_stride must be 0 or >= 2");
  if (threads < 1) throw InvalidArgument("train config: threads must be >= 1");
  patch.validate();
  model.validate();
  weights.validate();
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw InvalidArgument("config: '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw InvalidArgument("config: unknown key '" + where + it.key() + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidArgument("config: key '" + where + key + "' has the wrong type");
  }
}

json to_json(const FusionPolicy& f) {
  json j = {{"mode", to_string(f.mode)}, {"fixed_k", f.fixed_k}, {"workspace", nullptr}};
  if (f.workspace) {
    j["workspace"] = {{"lo", {f.workspace->lo.x(), f.workspace->lo.y(), f.workspace->lo.z()}},
                      {"hi", {f.workspace->hi.x(), f.workspace->hi.y(), f.workspace->hi.z()}}};
  }
  return j;
}

}  // namespace

json to_json(const ModelConfig& c) {
  return {{"embed_dim", c.embed_dim},     {"encoder_depth", c.encoder_depth}, {"decoder_depth", c.decoder_depth},
          {"num_heads", c.num_heads},     {"mlp_ratio", c.mlp_ratio},         {"teacher_dim", c.teacher_dim},
          {"n", c.n},                     {"k_nn", c.k_nn},                   {"pooling", to_string(c.pooling)}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  const std::string w = "model.";
  reject_unknown(j, {"embed_dim", "encoder_depth", "decoder_depth", "num_heads", "mlp_ratio", "teacher_dim", "n", "k_nn", "pooling"}, w);
  read(j, "embed_dim", c.embed_dim, w);
  read(j, "encoder_depth", c.encoder_depth, w);
  read(j, "decoder_depth", c.decoder_depth, w);
  read(j, "num_heads", c.num_heads, w);
  read(j, "mlp_ratio", c.mlp_ratio, w);
  read(j, "teacher_dim", c.teacher_dim, w);
  read(j, "n", c.n, w);
  read(j, "k_nn", c.k_nn, w);
  if (j.contains("pooling")) c.pooling = pooling_from_string(j.at("pooling").get<std::string>());
  return c;
}

json to_json(const TrainConfig& c) {
  return {
      {"config_version", kConfigVersion},
      {"steps", c.steps},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"warmup_fraction", c.warmup_fraction},
      {"optimizer",
       {{"beta1", c.optimizer.beta1}, {"beta2", c.optimizer.beta2}, {"eps", c.optimizer.eps}, {"weight_decay", c.optimizer.weight_decay}}},
      {"seed", c.seed},
      {"num_points", c.num_points},
      {"weights",
       {{"alpha", c.weights.alpha},
        {"beta", c.weights.beta},
        {"gamma", c.weights.gamma},
        {"init_temperature", c.weights.init_temperature},
        {"min_temperature", c.weights.min_temperature},
        {"mode", to_string(c.weights.mode)},
        {"reduction", to_string(c.weights.reduction)}}},
      {"patch",
       {{"n", c.patch.n}, {"k_nn", c.patch.k_nn}, {"mask_ratio_min", c.patch.mask_ratio_min}, {"mask_ratio_max", c.patch.mask_ratio_max}}},
      {"model", to_json(c.model)},
      {"fusion", to_json(c.fusion)},
      {"disable_mae", c.disable_mae},
      {"disable_contrastive", c.disable_contrastive},
      {"precision", to_string(c.precision)},
      {"checkpoint_interval", c.checkpoint_interval},
      {"holdout_stride", c.holdout_stride},
      {"frozen_prefixes", c.frozen_prefixes},
      {"threads", c.threads},
  };
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  reject_unknown(j,
                 {"config_version", "steps", "batch_size", "learning_rate", "warmup_fraction", "optimizer", "seed", "num_points",
                  "weights", "patch", "model", "fusion", "disable_mae", "disable_contrastive", "precision", "checkpoint_interval",
                  "holdout_stride", "frozen_prefixes", "threads"},
                 "");
  if (j.contains("config_version") && j.at("config_version") != kConfigVersion) {
    throw InvalidArgument("config: unsupported config_version " + j.at("config_version").dump());
  }
  read(j, "steps", c.steps, "");
  read(j, "batch_size", c.batch_size, "");
  read(j, "learning_rate", c.learning_rate, "");
  read(j, "warmup_fraction", c.warmup_fraction, "");
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    reject_unknown(o, {"beta1", "beta2", "eps", "weight_decay"}, "optimizer.");
    read(o, "beta1", c.optimizer.beta1, "optimizer.");
    read(o, "beta2", c.optimizer.beta2, "optimizer.");
    read(o, "eps", c.optimizer.eps, "optimizer.");
    read(o, "weight_decay", c.optimizer.weight_decay, "optimizer.");
  }
  read(j, "seed", c.seed, "");
  read(j, "num_points", c.num_points, "");
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    const std::string p = "weights.";
    reject_unknown(w, {"alpha", "beta", "gamma", "init_temperature", "min_temperature", "mode", "reduction"}, p);
    read(w, "alpha", c.weights.alpha, p);
    read(w, "beta", c.weights.beta, p);
    read(w, "gamma", c.weights.gamma, p);
    read(w, "init_temperature", c.weights.init_temperature, p);
    read(w, "min_temperature", c.weights.min_temperature, p);
    if (w.contains("mode")) c.weights.mode = similarity_mode_from_string(w.at("mode").get<std::string>());
    if (w.contains("reduction")) c.weights.reduction = batch_reduction_from_string(w.at("reduction").get<std::string>());
  }
  if (j.contains("patch")) {
    const json& pj = j.at("patch");
    const std::string p = "patch.";
    reject_unknown(pj, {"n", "k_nn", "mask_ratio_min", "mask_ratio_max"}, p);
    read(pj, "n", c.patch.n, p);
    read(pj, "k_nn", c.patch.k_nn, p);
    read(pj, "mask_ratio_min", c.patch.mask_ratio_min, p);
    read(pj, "mask_ratio_max", c.patch.mask_ratio_max, p);
  }
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"), c.model);
  if (j.contains("fusion")) {
    const json& f = j.at("fusion");
    reject_unknown(f, {"mode", "fixed_k", "workspace"}, "fusion.");
    if (f.contains("mode")) c.fusion.mode = fusion_mode_from_string(f.at("mode").get<std::string>());
    read(f, "fixed_k", c.fusion.fixed_k, "fusion.");
    if (f.contains("workspace")) {
      if (f.at("workspace").is_null()) {
        c.fusion.workspace.reset();
      } else {
        const json& ws = f.at("workspace");
        reject_unknown(ws, {"lo", "hi"}, "fusion.workspace.");
        std::vector<double> lo, hi;
        read(ws, "lo", lo, "fusion.workspace.");
        read(ws, "hi", hi, "fusion.workspace.");
        if (lo.size() != 3 || hi.size() != 3) throw InvalidArgument("config: fusion.workspace lo/hi need 3 entries");
        c.fusion.workspace = AxisAlignedBox{Eigen::Vector3d(lo[0], lo[1], lo[2]), Eigen::Vector3d(hi[0], hi[1], hi[2])};
      }
    }
  }
  read(j, "disable_mae", c.disable_mae, "");
  read(j, "disable_contrastive", c.disable_contrastive, "");
  if (j.contains("precision")) c.precision = precision_from_string(j.at("precision").get<std::string>());
  read(j, "checkpoint_interval", c.checkpoint_interval, "");
  read(j, "holdout_stride", c.holdout_stride, "");
  read(j, "frozen_prefixes", c.frozen_prefixes, "");
  read(j, "threads", c.threads, "");
  return c;
}

}  // namespace cl3r
