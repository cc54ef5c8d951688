#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cl3r/autodiff.hpp"
#include "cl3r/geometry.hpp"
#include "cl3r/patching.hpp"
#include "cl3r/rng.hpp"

namespace cl3r {

enum class Pooling { max_mean, mean };

std::string to_string(Pooling p);
Pooling pooling_from_string(const std::string& s);

struct ModelConfig {
  int embed_dim = 64;
  int encoder_depth = 3;
  int decoder_depth = 2;
  int num_heads = 4;
  int mlp_ratio = 2;
  int teacher_dim = 32;
  int n = 32;
  int k_nn = 16;
  Pooling pooling = Pooling::max_mean;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Parameter-name prefixes of the three sub-networks.
inline const std::vector<std::string> kEncoderPrefixes = {"embed.", "enc_pos.", "enc."};
inline const std::vector<std::string> kDecoderPrefixes = {"dec_pos.", "dec.", "mask_token", "recon."};
inline const std::vector<std::string> kContrastivePrefixes = {"pool.", "proj.", "contrast."};

inline bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes)
    if (name.rfind(p, 0) == 0) return true;
  return false;
}

inline const char* kLogTemperature = "contrast.log_tau";

template <typename S>
struct TokenEmbedding {
  ad::Tensor<S> tokens;  // [n', E]
  ad::Tensor<S> pos;     // [n', E]
};

template <typename S>
struct Projection {
  ad::Tensor<S> pooled;     // [1, E]
  ad::Tensor<S> embedding;  // [1, teacher_dim], unit norm
};

template <typename S>
struct FeatureSet {
  ad::Tensor<S> per_patch;  // [n', E]
  ad::Tensor<S> pooled;
  ad::Tensor<S> embedding;
};

// [n', k, 3] constant from center-relative patches.
template <typename S>
ad::Tensor<S> patches_tensor(ad::Graph<S>& g, const std::vector<Points>& patches) {
  if (patches.empty()) throw InvalidArgument("patches_tensor: no patches");
  const ad::Index k = patches.front().rows();
  ad::Vec<S> values(static_cast<ad::Index>(patches.size()) * k * 3);
  ad::Index at = 0;
  for (const auto& p : patches) {
    if (p.rows() != k) throw InvalidArgument("patches_tensor: ragged patch sizes");
    for (ad::Index r = 0; r < k; ++r)
      for (int c = 0; c < 3; ++c) values[at++] = static_cast<S>(p(r, c));
  }
  return g.constant({static_cast<ad::Index>(patches.size()), k, 3}, std::move(values));
}

template <typename S>
ad::Tensor<S> points_tensor(ad::Graph<S>& g, const Points& pts) {
  ad::Vec<S> values(pts.rows() * 3);
  for (ad::Index r = 0; r < pts.rows(); ++r)
    for (int c = 0; c < 3; ++c) values[r * 3 + c] = static_cast<S>(pts(r, c));
  return g.constant({pts.rows(), 3}, std::move(values));
}

// Point-patch transformer: token embedder, encoder f_theta, MAE decoder, contrastive head and
// the learnable log-temperature, all in one parameter store.
template <typename S>
class Model {
 public:
  using Tensor = ad::Tensor<S>;
  using Graph = ad::Graph<S>;

  Model(const ModelConfig& config, std::uint64_t seed, double init_temperature = 0.07) : config_(config) {
    config_.validate();
    build(seed, init_temperature);
  }
  Model(const ModelConfig& config, ad::ParameterStore<S> params) : config_(config), params_(std::move(params)) {
    config_.validate();
    Model reference(config_, 0);
    if (reference.params_.size() != params_.size()) throw InvalidArgument("model: parameter set does not match config");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (reference.params_[i].name != params_[i].name || reference.params_[i].shape != params_[i].shape) {
        throw InvalidArgument("model: parameter '" + params_[i].name + "' does not match config");
      }
    }
  }

  const ModelConfig& config() const { return config_; }
  ad::ParameterStore<S>& params() { return params_; }
  const ad::ParameterStore<S>& params() const { return params_; }

  template <typename T>
  Model<T> cast() const {
    return Model<T>(config_, params_.template cast<T>());
  }

  // Shared per-point MLP + max-pool over each patch; positional MLP on the centers.
  TokenEmbedding<S> embed_tokens(Graph& g, const Tensor& patches, const Tensor& centers) {
    const ad::Index count = patches.rank() == 3 ? patches.dim(0) : -1;
    if (patches.rank() != 3 || patches.dim(1) != config_.k_nn || patches.dim(2) != 3 || centers.rank() != 2 ||
        centers.dim(0) != count || centers.dim(1) != 3) {
      throw InvalidArgument("embed_tokens: expected patches [n', " + std::to_string(config_.k_nn) + ", 3] and centers [n', 3], got " +
                            ad::to_string(patches.shape()) + " and " + ad::to_string(centers.shape()));
    }
    const ad::Index e = config_.embed_dim;
    Tensor pts = ad::reshape(patches, {count * config_.k_nn, 3});
    Tensor h = linear(g, ad::gelu(linear(g, pts, "embed.point1")), "embed.point2");
    Tensor tokens = ad::reduce_max(ad::reshape(h, {count, config_.k_nn, e}), 1);
    return {tokens, positional(g, centers, "enc_pos")};
  }

  // Pre-norm transformer blocks; the positional embedding is added once at the input.
  Tensor encode(Graph& g, const Tensor& tokens, const Tensor& pos) {
    if (tokens.shape() != pos.shape()) {
      throw InvalidArgument("encode: tokens " + ad::to_string(tokens.shape()) + " vs pos " + ad::to_string(pos.shape()));
    }
    Tensor x = tokens + pos;
    for (int b = 0; b < config_.encoder_depth; ++b) x = block(g, x, "enc." + std::to_string(b));
    return x;
  }

  // Reassembles visible features and mask tokens in original patch order, injects the full
  // positional embedding before every block and predicts [|masked|, k, 3] offsets.
  // Returns an undefined tensor when nothing is masked.
  Tensor decode_mae(Graph& g, const Tensor& visible_features, std::span<const int> visible, std::span<const int> masked,
                    const Tensor& centers_all) {
    const ad::Index n = centers_all.dim(0);
    const ad::Index e = config_.embed_dim;
    if (visible_features.rank() != 2 || visible_features.dim(0) != static_cast<ad::Index>(visible.size()) ||
        visible_features.dim(1) != e) {
      throw InvalidArgument("decode_mae: " + std::to_string(visible.size()) + " visible slots but features " +
                            ad::to_string(visible_features.shape()));
    }
    if (static_cast<ad::Index>(visible.size() + masked.size()) != n) {
      throw InvalidArgument("decode_mae: mask covers " + std::to_string(visible.size() + masked.size()) + " slots, " +
                            std::to_string(n) + " centers given");
    }
    if (masked.empty()) return {};
    std::vector<ad::Index> slot_of(static_cast<std::size_t>(n), -1);
    for (std::size_t i = 0; i < visible.size(); ++i) assign_slot(slot_of, visible[i], static_cast<ad::Index>(i));
    for (std::size_t i = 0; i < masked.size(); ++i) {
      assign_slot(slot_of, masked[i], static_cast<ad::Index>(visible.size() + i));
    }
    const auto nm = static_cast<ad::Index>(masked.size());
    Tensor mask_rows = g.constant({nm, e}, S(0)) + g.param(params_.at("mask_token"));
    Tensor seq = visible.empty() ? mask_rows : ad::concat<S>({visible_features, mask_rows}, 0);
    Tensor x = ad::gather_rows(seq, slot_of);
    const Tensor pos = positional(g, centers_all, "dec_pos");
    for (int b = 0; b < config_.decoder_depth; ++b) x = block(g, x + pos, "dec." + std::to_string(b));
    x = norm(g, x, "dec.norm");
    std::vector<ad::Index> masked_rows(masked.begin(), masked.end());
    Tensor pred = linear(g, ad::gather_rows(x, masked_rows), "recon");
    return ad::reshape(pred, {nm, config_.k_nn, 3});
  }

  Projection<S> pool_and_project(Graph& g, const Tensor& features) {
    if (features.rank() != 2 || features.dim(1) != config_.embed_dim) {
      throw InvalidArgument("pool_and_project: features " + ad::to_string(features.shape()));
    }
    Tensor h = norm(g, features, "pool.norm");
    Tensor pooled_in = config_.pooling == Pooling::max_mean
                           ? ad::concat<S>({ad::reduce_max(h, 0, true), ad::reduce_mean(h, 0, true)}, 1)
                           : ad::reduce_mean(h, 0, true);
    Tensor pooled = linear(g, pooled_in, "pool.fc");
    Tensor embedding = ad::normalize_rows(linear(g, ad::gelu(pooled), "proj.fc"));
    return {pooled, embedding};
  }

  // Full pass over a set of patches.
  FeatureSet<S> features(Graph& g, const std::vector<Points>& patches, const Points& centers) {
    const auto emb = embed_tokens(g, patches_tensor(g, patches), points_tensor(g, centers));
    Tensor f = encode(g, emb.tokens, emb.pos);
    auto proj = pool_and_project(g, f);
    return {f, proj.pooled, proj.embedding};
  }

  Tensor temperature(Graph& g) { return ad::exp(g.param(params_.at(kLogTemperature))); }

 private:
  static void assign_slot(std::vector<ad::Index>& slot_of, int index, ad::Index slot) {
    if (index < 0 || static_cast<std::size_t>(index) >= slot_of.size() || slot_of[static_cast<std::size_t>(index)] != -1) {
      throw InvalidArgument("decode_mae: mask indices do not partition the patch set");
    }
    slot_of[static_cast<std::size_t>(index)] = slot;
  }

  void build(std::uint64_t seed, double init_temperature) {
    Rng rng = make_rng(derive_seed(seed, 0x1a17));
    const int e = config_.embed_dim;
    const int hidden = config_.mlp_ratio * e;
    add_linear(rng, "embed.point1", 3, e);
    add_linear(rng, "embed.point2", e, e);
    add_linear(rng, "enc_pos.1", 3, e);
    add_linear(rng, "enc_pos.2", e, e);
    for (int b = 0; b < config_.encoder_depth; ++b) add_block(rng, "enc." + std::to_string(b), e, hidden);
    auto& token = params_.add("mask_token", {e}, false);
    for (ad::Index i = 0; i < token.size(); ++i) token.value[i] = static_cast<S>(0.02 * standard_normal(rng));
    add_linear(rng, "dec_pos.1", 3, e);
    add_linear(rng, "dec_pos.2", e, e);
    for (int b = 0; b < config_.decoder_depth; ++b) add_block(rng, "dec." + std::to_string(b), e, hidden);
    add_norm("dec.norm", e);
    add_linear(rng, "recon", e, config_.k_nn * 3);
    add_norm("pool.norm", e);
    add_linear(rng, "pool.fc", config_.pooling == Pooling::max_mean ? 2 * e : e, e);
    add_linear(rng, "proj.fc", e, config_.teacher_dim);
    params_.add(kLogTemperature, {1}, false).value[0] = static_cast<S>(std::log(init_temperature));
  }

  void add_linear(Rng& rng, const std::string& name, int in, int out) {
    auto& w = params_.add(name + ".w", {in, out}, true);
    const double limit = std::sqrt(6.0 / (in + out));
    for (ad::Index i = 0; i < w.size(); ++i) w.value[i] = static_cast<S>(uniform(rng, -limit, limit));
    params_.add(name + ".b", {out}, false);
  }

  void add_norm(const std::string& name, int dim) {
    params_.add(name + ".gamma", {dim}, false).value.setOnes();
    params_.add(name + ".beta", {dim}, false);
  }

  void add_block(Rng& rng, const std::string& name, int e, int hidden) {
    add_norm(name + ".ln1", e);
    add_linear(rng, name + ".attn.qkv", e, 3 * e);
    add_linear(rng, name + ".attn.proj", e, e);
    add_norm(name + ".ln2", e);
    add_linear(rng, name + ".mlp.fc1", e, hidden);
    add_linear(rng, name + ".mlp.fc2", hidden, e);
  }

  Tensor linear(Graph& g, const Tensor& x, const std::string& name) {
    return ad::matmul(x, g.param(params_.at(name + ".w"))) + g.param(params_.at(name + ".b"));
  }

  Tensor norm(Graph& g, const Tensor& x, const std::string& name) {
    return ad::layer_norm(x, -1) * g.param(params_.at(name + ".gamma")) + g.param(params_.at(name + ".beta"));
  }

  Tensor positional(Graph& g, const Tensor& centers, const std::string& name) {
    return linear(g, ad::gelu(linear(g, centers, name + ".1")), name + ".2");
  }

  Tensor attention(Graph& g, const Tensor& x, const std::string& name) {
    const ad::Index e = config_.embed_dim;
    const ad::Index dh = e / config_.num_heads;
    const S inv_scale = S(1) / std::sqrt(static_cast<S>(dh));
    Tensor qkv = linear(g, x, name + ".qkv");
    std::vector<Tensor> heads;
    for (int h = 0; h < config_.num_heads; ++h) {
      Tensor q = ad::slice(qkv, 1, h * dh, dh);
      Tensor k = ad::slice(qkv, 1, e + h * dh, dh);
      Tensor v = ad::slice(qkv, 1, 2 * e + h * dh, dh);
      Tensor weights = ad::softmax(ad::matmul(q, ad::transpose(k)) * inv_scale, 1);
      heads.push_back(ad::matmul(weights, v));
    }
    Tensor merged = heads.size() == 1 ? heads.front() : ad::concat(heads, 1);
    return linear(g, merged, name + ".proj");
  }

  Tensor block(Graph& g, const Tensor& x, const std::string& name) {
    Tensor y = x + attention(g, norm(g, x, name + ".ln1"), name + ".attn");
    Tensor h = linear(g, ad::gelu(linear(g, norm(g, y, name + ".ln2"), name + ".mlp.fc1")), name + ".mlp.fc2");
    return y + h;
  }

  ModelConfig config_;
  ad::ParameterStore<S> params_;
};

}  // namespace cl3r
