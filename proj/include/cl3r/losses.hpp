#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "cl3r/autodiff.hpp"

namespace cl3r {

// paper: the positive pair is excluded from the denominator; standard: InfoNCE.
enum class SimilarityMode { paper, standard };
enum class BatchReduction { mean, sum };

std::string to_string(SimilarityMode m);
SimilarityMode similarity_mode_from_string(const std::string& s);
std::string to_string(BatchReduction r);
BatchReduction batch_reduction_from_string(const std::string& s);

struct LossWeights {
  double alpha = 1.5;  // reconstruction
  double beta = 0.5;   // point <-> image
  double gamma = 0.5;  // point <-> text
  double init_temperature = 0.07;
  double min_temperature = 0.01;
  SimilarityMode mode = SimilarityMode::paper;
  BatchReduction reduction = BatchReduction::mean;

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

// Weights with the ablated terms zeroed.
LossWeights ablated(LossWeights w, bool disable_mae, bool disable_contrastive);

struct LossReport {
  double reconstruction = 0;  // L^R
  double point_image = 0;     // L^C_PI
  double point_text = 0;      // L^C_PT
  double total = 0;           // L
  double temperature = 0;
  double mean_positive_similarity = 0;
  double retrieval_top1 = 0;  // in-batch point -> image
};

inline double total_loss(double reconstruction, double point_image, double point_text, const LossWeights& w) {
  if (!std::isfinite(reconstruction) || !std::isfinite(point_image) || !std::isfinite(point_text)) {
    throw NumericError("total_loss: non-finite component (L^R=" + std::to_string(reconstruction) + ", L^C_PI=" +
                       std::to_string(point_image) + ", L^C_PT=" + std::to_string(point_text) + ")");
  }
  return w.alpha * reconstruction + w.beta * point_image + w.gamma * point_text;
}

template <typename S>
ad::Tensor<S> total_loss(const ad::Tensor<S>& reconstruction, const ad::Tensor<S>& point_image,
                         const ad::Tensor<S>& point_text, const LossWeights& w) {
  return reconstruction * static_cast<S>(w.alpha) + point_image * static_cast<S>(w.beta) + point_text * static_cast<S>(w.gamma);
}

// Squared-distance Chamfer per patch, averaged over patches: [m, p, 3] x [m, q, 3] -> scalar.
template <typename S>
ad::Tensor<S> chamfer_l2(const ad::Tensor<S>& predicted, const ad::Tensor<S>& target) {
  if (predicted.rank() != 3 || target.rank() != 3 || predicted.dim(0) != target.dim(0) || predicted.dim(2) != target.dim(2)) {
    throw InvalidArgument("chamfer_l2: incompatible shapes " + ad::to_string(predicted.shape()) + " and " +
                          ad::to_string(target.shape()));
  }
  if (predicted.dim(0) == 0 || predicted.dim(1) == 0 || target.dim(1) == 0) throw InvalidArgument("chamfer_l2: empty patch");
  const ad::Tensor<S> d = ad::pairwise_sq_dist(predicted, target);
  const ad::Tensor<S> forward = ad::reduce_mean(ad::reduce_min(d, 2), 1);
  const ad::Tensor<S> backward = ad::reduce_mean(ad::reduce_min(d, 1), 1);
  return ad::reduce_mean(forward + backward, 0);
}

template <typename S>
void check_unit_rows(const ad::Tensor<S>& x, const char* what) {
  const double tol = sizeof(S) >= 8 ? 1e-6 : 1e-4;
  const ad::Index d = x.dim(1);
  for (ad::Index r = 0; r < x.dim(0); ++r) {
    const double n = std::sqrt(x.value().segment(r * d, d).template cast<double>().square().sum());
    if (std::abs(n - 1.0) > tol) throw InvalidArgument(std::string(what) + ": row " + std::to_string(r) + " has norm " + std::to_string(n));
  }
}

// S(U, V)_i = U_i.V_i / tau - log sum_j exp(U_i.V_j / tau), with j != i in paper mode.
template <typename S>
ad::Tensor<S> similarity_scores(const ad::Tensor<S>& u, const ad::Tensor<S>& v, const ad::Tensor<S>& temperature,
                                SimilarityMode mode) {
  if (u.rank() != 2 || u.shape() != v.shape()) {
    throw InvalidArgument("similarity_scores: shapes " + ad::to_string(u.shape()) + " and " + ad::to_string(v.shape()));
  }
  const ad::Index b = u.dim(0);
  if (mode == SimilarityMode::paper && b < 2) throw InvalidArgument("similarity_scores: paper mode needs a batch of at least 2");
  if (b < 1) throw InvalidArgument("similarity_scores: empty batch");
  if (temperature.size() != 1) throw InvalidArgument("similarity_scores: temperature must be scalar");
  check_unit_rows(u, "similarity_scores");
  check_unit_rows(v, "similarity_scores");
  const ad::Tensor<S> logits = ad::matmul(u, ad::transpose(v)) / temperature;
  const ad::Tensor<S> positive = ad::diagonal(logits);
  if (mode == SimilarityMode::standard) return positive - ad::logsumexp(logits, 1);
  ad::Vec<S> mask = ad::Vec<S>::Zero(b * b);
  for (ad::Index i = 0; i < b; ++i) mask[i * b + i] = -std::numeric_limits<S>::infinity();
  const ad::Tensor<S> negatives = logits + u.graph().constant({b, b}, std::move(mask));
  return positive - ad::logsumexp(negatives, 1);
}

// -(1/2) * R_i [S(P, X)_i + S(X, P)_i] with R = mean or sum over the batch.
template <typename S>
ad::Tensor<S> contrastive(const ad::Tensor<S>& points, const ad::Tensor<S>& other, const ad::Tensor<S>& temperature,
                          SimilarityMode mode, BatchReduction reduction = BatchReduction::mean) {
  if (points.shape() != other.shape()) {
    throw InvalidArgument("contrastive: embedding shapes " + ad::to_string(points.shape()) + " and " + ad::to_string(other.shape()));
  }
  const ad::Tensor<S> both = similarity_scores(points, other, temperature, mode) + similarity_scores(other, points, temperature, mode);
  const ad::Tensor<S> agg = reduction == BatchReduction::mean ? ad::reduce_mean(both, 0) : ad::reduce_sum(both, 0);
  return agg * S(-0.5);
}

}  // namespace cl3r
