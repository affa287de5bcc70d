#pragma once

#include "hamil/common/types.hpp"

#include <span>
#include <string>
#include <vector>

// Attention-based multiple-instance pooling in two tiers: instances are
// pooled into sub-bags, each sub-bag is classified and distilled to one
// embedding, and the distilled embeddings are pooled again into the bag.
//
// Embedding matrices hold one instance per column (L x K).
namespace hamil::mil {

enum class DistillMode { attention_weighted, mean };

std::string to_string(DistillMode mode);
DistillMode distill_mode_from_string(const std::string& text);

// Gated-tanh attention: a_k = softmax_k(w^T tanh(V h_k)).
template <typename T>
struct AttentionParams {
  Mat<T> V;  // D x L
  Vec<T> w;  // D

  int hidden_dim() const { return static_cast<int>(V.rows()); }
  int embedding_dim() const { return static_cast<int>(V.cols()); }
};

template <typename T>
struct ClassifierParams {
  Vec<T> weight;  // L
  T bias = T(0);
  // Equation-literal mode keeps the bias at exactly zero.
  bool bias_enabled = true;
};

template <typename T>
struct TierParams {
  AttentionParams<T> attention;
  ClassifierParams<T> classifier;
};

// Parameters of both tiers. The sub-bag tier is shared by all sub-bags.
template <typename T>
struct MilParams {
  TierParams<T> subbag;
  TierParams<T> bag;
};

template <typename T>
struct SubBagOutput {
  T prediction{};
  Vec<T> attention;  // K, on the simplex
  Vec<T> pooled;     // L
  Vec<T> distilled;  // L
};

template <typename T>
struct BagOutput {
  T prediction{};
  Vec<T> subbag_attention;  // M, on the simplex
};

// Softmax with max subtraction.
template <typename T>
Vec<T> softmax(const Vec<T>& logits);
template <typename T>
Vec<T> attention_logits(const Mat<T>& instances, const AttentionParams<T>& params);
template <typename T>
Vec<T> attention_weights(const Mat<T>& instances, const AttentionParams<T>& params);
template <typename T>
Vec<T> attend_pool(const Mat<T>& instances, const Vec<T>& weights);
template <typename T>
Vec<T> distill(const Mat<T>& instances, const Vec<T>& weights, DistillMode mode);
template <typename T>
T sigmoid(T logit);
template <typename T>
T classify(const Vec<T>& pooled, const ClassifierParams<T>& params);

template <typename T>
SubBagOutput<T> subbag_forward(const Mat<T>& instances, const TierParams<T>& params, DistillMode mode);
// distilled: L x M, one column per sub-bag.
template <typename T>
BagOutput<T> bag_forward(const Mat<T>& distilled, const TierParams<T>& params);

inline constexpr double kBceClamp = 1e-7;

// Binary cross-entropy with the prediction clamped to [1e-7, 1 - 1e-7].
double bce(double prediction, int label);
// d bce / d logit for a sigmoid output; zero where the clamp is active.
double bce_logit_gradient(double prediction, int label);
// Mean BCE over every sub-bag of every volume; each sub-bag uses its
// volume's label. Ragged sub-bag counts normalize by the total count.
double subbag_loss(const std::vector<std::vector<double>>& predictions, std::span<const int> labels);
double bag_loss(std::span<const double> predictions, std::span<const int> labels);
// L_sub-bag + lambda * L_bag (lambda = 1 is the unweighted objective).
double joint_loss(double subbag_term, double bag_term, double lambda = 1.0);

// One bag's instance embeddings, grouped into sub-bags.
template <typename T>
struct BagEmbeddings {
  std::vector<Mat<T>> subbags;  // each L x K_m
  int label = 0;
};

struct LossBreakdown {
  double total = 0;
  double subbag = 0;
  double bag = 0;
};

template <typename T>
struct BagTrace {
  std::vector<SubBagOutput<T>> subbags;
  Mat<T> distilled;  // L x M
  BagOutput<T> bag;
};

template <typename T>
BagTrace<T> forward_bag(const BagEmbeddings<T>& bag, const MilParams<T>& params, DistillMode mode);

// Joint objective over a batch, evaluated with forward operations only.
template <typename T>
LossBreakdown joint_objective(std::span<const BagEmbeddings<T>> batch, const MilParams<T>& params, DistillMode mode,
                              double lambda = 1.0);

template <typename T>
struct MilGradients {
  MilParams<T> params;                         // same shapes as the input parameters
  std::vector<std::vector<Mat<T>>> embeddings;  // [bag][sub-bag], L x K_m
  LossBreakdown loss;
};

// Exact reverse-mode gradients of the joint objective w.r.t. both tiers and
// every instance embedding. Throws NumericFailure naming a non-finite entry.
template <typename T>
MilGradients<T> joint_gradients(std::span<const BagEmbeddings<T>> batch, const MilParams<T>& params,
                                DistillMode mode, double lambda = 1.0);

// Single-tier objective (flat attention MIL): mean BCE of one pooled
// prediction per bag, using the given tier.
template <typename T>
struct FlatGradients {
  TierParams<T> tier;
  std::vector<Mat<T>> embeddings;
  double loss = 0;
};
template <typename T>
double flat_objective(std::span<const Mat<T>> bags, std::span<const int> labels, const TierParams<T>& tier);
template <typename T>
FlatGradients<T> flat_gradients(std::span<const Mat<T>> bags, std::span<const int> labels, const TierParams<T>& tier);

template <typename T>
TierParams<T> zero_like(const TierParams<T>& tier);

}  // namespace hamil::mil
