#include "hamil/mil/mil.hpp"

#include "hamil/common/errors.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>

namespace hamil::mil {

std::string to_string(DistillMode mode) {
  return mode == DistillMode::attention_weighted ? "attention_weighted" : "mean";
}

DistillMode distill_mode_from_string(const std::string& text) {
  if (text == "attention_weighted") return DistillMode::attention_weighted;
  if (text == "mean") return DistillMode::mean;
  throw ConfigError("unknown distill mode: " + text);
}

template <typename T>
Vec<T> softmax(const Vec<T>& logits) {
  require(logits.size() >= 1, "softmax of an empty vector");
  const T peak = logits.maxCoeff();
  Vec<T> e = (logits.array() - peak).exp();
  return e / e.sum();
}

template <typename T>
Vec<T> attention_logits(const Mat<T>& instances, const AttentionParams<T>& params) {
  require(instances.cols() >= 1, "attention needs at least one instance");
  require(params.V.cols() == instances.rows(), "attention V columns must equal embedding dimension");
  require(params.w.size() == params.V.rows(), "attention w length must equal V rows");
  if (!instances.allFinite()) throw InvalidInput("non-finite instance embedding");
  if (!params.V.allFinite() || !params.w.allFinite()) throw InvalidInput("non-finite attention parameters");
  const Mat<T> gated = (params.V * instances).array().tanh();
  return gated.transpose() * params.w;
}

template <typename T>
Vec<T> attention_weights(const Mat<T>& instances, const AttentionParams<T>& params) {
  return softmax<T>(attention_logits(instances, params));
}

template <typename T>
Vec<T> attend_pool(const Mat<T>& instances, const Vec<T>& weights) {
  require(instances.cols() == weights.size(), "attention length must equal instance count");
  return instances * weights;
}

template <typename T>
Vec<T> distill(const Mat<T>& instances, const Vec<T>& weights, DistillMode mode) {
  require(instances.cols() == weights.size(), "attention length must equal instance count");
  if (mode == DistillMode::mean) return instances.rowwise().mean();
  return attend_pool(instances, weights);
}

template <typename T>
T sigmoid(T logit) {
  if (logit >= T(0)) return T(1) / (T(1) + std::exp(-logit));
  const T e = std::exp(logit);
  return e / (T(1) + e);
}

template <typename T>
T classify(const Vec<T>& pooled, const ClassifierParams<T>& params) {
  require(params.weight.size() == pooled.size(), "classifier weight length must equal embedding dimension");
  const T bias = params.bias_enabled ? params.bias : T(0);
  return sigmoid<T>(params.weight.dot(pooled) + bias);
}

template <typename T>
SubBagOutput<T> subbag_forward(const Mat<T>& instances, const TierParams<T>& params, DistillMode mode) {
  SubBagOutput<T> out;
  out.attention = attention_weights(instances, params.attention);
  out.pooled = attend_pool(instances, out.attention);
  out.prediction = classify(out.pooled, params.classifier);
  out.distilled = mode == DistillMode::attention_weighted ? out.pooled : distill(instances, out.attention, mode);
  return out;
}

template <typename T>
BagOutput<T> bag_forward(const Mat<T>& distilled, const TierParams<T>& params) {
  BagOutput<T> out;
  out.subbag_attention = attention_weights(distilled, params.attention);
  out.prediction = classify(attend_pool(distilled, out.subbag_attention), params.classifier);
  return out;
}

namespace {

void check_label(int label) {
  if (label != 0 && label != 1) throw InvalidInput("label must be 0 or 1, got " + std::to_string(label));
}

double clamp_probability(double p) { return std::clamp(p, kBceClamp, 1.0 - kBceClamp); }

}  // namespace

double bce_logit_gradient(double prediction, int label) {
  if (prediction < kBceClamp || prediction > 1.0 - kBceClamp) return 0.0;
  return prediction - label;
}

double bce(double prediction, int label) {
  check_label(label);
  if (!(prediction >= 0.0 && prediction <= 1.0)) throw InvalidInput("prediction must lie in [0, 1]");
  const double p = clamp_probability(prediction);
  return label == 1 ? -std::log(p) : -std::log1p(-p);
}

double subbag_loss(const std::vector<std::vector<double>>& predictions, std::span<const int> labels) {
  require(predictions.size() == labels.size(), "one label per volume");
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < predictions.size(); ++n) {
    for (double p : predictions[n]) sum += bce(p, labels[n]);
    count += predictions[n].size();
  }
  if (count == 0) throw InvalidInput("sub-bag loss over an empty batch");
  return sum / static_cast<double>(count);
}

double bag_loss(std::span<const double> predictions, std::span<const int> labels) {
  require(predictions.size() == labels.size(), "one label per volume");
  if (predictions.empty()) throw InvalidInput("bag loss over an empty batch");
  double sum = 0;
  for (std::size_t n = 0; n < predictions.size(); ++n) sum += bce(predictions[n], labels[n]);
  return sum / static_cast<double>(predictions.size());
}

double joint_loss(double subbag_term, double bag_term, double lambda) {
  if (!std::isfinite(subbag_term) || !std::isfinite(bag_term) || !std::isfinite(lambda))
    throw InvalidInput("joint loss terms must be finite");
  return subbag_term + lambda * bag_term;
}

template <typename T>
BagTrace<T> forward_bag(const BagEmbeddings<T>& bag, const MilParams<T>& params, DistillMode mode) {
  require(!bag.subbags.empty(), "a bag needs at least one sub-bag");
  BagTrace<T> trace;
  const auto dim = bag.subbags.front().rows();
  trace.distilled.resize(dim, static_cast<Eigen::Index>(bag.subbags.size()));
  for (std::size_t m = 0; m < bag.subbags.size(); ++m) {
    trace.subbags.push_back(subbag_forward(bag.subbags[m], params.subbag, mode));
    trace.distilled.col(static_cast<Eigen::Index>(m)) = trace.subbags.back().distilled;
  }
  trace.bag = bag_forward(trace.distilled, params.bag);
  return trace;
}

template <typename T>
LossBreakdown joint_objective(std::span<const BagEmbeddings<T>> batch, const MilParams<T>& params, DistillMode mode,
                              double lambda) {
  std::vector<std::vector<double>> sub_preds;
  std::vector<double> bag_preds;
  std::vector<int> labels;
  for (const auto& bag : batch) {
    const BagTrace<T> trace = forward_bag(bag, params, mode);
    std::vector<double> preds;
    for (const auto& s : trace.subbags) preds.push_back(static_cast<double>(s.prediction));
    sub_preds.push_back(std::move(preds));
    bag_preds.push_back(static_cast<double>(trace.bag.prediction));
    labels.push_back(bag.label);
  }
  LossBreakdown loss;
  loss.subbag = subbag_loss(sub_preds, labels);
  loss.bag = bag_loss(bag_preds, labels);
  loss.total = joint_loss(loss.subbag, loss.bag, lambda);
  return loss;
}

namespace {

template <typename T>
struct TierCache {
  Mat<T> gated;  // tanh(V H), D x K
  Vec<T> attention;
  Vec<T> pooled;
  T prediction{};
};

template <typename T>
TierCache<T> tier_forward(const Mat<T>& instances, const TierParams<T>& params) {
  TierCache<T> c;
  const Vec<T> logits = attention_logits(instances, params.attention);
  c.gated = (params.attention.V * instances).array().tanh();
  c.attention = softmax<T>(logits);
  c.pooled = attend_pool(instances, c.attention);
  c.prediction = classify(c.pooled, params.classifier);
  return c;
}

// Backpropagates d_logit (and an extra gradient on the pooled vector) through
// classifier, pooling and attention. Accumulates into grad; returns dL/dH.
template <typename T>
Mat<T> tier_backward(const Mat<T>& instances, const TierParams<T>& params, const TierCache<T>& c, T d_logit,
                     const std::type_identity_t<Vec<T>>* d_pooled_extra, TierParams<T>& grad) {
  Vec<T> d_pooled = d_logit * params.classifier.weight;
  if (d_pooled_extra) d_pooled += *d_pooled_extra;
  grad.classifier.weight += d_logit * c.pooled;
  if (params.classifier.bias_enabled) grad.classifier.bias += d_logit;

  Mat<T> d_instances = d_pooled * c.attention.transpose();
  const Vec<T> d_attention = instances.transpose() * d_pooled;
  const Vec<T> d_logits = c.attention.array() * (d_attention.array() - c.attention.dot(d_attention));

  grad.attention.w += c.gated * d_logits;
  const Mat<T> d_pre = (params.attention.w * d_logits.transpose()).array() * (T(1) - c.gated.array().square());
  grad.attention.V += d_pre * instances.transpose();
  d_instances += params.attention.V.transpose() * d_pre;
  return d_instances;
}

template <typename T>
void check_finite_tier(const TierParams<T>& g, const std::string& prefix) {
  if (!g.attention.V.allFinite()) throw NumericFailure(prefix + ".attention.V", "non-finite gradient");
  if (!g.attention.w.allFinite()) throw NumericFailure(prefix + ".attention.w", "non-finite gradient");
  if (!g.classifier.weight.allFinite()) throw NumericFailure(prefix + ".classifier.weight", "non-finite gradient");
  if (!std::isfinite(static_cast<double>(g.classifier.bias)))
    throw NumericFailure(prefix + ".classifier.bias", "non-finite gradient");
}

}  // namespace

template <typename T>
TierParams<T> zero_like(const TierParams<T>& tier) {
  TierParams<T> z;
  z.attention.V = Mat<T>::Zero(tier.attention.V.rows(), tier.attention.V.cols());
  z.attention.w = Vec<T>::Zero(tier.attention.w.size());
  z.classifier.weight = Vec<T>::Zero(tier.classifier.weight.size());
  z.classifier.bias = T(0);
  z.classifier.bias_enabled = tier.classifier.bias_enabled;
  return z;
}

template <typename T>
MilGradients<T> joint_gradients(std::span<const BagEmbeddings<T>> batch, const MilParams<T>& params,
                                DistillMode mode, double lambda) {
  if (batch.empty()) throw InvalidInput("gradient of an empty batch");
  MilGradients<T> g;
  g.params.subbag = zero_like(params.subbag);
  g.params.bag = zero_like(params.bag);

  std::size_t total_subbags = 0;
  for (const auto& bag : batch) {
    check_label(bag.label);
    require(!bag.subbags.empty(), "a bag needs at least one sub-bag");
    total_subbags += bag.subbags.size();
  }
  const double sub_scale = 1.0 / static_cast<double>(total_subbags);
  const double bag_scale = lambda / static_cast<double>(batch.size());

  double sub_sum = 0;
  double bag_sum = 0;
  for (const auto& bag : batch) {
    const std::size_t m_count = bag.subbags.size();
    std::vector<TierCache<T>> caches;
    caches.reserve(m_count);
    Mat<T> distilled(bag.subbags.front().rows(), static_cast<Eigen::Index>(m_count));
    for (std::size_t m = 0; m < m_count; ++m) {
      caches.push_back(tier_forward(bag.subbags[m], params.subbag));
      const auto col = static_cast<Eigen::Index>(m);
      distilled.col(col) = mode == DistillMode::attention_weighted ? caches.back().pooled
                                                                    : Vec<T>(bag.subbags[m].rowwise().mean());
      sub_sum += bce(static_cast<double>(caches.back().prediction), bag.label);
    }
    const TierCache<T> top = tier_forward(distilled, params.bag);
    bag_sum += bce(static_cast<double>(top.prediction), bag.label);

    const T d_top = T(bag_scale * bce_logit_gradient(static_cast<double>(top.prediction), bag.label));
    const Mat<T> d_distilled = tier_backward(distilled, params.bag, top, d_top, nullptr, g.params.bag);

    std::vector<Mat<T>> d_subbags(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
      const auto col = static_cast<Eigen::Index>(m);
      const T d_logit = T(sub_scale * bce_logit_gradient(static_cast<double>(caches[m].prediction), bag.label));
      const Vec<T> d_dist = d_distilled.col(col);
      if (mode == DistillMode::attention_weighted) {
        d_subbags[m] = tier_backward(bag.subbags[m], params.subbag, caches[m], d_logit, &d_dist, g.params.subbag);
      } else {
        d_subbags[m] = tier_backward(bag.subbags[m], params.subbag, caches[m], d_logit, nullptr, g.params.subbag);
        d_subbags[m].colwise() += d_dist / T(bag.subbags[m].cols());
      }
      if (!d_subbags[m].allFinite()) throw NumericFailure("instance_embeddings", "non-finite gradient");
    }
    g.embeddings.push_back(std::move(d_subbags));
  }
  check_finite_tier(g.params.subbag, "subbag");
  check_finite_tier(g.params.bag, "bag");

  g.loss.subbag = sub_sum * sub_scale;
  g.loss.bag = bag_sum / static_cast<double>(batch.size());
  g.loss.total = joint_loss(g.loss.subbag, g.loss.bag, lambda);
  return g;
}

template <typename T>
double flat_objective(std::span<const Mat<T>> bags, std::span<const int> labels, const TierParams<T>& tier) {
  require(bags.size() == labels.size(), "one label per bag");
  std::vector<double> preds;
  for (const auto& bag : bags) {
    const Vec<T> a = attention_weights(bag, tier.attention);
    preds.push_back(static_cast<double>(classify(attend_pool(bag, a), tier.classifier)));
  }
  return bag_loss(preds, labels);
}

template <typename T>
FlatGradients<T> flat_gradients(std::span<const Mat<T>> bags, std::span<const int> labels, const TierParams<T>& tier) {
  require(bags.size() == labels.size(), "one label per bag");
  if (bags.empty()) throw InvalidInput("gradient of an empty batch");
  FlatGradients<T> g;
  g.tier = zero_like(tier);
  const double scale = 1.0 / static_cast<double>(bags.size());
  double sum = 0;
  for (std::size_t n = 0; n < bags.size(); ++n) {
    check_label(labels[n]);
    const TierCache<T> c = tier_forward(bags[n], tier);
    sum += bce(static_cast<double>(c.prediction), labels[n]);
    const T d_logit = T(scale * bce_logit_gradient(static_cast<double>(c.prediction), labels[n]));
    g.embeddings.push_back(tier_backward(bags[n], tier, c, d_logit, nullptr, g.tier));
    if (!g.embeddings.back().allFinite()) throw NumericFailure("instance_embeddings", "non-finite gradient");
  }
  check_finite_tier(g.tier, "tier");
  g.loss = sum * scale;
  return g;
}

#define HAMIL_INSTANTIATE(T)                                                                                      \
  template Vec<T> softmax<T>(const Vec<T>&);                                                                      \
  template Vec<T> attention_logits<T>(const Mat<T>&, const AttentionParams<T>&);                                  \
  template Vec<T> attention_weights<T>(const Mat<T>&, const AttentionParams<T>&);                                 \
  template Vec<T> attend_pool<T>(const Mat<T>&, const Vec<T>&);                                                   \
  template Vec<T> distill<T>(const Mat<T>&, const Vec<T>&, DistillMode);                                          \
  template T sigmoid<T>(T);                                                                                       \
  template T classify<T>(const Vec<T>&, const ClassifierParams<T>&);                                              \
  template SubBagOutput<T> subbag_forward<T>(const Mat<T>&, const TierParams<T>&, DistillMode);                   \
  template BagOutput<T> bag_forward<T>(const Mat<T>&, const TierParams<T>&);                                      \
  template BagTrace<T> forward_bag<T>(const BagEmbeddings<T>&, const MilParams<T>&, DistillMode);                 \
  template LossBreakdown joint_objective<T>(std::span<const BagEmbeddings<T>>, const MilParams<T>&, DistillMode,   \
                                            double);                                                              \
  template MilGradients<T> joint_gradients<T>(std::span<const BagEmbeddings<T>>, const MilParams<T>&,              \
                                              DistillMode, double);                                               \
  template double flat_objective<T>(std::span<const Mat<T>>, std::span<const int>, const TierParams<T>&);         \
  template FlatGradients<T> flat_gradients<T>(std::span<const Mat<T>>, std::span<const int>, const TierParams<T>&); \
  template TierParams<T> zero_like<T>(const TierParams<T>&);

HAMIL_INSTANTIATE(float)
HAMIL_INSTANTIATE(double)
#undef HAMIL_INSTANTIATE

}  // namespace hamil::mil
