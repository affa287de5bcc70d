#include "hamil/common/errors.hpp"
#include "hamil/common/rng.hpp"
#include "hamil/data/preprocess.hpp"
#include "hamil/models/model.hpp"

#include <cmath>
#include <random>

namespace hamil::models {

template <typename T>
Model<T>::Model(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
}

template <typename T>
PatchModel<T>::PatchModel(ModelSpec spec) : Model<T>(std::move(spec)), net_(this->spec_.encoder) {
  this->params_ = net_.init_params();
}

template <typename T>
data::Volume PatchModel<T>::prepare(const data::Volume& raw) const {
  return data::normalize_volume(raw);
}

template <typename T>
data::SubBagBatch PatchModel<T>::sample(const data::Volume& volume, std::uint64_t seed) const {
  Rng rng(seed);
  return data::sample_subbags(volume, this->spec_.sampling, rng);
}

template <typename T>
Mat<T> PatchModel<T>::encode(const data::SubBagBatch& batch, bool training, nn::ShardedPass<T>* pass) const {
  nn::Activation<T> input;
  input.resize(1, batch.patch_count(), {1, batch.patch_rows, batch.patch_cols});
  for (std::size_t i = 0; i < batch.pixels.size(); ++i)
    input.data(0, static_cast<Eigen::Index>(i)) = static_cast<T>(batch.pixels[i]);
  if (pass) return nn::forward_sharded(net_, this->params_, input, this->workers_, training, *pass);
  return nn::infer_sharded(net_, this->params_, input, this->workers_);
}

template <typename T>
TierSlots PatchModel<T>::add_tier(const std::string& prefix, std::uint64_t stream) {
  const int L = this->spec_.encoder.embedding_dim;
  const int D = this->spec_.attention_dim;
  auto& p = this->params_;
  TierSlots s;
  s.V = p.add(prefix + ".attention.V", {D, L});
  s.w = p.add(prefix + ".attention.w", {D});
  s.weight = p.add(prefix + ".classifier.weight", {L});
  s.bias = p.add(prefix + ".classifier.bias", {1});
  // Glorot-style scaling keeps initial attention logits O(1).
  Rng rng(mix_seed(this->spec_.seed, stream));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : p[s.V].value) v = static_cast<T>(normal(rng) / std::sqrt(static_cast<double>(L)));
  for (auto& v : p[s.w].value) v = static_cast<T>(normal(rng) / std::sqrt(static_cast<double>(D)));
  for (auto& v : p[s.weight].value) v = static_cast<T>(normal(rng) / std::sqrt(static_cast<double>(L)));
  return s;
}

template <typename T>
mil::TierParams<T> PatchModel<T>::tier(const TierSlots& s) const {
  const auto& p = this->params_;
  const int D = this->spec_.attention_dim;
  const int L = this->spec_.encoder.embedding_dim;
  mil::TierParams<T> t;
  t.attention.V = Eigen::Map<const Mat<T>>(p[s.V].value.data(), D, L);
  t.attention.w = p[s.w].value;
  t.classifier.weight = p[s.weight].value;
  t.classifier.bias_enabled = this->spec_.classifier_bias;
  t.classifier.bias = this->spec_.classifier_bias ? p[s.bias].value(0) : T(0);
  return t;
}

template <typename T>
void PatchModel<T>::add_tier_gradient(const TierSlots& s, const mil::TierParams<T>& g, T scale,
                                      nn::ParamStore<T>& grads) const {
  grads[s.V].value += scale * Eigen::Map<const Vec<T>>(g.attention.V.data(), g.attention.V.size());
  grads[s.w].value += scale * g.attention.w;
  grads[s.weight].value += scale * g.classifier.weight;
  if (this->spec_.classifier_bias) grads[s.bias].value(0) += scale * g.classifier.bias;
}

template <typename T>
void PatchModel<T>::encoder_backward(nn::ShardedPass<T>& pass, const Mat<T>& d_embeddings, nn::ParamStore<T>& grads) {
  nn::backward_sharded(net_, this->params_, pass, d_embeddings, grads);
  if (this->spec_.encoder.norm == nn::NormKind::batch) {
    std::vector<const typename nn::ResidualNet<T>::Workspace*> ws;
    for (const auto& s : pass.shards) ws.push_back(&s);
    net_.update_running_stats(this->params_, ws);
  }
}

template <typename T>
HamilModel<T>::HamilModel(ModelSpec spec) : PatchModel<T>(std::move(spec)) {
  if (this->spec_.kind != ModelKind::hamil) throw ConfigError("HamilModel built from a non-hamil spec");
  subbag_ = this->add_tier("subbag", 1);
  bag_ = this->add_tier("bag", 2);
}

template <typename T>
mil::MilParams<T> HamilModel<T>::mil_params() const {
  return {this->tier(subbag_), this->tier(bag_)};
}

template <typename T>
mil::BagEmbeddings<T> HamilModel<T>::group(const data::SubBagBatch& batch, const Mat<T>& embeddings) const {
  mil::BagEmbeddings<T> bag;
  bag.label = batch.label;
  Eigen::Index start = 0;
  for (const auto& o : batch.origins) {
    const auto k = static_cast<Eigen::Index>(o.size());
    bag.subbags.push_back(embeddings.middleCols(start, k));
    start += k;
  }
  return bag;
}

template <typename T>
mil::LossBreakdown HamilModel<T>::accumulate_gradients(const data::Volume& volume, std::uint64_t seed,
                                                       nn::ParamStore<T>& grads, T scale) {
  const data::SubBagBatch batch = this->sample(volume, seed);
  nn::ShardedPass<T> pass;
  const Mat<T> h = this->encode(batch, true, &pass);
  const mil::BagEmbeddings<T> bag = group(batch, h);
  const auto g = mil::joint_gradients<T>(std::span(&bag, 1), mil_params(), this->spec_.distill, this->lambda_);
  this->add_tier_gradient(subbag_, g.params.subbag, scale, grads);
  this->add_tier_gradient(bag_, g.params.bag, scale, grads);
  Mat<T> d_h(h.rows(), h.cols());
  Eigen::Index start = 0;
  for (const auto& d : g.embeddings[0]) {
    d_h.middleCols(start, d.cols()) = scale * d;
    start += d.cols();
  }
  this->encoder_backward(pass, d_h, grads);
  return g.loss;
}

template <typename T>
mil::LossBreakdown HamilModel<T>::loss(const data::Volume& volume, std::uint64_t seed) const {
  const data::SubBagBatch batch = this->sample(volume, seed);
  nn::ShardedPass<T> pass;
  const mil::BagEmbeddings<T> bag = group(batch, this->encode(batch, true, &pass));
  return mil::joint_objective<T>(std::span(&bag, 1), mil_params(), this->spec_.distill, this->lambda_);
}

template <typename T>
ForwardTrace<T> HamilModel<T>::trace(const data::Volume& volume, std::uint64_t seed) const {
  ForwardTrace<T> t;
  t.batch = this->sample(volume, seed);
  t.embeddings = this->encode(t.batch, false, nullptr);
  t.bag = mil::forward_bag(group(t.batch, t.embeddings), mil_params(), this->spec_.distill);
  return t;
}

template <typename T>
double HamilModel<T>::predict(const data::Volume& volume, std::uint64_t seed) const {
  return static_cast<double>(trace(volume, seed).bag.bag.prediction);
}

template class Model<float>;
template class Model<double>;
template class PatchModel<float>;
template class PatchModel<double>;
template class HamilModel<float>;
template class HamilModel<double>;

}  // namespace hamil::models
