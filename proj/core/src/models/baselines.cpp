#include "hamil/common/errors.hpp"
#include "hamil/common/rng.hpp"
#include "hamil/data/preprocess.hpp"
#include "hamil/models/model.hpp"

#include <algorithm>
#include <numeric>

namespace hamil::models {

template <typename T>
AbmilModel<T>::AbmilModel(ModelSpec spec) : PatchModel<T>(std::move(spec)) {
  if (this->spec_.kind != ModelKind::abmil) throw ConfigError("AbmilModel built from a non-abmil spec");
  tier_ = this->add_tier("mil", 1);
}

template <typename T>
mil::LossBreakdown AbmilModel<T>::accumulate_gradients(const data::Volume& volume, std::uint64_t seed,
                                                       nn::ParamStore<T>& grads, T scale) {
  const data::SubBagBatch batch = this->sample(volume, seed);
  nn::ShardedPass<T> pass;
  const Mat<T> h = this->encode(batch, true, &pass);
  const int label = batch.label;
  const auto g = mil::flat_gradients<T>(std::span(&h, 1), std::span(&label, 1), tier_params());
  this->add_tier_gradient(tier_, g.tier, scale, grads);
  this->encoder_backward(pass, scale * g.embeddings[0], grads);
  return {g.loss, 0.0, g.loss};
}

template <typename T>
mil::LossBreakdown AbmilModel<T>::loss(const data::Volume& volume, std::uint64_t seed) const {
  const data::SubBagBatch batch = this->sample(volume, seed);
  nn::ShardedPass<T> pass;
  const Mat<T> h = this->encode(batch, true, &pass);
  const int label = batch.label;
  const double l = mil::flat_objective<T>(std::span(&h, 1), std::span(&label, 1), tier_params());
  return {l, 0.0, l};
}

template <typename T>
double AbmilModel<T>::predict(const data::Volume& volume, std::uint64_t seed) const {
  const data::SubBagBatch batch = this->sample(volume, seed);
  const Mat<T> h = this->encode(batch, false, nullptr);
  const mil::TierParams<T> t = tier_params();
  return static_cast<double>(mil::classify(mil::attend_pool(h, mil::attention_weights(h, t.attention)), t.classifier));
}

std::vector<std::vector<int>> random_partition(int count, int n, Rng& rng) {
  if (n < 2) throw ConfigError("pseudo-bag count must be >= 2, got " + std::to_string(n));
  if (count < n)
    throw ConfigError("bag of " + std::to_string(count) + " instances cannot form " + std::to_string(n) +
                      " pseudo-bags");
  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(n));
  for (int i = 0; i < count; ++i) groups[static_cast<std::size_t>(i % n)].push_back(order[static_cast<std::size_t>(i)]);
  return groups;
}

template <typename T>
DtfdModel<T>::DtfdModel(ModelSpec spec) : PatchModel<T>(std::move(spec)) {
  if (this->spec_.kind != ModelKind::dtfd) throw ConfigError("DtfdModel built from a non-dtfd spec");
  tier1_ = this->add_tier("tier1", 1);
  tier2_ = this->add_tier("tier2", 2);
}

template <typename T>
mil::MilParams<T> DtfdModel<T>::mil_params() const {
  return {this->tier(tier1_), this->tier(tier2_)};
}

template <typename T>
mil::BagEmbeddings<T> DtfdModel<T>::pseudo_bags(const Mat<T>& embeddings, int label, std::uint64_t seed,
                                                std::vector<std::vector<int>>& members) const {
  // The partition stream is separate from the patch sampling stream.
  Rng rng(mix_seed(seed, 0x9e3779b9ULL));
  members = random_partition(static_cast<int>(embeddings.cols()), this->spec_.effective_pseudo_bags(), rng);
  mil::BagEmbeddings<T> bag;
  bag.label = label;
  for (const auto& group : members) {
    Mat<T> sub(embeddings.rows(), static_cast<Eigen::Index>(group.size()));
    for (std::size_t j = 0; j < group.size(); ++j) sub.col(static_cast<Eigen::Index>(j)) = embeddings.col(group[j]);
    bag.subbags.push_back(std::move(sub));
  }
  return bag;
}

template <typename T>
mil::LossBreakdown DtfdModel<T>::accumulate_gradients(const data::Volume& volume, std::uint64_t seed,
                                                      nn::ParamStore<T>& grads, T scale) {
  const data::SubBagBatch batch = this->sample(volume, seed);
  nn::ShardedPass<T> pass;
  const Mat<T> h = this->encode(batch, true, &pass);
  std::vector<std::vector<int>> members;
  const mil::BagEmbeddings<T> bag = pseudo_bags(h, batch.label, seed, members);
  const auto g = mil::joint_gradients<T>(std::span(&bag, 1), mil_params(), this->spec_.distill, this->lambda_);
  this->add_tier_gradient(tier1_, g.params.subbag, scale, grads);
  this->add_tier_gradient(tier2_, g.params.bag, scale, grads);
  Mat<T> d_h(h.rows(), h.cols());
  for (std::size_t m = 0; m < members.size(); ++m)
    for (std::size_t j = 0; j < members[m].size(); ++j)
      d_h.col(members[m][j]) = scale * g.embeddings[0][m].col(static_cast<Eigen::Index>(j));
  this->encoder_backward(pass, d_h, grads);
  return g.loss;
}

template <typename T>
mil::LossBreakdown DtfdModel<T>::loss(const data::Volume& volume, std::uint64_t seed) const {
  const data::SubBagBatch batch = this->sample(volume, seed);
  nn::ShardedPass<T> pass;
  std::vector<std::vector<int>> members;
  const mil::BagEmbeddings<T> bag = pseudo_bags(this->encode(batch, true, &pass), batch.label, seed, members);
  return mil::joint_objective<T>(std::span(&bag, 1), mil_params(), this->spec_.distill, this->lambda_);
}

template <typename T>
double DtfdModel<T>::predict(const data::Volume& volume, std::uint64_t seed) const {
  const data::SubBagBatch batch = this->sample(volume, seed);
  std::vector<std::vector<int>> members;
  const mil::BagEmbeddings<T> bag = pseudo_bags(this->encode(batch, false, nullptr), batch.label, seed, members);
  return static_cast<double>(mil::forward_bag(bag, mil_params(), this->spec_.distill).bag.prediction);
}

template <typename T>
Supervised3dModel<T>::Supervised3dModel(ModelSpec spec) : Model<T>(std::move(spec)), net_(this->spec_.encoder) {
  if (this->spec_.kind != ModelKind::supervised3d) throw ConfigError("Supervised3dModel built from another spec");
  this->params_ = net_.init_params();
}

template <typename T>
data::Volume Supervised3dModel<T>::prepare(const data::Volume& raw) const {
  const Dims3 target = this->spec_.resample;
  const data::CropBox box = data::crop_box(raw, this->spec_.crop_margin);
  // Crop with the mask so normalization uses the region of interest.
  data::Volume cropped = data::make_volume(raw.id, box.row_end - box.row_begin, box.col_end - box.col_begin,
                                           box.slice_end - box.slice_begin);
  cropped.mask.assign(cropped.voxels.size(), 0);
  for (int r = 0; r < cropped.rows; ++r)
    for (int c = 0; c < cropped.cols; ++c)
      for (int s = 0; s < cropped.slices; ++s) {
        cropped.at(r, c, s) = raw.at(box.row_begin + r, box.col_begin + c, box.slice_begin + s);
        cropped.mask[cropped.index(r, c, s)] = raw.in_mask(box.row_begin + r, box.col_begin + c, box.slice_begin + s);
      }
  const data::Volume normalized = data::normalize_volume(cropped);
  data::Grid3 grid{normalized.rows, normalized.cols, normalized.slices, normalized.voxels};
  data::Grid3 resampled = data::resample_trilinear(grid, target.h, target.w, target.d);
  data::Volume out = data::make_volume(raw.id, target.h, target.w, target.d);
  out.voxels = std::move(resampled.values);
  out.mask.assign(out.voxels.size(), 1);
  out.score = raw.score;
  out.label = raw.label;
  out.provenance = raw.provenance;
  return out;
}

template <typename T>
nn::Activation<T> Supervised3dModel<T>::to_input(const data::Volume& v) const {
  const Dims3 expect = this->spec_.resample;
  require(v.slices == expect.d && v.rows == expect.h && v.cols == expect.w,
          "volume shape does not match the 3D model input; run prepare() first");
  nn::Activation<T> input;
  input.resize(1, 1, {v.slices, v.rows, v.cols});
  Eigen::Index j = 0;
  for (int s = 0; s < v.slices; ++s)
    for (int r = 0; r < v.rows; ++r)
      for (int c = 0; c < v.cols; ++c) input.data(0, j++) = static_cast<T>(v.at(r, c, s));
  return input;
}

template <typename T>
T Supervised3dModel<T>::logit(const data::Volume& prepared, bool training) const {
  const nn::Activation<T> input = to_input(prepared);
  if (!training) return nn::infer_sharded(net_, this->params_, input, 1)(0, 0);
  nn::ShardedPass<T> pass;
  return nn::forward_sharded(net_, this->params_, input, 1, true, pass)(0, 0);
}

template <typename T>
mil::LossBreakdown Supervised3dModel<T>::accumulate_gradients(const data::Volume& volume, std::uint64_t,
                                                              nn::ParamStore<T>& grads, T scale) {
  const nn::Activation<T> input = to_input(volume);
  nn::ShardedPass<T> pass;
  const T z = nn::forward_sharded(net_, this->params_, input, 1, true, pass)(0, 0);
  const double p = static_cast<double>(mil::sigmoid(z));
  const double l = mil::bce(p, volume.label);
  if (!std::isfinite(l)) throw NumericFailure(volume.id, "non-finite loss");
  Mat<T> d_out(1, 1);
  d_out(0, 0) = scale * static_cast<T>(mil::bce_logit_gradient(p, volume.label));
  nn::backward_sharded(net_, this->params_, pass, d_out, grads);
  if (this->spec_.encoder.norm == nn::NormKind::batch) {
    std::vector<const typename nn::ResidualNet<T>::Workspace*> ws;
    for (const auto& s : pass.shards) ws.push_back(&s);
    net_.update_running_stats(this->params_, ws);
  }
  return {l, 0.0, l};
}

template <typename T>
mil::LossBreakdown Supervised3dModel<T>::loss(const data::Volume& volume, std::uint64_t) const {
  const double l = mil::bce(static_cast<double>(mil::sigmoid(logit(volume, true))), volume.label);
  return {l, 0.0, l};
}

template <typename T>
double Supervised3dModel<T>::predict(const data::Volume& volume, std::uint64_t) const {
  return static_cast<double>(mil::sigmoid(logit(volume, false)));
}

template class AbmilModel<float>;
template class AbmilModel<double>;
template class DtfdModel<float>;
template class DtfdModel<double>;
template class Supervised3dModel<float>;
template class Supervised3dModel<double>;

}  // namespace hamil::models
