#pragma once

#include "hamil/data/sampling.hpp"
#include "hamil/data/volume.hpp"
#include "hamil/mil/mil.hpp"
#include "hamil/models/model_spec.hpp"
#include "hamil/nn/param_store.hpp"
#include "hamil/nn/resnet.hpp"

#include <cstdint>
#include <memory>
#include <vector>

namespace hamil::models {

// A trainable bag classifier. All families share this interface so the
// training and evaluation harness is identical across them.
template <typename T>
class Model {
 public:
  explicit Model(ModelSpec spec);
  virtual ~Model() = default;

  const ModelSpec& spec() const { return spec_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  void set_workers(int workers) { workers_ = workers < 1 ? 1 : workers; }
  int workers() const { return workers_; }
  // Weight of the bag term in the two-tier objective.
  void set_loss_weight(double lambda) { lambda_ = lambda; }
  double loss_weight() const { return lambda_; }

  // Family-specific preprocessing, applied once to every loaded volume.
  virtual data::Volume prepare(const data::Volume& raw) const = 0;
  // Adds scale * gradient of one bag's loss into grads and returns that
  // loss. The seed drives all sampling. Batch-norm running statistics are
  // folded into params as a side effect.
  virtual mil::LossBreakdown accumulate_gradients(const data::Volume& volume, std::uint64_t seed,
                                                  nn::ParamStore<T>& grads, T scale) = 0;
  // Same loss, forward only, training-mode normalization.
  virtual mil::LossBreakdown loss(const data::Volume& volume, std::uint64_t seed) const = 0;
  // Bag probability in inference mode.
  virtual double predict(const data::Volume& volume, std::uint64_t seed) const = 0;

 protected:
  ModelSpec spec_;
  nn::ParamStore<T> params_;
  int workers_ = 1;
  double lambda_ = 1.0;
};

// Tensor indices of one attention tier inside a ParamStore.
struct TierSlots {
  int V = -1;
  int w = -1;
  int weight = -1;
  int bias = -1;
};

// Shared pieces of the patch-based families: encoder plus sampling.
template <typename T>
class PatchModel : public Model<T> {
 public:
  explicit PatchModel(ModelSpec spec);

  data::Volume prepare(const data::Volume& raw) const override;
  const nn::ResidualNet<T>& encoder() const { return net_; }

  // Samples and encodes one bag. Embeddings are L x (M*K), sub-bag major.
  data::SubBagBatch sample(const data::Volume& volume, std::uint64_t seed) const;
  Mat<T> encode(const data::SubBagBatch& batch, bool training, nn::ShardedPass<T>* pass) const;

 protected:
  TierSlots add_tier(const std::string& prefix, std::uint64_t stream);
  mil::TierParams<T> tier(const TierSlots& slots) const;
  void add_tier_gradient(const TierSlots& slots, const mil::TierParams<T>& g, T scale, nn::ParamStore<T>& grads) const;
  void encoder_backward(nn::ShardedPass<T>& pass, const Mat<T>& d_embeddings, nn::ParamStore<T>& grads);

  nn::ResidualNet<T> net_;
};

// Everything recorded by one HAMIL forward pass, for heatmaps.
template <typename T>
struct ForwardTrace {
  data::SubBagBatch batch;
  Mat<T> embeddings;  // L x (M*K)
  mil::BagTrace<T> bag;
};

template <typename T>
class HamilModel : public PatchModel<T> {
 public:
  explicit HamilModel(ModelSpec spec);

  mil::LossBreakdown accumulate_gradients(const data::Volume& volume, std::uint64_t seed, nn::ParamStore<T>& grads,
                                          T scale) override;
  mil::LossBreakdown loss(const data::Volume& volume, std::uint64_t seed) const override;
  double predict(const data::Volume& volume, std::uint64_t seed) const override;

  ForwardTrace<T> trace(const data::Volume& volume, std::uint64_t seed) const;
  mil::MilParams<T> mil_params() const;

 private:
  mil::BagEmbeddings<T> group(const data::SubBagBatch& batch, const Mat<T>& embeddings) const;
  TierSlots subbag_;
  TierSlots bag_;
};

// Single-tier attention MIL over all M*K patches as one flat bag.
template <typename T>
class AbmilModel : public PatchModel<T> {
 public:
  explicit AbmilModel(ModelSpec spec);

  mil::LossBreakdown accumulate_gradients(const data::Volume& volume, std::uint64_t seed, nn::ParamStore<T>& grads,
                                          T scale) override;
  mil::LossBreakdown loss(const data::Volume& volume, std::uint64_t seed) const override;
  double predict(const data::Volume& volume, std::uint64_t seed) const override;

  mil::TierParams<T> tier_params() const { return this->tier(tier_); }

 private:
  TierSlots tier_;
};

// Random even partition of `count` items into n groups (sizes differ by at
// most one). Throws ConfigError when n < 2 or count < n.
std::vector<std::vector<int>> random_partition(int count, int n, Rng& rng);

// Two tiers over random pseudo-bags instead of slices.
template <typename T>
class DtfdModel : public PatchModel<T> {
 public:
  explicit DtfdModel(ModelSpec spec);

  mil::LossBreakdown accumulate_gradients(const data::Volume& volume, std::uint64_t seed, nn::ParamStore<T>& grads,
                                          T scale) override;
  mil::LossBreakdown loss(const data::Volume& volume, std::uint64_t seed) const override;
  double predict(const data::Volume& volume, std::uint64_t seed) const override;

  mil::MilParams<T> mil_params() const;
  // Pseudo-bag embeddings and the index of every member column.
  mil::BagEmbeddings<T> pseudo_bags(const Mat<T>& embeddings, int label, std::uint64_t seed,
                                    std::vector<std::vector<int>>& members) const;

 private:
  TierSlots tier1_;
  TierSlots tier2_;
};

// 3D encoder over the cropped, normalized and resampled volume.
template <typename T>
class Supervised3dModel : public Model<T> {
 public:
  explicit Supervised3dModel(ModelSpec spec);

  data::Volume prepare(const data::Volume& raw) const override;
  mil::LossBreakdown accumulate_gradients(const data::Volume& volume, std::uint64_t seed, nn::ParamStore<T>& grads,
                                          T scale) override;
  mil::LossBreakdown loss(const data::Volume& volume, std::uint64_t seed) const override;
  double predict(const data::Volume& volume, std::uint64_t seed) const override;

  // Logit for a prepared volume.
  T logit(const data::Volume& prepared, bool training) const;

 private:
  nn::Activation<T> to_input(const data::Volume& prepared) const;
  nn::ResidualNet<T> net_;
};

template <typename T>
std::unique_ptr<Model<T>> make_model(const ModelSpec& spec);

}  // namespace hamil::models
