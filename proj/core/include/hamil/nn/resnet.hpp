#pragma once

#include "hamil/common/types.hpp"
#include "hamil/nn/layers.hpp"
#include "hamil/nn/param_store.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hamil::nn {

// Residual CNN family used for the patch encoder (2D) and the fully
// supervised baseline (3D). Topology: stem conv-norm-relu, then one stage per
// entry of `channels` with `num_blocks` basic blocks (first block of every
// stage after the first downsamples by 2), global average pool, linear head.
struct EncoderConfig {
  int in_rows = 16;
  int in_cols = 16;
  int in_slices = 1;        // volumetric input depth
  bool volumetric = false;  // 3x3x3 kernels instead of 1x3x3
  int stem_channels = 16;
  int stem_stride = 1;
  std::vector<int> channels{16, 32, 64};
  int num_blocks = 1;
  int embedding_dim = 64;  // output width; 1 for the volumetric classifier
  NormKind norm = NormKind::group;
  int norm_groups = 4;
  bool zero_init_head = false;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
  Dims3 input_size() const { return volumetric ? Dims3{in_slices, in_rows, in_cols} : Dims3{1, in_rows, in_cols}; }

  // One-line structured text recorded in checkpoints.
  std::string descriptor() const;
  static EncoderConfig from_descriptor(const std::string& text);
  // Topology-only comparison (ignores seed and init options).
  bool same_architecture(const EncoderConfig& other) const;

  // Default desk-scale 2D encoder: stem 16, stages (16, 32, 64), L = 64.
  static EncoderConfig desk_scale(int rows, int cols);
  // Ten weighted layers: stem + 4 blocks x 2 convs + head.
  static EncoderConfig resnet10(int rows, int cols);
};

// Flat description of one layer, used by the FLOP cost model.
struct LayerInfo {
  std::string kind;  // conv, norm, relu, add, pool, linear
  int in_channels = 0;
  int out_channels = 0;
  Dims3 kernel{1, 1, 1};
  Dims3 out_size{1, 1, 1};
};

template <typename T>
class ResidualNet {
 public:
  explicit ResidualNet(EncoderConfig config);

  const EncoderConfig& config() const { return config_; }
  int output_dim() const { return config_.embedding_dim; }

  // He-normal convolutions, unit norm scale, zero shift; deterministic in config().seed.
  ParamStore<T> init_params() const;
  std::vector<LayerInfo> describe_layers(Dims3 input) const;

  struct Workspace;

  // Input: 1 channel, any batch, spatial size input_size(). Output: output_dim x batch.
  Mat<T> forward(const ParamStore<T>& params, const Activation<T>& input, Workspace& ws, bool training) const;
  // Accumulates parameter gradients of <d_out, output> into grads.
  void backward(const ParamStore<T>& params, const Workspace& ws, const Mat<T>& d_out, ParamStore<T>& grads) const;
  // Inference (batch-norm running statistics).
  Mat<T> infer(const ParamStore<T>& params, const Activation<T>& input) const;
  // Folds batch statistics recorded by training-mode forwards into the running estimates.
  void update_running_stats(ParamStore<T>& params, std::span<const Workspace* const> passes) const;

  struct NormRef {
    int gamma = -1;
    int beta = -1;
    int running_mean = -1;
    int running_var = -1;
  };
  struct ConvUnit {
    ConvSpec spec;
    int weight = -1;
    NormRef norm;
  };
  struct Block {
    ConvUnit conv1;
    ConvUnit conv2;
    std::optional<ConvUnit> shortcut;
  };

  struct UnitCache {
    Activation<T> conv_out;
    NormCache<T> norm;
    Activation<T> out;
  };
  struct BlockCache {
    UnitCache conv1;
    UnitCache conv2;
    UnitCache shortcut;
    Activation<T> out;
  };
  struct Workspace {
    Activation<T> input;
    UnitCache stem;
    std::vector<BlockCache> blocks;
    Mat<T> pooled;
    mutable Mat<T> scratch;
    bool training = false;
  };

 private:
  void unit_forward(const ParamStore<T>& params, const ConvUnit& unit, const Activation<T>& in, UnitCache& cache,
                    Mat<T>& scratch, bool training) const;
  // Returns gradient w.r.t. the unit input when want_input is set.
  void unit_backward(const ParamStore<T>& params, const ConvUnit& unit, const Activation<T>& in,
                     const UnitCache& cache, Mat<T> d_norm_out, ParamStore<T>& grads, Activation<T>* d_in,
                     Mat<T>& scratch) const;
  ConvUnit make_unit(ParamStore<T>& layout, const std::string& name, ConvSpec spec) const;

  EncoderConfig config_;
  ParamStore<T> layout_;  // shapes only; init_params() fills values
  ConvUnit stem_;
  std::vector<Block> blocks_;
  int head_weight_ = -1;
  int head_bias_ = -1;
};

// Data-parallel pass over a batch split into contiguous shards. Each shard
// runs on its own thread with a private workspace; parameter gradients are
// reduced in shard order, so results depend only on the shard count.
template <typename T>
struct ShardedPass {
  std::vector<typename ResidualNet<T>::Workspace> shards;
  std::vector<int> offsets;  // sample offset of each shard, plus a final end marker
};

template <typename T>
Mat<T> forward_sharded(const ResidualNet<T>& net, const ParamStore<T>& params, const Activation<T>& input,
                       int workers, bool training, ShardedPass<T>& pass);
template <typename T>
void backward_sharded(const ResidualNet<T>& net, const ParamStore<T>& params, const ShardedPass<T>& pass,
                      const Mat<T>& d_out, ParamStore<T>& grads);
template <typename T>
Mat<T> infer_sharded(const ResidualNet<T>& net, const ParamStore<T>& params, const Activation<T>& input,
                     int workers);

// Analytic trainable-parameter count for a configuration.
std::int64_t parameter_count(const EncoderConfig& config);

}  // namespace hamil::nn
