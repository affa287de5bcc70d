#pragma once

#include "hamil/models/model_spec.hpp"
#include "hamil/nn/resnet.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hamil::eval {

// One multiply-accumulate counts as two floating-point operations.
inline constexpr std::int64_t kFlopsPerMac = 2;

// conv: 2 * taps * C_in * C_out * output positions; linear: 2 * in * out;
// norm, relu, add and pool are not counted. Unknown kinds raise DescriptorError.
std::int64_t layer_flops(const nn::LayerInfo& layer);
std::int64_t network_flops(std::span<const nn::LayerInfo> layers);
std::int64_t encoder_flops(const nn::EncoderConfig& config);

// Attention scores (V h, w^T tanh), pooling and the classifier of one tier
// over `instances` embeddings of width L.
std::int64_t tier_flops(int embedding_dim, int attention_dim, int instances);

struct FlopBreakdown {
  std::string model;
  std::int64_t patch_term = 0;  // encoder work over all instances (or the volume)
  std::int64_t head_term = 0;   // attention tiers and classifiers
  std::int64_t total() const { return patch_term + head_term; }
};

// Forward cost of one bag. MIL families encode M*K patches of the spec's
// patch size; supervised3d encodes one volume of `volume_dims`
// (slices, rows, cols) with the spec's 3D topology.
FlopBreakdown model_flops(const models::ModelSpec& spec, Dims3 volume_dims);

}  // namespace hamil::eval
