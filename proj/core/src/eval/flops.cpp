#include "hamil/eval/flops.hpp"

#include "hamil/common/errors.hpp"

namespace hamil::eval {

std::int64_t layer_flops(const nn::LayerInfo& layer) {
  if (layer.kind == "conv")
    return kFlopsPerMac * layer.kernel.volume() * layer.in_channels * layer.out_channels * layer.out_size.volume();
  if (layer.kind == "linear") return kFlopsPerMac * std::int64_t{layer.in_channels} * layer.out_channels;
  if (layer.kind == "norm" || layer.kind == "relu" || layer.kind == "add" || layer.kind == "pool") return 0;
  throw DescriptorError("unsupported layer kind: " + layer.kind);
}

std::int64_t network_flops(std::span<const nn::LayerInfo> layers) {
  std::int64_t total = 0;
  for (const auto& l : layers) total += layer_flops(l);
  return total;
}

std::int64_t encoder_flops(const nn::EncoderConfig& config) {
  const nn::ResidualNet<float> net(config);
  const auto layers = net.describe_layers(config.input_size());
  return network_flops(layers);
}

std::int64_t tier_flops(int embedding_dim, int attention_dim, int instances) {
  const std::int64_t L = embedding_dim, D = attention_dim, K = instances;
  const std::int64_t scores = kFlopsPerMac * (D * L * K + D * K);
  const std::int64_t pooling = kFlopsPerMac * L * K;
  const std::int64_t classifier = kFlopsPerMac * L;
  return scores + pooling + classifier;
}

FlopBreakdown model_flops(const models::ModelSpec& spec, Dims3 volume_dims) {
  FlopBreakdown out;
  out.model = models::to_string(spec.kind);
  const int M = spec.sampling.subbags;
  const int K = spec.sampling.instances;
  const int L = spec.encoder.embedding_dim;
  const int D = spec.attention_dim;
  switch (spec.kind) {
    case models::ModelKind::hamil:
      out.patch_term = std::int64_t{M} * K * encoder_flops(spec.encoder);
      out.head_term = M * tier_flops(L, D, K) + tier_flops(L, D, M);
      break;
    case models::ModelKind::abmil:
      out.patch_term = std::int64_t{M} * K * encoder_flops(spec.encoder);
      out.head_term = tier_flops(L, D, M * K);
      break;
    case models::ModelKind::dtfd: {
      const int n = spec.effective_pseudo_bags();
      out.patch_term = std::int64_t{M} * K * encoder_flops(spec.encoder);
      // Pseudo-bag sizes differ by at most one; the tier cost is linear in size.
      out.head_term = (n - 1) * tier_flops(L, D, 0) + tier_flops(L, D, M * K) + tier_flops(L, D, n);
      break;
    }
    case models::ModelKind::supervised3d: {
      nn::EncoderConfig cfg = spec.encoder;
      cfg.in_slices = volume_dims.d;
      cfg.in_rows = volume_dims.h;
      cfg.in_cols = volume_dims.w;
      out.patch_term = encoder_flops(cfg);
      break;
    }
  }
  return out;
}

}  // namespace hamil::eval
