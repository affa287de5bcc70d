#pragma once

#include "hamil/common/text_format.hpp"

#include <cstdint>

namespace hamil::train {

struct TrainConfig {
  int epochs = 50;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double eta_min = 0.0;
  int patience = 8;
  int bags_per_step = 1;
  double loss_weight_lambda = 1.0;
  std::uint64_t seed = 0;
  int workers = 1;

  // Throws ConfigError.
  void validate() const;
  void write(KeyValueDoc& doc) const;
  static TrainConfig read(const KeyValueDoc& doc);
};

}  // namespace hamil::train
