#pragma once

#include "hamil/data/manifest.hpp"
#include "hamil/data/volume.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace hamil::data {

// Synthetic stand-in for a labelled scan collection. Every volume holds an
// ellipsoidal textured shell inside its mask on a noisy background.
// Non-diagnostic volumes have floor(defect_rate * mask slices) (at least one)
// slices corrupted by one artifact each; diagnostic volumes are clean or carry
// one sub-threshold noise slice.
struct PhantomConfig {
  int n_volumes = 200;
  int rows = 64;
  int cols = 64;
  int slices = 24;
  double defect_rate = 0.5;
  std::vector<ArtifactKind> artifact_kinds{ArtifactKind::blur, ArtifactKind::ghosting, ArtifactKind::dropout,
                                           ArtifactKind::noise};
  double class_balance = 0.5;  // fraction of diagnostic (label 1) volumes
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

// Volume i is generated from Rng(mix_seed(seed, i)) (see common/rng.hpp), so
// volumes are independent of one another and of generation order.
std::vector<Volume> generate_phantoms(const PhantomConfig& config);

// Writes every volume under `directory` and returns an unsplit manifest.
Manifest generate_synthetic_dataset(const PhantomConfig& config, const std::string& directory);

}  // namespace hamil::data
