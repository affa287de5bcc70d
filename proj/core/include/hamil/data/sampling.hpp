#pragma once

#include "hamil/common/rng.hpp"
#include "hamil/data/volume.hpp"

#include <span>
#include <string>
#include <vector>

namespace hamil::data {

struct SamplingConfig {
  int subbags = 6;      // M
  int instances = 60;   // K
  int patch_rows = 16;  // r
  int patch_cols = 16;  // c
  // A crop window must overlap the mask by at least this fraction of its area.
  double min_mask_overlap = 0.25;

  void validate() const;
};

struct PatchOrigin {
  int slice = 0;
  int row = 0;
  int col = 0;
  friend bool operator==(const PatchOrigin&, const PatchOrigin&) = default;
};

// M sub-bags of K patches drawn from one volume. Pixels are stored patch by
// patch (sub-bag major), row-major within a patch.
struct SubBagBatch {
  std::string volume_id;
  int label = 0;
  int patch_rows = 0;
  int patch_cols = 0;
  std::vector<int> slice_indices;                 // M
  std::vector<std::vector<PatchOrigin>> origins;  // M x K
  std::vector<float> pixels;

  int subbag_count() const { return static_cast<int>(slice_indices.size()); }
  int patch_count() const;
  std::size_t patch_size() const { return static_cast<std::size_t>(patch_rows) * static_cast<std::size_t>(patch_cols); }
  // Flat patch index of (m, k).
  int flat_index(int m, int k) const;
  std::span<const float> patch(int m, int k) const;
};

// Slices with at least one crop window satisfying the overlap rule.
std::vector<int> eligible_slices(const Volume& volume, const SamplingConfig& config);
// Top-left corners of every valid window in slice s.
std::vector<PatchOrigin> valid_windows(const Volume& volume, int slice, const SamplingConfig& config);

// M distinct slices uniformly without replacement from the eligible ones,
// then K windows per slice uniformly (with replacement) over valid positions.
// Throws SamplingError naming the volume when fewer than M slices qualify.
SubBagBatch sample_subbags(const Volume& volume, const SamplingConfig& config, Rng& rng);

}  // namespace hamil::data
