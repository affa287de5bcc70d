#include "hamil/data/sampling.hpp"

#include "hamil/common/errors.hpp"

#include <cmath>
#include <numeric>

namespace hamil::data {

void SamplingConfig::validate() const {
  if (subbags < 1) throw ConfigError("M (sub-bags per volume) must be >= 1");
  if (instances < 1) throw ConfigError("K (instances per sub-bag) must be >= 1");
  if (patch_rows < 1 || patch_cols < 1) throw ConfigError("patch size must be positive");
  if (!(min_mask_overlap >= 0.0 && min_mask_overlap <= 1.0)) throw ConfigError("mask overlap must lie in [0, 1]");
}

int SubBagBatch::patch_count() const {
  int n = 0;
  for (const auto& o : origins) n += static_cast<int>(o.size());
  return n;
}

int SubBagBatch::flat_index(int m, int k) const {
  int idx = 0;
  for (int i = 0; i < m; ++i) idx += static_cast<int>(origins[static_cast<std::size_t>(i)].size());
  return idx + k;
}

std::span<const float> SubBagBatch::patch(int m, int k) const {
  const std::size_t off = static_cast<std::size_t>(flat_index(m, k)) * patch_size();
  return std::span<const float>(pixels).subspan(off, patch_size());
}

std::vector<PatchOrigin> valid_windows(const Volume& volume, int slice, const SamplingConfig& config) {
  std::vector<PatchOrigin> out;
  const int r = config.patch_rows, c = config.patch_cols;
  if (r > volume.rows || c > volume.cols || volume.mask.empty()) return out;
  // Integral image of the mask slice.
  const int W = volume.cols + 1;
  std::vector<int> sat(static_cast<std::size_t>(volume.rows + 1) * static_cast<std::size_t>(W), 0);
  auto at = [&](int i, int j) -> int& { return sat[static_cast<std::size_t>(i) * static_cast<std::size_t>(W) + static_cast<std::size_t>(j)]; };
  for (int i = 0; i < volume.rows; ++i)
    for (int j = 0; j < volume.cols; ++j)
      at(i + 1, j + 1) = at(i, j + 1) + at(i + 1, j) - at(i, j) + (volume.in_mask(i, j, slice) ? 1 : 0);
  const double need = config.min_mask_overlap * r * c;
  for (int i = 0; i + r <= volume.rows; ++i)
    for (int j = 0; j + c <= volume.cols; ++j) {
      const int covered = at(i + r, j + c) - at(i, j + c) - at(i + r, j) + at(i, j);
      if (covered > 0 && covered >= need) out.push_back({slice, i, j});
    }
  return out;
}

std::vector<int> eligible_slices(const Volume& volume, const SamplingConfig& config) {
  std::vector<int> out;
  for (int s : volume.mask_slices())
    if (!valid_windows(volume, s, config).empty()) out.push_back(s);
  return out;
}

SubBagBatch sample_subbags(const Volume& volume, const SamplingConfig& config, Rng& rng) {
  config.validate();
  std::vector<int> eligible = eligible_slices(volume, config);
  if (static_cast<int>(eligible.size()) < config.subbags)
    throw SamplingError("volume " + volume.id + ": " + std::to_string(eligible.size()) +
                        " eligible slices, need " + std::to_string(config.subbags));

  SubBagBatch batch;
  batch.volume_id = volume.id;
  batch.label = volume.label;
  batch.patch_rows = config.patch_rows;
  batch.patch_cols = config.patch_cols;
  // Partial Fisher-Yates: the first M entries are a uniform draw without replacement.
  for (int i = 0; i < config.subbags; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), eligible.size() - 1);
    std::swap(eligible[static_cast<std::size_t>(i)], eligible[pick(rng)]);
    batch.slice_indices.push_back(eligible[static_cast<std::size_t>(i)]);
  }
  batch.pixels.reserve(static_cast<std::size_t>(config.subbags) * static_cast<std::size_t>(config.instances) * batch.patch_size());
  for (int s : batch.slice_indices) {
    const std::vector<PatchOrigin> windows = valid_windows(volume, s, config);
    std::uniform_int_distribution<std::size_t> pick(0, windows.size() - 1);
    std::vector<PatchOrigin> chosen;
    for (int k = 0; k < config.instances; ++k) {
      const PatchOrigin o = windows[pick(rng)];
      chosen.push_back(o);
      for (int i = 0; i < config.patch_rows; ++i)
        for (int j = 0; j < config.patch_cols; ++j) batch.pixels.push_back(volume.at(o.row + i, o.col + j, s));
    }
    batch.origins.push_back(std::move(chosen));
  }
  return batch;
}

}  // namespace hamil::data
