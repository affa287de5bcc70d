#pragma once

#include "hamil/common/types.hpp"
#include "hamil/data/sampling.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace hamil::eval {

struct PatchRow {
  int subbag = 0;
  int slice = 0;
  int row = 0;
  int col = 0;
  int rows = 0;
  int cols = 0;
  double instance_attention = 0;
  double subbag_attention = 0;

  double weight() const { return instance_attention * subbag_attention; }
};

struct SliceMap {
  int slice = 0;
  Mat<double> map;  // R x C, normalized so the slice maximum is 1
  double raw_mass = 0;  // sum of the map before normalization
};

struct HeatmapRecord {
  std::string volume_id;
  std::vector<PatchRow> patches;
  std::vector<SliceMap> slices;  // one per sub-bag, in sub-bag order
  int max_patch = -1;            // index into patches of the largest weight

  const PatchRow& max_patch_row() const { return patches.at(static_cast<std::size_t>(max_patch)); }
};

// Back-projects both attention tiers onto the sampled slices. Each patch
// contributes instance x sub-bag attention to its window; every pixel is
// divided by the number of patches covering it, then each slice map is
// scaled to a maximum of 1.
HeatmapRecord build_heatmap(const std::string& volume_id, const data::SubBagBatch& batch,
                            const std::vector<std::vector<double>>& instance_attention,
                            const std::vector<double>& subbag_attention, int volume_rows, int volume_cols);

// Writes slice_<index>.pgm per sub-bag slice and patches.csv. Returns the
// list of files written.
std::vector<std::filesystem::path> write_heatmap(const HeatmapRecord& record, const std::filesystem::path& dir);

// Binary 8-bit graymap of a [0, 1] matrix.
void write_pgm(const Mat<double>& image, const std::filesystem::path& path);

}  // namespace hamil::eval
