#pragma once

#include "hamil/data/volume.hpp"

#include <vector>

namespace hamil::data {

// Dense scalar grid in the same (row, col, slice) order as Volume.
struct Grid3 {
  int rows = 0;
  int cols = 0;
  int slices = 0;
  std::vector<float> values;

  float at(int r, int c, int s) const {
    return values[(static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)) *
                      static_cast<std::size_t>(slices) +
                  static_cast<std::size_t>(s)];
  }
};

// Z-score using the mean and population standard deviation of the masked
// voxels (all voxels when there is no mask). Throws InvalidInput when that
// region is constant.
Volume normalize_volume(const Volume& volume);

// Half-open voxel box.
struct CropBox {
  int row_begin = 0, row_end = 0;
  int col_begin = 0, col_end = 0;
  int slice_begin = 0, slice_end = 0;
};

// Tight bounding box of the mask, grown by `margin` along rows and columns
// only and clipped to the volume.
CropBox crop_box(const Volume& volume, int margin);
Grid3 crop_subvolume(const Volume& volume, int margin);

// Trilinear resampling with pixel-centre alignment and edge clamping.
Grid3 resample_trilinear(const Grid3& grid, int rows, int cols, int slices);

}  // namespace hamil::data
