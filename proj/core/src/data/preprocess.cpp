#include "hamil/data/preprocess.hpp"

#include "hamil/common/errors.hpp"

#include <algorithm>
#include <cmath>

namespace hamil::data {

Volume normalize_volume(const Volume& volume) {
  const bool use_mask = !volume.mask.empty();
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < volume.voxels.size(); ++i) {
    if (use_mask && !volume.mask[i]) continue;
    sum += volume.voxels[i];
    ++count;
  }
  if (count == 0) throw InvalidInput("volume " + volume.id + ": empty normalization region");
  const double mean = sum / static_cast<double>(count);
  double sq = 0;
  for (std::size_t i = 0; i < volume.voxels.size(); ++i) {
    if (use_mask && !volume.mask[i]) continue;
    const double d = volume.voxels[i] - mean;
    sq += d * d;
  }
  const double sd = std::sqrt(sq / static_cast<double>(count));
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean))))
    throw InvalidInput("volume " + volume.id + ": constant intensities cannot be normalized");
  Volume out = volume;
  for (auto& x : out.voxels) x = static_cast<float>((x - mean) / sd);
  return out;
}

CropBox crop_box(const Volume& volume, int margin) {
  require(margin >= 0, "crop margin must be non-negative");
  CropBox box{volume.rows, -1, volume.cols, -1, volume.slices, -1};
  for (int r = 0; r < volume.rows; ++r)
    for (int c = 0; c < volume.cols; ++c)
      for (int s = 0; s < volume.slices; ++s)
        if (volume.in_mask(r, c, s)) {
          box.row_begin = std::min(box.row_begin, r);
          box.row_end = std::max(box.row_end, r);
          box.col_begin = std::min(box.col_begin, c);
          box.col_end = std::max(box.col_end, c);
          box.slice_begin = std::min(box.slice_begin, s);
          box.slice_end = std::max(box.slice_end, s);
        }
  if (box.row_end < 0) throw InvalidInput("volume " + volume.id + ": cannot crop around an empty mask");
  box.row_begin = std::max(0, box.row_begin - margin);
  box.col_begin = std::max(0, box.col_begin - margin);
  box.row_end = std::min(volume.rows, box.row_end + 1 + margin);
  box.col_end = std::min(volume.cols, box.col_end + 1 + margin);
  box.slice_end += 1;
  return box;
}

Grid3 crop_subvolume(const Volume& volume, int margin) {
  const CropBox b = crop_box(volume, margin);
  Grid3 g;
  g.rows = b.row_end - b.row_begin;
  g.cols = b.col_end - b.col_begin;
  g.slices = b.slice_end - b.slice_begin;
  g.values.reserve(static_cast<std::size_t>(g.rows) * static_cast<std::size_t>(g.cols) * static_cast<std::size_t>(g.slices));
  for (int r = b.row_begin; r < b.row_end; ++r)
    for (int c = b.col_begin; c < b.col_end; ++c)
      for (int s = b.slice_begin; s < b.slice_end; ++s) g.values.push_back(volume.at(r, c, s));
  return g;
}

namespace {

struct Tap {
  int lo;
  int hi;
  float frac;
};

std::vector<Tap> axis_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int i = 0; i < out; ++i) {
    double x = (i + 0.5) * scale - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(x));
    const int hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(i)] = {lo, hi, static_cast<float>(x - lo)};
  }
  return taps;
}

}  // namespace

Grid3 resample_trilinear(const Grid3& grid, int rows, int cols, int slices) {
  require(rows > 0 && cols > 0 && slices > 0, "resample target must be positive");
  require(grid.rows > 0 && grid.cols > 0 && grid.slices > 0, "resample source must be non-empty");
  const auto tr = axis_taps(grid.rows, rows);
  const auto tc = axis_taps(grid.cols, cols);
  const auto ts = axis_taps(grid.slices, slices);
  Grid3 out{rows, cols, slices, {}};
  out.values.resize(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * static_cast<std::size_t>(slices));
  std::size_t i = 0;
  for (const Tap& r : tr)
    for (const Tap& c : tc)
      for (const Tap& s : ts) {
        auto lerp_s = [&](int rr, int cc) { return grid.at(rr, cc, s.lo) * (1 - s.frac) + grid.at(rr, cc, s.hi) * s.frac; };
        const float c0 = lerp_s(r.lo, c.lo) * (1 - c.frac) + lerp_s(r.lo, c.hi) * c.frac;
        const float c1 = lerp_s(r.hi, c.lo) * (1 - c.frac) + lerp_s(r.hi, c.hi) * c.frac;
        out.values[i++] = c0 * (1 - r.frac) + c1 * r.frac;
      }
  return out;
}

}  // namespace hamil::data
