#include "hamil/eval/heatmap.hpp"

#include "hamil/common/errors.hpp"
#include "hamil/common/text_format.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace hamil::eval {

HeatmapRecord build_heatmap(const std::string& volume_id, const data::SubBagBatch& batch,
                            const std::vector<std::vector<double>>& instance_attention,
                            const std::vector<double>& subbag_attention, int volume_rows, int volume_cols) {
  if (volume_id != batch.volume_id) throw ContractViolation("heatmap trace is for " + volume_id +
                                                            " but the patches come from " + batch.volume_id);
  const auto m_count = static_cast<std::size_t>(batch.subbag_count());
  if (instance_attention.size() != m_count || subbag_attention.size() != m_count)
    throw ContractViolation("attention shapes do not match the sub-bag batch");

  HeatmapRecord rec;
  rec.volume_id = volume_id;
  for (std::size_t m = 0; m < m_count; ++m) {
    const auto& origins = batch.origins[m];
    if (instance_attention[m].size() != origins.size())
      throw ContractViolation("instance attention length does not match the sub-bag size");
    Mat<double> sum = Mat<double>::Zero(volume_rows, volume_cols);
    Mat<double> coverage = Mat<double>::Zero(volume_rows, volume_cols);
    for (std::size_t k = 0; k < origins.size(); ++k) {
      const auto& o = origins[k];
      PatchRow row{static_cast<int>(m), o.slice, o.row, o.col, batch.patch_rows, batch.patch_cols,
                   instance_attention[m][k], subbag_attention[m]};
      require(o.row >= 0 && o.col >= 0 && o.row + row.rows <= volume_rows && o.col + row.cols <= volume_cols,
              "patch window outside the volume");
      sum.block(o.row, o.col, row.rows, row.cols).array() += row.weight();
      coverage.block(o.row, o.col, row.rows, row.cols).array() += 1.0;
      if (rec.max_patch < 0 || row.weight() > rec.patches[static_cast<std::size_t>(rec.max_patch)].weight())
        rec.max_patch = static_cast<int>(rec.patches.size());
      rec.patches.push_back(row);
    }
    SliceMap sm;
    sm.slice = batch.slice_indices[m];
    sm.map = (coverage.array() > 0).select(sum.array() / coverage.array().max(1.0), 0.0);
    sm.raw_mass = sm.map.sum();
    const double peak = sm.map.maxCoeff();
    if (peak > 0) sm.map /= peak;
    rec.slices.push_back(std::move(sm));
  }
  return rec;
}

void write_pgm(const Mat<double>& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
  for (Eigen::Index r = 0; r < image.rows(); ++r)
    for (Eigen::Index c = 0; c < image.cols(); ++c) {
      const double v = std::clamp(image(r, c), 0.0, 1.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::filesystem::path> write_heatmap(const HeatmapRecord& record, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  for (const auto& s : record.slices) {
    char name[32];
    std::snprintf(name, sizeof name, "slice_%03d.pgm", s.slice);
    files.push_back(dir / name);
    write_pgm(s.map, files.back());
  }
  std::ostringstream csv;
  csv << "subbag,slice,row,col,rows,cols,instance_attention,subbag_attention,weight\n";
  for (const auto& p : record.patches)
    csv << p.subbag << ',' << p.slice << ',' << p.row << ',' << p.col << ',' << p.rows << ',' << p.cols << ','
        << format_double(p.instance_attention) << ',' << format_double(p.subbag_attention) << ','
        << format_double(p.weight()) << '\n';
  files.push_back(dir / "patches.csv");
  write_text_file(files.back().string(), csv.str());
  return files;
}

}  // namespace hamil::eval
