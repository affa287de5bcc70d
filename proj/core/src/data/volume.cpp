#include "hamil/data/volume.hpp"

#include "hamil/common/errors.hpp"

#include <cmath>

namespace hamil::data {

std::string to_string(ArtifactKind kind) {
  switch (kind) {
    case ArtifactKind::blur: return "blur";
    case ArtifactKind::ghosting: return "ghosting";
    case ArtifactKind::dropout: return "dropout";
    case ArtifactKind::noise: return "noise";
  }
  return "noise";
}

ArtifactKind artifact_from_string(const std::string& text) {
  if (text == "blur") return ArtifactKind::blur;
  if (text == "ghosting") return ArtifactKind::ghosting;
  if (text == "dropout") return ArtifactKind::dropout;
  if (text == "noise") return ArtifactKind::noise;
  throw InvalidInput("unknown artifact kind: " + text);
}

std::string to_string(Provenance p) { return p == Provenance::synthetic ? "synthetic" : "external"; }

Provenance provenance_from_string(const std::string& text) {
  if (text == "synthetic") return Provenance::synthetic;
  if (text == "external") return Provenance::external;
  throw InvalidInput("unknown provenance: " + text);
}

std::vector<int> Volume::mask_slices() const {
  std::vector<int> out;
  if (mask.empty()) return out;
  std::vector<char> hit(static_cast<std::size_t>(slices), 0);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) hit[i % static_cast<std::size_t>(slices)] = 1;
  for (int s = 0; s < slices; ++s)
    if (hit[static_cast<std::size_t>(s)]) out.push_back(s);
  return out;
}

void Volume::validate() const {
  if (rows <= 0 || cols <= 0 || slices <= 0) throw InvalidInput("volume " + id + ": non-positive dimensions");
  const std::size_t n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * static_cast<std::size_t>(slices);
  if (voxels.size() != n) throw InvalidInput("volume " + id + ": voxel count does not match dimensions");
  if (!mask.empty() && mask.size() != n) throw InvalidInput("volume " + id + ": mask size does not match dimensions");
  if (mask_slices().empty()) throw InvalidInput("volume " + id + ": mask is empty");
  if (binarize_score(score) != label) throw InvalidInput("volume " + id + ": label disagrees with score");
  for (float v : voxels)
    if (!std::isfinite(v)) throw InvalidInput("volume " + id + ": non-finite voxel");
}

Volume make_volume(std::string id, int rows, int cols, int slices) {
  Volume v;
  v.id = std::move(id);
  v.rows = rows;
  v.cols = cols;
  v.slices = slices;
  const std::size_t n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * static_cast<std::size_t>(slices);
  v.voxels.assign(n, 0.0f);
  v.mask.assign(n, 0);
  return v;
}

int binarize_score(int score) {
  if (score < 1 || score > 5) throw InvalidInput("score must be in 1..5, got " + std::to_string(score));
  return score >= 3 ? 1 : 0;
}

}  // namespace hamil::data
