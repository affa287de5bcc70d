#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hamil::data {

enum class Provenance { synthetic, external };

enum class ArtifactKind { blur, ghosting, dropout, noise };

std::string to_string(ArtifactKind kind);
ArtifactKind artifact_from_string(const std::string& text);
std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& text);

struct ArtifactRecord {
  int slice = 0;
  ArtifactKind kind = ArtifactKind::noise;
  friend bool operator==(const ArtifactRecord&, const ArtifactRecord&) = default;
};

// A scan: R x C x S voxels stored row-major in (row, col, slice) order, so
// the slice index varies fastest. The mask marks the region of interest.
struct Volume {
  std::string id;
  int rows = 0;
  int cols = 0;
  int slices = 0;
  std::vector<float> voxels;
  std::vector<std::uint8_t> mask;  // same indexing as voxels; empty when absent
  int score = 3;
  int label = 1;
  Provenance provenance = Provenance::synthetic;
  std::vector<ArtifactRecord> artifacts;

  std::size_t index(int r, int c, int s) const {
    return (static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)) *
               static_cast<std::size_t>(slices) +
           static_cast<std::size_t>(s);
  }
  float at(int r, int c, int s) const { return voxels[index(r, c, s)]; }
  float& at(int r, int c, int s) { return voxels[index(r, c, s)]; }
  bool in_mask(int r, int c, int s) const { return !mask.empty() && mask[index(r, c, s)] != 0; }
  std::size_t voxel_count() const { return voxels.size(); }

  // Slices containing at least one mask voxel, ascending.
  std::vector<int> mask_slices() const;
  // Throws InvalidInput when shapes, label or mask violate the invariants.
  void validate() const;

  friend bool operator==(const Volume&, const Volume&) = default;
};

Volume make_volume(std::string id, int rows, int cols, int slices);

// Scores 1..5 map to 1 (diagnostic) when >= 3, else 0.
int binarize_score(int score);

}  // namespace hamil::data
