#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace hamil::data {

enum class Split { unassigned, train, val, test };

std::string to_string(Split split);
Split split_from_string(const std::string& text);

struct ManifestEntry {
  std::string id;
  std::string path;  // relative to the manifest's directory
  int score = 3;
  int label = 1;
  Split split = Split::unassigned;
};

// Dataset index. Text format:
//   hamil_manifest 1
//   seed <n>
//   ratios <train> <val> <test>
//   entry <id> <path> <score> <label> <split>
struct Manifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;
  std::array<double, 3> ratios{0.64, 0.16, 0.20};
  std::string directory;  // where the manifest lives; not serialized

  std::vector<const ManifestEntry*> in_split(Split split) const;
  const ManifestEntry& find(const std::string& id) const;  // throws NotFound
  std::string resolve(const ManifestEntry& entry) const;
  std::string serialize() const;
  // SHA-256 of the serialized text.
  std::string digest() const;
};

// Nested 80:20 then 80:20 of the remainder.
inline constexpr std::array<double, 3> kDefaultSplitRatios{0.64, 0.16, 0.20};

Manifest parse_manifest(const std::string& text, const std::string& directory);
Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& manifest, const std::string& path);

// Stratified by label, deterministic in seed. Split totals follow the
// largest-remainder rounding of n * ratio; per-label counts are rounded so
// each split's label proportions stay within one volume of the global one.
Manifest split_dataset(const Manifest& manifest, std::array<double, 3> ratios, std::uint64_t seed);

}  // namespace hamil::data
