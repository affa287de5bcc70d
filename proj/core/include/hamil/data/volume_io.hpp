#pragma once

#include "hamil/data/volume.hpp"

#include <string>

namespace hamil::data {

inline constexpr int kVolumeFormatVersion = 1;

// Two-file container:
//   <id>.volhdr  "key value" text: format_version, id, dims R C S,
//                dtype float32-le, score, label, mask_present, provenance,
//                artifacts, payload_sha256
//   <id>.volraw  little-endian float32 voxels in (R, C, S) row-major order,
//                followed by one 0/1 byte per voxel when mask_present is 1.
//
// Load errors: CorruptHeader (unparseable or inconsistent header),
// VersionMismatch, TruncatedPayload (payload is not a whole number of voxel
// records), ConsistencyError (whole records, but not R*C*S of them),
// ChecksumMismatch.
//
// Returns the header path.
std::string save_volume(const Volume& volume, const std::string& directory);
// Accepts the .volhdr path, the .volraw path, or the common stem.
Volume load_volume(const std::string& path);

std::string volume_header_path(const std::string& directory, const std::string& id);

}  // namespace hamil::data
