#include "hamil/data/volume_io.hpp"

#include "hamil/common/errors.hpp"
#include "hamil/common/sha256.hpp"
#include "hamil/common/text_format.hpp"

#include <bit>
#include <cstring>
#include <filesystem>

namespace hamil::data {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "payload encoding assumes a little-endian host");

std::string stem_of(const std::string& path) {
  for (const char* ext : {".volhdr", ".volraw"}) {
    const std::string e(ext);
    if (path.size() > e.size() && path.compare(path.size() - e.size(), e.size(), e) == 0)
      return path.substr(0, path.size() - e.size());
  }
  return path;
}

std::string artifacts_text(const Volume& v) {
  if (v.artifacts.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < v.artifacts.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v.artifacts[i].slice) + ":" + to_string(v.artifacts[i].kind);
  }
  return out;
}

std::vector<ArtifactRecord> parse_artifacts(const std::string& text) {
  std::vector<ArtifactRecord> out;
  if (text == "none" || text.empty()) return out;
  for (const auto& item : split(text, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw CorruptHeader("malformed artifact record: " + item);
    out.push_back({static_cast<int>(parse_int(item.substr(0, colon), "artifact slice")),
                   artifact_from_string(item.substr(colon + 1))});
  }
  return out;
}

}  // namespace

std::string volume_header_path(const std::string& directory, const std::string& id) {
  return (fs::path(directory) / (id + ".volhdr")).string();
}

std::string save_volume(const Volume& volume, const std::string& directory) {
  const std::size_t n = static_cast<std::size_t>(volume.rows) * static_cast<std::size_t>(volume.cols) *
                        static_cast<std::size_t>(volume.slices);
  require(volume.voxels.size() == n, "voxel count does not match dimensions");
  require(volume.mask.empty() || volume.mask.size() == n, "mask size does not match dimensions");
  const bool has_mask = !volume.mask.empty();

  std::vector<std::byte> payload(n * sizeof(float) + (has_mask ? n : 0));
  std::memcpy(payload.data(), volume.voxels.data(), n * sizeof(float));
  if (has_mask) std::memcpy(payload.data() + n * sizeof(float), volume.mask.data(), n);

  KeyValueDoc hdr;
  hdr.add("format_version", std::to_string(kVolumeFormatVersion));
  hdr.add("id", volume.id);
  hdr.add("dims", std::to_string(volume.rows) + " " + std::to_string(volume.cols) + " " + std::to_string(volume.slices));
  hdr.add("dtype", "float32-le");
  hdr.add("score", std::to_string(volume.score));
  hdr.add("label", std::to_string(volume.label));
  hdr.add("mask_present", has_mask ? "1" : "0");
  hdr.add("provenance", to_string(volume.provenance));
  hdr.add("artifacts", artifacts_text(volume));
  hdr.add("payload_sha256", sha256_hex(payload));

  fs::create_directories(directory);
  const std::string stem = (fs::path(directory) / volume.id).string();
  write_text_file(stem + ".volraw",
                  std::string_view(reinterpret_cast<const char*>(payload.data()), payload.size()));
  write_text_file(stem + ".volhdr", hdr.str());
  return stem + ".volhdr";
}

Volume load_volume(const std::string& path) {
  const std::string stem = stem_of(path);
  KeyValueDoc hdr;
  Volume v;
  bool has_mask = false;
  std::string expected_sha;
  try {
    hdr = KeyValueDoc::parse(read_text_file(stem + ".volhdr"));
    const long long version = parse_int(hdr.at("format_version"), "format_version");
    if (version != kVolumeFormatVersion)
      throw VersionMismatch("volume format_version " + std::to_string(version) + " is not supported");
    v.id = hdr.at("id");
    const auto dims = split_ws(hdr.at("dims"));
    if (dims.size() != 3) throw CorruptHeader("dims needs three values");
    v.rows = static_cast<int>(parse_int(dims[0], "dims"));
    v.cols = static_cast<int>(parse_int(dims[1], "dims"));
    v.slices = static_cast<int>(parse_int(dims[2], "dims"));
    if (v.rows <= 0 || v.cols <= 0 || v.slices <= 0) throw CorruptHeader("dims must be positive");
    if (hdr.at("dtype") != "float32-le") throw CorruptHeader("unsupported dtype " + hdr.at("dtype"));
    v.score = static_cast<int>(parse_int(hdr.at("score"), "score"));
    v.label = static_cast<int>(parse_int(hdr.at("label"), "label"));
    if (binarize_score(v.score) != v.label) throw CorruptHeader("label disagrees with score");
    const std::string& mp = hdr.at("mask_present");
    if (mp != "0" && mp != "1") throw CorruptHeader("mask_present must be 0 or 1");
    has_mask = mp == "1";
    v.provenance = provenance_from_string(hdr.at("provenance"));
    v.artifacts = parse_artifacts(hdr.at("artifacts"));
    expected_sha = hdr.at("payload_sha256");
  } catch (const IoError&) {
    throw;
  } catch (const NotFound&) {
    throw;
  } catch (const Error& e) {
    throw CorruptHeader(stem + ".volhdr: " + e.what());
  }

  const std::vector<std::byte> payload = read_binary_file(stem + ".volraw");
  const std::size_t n = static_cast<std::size_t>(v.rows) * static_cast<std::size_t>(v.cols) *
                        static_cast<std::size_t>(v.slices);
  const std::size_t record = sizeof(float) + (has_mask ? 1 : 0);
  if (payload.size() % record != 0)
    throw TruncatedPayload(stem + ".volraw: payload of " + std::to_string(payload.size()) +
                           " bytes is not a whole number of voxel records");
  if (payload.size() / record != n)
    throw ConsistencyError(stem + ".volraw: header dims describe " + std::to_string(n) + " voxels, payload holds " +
                           std::to_string(payload.size() / record));
  if (sha256_hex(payload) != expected_sha) throw ChecksumMismatch(stem + ".volraw: payload checksum mismatch");

  v.voxels.resize(n);
  std::memcpy(v.voxels.data(), payload.data(), n * sizeof(float));
  if (has_mask) {
    v.mask.resize(n);
    std::memcpy(v.mask.data(), payload.data() + n * sizeof(float), n);
  }
  return v;
}

}  // namespace hamil::data
