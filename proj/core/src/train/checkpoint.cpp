#include "hamil/train/checkpoint.hpp"

#include "hamil/common/errors.hpp"
#include "hamil/common/sha256.hpp"
#include "hamil/common/text_format.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace hamil::train {

namespace {

static_assert(std::endian::native == std::endian::little, "blob encoding assumes a little-endian host");

constexpr std::string_view kSeparator = "\n---\n";

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "float32-le" : "float64-le";
}

std::string shape_text(const std::vector<int>& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? "x" : "") + std::to_string(shape[i]);
  return out.empty() ? "scalar" : out;
}

std::vector<int> parse_shape(const std::string& text) {
  std::vector<int> shape;
  if (text == "scalar") return shape;
  for (const auto& p : split(text, 'x')) shape.push_back(static_cast<int>(parse_int(p, "shape")));
  return shape;
}

struct TensorEntry {
  std::string name;
  bool trainable = true;
  std::int64_t offset = 0;
  std::int64_t count = 0;
  std::vector<int> shape;
};

struct ParsedFile {
  CheckpointInfo info;
  std::vector<TensorEntry> tensors;
  std::int64_t blob_bytes = 0;
  std::string blob_sha;
  std::vector<std::byte> blob;
};

ParsedFile parse_file(const std::string& path, bool want_blob) {
  const std::vector<std::byte> bytes = read_binary_file(path);
  const std::string_view all(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  const auto sep = all.find(kSeparator);
  if (sep == std::string_view::npos) throw CorruptHeader(path + ": missing header separator");
  ParsedFile f;
  try {
    const KeyValueDoc doc = KeyValueDoc::parse(all.substr(0, sep));
    const long long version = parse_int(doc.at("hamil_checkpoint"), "checkpoint version");
    if (version != kCheckpointVersion)
      throw VersionMismatch(path + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    f.info.version = static_cast<int>(version);
    f.info.dtype = doc.at("dtype");
    if (f.info.dtype != "float32-le" && f.info.dtype != "float64-le")
      throw CorruptHeader("unsupported dtype " + f.info.dtype);
    f.info.spec = models::ModelSpec::read(doc);
    f.info.config = TrainConfig::read(doc);
    f.info.epoch = static_cast<int>(parse_int(doc.at("epoch"), "epoch"));
    f.info.best_val_auroc = parse_double(doc.at("best_val_auroc"), "best_val_auroc");
    f.info.rng_digest = doc.at("rng_digest");
    for (const auto& line : doc.all("tensor")) {
      const auto t = split_ws(line);
      if (t.size() != 5) throw CorruptHeader("malformed tensor entry: " + line);
      f.tensors.push_back({t[0], t[1] == "1", parse_int(t[2], "offset"), parse_int(t[3], "count"), parse_shape(t[4])});
    }
    f.blob_bytes = parse_int(doc.at("blob_bytes"), "blob_bytes");
    f.blob_sha = doc.at("blob_sha256");
  } catch (const IoError&) {
    throw;
  } catch (const Error& e) {
    throw CorruptHeader(path + ": " + e.what());
  }
  if (want_blob) {
    const std::size_t start = sep + kSeparator.size();
    const std::size_t have = bytes.size() - start;
    if (have != static_cast<std::size_t>(f.blob_bytes))
      throw TruncatedPayload(path + ": tensor blob holds " + std::to_string(have) + " bytes, header declares " +
                             std::to_string(f.blob_bytes));
    f.blob.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.end());
    if (sha256_hex(f.blob) != f.blob_sha) throw DigestMismatch(path + ": tensor blob digest mismatch");
  }
  return f;
}

template <typename Stored, typename T>
void decode(const std::vector<std::byte>& blob, const TensorEntry& e, Vec<T>& out) {
  const std::size_t end = static_cast<std::size_t>(e.offset + e.count) * sizeof(Stored);
  if (e.offset < 0 || e.count < 0 || end > blob.size()) throw CorruptHeader("tensor " + e.name + " lies outside the blob");
  std::vector<Stored> tmp(static_cast<std::size_t>(e.count));
  std::memcpy(tmp.data(), blob.data() + static_cast<std::size_t>(e.offset) * sizeof(Stored), end - e.offset * sizeof(Stored));
  out.resize(e.count);
  for (std::int64_t i = 0; i < e.count; ++i) out(i) = static_cast<T>(tmp[static_cast<std::size_t>(i)]);
}

}  // namespace

template <typename T>
void save_checkpoint(const Checkpoint<T>& ck, const std::string& path) {
  std::vector<std::byte> blob;
  KeyValueDoc doc;
  doc.add("hamil_checkpoint", std::to_string(kCheckpointVersion));
  doc.add("dtype", dtype_name<T>());
  doc.add("epoch", std::to_string(ck.info.epoch));
  doc.add("best_val_auroc", format_double(ck.info.best_val_auroc));
  doc.add("rng_digest", ck.info.rng_digest.empty() ? "none" : ck.info.rng_digest);
  doc.add("descriptor", ck.info.spec.descriptor());
  ck.info.spec.write(doc);
  ck.info.config.write(doc);
  std::int64_t offset = 0;
  for (const auto& t : ck.params) {
    doc.add("tensor", t.name + " " + (t.trainable ? "1" : "0") + " " + std::to_string(offset) + " " +
                          std::to_string(t.size()) + " " + shape_text(t.shape));
    const std::size_t bytes = static_cast<std::size_t>(t.size()) * sizeof(T);
    const std::size_t at = blob.size();
    blob.resize(at + bytes);
    std::memcpy(blob.data() + at, t.value.data(), bytes);
    offset += t.size();
  }
  doc.add("blob_bytes", std::to_string(blob.size()));
  doc.add("blob_sha256", sha256_hex(blob));

  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  // Write then rename so an interrupted run never leaves a half-written file.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    const std::string header = doc.str();
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(kSeparator.data() + 1, static_cast<std::streamsize>(kSeparator.size() - 1));
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

CheckpointInfo read_checkpoint_info(const std::string& path) { return parse_file(path, false).info; }

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  ParsedFile f = parse_file(path, true);
  Checkpoint<T> ck;
  ck.info = f.info;
  for (const auto& e : f.tensors) {
    const int idx = ck.params.add(e.name, e.shape, e.trainable);
    if (ck.params[idx].size() != e.count) throw CorruptHeader(path + ": tensor " + e.name + " shape and count disagree");
    if (f.info.dtype == "float32-le")
      decode<float>(f.blob, e, ck.params[idx].value);
    else
      decode<double>(f.blob, e, ck.params[idx].value);
  }
  return ck;
}

template <typename T>
void restore_parameters(const Checkpoint<T>& ck, models::Model<T>& model) {
  if (!ck.info.spec.same_architecture(model.spec()))
    throw IncompatibleArchitecture("checkpoint architecture [" + ck.info.spec.descriptor() +
                                   "] does not match model [" + model.spec().descriptor() + "]");
  auto& params = model.params();
  if (!params.same_layout(ck.params))
    throw IncompatibleArchitecture("checkpoint tensor table does not match the model's parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const int idx = static_cast<int>(i);
    if (params[idx].name != ck.params[idx].name)
      throw IncompatibleArchitecture("tensor " + params[idx].name + " missing from checkpoint");
    params[idx].value = ck.params[idx].value;
  }
}

template <typename T>
std::unique_ptr<models::Model<T>> model_from_checkpoint(const Checkpoint<T>& ck) {
  auto model = models::make_model<T>(ck.info.spec);
  restore_parameters(ck, *model);
  model->set_loss_weight(ck.info.config.loss_weight_lambda);
  return model;
}

template void save_checkpoint<float>(const Checkpoint<float>&, const std::string&);
template void save_checkpoint<double>(const Checkpoint<double>&, const std::string&);
template Checkpoint<float> load_checkpoint<float>(const std::string&);
template Checkpoint<double> load_checkpoint<double>(const std::string&);
template void restore_parameters<float>(const Checkpoint<float>&, models::Model<float>&);
template void restore_parameters<double>(const Checkpoint<double>&, models::Model<double>&);
template std::unique_ptr<models::Model<float>> model_from_checkpoint<float>(const Checkpoint<float>&);
template std::unique_ptr<models::Model<double>> model_from_checkpoint<double>(const Checkpoint<double>&);

}  // namespace hamil::train
