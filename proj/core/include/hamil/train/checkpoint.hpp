#pragma once

#include "hamil/models/model.hpp"
#include "hamil/models/model_spec.hpp"
#include "hamil/nn/param_store.hpp"
#include "hamil/train/config.hpp"

#include <string>

namespace hamil::train {

inline constexpr int kCheckpointVersion = 1;

// Everything except the tensors, as stored in the text header.
struct CheckpointInfo {
  int version = kCheckpointVersion;
  std::string dtype;  // float32-le or float64-le
  models::ModelSpec spec;
  TrainConfig config;
  int epoch = 0;
  double best_val_auroc = 0;
  std::string rng_digest;
};

template <typename T>
struct Checkpoint {
  CheckpointInfo info;
  nn::ParamStore<T> params;
};

// File layout: "key value" header lines, a line holding "---", then the raw
// little-endian tensor blob. The header lists every tensor (name,
// trainable flag, element offset, element count, shape) and the blob's SHA-256.
template <typename T>
void save_checkpoint(const Checkpoint<T>& checkpoint, const std::string& path);

// Header only. Throws CorruptHeader, VersionMismatch, NotFound.
CheckpointInfo read_checkpoint_info(const std::string& path);

// Tensors are converted when the stored precision differs from T.
// Throws TruncatedPayload or DigestMismatch for a damaged blob.
template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path);

// Copies checkpoint tensors into a model built from a compatible spec.
// Throws IncompatibleArchitecture when descriptors or tensor shapes differ.
template <typename T>
void restore_parameters(const Checkpoint<T>& checkpoint, models::Model<T>& model);

// Builds the model described by the checkpoint and loads its parameters.
template <typename T>
std::unique_ptr<models::Model<T>> model_from_checkpoint(const Checkpoint<T>& checkpoint);

}  // namespace hamil::train
