#pragma once

#include "hamil/data/manifest.hpp"
#include "hamil/data/volume.hpp"
#include "hamil/eval/metrics.hpp"
#include "hamil/models/model.hpp"
#include "hamil/train/checkpoint.hpp"
#include "hamil/train/config.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace hamil::train {

// Sampling seed for evaluating one volume: fixed per (run seed, volume id)
// so scores are comparable across epochs and reproducible from a checkpoint.
std::uint64_t eval_seed(std::uint64_t run_seed, const std::string& volume_id);
// Sampling seed for one training bag in one epoch.
std::uint64_t train_seed(std::uint64_t run_seed, int epoch, int volume_index);

// Loads every volume of a split and applies the model's preprocessing.
template <typename T>
std::vector<data::Volume> load_split(const data::Manifest& manifest, data::Split split, const models::Model<T>& model);

template <typename T>
std::vector<double> predict_all(const models::Model<T>& model, const std::vector<data::Volume>& volumes,
                                std::uint64_t run_seed);
std::vector<int> labels_of(const std::vector<data::Volume>& volumes);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double subbag_loss = 0;
  double bag_loss = 0;
  double val_auroc = 0;
  double learning_rate = 0;
};

std::string history_csv(const std::vector<EpochRecord>& history);

struct TrainOptions {
  // When set: last.ckpt after every epoch, best.ckpt on improvement and
  // history.csv are written here.
  std::filesystem::path out_dir;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_auroc = 0;
  bool stopped_early = false;
};

// Trains in place and leaves the best-validation parameters in the model.
template <typename T>
TrainResult train_model(models::Model<T>& model, const data::Manifest& manifest, const TrainConfig& config,
                        const TrainOptions& options = {});

// Same loop over volumes already in memory (prepared by the model).
template <typename T>
TrainResult train_on(models::Model<T>& model, const std::vector<data::Volume>& train_set,
                     const std::vector<data::Volume>& val_set, const TrainConfig& config,
                     const TrainOptions& options = {});

}  // namespace hamil::train
