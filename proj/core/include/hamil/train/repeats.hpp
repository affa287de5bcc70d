#pragma once

#include "hamil/data/manifest.hpp"
#include "hamil/eval/metrics.hpp"
#include "hamil/models/model_spec.hpp"
#include "hamil/train/config.hpp"
#include "hamil/train/trainer.hpp"

#include <filesystem>
#include <functional>
#include <vector>

namespace hamil::train {

struct RunMetrics {
  int run = 0;
  std::uint64_t seed = 0;
  eval::MetricReport metrics;
  TrainResult training;
};

struct RepeatSummary {
  std::vector<RunMetrics> runs;
  eval::MeanStd accuracy;
  eval::MeanStd auroc;
  eval::MeanStd f1;
};

RepeatSummary summarize(std::vector<RunMetrics> runs);

struct RepeatOptions {
  data::Split split = data::Split::test;
  bool double_precision = false;
  // Run i writes to out_root/run_<i> when set.
  std::filesystem::path out_root;
  std::function<void(int run, const EpochRecord&)> on_epoch;
};

// Trains and evaluates n_runs models with seeds seed, seed + 1, ... (the
// seed drives initialization, shuffling and sampling).
RepeatSummary run_repeats(const data::Manifest& manifest, const models::ModelSpec& spec, const TrainConfig& config,
                          int n_runs, const RepeatOptions& options = {});

}  // namespace hamil::train
