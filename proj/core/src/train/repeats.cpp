#include "hamil/train/repeats.hpp"

#include "hamil/common/errors.hpp"
#include "hamil/models/model.hpp"

namespace hamil::train {

RepeatSummary summarize(std::vector<RunMetrics> runs) {
  RepeatSummary s;
  std::vector<double> acc, auc, f;
  for (const auto& r : runs) {
    acc.push_back(r.metrics.accuracy);
    auc.push_back(r.metrics.auroc);
    f.push_back(r.metrics.f1);
  }
  s.accuracy = eval::mean_std(acc);
  s.auroc = eval::mean_std(auc);
  s.f1 = eval::mean_std(f);
  s.runs = std::move(runs);
  return s;
}

namespace {

template <typename T>
RunMetrics one_run(const data::Manifest& manifest, models::ModelSpec spec, TrainConfig config, int run,
                   const RepeatOptions& options) {
  config.seed += static_cast<std::uint64_t>(run);
  spec.seed = config.seed;
  spec.sync_encoder();
  auto model = models::make_model<T>(spec);
  TrainOptions topt;
  if (!options.out_root.empty()) topt.out_dir = options.out_root / ("run_" + std::to_string(run));
  if (options.on_epoch) topt.on_epoch = [&](const EpochRecord& r) { options.on_epoch(run, r); };
  RunMetrics out;
  out.run = run;
  out.seed = config.seed;
  out.training = train_model(*model, manifest, config, topt);
  const auto held_out = load_split(manifest, options.split, *model);
  if (held_out.empty()) throw ConfigError("evaluation split " + data::to_string(options.split) + " is empty");
  const auto preds = predict_all(*model, held_out, config.seed);
  out.metrics = eval::evaluate(preds, labels_of(held_out));
  return out;
}

}  // namespace

RepeatSummary run_repeats(const data::Manifest& manifest, const models::ModelSpec& spec, const TrainConfig& config,
                          int n_runs, const RepeatOptions& options) {
  if (n_runs < 1) throw ConfigError("repeats must be >= 1");
  std::vector<RunMetrics> runs;
  for (int i = 0; i < n_runs; ++i)
    runs.push_back(options.double_precision ? one_run<double>(manifest, spec, config, i, options)
                                            : one_run<float>(manifest, spec, config, i, options));
  return summarize(std::move(runs));
}

}  // namespace hamil::train
