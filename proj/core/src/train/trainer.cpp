#include "hamil/train/trainer.hpp"

#include "hamil/common/errors.hpp"
#include "hamil/common/rng.hpp"
#include "hamil/common/text_format.hpp"
#include "hamil/data/volume_io.hpp"
#include "hamil/train/adam.hpp"
#include "hamil/train/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace hamil::train {

namespace {

constexpr std::uint64_t kEvalStream = 0x6576616cULL;
constexpr std::uint64_t kShuffleStream = 0x73687566ULL;

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t eval_seed(std::uint64_t run_seed, const std::string& volume_id) {
  return mix_seed(run_seed, kEvalStream, fnv1a(volume_id));
}

std::uint64_t train_seed(std::uint64_t run_seed, int epoch, int volume_index) {
  return mix_seed(run_seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(volume_index));
}

template <typename T>
std::vector<data::Volume> load_split(const data::Manifest& manifest, data::Split split, const models::Model<T>& model) {
  std::vector<data::Volume> out;
  for (const auto* e : manifest.in_split(split)) out.push_back(model.prepare(data::load_volume(manifest.resolve(*e))));
  return out;
}

template <typename T>
std::vector<double> predict_all(const models::Model<T>& model, const std::vector<data::Volume>& volumes,
                                std::uint64_t run_seed) {
  std::vector<double> out;
  out.reserve(volumes.size());
  for (const auto& v : volumes) out.push_back(model.predict(v, eval_seed(run_seed, v.id)));
  return out;
}

std::vector<int> labels_of(const std::vector<data::Volume>& volumes) {
  std::vector<int> out;
  for (const auto& v : volumes) out.push_back(v.label);
  return out;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch,train_loss,subbag_loss,bag_loss,val_auroc,learning_rate\n";
  for (const auto& r : history)
    out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.subbag_loss) << ','
        << format_double(r.bag_loss) << ',' << format_double(r.val_auroc) << ',' << format_double(r.learning_rate)
        << '\n';
  return out.str();
}

template <typename T>
TrainResult train_on(models::Model<T>& model, const std::vector<data::Volume>& train_set,
                     const std::vector<data::Volume>& val_set, const TrainConfig& config,
                     const TrainOptions& options) {
  config.validate();
  if (train_set.empty()) throw ConfigError("training split is empty");
  if (val_set.empty()) throw ConfigError("validation split is empty");
  const std::vector<int> val_labels = labels_of(val_set);
  if (std::count(val_labels.begin(), val_labels.end(), 1) == 0 || std::count(val_labels.begin(), val_labels.end(), 0) == 0)
    throw ConfigError("validation split needs both classes");

  model.set_workers(config.workers);
  model.set_loss_weight(config.loss_weight_lambda);
  auto& params = model.params();
  Adam<T> adam(params, config.beta1, config.beta2, config.adam_eps);
  nn::ParamStore<T> grads = params.zeros_like();
  nn::ParamStore<T> best_params = params;
  EarlyStopping stopper(config.patience);
  Rng shuffle_rng(mix_seed(config.seed, kShuffleStream));

  const bool write = !options.out_dir.empty();
  if (write) std::filesystem::create_directories(options.out_dir);
  Checkpoint<T> ck;
  ck.info.dtype = sizeof(T) == 4 ? "float32-le" : "float64-le";
  ck.info.spec = model.spec();
  ck.info.config = config;

  TrainResult result;
  std::vector<int> order(train_set.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = cosine_lr(config.learning_rate, config.eta_min, epoch, config.epochs);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double sum_total = 0, sum_sub = 0, sum_bag = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.bags_per_step)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.bags_per_step));
      const T scale = static_cast<T>(1.0 / static_cast<double>(end - start));
      grads.set_zero();
      for (std::size_t i = start; i < end; ++i) {
        const int idx = order[i];
        const data::Volume& v = train_set[static_cast<std::size_t>(idx)];
        const std::string where = "epoch " + std::to_string(epoch) + " volume " + v.id;
        mil::LossBreakdown l;
        try {
          l = model.accumulate_gradients(v, train_seed(config.seed, epoch, idx), grads, scale);
        } catch (const NumericFailure& e) {
          throw NumericFailure(where + ", " + e.where(), "training diverged");
        } catch (const InvalidInput& e) {
          throw NumericFailure(where, std::string("training diverged: ") + e.what());
        }
        if (!std::isfinite(l.total)) throw NumericFailure(where, "non-finite loss");
        sum_total += l.total;
        sum_sub += l.subbag;
        sum_bag += l.bag;
      }
      for (const auto& t : grads)
        if (!t.value.allFinite()) throw NumericFailure("epoch " + std::to_string(epoch) + " " + t.name, "non-finite gradient");
      adam.step(params, grads, lr);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    const double n = static_cast<double>(train_set.size());
    rec.train_loss = sum_total / n;
    rec.subbag_loss = sum_sub / n;
    rec.bag_loss = sum_bag / n;
    rec.learning_rate = lr;
    rec.val_auroc = eval::auroc(predict_all(model, val_set, config.seed), val_labels);
    result.history.push_back(rec);

    const bool improved = stopper.update(rec.val_auroc);
    ck.info.rng_digest = rng_digest(shuffle_rng);
    ck.info.best_val_auroc = stopper.best();
    if (improved) {
      best_params = params;
      if (write) {
        ck.info.epoch = epoch;
        ck.params = params;
        save_checkpoint(ck, (options.out_dir / "best.ckpt").string());
      }
    }
    if (write) {
      ck.info.epoch = epoch;
      ck.params = params;
      save_checkpoint(ck, (options.out_dir / "last.ckpt").string());
      write_text_file((options.out_dir / "history.csv").string(), history_csv(result.history));
    }
    if (options.on_epoch) options.on_epoch(rec);
    if (stopper.should_stop()) {
      result.stopped_early = epoch + 1 < config.epochs;
      break;
    }
  }
  params = best_params;
  result.best_epoch = stopper.best_epoch();
  result.best_val_auroc = stopper.best();
  return result;
}

template <typename T>
TrainResult train_model(models::Model<T>& model, const data::Manifest& manifest, const TrainConfig& config,
                        const TrainOptions& options) {
  config.validate();
  const auto train_set = load_split(manifest, data::Split::train, model);
  const auto val_set = load_split(manifest, data::Split::val, model);
  return train_on(model, train_set, val_set, config, options);
}

#define HAMIL_INSTANTIATE(T)                                                                                        \
  template std::vector<data::Volume> load_split<T>(const data::Manifest&, data::Split, const models::Model<T>&);    \
  template std::vector<double> predict_all<T>(const models::Model<T>&, const std::vector<data::Volume>&,            \
                                              std::uint64_t);                                                       \
  template TrainResult train_on<T>(models::Model<T>&, const std::vector<data::Volume>&,                             \
                                   const std::vector<data::Volume>&, const TrainConfig&, const TrainOptions&);      \
  template TrainResult train_model<T>(models::Model<T>&, const data::Manifest&, const TrainConfig&, const TrainOptions&);

HAMIL_INSTANTIATE(float)
HAMIL_INSTANTIATE(double)
#undef HAMIL_INSTANTIATE

}  // namespace hamil::train
