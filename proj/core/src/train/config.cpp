#include "hamil/train/config.hpp"

#include "hamil/common/errors.hpp"

#include <cmath>

namespace hamil::train {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be > 0");
  if (eta_min < 0 || eta_min > learning_rate) throw ConfigError("eta_min must lie in [0, learning rate]");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (patience >= epochs)
    throw ConfigError("patience (" + std::to_string(patience) + ") must be smaller than epochs (" +
                      std::to_string(epochs) + ")");
  if (bags_per_step < 1) throw ConfigError("bags_per_step must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0)) throw ConfigError("bad Adam constants");
  if (!(loss_weight_lambda >= 0)) throw ConfigError("loss weight lambda must be >= 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

void TrainConfig::write(KeyValueDoc& doc) const {
  doc.set("train.epochs", std::to_string(epochs));
  doc.set("train.learning_rate", format_double(learning_rate));
  doc.set("train.beta1", format_double(beta1));
  doc.set("train.beta2", format_double(beta2));
  doc.set("train.adam_eps", format_double(adam_eps));
  doc.set("train.eta_min", format_double(eta_min));
  doc.set("train.patience", std::to_string(patience));
  doc.set("train.bags_per_step", std::to_string(bags_per_step));
  doc.set("train.loss_weight_lambda", format_double(loss_weight_lambda));
  doc.set("train.seed", std::to_string(seed));
  doc.set("train.workers", std::to_string(workers));
}

TrainConfig TrainConfig::read(const KeyValueDoc& doc) {
  TrainConfig c;
  c.epochs = static_cast<int>(parse_int(doc.at("train.epochs"), "epochs"));
  c.learning_rate = parse_double(doc.at("train.learning_rate"), "learning_rate");
  c.beta1 = parse_double(doc.at("train.beta1"), "beta1");
  c.beta2 = parse_double(doc.at("train.beta2"), "beta2");
  c.adam_eps = parse_double(doc.at("train.adam_eps"), "adam_eps");
  c.eta_min = parse_double(doc.at("train.eta_min"), "eta_min");
  c.patience = static_cast<int>(parse_int(doc.at("train.patience"), "patience"));
  c.bags_per_step = static_cast<int>(parse_int(doc.at("train.bags_per_step"), "bags_per_step"));
  c.loss_weight_lambda = parse_double(doc.at("train.loss_weight_lambda"), "loss_weight_lambda");
  c.seed = static_cast<std::uint64_t>(parse_int(doc.at("train.seed"), "seed"));
  c.workers = static_cast<int>(parse_int(doc.at("train.workers"), "workers"));
  return c;
}

}  // namespace hamil::train
