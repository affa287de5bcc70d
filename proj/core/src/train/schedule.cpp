#include "hamil/train/schedule.hpp"

#include "hamil/common/errors.hpp"

#include <cmath>
#include <numbers>

namespace hamil::train {

double cosine_lr(double eta_0, double eta_min, int t, int horizon) {
  require(horizon > 0, "schedule horizon must be positive");
  return eta_min + 0.5 * (eta_0 - eta_min) * (1.0 + std::cos(std::numbers::pi * t / horizon));
}

bool EarlyStopping::update(double score) {
  const int epoch = seen_++;
  if (best_epoch_ < 0 || score > best_) {
    best_ = score;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

}  // namespace hamil::train
