#pragma once

namespace hamil::train {

// eta_min + (eta_0 - eta_min) * (1 + cos(pi * t / horizon)) / 2
double cosine_lr(double eta_0, double eta_min, int t, int horizon);

// Tracks the best validation score. Any strict increase counts as an
// improvement; training stops after `patience` epochs without one.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  // Returns true when `score` is a new best.
  bool update(double score);
  bool should_stop() const { return since_best_ >= patience_; }
  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }
  int epochs_seen() const { return seen_; }

 private:
  int patience_;
  double best_ = -1.0;
  int best_epoch_ = -1;
  int since_best_ = 0;
  int seen_ = 0;
};

}  // namespace hamil::train
