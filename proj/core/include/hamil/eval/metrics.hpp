#pragma once

#include <span>
#include <string>
#include <vector>

namespace hamil::eval {

inline constexpr double kThreshold = 0.5;

// Fraction of predictions with (p >= 0.5) == label.
double accuracy(std::span<const double> preds, std::span<const int> labels);
// Mann-Whitney estimate: P(score_pos > score_neg), ties count one half.
// Throws UndefinedMetric when either class is missing.
double auroc(std::span<const double> scores, std::span<const int> labels);
// F1 of the positive class at threshold 0.5; 0 when there are no true positives.
double f1(std::span<const double> preds, std::span<const int> labels);

struct MetricReport {
  double accuracy = 0;
  double auroc = 0;
  double f1 = 0;
  int n_pos = 0;
  int n_neg = 0;
  double threshold = kThreshold;
};

MetricReport evaluate(std::span<const double> preds, std::span<const int> labels);

struct MeanStd {
  double mean = 0;
  double std = 0;  // sample standard deviation; 0 for a single value
};

MeanStd mean_std(std::span<const double> values);
// "0.700 ± 0.100"
std::string format_mean_std(const MeanStd& value);

}  // namespace hamil::eval
