#include "hamil/eval/metrics.hpp"

#include "hamil/common/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace hamil::eval {
namespace {

void check_inputs(std::span<const double> preds, std::span<const int> labels) {
  if (preds.empty()) throw InvalidInput("metric over an empty set");
  if (preds.size() != labels.size()) throw InvalidInput("predictions and labels differ in length");
  for (int y : labels)
    if (y != 0 && y != 1) throw InvalidInput("labels must be 0 or 1");
  for (double p : preds)
    if (std::isnan(p)) throw InvalidInput("prediction is NaN");
}

bool positive(double p) { return p >= kThreshold; }

}  // namespace

double accuracy(std::span<const double> preds, std::span<const int> labels) {
  check_inputs(preds, labels);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += (positive(preds[i]) ? 1 : 0) == labels[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average ranks over tie groups (1-based, doubled to stay integral).
  double pos_rank_sum2 = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double rank2 = static_cast<double>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1) {
        pos_rank_sum2 += rank2;
        ++n_pos;
      }
    i = j + 1;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetric("AUROC needs both classes present");
  const double np = static_cast<double>(n_pos);
  const double u2 = pos_rank_sum2 - np * (np + 1.0);
  return u2 / (2.0 * np * static_cast<double>(n_neg));
}

double f1(std::span<const double> preds, std::span<const int> labels) {
  check_inputs(preds, labels);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = positive(preds[i]);
    if (p && labels[i] == 1) ++tp;
    if (p && labels[i] == 0) ++fp;
    if (!p && labels[i] == 1) ++fn;
  }
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

MetricReport evaluate(std::span<const double> preds, std::span<const int> labels) {
  MetricReport r;
  r.accuracy = accuracy(preds, labels);
  r.f1 = f1(preds, labels);
  r.n_pos = static_cast<int>(std::count(labels.begin(), labels.end(), 1));
  r.n_neg = static_cast<int>(labels.size()) - r.n_pos;
  r.auroc = auroc(preds, labels);
  return r;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw InvalidInput("mean of an empty set");
  MeanStd out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

std::string format_mean_std(const MeanStd& value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f ± %.3f", value.mean, value.std);
  return buf;
}

}  // namespace hamil::eval
