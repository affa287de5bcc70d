#pragma once

// Loop-based reference implementation of the two-tier attention MIL
// objective, written without Eigen expressions, plus a central
// finite-difference gradient checker built on it.

#include "hamil/common/rng.hpp"
#include "hamil/mil/mil.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

using Columns = std::vector<std::vector<double>>;  // [instance][feature]

inline Columns columns_of(const hamil::Mat<double>& m) {
  Columns out(static_cast<std::size_t>(m.cols()), std::vector<double>(static_cast<std::size_t>(m.rows())));
  for (int k = 0; k < m.cols(); ++k)
    for (int l = 0; l < m.rows(); ++l) out[k][l] = m(l, k);
  return out;
}

struct TierResult {
  std::vector<double> attention;
  std::vector<double> pooled;
  double prediction = 0;
};

inline TierResult tier(const Columns& h, const hamil::mil::TierParams<double>& p) {
  const int D = static_cast<int>(p.attention.V.rows());
  const int L = static_cast<int>(p.attention.V.cols());
  TierResult r;
  std::vector<double> score(h.size());
  for (std::size_t k = 0; k < h.size(); ++k) {
    double s = 0;
    for (int d = 0; d < D; ++d) {
      double u = 0;
      for (int l = 0; l < L; ++l) u += p.attention.V(d, l) * h[k][l];
      s += p.attention.w(d) * std::tanh(u);
    }
    score[k] = s;
  }
  // Textbook softmax: exp / sum, no shift. Inputs here are small.
  double total = 0;
  for (double s : score) total += std::exp(s);
  for (double s : score) r.attention.push_back(std::exp(s) / total);
  r.pooled.assign(L, 0.0);
  for (std::size_t k = 0; k < h.size(); ++k)
    for (int l = 0; l < L; ++l) r.pooled[l] += r.attention[k] * h[k][l];
  double z = p.classifier.bias_enabled ? p.classifier.bias : 0.0;
  for (int l = 0; l < L; ++l) z += p.classifier.weight(l) * r.pooled[l];
  r.prediction = 1.0 / (1.0 + std::exp(-z));
  return r;
}

inline double bce(double p, int y) { return y == 1 ? -std::log(p) : -std::log(1.0 - p); }

struct BagResult {
  std::vector<double> subbag_predictions;
  std::vector<double> subbag_attention;
  double prediction = 0;
};

inline BagResult bag(const hamil::mil::BagEmbeddings<double>& b, const hamil::mil::MilParams<double>& p,
                     hamil::mil::DistillMode mode) {
  BagResult out;
  Columns distilled;
  for (const auto& sb : b.subbags) {
    const Columns h = columns_of(sb);
    const TierResult t = tier(h, p.subbag);
    out.subbag_predictions.push_back(t.prediction);
    if (mode == hamil::mil::DistillMode::mean) {
      std::vector<double> mean(h.front().size(), 0.0);
      for (const auto& col : h)
        for (std::size_t l = 0; l < col.size(); ++l) mean[l] += col[l] / static_cast<double>(h.size());
      distilled.push_back(mean);
    } else {
      distilled.push_back(t.pooled);
    }
  }
  const TierResult top = tier(distilled, p.bag);
  out.subbag_attention = top.attention;
  out.prediction = top.prediction;
  return out;
}

struct Loss {
  double subbag = 0;
  double bag = 0;
  double total = 0;
};

inline Loss joint(const std::vector<hamil::mil::BagEmbeddings<double>>& batch, const hamil::mil::MilParams<double>& p,
                  hamil::mil::DistillMode mode, double lambda = 1.0) {
  Loss loss;
  int subbags = 0;
  for (const auto& b : batch) {
    const BagResult r = bag(b, p, mode);
    for (double q : r.subbag_predictions) loss.subbag += bce(q, b.label);
    subbags += static_cast<int>(r.subbag_predictions.size());
    loss.bag += bce(r.prediction, b.label);
  }
  loss.subbag /= subbags;
  loss.bag /= static_cast<double>(batch.size());
  loss.total = loss.subbag + lambda * loss.bag;
  return loss;
}

inline hamil::Mat<double> gaussian(int rows, int cols, hamil::Rng& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  hamil::Mat<double> m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

inline hamil::mil::TierParams<double> random_tier(int L, int D, hamil::Rng& rng, bool bias = true) {
  hamil::mil::TierParams<double> t;
  t.attention.V = gaussian(D, L, rng, 0.8);
  t.attention.w = gaussian(D, 1, rng, 0.8);
  t.classifier.weight = gaussian(L, 1, rng, 0.8);
  t.classifier.bias_enabled = bias;
  t.classifier.bias = bias ? gaussian(1, 1, rng, 0.5)(0, 0) : 0.0;
  return t;
}

inline hamil::mil::MilParams<double> random_params(int L, int D, hamil::Rng& rng, bool bias = true) {
  return {random_tier(L, D, rng, bias), random_tier(L, D, rng, bias)};
}

inline std::vector<hamil::mil::BagEmbeddings<double>> random_batch(int bags, int M, int K, int L, hamil::Rng& rng) {
  std::vector<hamil::mil::BagEmbeddings<double>> batch;
  for (int b = 0; b < bags; ++b) {
    hamil::mil::BagEmbeddings<double> e;
    e.label = b % 2;
    for (int m = 0; m < M; ++m) e.subbags.push_back(gaussian(L, K, rng, 1.0));
    batch.push_back(std::move(e));
  }
  return batch;
}

// Every scalar of a tier, in a fixed order, for perturbation.
inline std::vector<double*> scalars(hamil::mil::TierParams<double>& t) {
  std::vector<double*> out;
  for (int i = 0; i < t.attention.V.size(); ++i) out.push_back(t.attention.V.data() + i);
  for (int i = 0; i < t.attention.w.size(); ++i) out.push_back(t.attention.w.data() + i);
  for (int i = 0; i < t.classifier.weight.size(); ++i) out.push_back(t.classifier.weight.data() + i);
  if (t.classifier.bias_enabled) out.push_back(&t.classifier.bias);
  return out;
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

inline double central_difference(double* x, double step, const std::function<double()>& f) {
  const double saved = *x;
  *x = saved + step;
  const double up = f();
  *x = saved - step;
  const double down = f();
  *x = saved;
  return (up - down) / (2 * step);
}

struct GradCheck {
  double max_rel_error = 0;
  int checked = 0;
};

// Compares joint_gradients against central differences of the loop oracle
// for every parameter and every embedding entry.
inline GradCheck check_joint_gradients(std::uint64_t seed, int L, int D, int K, int M, int bags,
                                       hamil::mil::DistillMode mode, double lambda = 1.0, double step = 1e-5) {
  hamil::Rng rng(seed);
  auto params = random_params(L, D, rng);
  auto batch = random_batch(bags, M, K, L, rng);
  auto analytic = hamil::mil::joint_gradients<double>(batch, params, mode, lambda);

  GradCheck out;
  const auto f = [&] { return joint(batch, params, mode, lambda).total; };
  const auto compare = [&](std::vector<double*> xs, std::vector<double*> gs) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      out.max_rel_error = std::max(out.max_rel_error, relative_error(*gs[i], central_difference(xs[i], step, f)));
      ++out.checked;
    }
  };
  compare(scalars(params.subbag), scalars(analytic.params.subbag));
  compare(scalars(params.bag), scalars(analytic.params.bag));
  for (std::size_t b = 0; b < batch.size(); ++b)
    for (std::size_t m = 0; m < batch[b].subbags.size(); ++m) {
      auto& h = batch[b].subbags[m];
      auto& g = analytic.embeddings[b][m];
      std::vector<double*> xs, gs;
      for (int i = 0; i < h.size(); ++i) {
        xs.push_back(h.data() + i);
        gs.push_back(g.data() + i);
      }
      compare(xs, gs);
    }
  return out;
}

}  // namespace oracle
