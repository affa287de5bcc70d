#include "hamil/common/rng.hpp"
#include "hamil/eval/metrics.hpp"
#include "hamil/mil/mil.hpp"
#include "hamil/nn/resnet.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

using namespace hamil;

namespace {

Mat<float> random_mat(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Mat<float> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

// Encoder forward over a batch of 16x16 patches (one sub-bag of K patches).
void encoder_forward(benchmark::State& state) {
  const auto config = nn::EncoderConfig::desk_scale(16, 16);
  nn::ResidualNet<float> net(config);
  const auto params = net.init_params();
  nn::Activation<float> input;
  input.resize(1, static_cast<int>(state.range(0)), config.input_size());
  input.data = random_mat(1, static_cast<int>(input.positions()), 1);
  for (auto _ : state) benchmark::DoNotOptimize(nn::infer_sharded(net, params, input, 1));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(encoder_forward)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void encoder_forward_backward(benchmark::State& state) {
  const auto config = nn::EncoderConfig::desk_scale(16, 16);
  nn::ResidualNet<float> net(config);
  const auto params = net.init_params();
  auto grads = params.zeros_like();
  nn::Activation<float> input;
  input.resize(1, static_cast<int>(state.range(0)), config.input_size());
  input.data = random_mat(1, static_cast<int>(input.positions()), 2);
  const Mat<float> d_out = random_mat(config.embedding_dim, static_cast<int>(state.range(0)), 3);
  for (auto _ : state) {
    nn::ShardedPass<float> pass;
    benchmark::DoNotOptimize(nn::forward_sharded(net, params, input, 1, true, pass));
    nn::backward_sharded(net, params, pass, d_out, grads);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(encoder_forward_backward)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

// Both attention tiers for one bag of M sub-bags with K instances each.
void two_tier_forward(benchmark::State& state) {
  const int L = 64, D = 64, M = 6, K = static_cast<int>(state.range(0));
  mil::MilParams<float> p;
  for (auto* t : {&p.subbag, &p.bag}) {
    t->attention.V = random_mat(D, L, 4) * 0.1f;
    t->attention.w = random_mat(D, 1, 5).col(0);
    t->classifier.weight = random_mat(L, 1, 6).col(0);
  }
  mil::BagEmbeddings<float> bag;
  for (int m = 0; m < M; ++m) bag.subbags.push_back(random_mat(L, K, 10 + static_cast<std::uint64_t>(m)));
  for (auto _ : state)
    benchmark::DoNotOptimize(mil::forward_bag(bag, p, mil::DistillMode::attention_weighted).bag.prediction);
}
BENCHMARK(two_tier_forward)->Arg(16)->Arg(60);

void auroc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = u(rng);
    labels[i] = static_cast<int>(i % 2);
  }
  for (auto _ : state) benchmark::DoNotOptimize(eval::auroc(scores, labels));
}
BENCHMARK(auroc)->Arg(40)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
