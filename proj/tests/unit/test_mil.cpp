#include "hamil/common/errors.hpp"
#include "hamil/mil/mil.hpp"
#include "mil_oracle.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace hamil;
using namespace hamil::mil;

namespace {

Mat<double> permute_columns(const Mat<double>& m, const std::vector<int>& order) {
  Mat<double> out(m.rows(), m.cols());
  for (std::size_t j = 0; j < order.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(order[j]);
  return out;
}

}  // namespace

TEST_CASE("softmax stays on the simplex for extreme logits") {
  Rng rng(3);
  std::normal_distribution<double> n(0.0, 400.0);
  for (int trial = 0; trial < 50; ++trial) {
    Vec<double> x(17);
    for (int i = 0; i < x.size(); ++i) x(i) = n(rng);
    const Vec<double> a = softmax(x);
    CHECK(std::abs(a.sum() - 1.0) < 1e-6);
    CHECK(a.minCoeff() >= 0.0);
    CHECK(std::isfinite(a.maxCoeff()));
  }
}

TEST_CASE("softmax is invariant to a constant shift of the logits") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec<double> x = oracle::gaussian(9, 1, rng, 3.0);
    const double c = std::uniform_real_distribution<double>(-50.0, 50.0)(rng);
    const Vec<double> shifted = (x.array() + c).matrix();
    CHECK((softmax(x) - softmax(shifted)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("attention weights match the loop oracle") {
  Rng rng(5);
  const auto tier = oracle::random_tier(6, 4, rng);
  const Mat<double> h = oracle::gaussian(6, 11, rng, 1.0);
  const auto expect = oracle::tier(oracle::columns_of(h), tier);
  const Vec<double> a = attention_weights(h, tier.attention);
  for (int k = 0; k < 11; ++k) CHECK(a(k) == doctest::Approx(expect.attention[k]).epsilon(1e-12));
  const auto out = subbag_forward(h, tier, DistillMode::attention_weighted);
  CHECK(out.prediction == doctest::Approx(expect.prediction).epsilon(1e-12));
  for (int l = 0; l < 6; ++l) CHECK(out.pooled(l) == doctest::Approx(expect.pooled[l]).epsilon(1e-12));
  CHECK(std::abs(out.attention.sum() - 1.0) < 1e-6);
}

TEST_CASE("single instance receives all attention") {
  Rng rng(6);
  const auto tier = oracle::random_tier(5, 3, rng);
  const Mat<double> h = oracle::gaussian(5, 1, rng, 1.0);
  const auto out = subbag_forward(h, tier, DistillMode::attention_weighted);
  CHECK(out.attention(0) == 1.0);
  CHECK((out.pooled - h.col(0)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("predictions are invariant to instance and sub-bag order") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto params = oracle::random_params(8, 5, rng);
    auto batch = oracle::random_batch(1, 5, 7, 8, rng);
    const auto base = forward_bag(batch[0], params, DistillMode::attention_weighted);

    BagEmbeddings<double> shuffled = batch[0];
    for (auto& sb : shuffled.subbags) {
      std::vector<int> order(7);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      sb = permute_columns(sb, order);
    }
    std::vector<int> sub_order(5);
    std::iota(sub_order.begin(), sub_order.end(), 0);
    std::shuffle(sub_order.begin(), sub_order.end(), rng);
    BagEmbeddings<double> reordered = shuffled;
    for (int m = 0; m < 5; ++m) reordered.subbags[m] = shuffled.subbags[sub_order[m]];

    const auto moved = forward_bag(reordered, params, DistillMode::attention_weighted);
    CHECK(std::abs(base.bag.prediction - moved.bag.prediction) < 1e-9);
    for (int m = 0; m < 5; ++m) {
      CHECK(std::abs(base.subbags[sub_order[m]].prediction - moved.subbags[m].prediction) < 1e-9);
      CHECK(std::abs(base.bag.subbag_attention(sub_order[m]) - moved.bag.subbag_attention(m)) < 1e-9);
    }
  }
}

TEST_CASE("bce analytic values and clamp") {
  CHECK(std::abs(bce(0.5, 1) - std::log(2.0)) < 1e-9);
  CHECK(std::abs(bce(0.5, 0) - std::log(2.0)) < 1e-9);
  CHECK(bce(0.9, 1) == doctest::Approx(-std::log(0.9)).epsilon(1e-14));
  CHECK(bce(0.9, 0) == doctest::Approx(-std::log(0.1)).epsilon(1e-12));
  // p = 0 with label 1 is clamped to 1e-7.
  CHECK(bce(0.0, 1) == doctest::Approx(-std::log(1e-7)).epsilon(1e-12));
  CHECK(bce(1.0, 0) == doctest::Approx(-std::log(1e-7)).epsilon(1e-6));
  CHECK(std::isfinite(bce(1.0, 0)));
  CHECK(bce_logit_gradient(0.0, 1) == 0.0);
  CHECK(bce_logit_gradient(1.0, 0) == 0.0);
  CHECK(bce_logit_gradient(0.25, 1) == -0.75);
  CHECK_THROWS_AS(bce(0.5, 2), InvalidInput);
  CHECK_THROWS_AS(bce(1.5, 1), InvalidInput);
  CHECK_THROWS_AS(bce(std::nan(""), 1), InvalidInput);
}

TEST_CASE("joint loss is the sum of its terms") {
  CHECK(joint_loss(0.3, 0.4) == 0.3 + 0.4);
  CHECK(joint_loss(0.3, 0.4, 2.5) == 0.3 + 2.5 * 0.4);
  CHECK_THROWS_AS(joint_loss(std::nan(""), 0.4), InvalidInput);

  Rng rng(8);
  const auto params = oracle::random_params(4, 3, rng);
  const auto batch = oracle::random_batch(4, 3, 5, 4, rng);
  const auto loss = joint_objective<double>(batch, params, DistillMode::attention_weighted);
  const auto expect = oracle::joint(batch, params, DistillMode::attention_weighted);
  CHECK(loss.subbag == doctest::Approx(expect.subbag).epsilon(1e-12));
  CHECK(loss.bag == doctest::Approx(expect.bag).epsilon(1e-12));
  CHECK(loss.total == loss.subbag + loss.bag);
}

TEST_CASE("sub-bag loss with ragged counts averages over all sub-bags") {
  const std::vector<std::vector<double>> preds{{0.9, 0.8, 0.7}, {0.2}};
  const std::vector<int> labels{1, 0};
  const double expect = (-std::log(0.9) - std::log(0.8) - std::log(0.7) - std::log(0.8)) / 4.0;
  CHECK(subbag_loss(preds, labels) == doctest::Approx(expect).epsilon(1e-14));
  CHECK_THROWS_AS(subbag_loss({{}, {}}, labels), InvalidInput);
}

TEST_CASE("mean distillation feeds the instance mean upward") {
  Rng rng(9);
  const auto params = oracle::random_params(4, 3, rng);
  const auto batch = oracle::random_batch(2, 3, 4, 4, rng);
  const auto loss = joint_objective<double>(batch, params, DistillMode::mean);
  const auto expect = oracle::joint(batch, params, DistillMode::mean);
  CHECK(loss.total == doctest::Approx(expect.total).epsilon(1e-12));
  CHECK(distill_mode_from_string(to_string(DistillMode::mean)) == DistillMode::mean);
  CHECK_THROWS_AS(distill_mode_from_string("max"), ConfigError);
}

TEST_CASE("joint gradients match central differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = oracle::check_joint_gradients(1000 + seed, 4, 3, 2, 2, 2, DistillMode::attention_weighted);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.checked == 2 * (12 + 3 + 4 + 1) + 2 * 2 * 4 * 2);
  }
}

TEST_CASE("joint gradients hold for other shapes, lambda and mean distillation") {
  CHECK(oracle::check_joint_gradients(31, 5, 4, 3, 4, 3, DistillMode::attention_weighted, 0.3).max_rel_error < 1e-4);
  CHECK(oracle::check_joint_gradients(32, 4, 3, 2, 2, 2, DistillMode::mean).max_rel_error < 1e-4);
  CHECK(oracle::check_joint_gradients(33, 3, 2, 1, 1, 1, DistillMode::attention_weighted).max_rel_error < 1e-4);
}

TEST_CASE("flat gradients match central differences") {
  Rng rng(40);
  auto tier = oracle::random_tier(4, 3, rng);
  std::vector<Mat<double>> bags{oracle::gaussian(4, 5, rng, 1.0), oracle::gaussian(4, 3, rng, 1.0)};
  const std::vector<int> labels{0, 1};
  const auto analytic = flat_gradients<double>(bags, labels, tier);
  const auto f = [&] {
    double s = 0;
    for (std::size_t b = 0; b < bags.size(); ++b)
      s += oracle::bce(oracle::tier(oracle::columns_of(bags[b]), tier).prediction, labels[b]);
    return s / 2.0;
  };
  CHECK(analytic.loss == doctest::Approx(f()).epsilon(1e-12));
  CHECK(flat_objective<double>(bags, labels, tier) == doctest::Approx(f()).epsilon(1e-12));
  auto g = analytic.tier;
  const auto xs = oracle::scalars(tier);
  const auto gs = oracle::scalars(g);
  for (std::size_t i = 0; i < xs.size(); ++i)
    CHECK(oracle::relative_error(*gs[i], oracle::central_difference(xs[i], 1e-5, f)) < 1e-4);
  for (std::size_t b = 0; b < bags.size(); ++b)
    for (int i = 0; i < bags[b].size(); ++i)
      CHECK(oracle::relative_error(analytic.embeddings[b](i), oracle::central_difference(bags[b].data() + i, 1e-5, f)) <
            1e-4);
}

TEST_CASE("disabled classifier bias stays at zero gradient") {
  Rng rng(41);
  auto params = oracle::random_params(4, 3, rng, false);
  const auto batch = oracle::random_batch(2, 2, 3, 4, rng);
  const auto g = joint_gradients<double>(batch, params, DistillMode::attention_weighted);
  CHECK(g.params.subbag.classifier.bias == 0.0);
  CHECK(g.params.bag.classifier.bias == 0.0);
}

TEST_CASE("float and double forwards agree") {
  Rng rng(42);
  const auto pd = oracle::random_params(6, 4, rng);
  const auto batch = oracle::random_batch(1, 3, 5, 6, rng);
  MilParams<float> pf;
  for (auto [dst, src] : {std::pair{&pf.subbag, &pd.subbag}, std::pair{&pf.bag, &pd.bag}}) {
    dst->attention.V = src->attention.V.cast<float>();
    dst->attention.w = src->attention.w.cast<float>();
    dst->classifier.weight = src->classifier.weight.cast<float>();
    dst->classifier.bias = static_cast<float>(src->classifier.bias);
  }
  BagEmbeddings<float> bf;
  bf.label = batch[0].label;
  for (const auto& s : batch[0].subbags) bf.subbags.push_back(s.cast<float>());
  const auto d = forward_bag(batch[0], pd, DistillMode::attention_weighted);
  const auto f = forward_bag(bf, pf, DistillMode::attention_weighted);
  CHECK(std::abs(d.bag.prediction - static_cast<double>(f.bag.prediction)) < 1e-5);
}

TEST_CASE("shape mismatches are contract violations") {
  Rng rng(43);
  const auto tier = oracle::random_tier(4, 3, rng);
  CHECK_THROWS_AS(attention_weights(oracle::gaussian(5, 3, rng, 1.0), tier.attention), ContractViolation);
  BagEmbeddings<double> empty;
  CHECK_THROWS_AS(forward_bag(empty, oracle::random_params(4, 3, rng), DistillMode::mean), ContractViolation);
}

TEST_CASE("scalar worked examples") {
  // Oracle values from direct scalar evaluation.
  const double e0 = std::exp(std::tanh(0.0)), e1 = std::exp(std::tanh(10.0));
  const double a1 = e1 / (e0 + e1);
  AttentionParams<double> att{Mat<double>::Ones(1, 1), Vec<double>::Ones(1)};
  Mat<double> h(1, 2);
  h << 0.0, 10.0;
  const Vec<double> a = attention_weights(h, att);
  CHECK(a(1) == doctest::Approx(a1).epsilon(1e-12));
  CHECK(std::abs(a(0) - 0.2690) < 1e-3);
  CHECK(std::abs(a(1) - 0.7310) < 1e-3);

  Mat<double> eye = Mat<double>::Identity(2, 2);
  const Vec<double> pooled = distill(eye, a, DistillMode::attention_weighted);
  CHECK(pooled(0) == a(0));
  CHECK(pooled(1) == a(1));
  Mat<double> twos(2, 2);
  twos << 2, 0, 0, 2;
  CHECK(distill(twos, a, DistillMode::mean) == Vec<double>::Ones(2));

  Mat<double> sym(2, 2);
  sym << 1, -1, 2, -2;
  CHECK(attend_pool<double>(sym, Vec<double>::Constant(2, 0.5)).cwiseAbs().maxCoeff() == 0.0);

  ClassifierParams<double> cls{Vec<double>::Constant(1, 2.0), 0.0, true};
  const double p = classify<double>(Vec<double>::Ones(1), cls);
  CHECK(p == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-14));
  CHECK(std::abs(p - 0.8808) < 1e-4);
  CHECK(std::abs(bce(p, 0) - 2.127) < 1e-2);
  CHECK(std::abs(bce(1 - 1e-7, 1)) <= 1.1e-7);

  const std::vector<int> yy{1, 0};
  const double sub = subbag_loss({{p}, {p}}, yy);
  CHECK(sub == doctest::Approx((-std::log(p) - std::log(1 - p)) / 2).epsilon(1e-14));
  CHECK(std::abs(sub - 1.127) < 1e-2);
  const std::vector<double> bp{0.9, 0.1};
  CHECK(bag_loss(bp, yy) == doctest::Approx(-std::log(0.9)).epsilon(1e-12));
  CHECK(std::abs(joint_loss(sub, bag_loss(bp, yy)) - 1.232) < 1e-2);
  CHECK(joint_loss(0, 0) == 0.0);
  CHECK(joint_loss(std::log(2.0), std::log(2.0)) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("zero classifiers and identical sub-bags") {
  Rng rng(50);
  auto params = oracle::random_params(4, 3, rng);
  for (auto* t : {&params.subbag, &params.bag}) {
    t->classifier.weight.setZero();
    t->classifier.bias = 0;
  }
  auto batch = oracle::random_batch(3, 2, 3, 4, rng);  // labels 0, 1, 0
  const auto trace = forward_bag(batch[0], params, DistillMode::attention_weighted);
  CHECK(trace.bag.prediction == 0.5);
  for (const auto& s : trace.subbags) CHECK(s.prediction == 0.5);
  // Bias gradient of each tier's mean BCE at p = 0.5 is mean(p - y).
  const auto g = joint_gradients<double>(batch, params, DistillMode::attention_weighted);
  const double mean_residual = ((0.5 - 0) + (0.5 - 1) + (0.5 - 0)) / 3.0;
  CHECK(g.params.subbag.classifier.bias == doctest::Approx(mean_residual).epsilon(1e-12));
  CHECK(g.params.bag.classifier.bias == doctest::Approx(mean_residual).epsilon(1e-12));

  // Doubling lambda doubles the bag-tier gradients exactly.
  auto p2 = oracle::random_params(4, 3, rng);
  const auto g1 = joint_gradients<double>(batch, p2, DistillMode::attention_weighted, 1.0);
  const auto g2 = joint_gradients<double>(batch, p2, DistillMode::attention_weighted, 2.0);
  CHECK(g2.params.bag.classifier.weight == 2.0 * g1.params.bag.classifier.weight);
  CHECK(g2.params.bag.classifier.bias == 2.0 * g1.params.bag.classifier.bias);
  CHECK(g2.params.subbag.classifier.weight == g1.params.subbag.classifier.weight);

  // Two identical distilled features behave like one.
  const Mat<double> v = oracle::gaussian(4, 1, rng, 1.0);
  Mat<double> vv(4, 2);
  vv << v, v;
  const auto one = bag_forward(v, p2.bag);
  const auto two = bag_forward(vv, p2.bag);
  CHECK(one.subbag_attention(0) == 1.0);
  CHECK(std::abs(one.prediction - two.prediction) < 1e-15);
}

TEST_CASE("pooled output composes attention and pooling exactly") {
  Rng rng(51);
  const auto tier = oracle::random_tier(5, 4, rng);
  const Mat<double> h = oracle::gaussian(5, 6, rng, 1.0);
  const auto out = subbag_forward(h, tier, DistillMode::attention_weighted);
  CHECK(out.pooled == attend_pool(h, attention_weights(h, tier.attention)));
}
